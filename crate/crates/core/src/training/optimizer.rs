//! AdamW with decoupled weight decay, cosine annealing and global-norm
//! gradient clipping.

use std::collections::BTreeMap;

use super::TrainError;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OptimizerHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerHyper {
    fn default() -> Self {
        OptimizerHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Per-parameter first/second moment estimates plus the shared step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<T: Real> {
    pub hyper: OptimizerHyper,
    step: usize,
    moments: BTreeMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Real> AdamWState<T> {
    pub fn new(hyper: OptimizerHyper) -> Self {
        AdamWState {
            hyper,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// The (name, (m, v)) entries in name order.
    #[allow(clippy::type_complexity)]
    pub fn moments(&self) -> Vec<(&str, &(Tensor<T>, Tensor<T>))> {
        self.moments.iter().map(|(n, mv)| (n.as_str(), mv)).collect()
    }

    /// Rebuild state from checkpoint parts: `name.m` / `name.v` tensor pairs.
    pub fn from_parts(
        hyper: OptimizerHyper,
        step: usize,
        tensors: Vec<(String, Tensor<T>)>,
    ) -> Result<Self, TrainError> {
        let mut moments: BTreeMap<String, (Tensor<T>, Tensor<T>)> = BTreeMap::new();
        type Halves<T> = BTreeMap<String, (Option<Tensor<T>>, Option<Tensor<T>>)>;
        let mut halves: Halves<T> = BTreeMap::new();
        for (name, tensor) in tensors {
            if let Some(base) = name.strip_suffix(".m") {
                halves.entry(base.to_string()).or_default().0 = Some(tensor);
            } else if let Some(base) = name.strip_suffix(".v") {
                halves.entry(base.to_string()).or_default().1 = Some(tensor);
            } else {
                return Err(TrainError::Checkpoint(format!(
                    "unrecognized optimizer tensor {name}"
                )));
            }
        }
        for (base, (m, v)) in halves {
            match (m, v) {
                (Some(m), Some(v)) => {
                    moments.insert(base, (m, v));
                }
                _ => {
                    return Err(TrainError::Checkpoint(format!(
                        "incomplete moment pair for {base}"
                    )))
                }
            }
        }
        Ok(AdamWState {
            hyper,
            step,
            moments,
        })
    }

    /// Advance the shared step counter; call once per optimization step,
    /// before the per-parameter updates.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// One AdamW update: decoupled decay `p -= lr wd p`, then the
    /// bias-corrected Adam step. `lr` may differ per parameter group.
    pub fn update(
        &mut self,
        name: &str,
        value: &mut Tensor<T>,
        grad: &Tensor<T>,
        lr: f64,
    ) -> Result<(), TrainError> {
        if grad.check_finite("adamw").is_err() {
            return Err(TrainError::NonFiniteGradient(name.to_string()));
        }
        if grad.shape() != value.shape() {
            return Err(TrainError::ShapeMismatch {
                name: name.to_string(),
                expected: value.shape().to_vec(),
                got: grad.shape().to_vec(),
            });
        }
        let (m, v) = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| {
                (
                    Tensor::zeros(value.shape().to_vec()),
                    Tensor::zeros(value.shape().to_vec()),
                )
            });
        let b1 = T::from_f64(self.hyper.beta1);
        let b2 = T::from_f64(self.hyper.beta2);
        let one_minus_b1 = T::from_f64(1.0 - self.hyper.beta1);
        let one_minus_b2 = T::from_f64(1.0 - self.hyper.beta2);
        let t = self.step.max(1) as i32;
        let bias1 = T::from_f64(1.0 - self.hyper.beta1.powi(t));
        let bias2 = T::from_f64(1.0 - self.hyper.beta2.powi(t));
        let eps = T::from_f64(self.hyper.eps);
        let lr_t = T::from_f64(lr);
        let decay = T::from_f64(lr * self.hyper.weight_decay);

        for ((p, g), (m_i, v_i)) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut()))
        {
            *p -= decay * *p;
            *m_i = b1 * *m_i + one_minus_b1 * *g;
            *v_i = b2 * *v_i + one_minus_b2 * *g * *g;
            let m_hat = *m_i / bias1;
            let v_hat = *v_i / bias2;
            *p -= lr_t * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CosineSchedule {
    pub base_lr: f64,
    pub min_lr: f64,
    pub total_steps: usize,
}

/// Cosine annealing: lr = min + (base - min)(1 + cos(pi t / T)) / 2, clamped
/// to min_lr past the horizon.
pub fn cosine_lr(step: usize, schedule: &CosineSchedule) -> f64 {
    if schedule.total_steps == 0 || step >= schedule.total_steps {
        return schedule.min_lr;
    }
    let progress = step as f64 / schedule.total_steps as f64;
    schedule.min_lr
        + 0.5 * (schedule.base_lr - schedule.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Scale all gradients so the global L2 norm does not exceed `max_norm`.
/// Returns the applied scale factor.
pub fn clip_gradients<T: Real>(grads: &mut BTreeMap<String, Tensor<T>>, max_norm: f64) -> f64 {
    let norm_sq: f64 = grads.values().map(|g| g.l2_norm_squared()).sum();
    let norm = norm_sq.sqrt();
    if norm <= max_norm || norm == 0.0 {
        return 1.0;
    }
    let scale = max_norm / norm;
    let s = T::from_f64(scale);
    for g in grads.values_mut() {
        for x in g.data_mut() {
            *x *= s;
        }
    }
    scale
}
