//! Task-head architectures for the downstream protocols.

use super::TrainError;
use crate::encoder::Mode;
use crate::rng::Rng;
use crate::tensor::{ops, Real, Tensor, Var};

const HEAD_INIT_STD: f64 = 0.02;

/// Head families used across models and tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Two hidden blocks of linear + GELU + layer norm + dropout with a
    /// residual connection, then a linear output.
    ResidualMlp3,
    /// Two hidden blocks of linear + GELU + dropout (no layer norm).
    OfficialMlp3,
    /// One hidden block of linear + tanh.
    Mlp2Tanh,
    /// A single linear layer (linear probing).
    SingleLinear,
    /// The residual MLP with hidden width equal to the concatenated pair
    /// input.
    UnifiedPpiResidualMlp,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HeadSpec {
    pub kind: HeadKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
}

impl HeadSpec {
    pub fn new(kind: HeadKind, input_dim: usize) -> Self {
        let hidden_dim = match kind {
            HeadKind::SingleLinear => 0,
            _ => input_dim,
        };
        HeadSpec {
            kind,
            input_dim,
            hidden_dim,
            dropout: 0.1,
        }
    }

    /// Number of hidden blocks before the output layer.
    fn hidden_blocks(&self) -> usize {
        match self.kind {
            HeadKind::ResidualMlp3 | HeadKind::OfficialMlp3 | HeadKind::UnifiedPpiResidualMlp => 2,
            HeadKind::Mlp2Tanh => 1,
            HeadKind::SingleLinear => 0,
        }
    }

    fn uses_layer_norm(&self) -> bool {
        matches!(
            self.kind,
            HeadKind::ResidualMlp3 | HeadKind::UnifiedPpiResidualMlp
        )
    }

    fn uses_residual(&self) -> bool {
        matches!(
            self.kind,
            HeadKind::ResidualMlp3 | HeadKind::UnifiedPpiResidualMlp
        )
    }
}

/// Head parameters; one scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights<T: Real> {
    pub spec: HeadSpec,
    hidden: Vec<(Tensor<T>, Tensor<T>)>,
    norms: Vec<(Tensor<T>, Tensor<T>)>,
    output: (Tensor<T>, Tensor<T>),
}

impl<T: Real> HeadWeights<T> {
    pub fn init(spec: &HeadSpec, seed: u64) -> Result<Self, TrainError> {
        if spec.hidden_blocks() > 0 && spec.uses_residual() && spec.hidden_dim != spec.input_dim {
            return Err(TrainError::BadConfig(
                "residual heads need hidden_dim == input_dim".to_string(),
            ));
        }
        let mut rng = Rng::seed_from(seed);
        let mut init = |rows: usize, cols: usize| {
            let data: Vec<T> = (0..rows * cols)
                .map(|_| T::from_f64(rng.normal() * HEAD_INIT_STD))
                .collect();
            Tensor::from_vec(vec![rows, cols], data)
        };
        let mut hidden = Vec::new();
        let mut norms = Vec::new();
        let mut width = spec.input_dim;
        for _ in 0..spec.hidden_blocks() {
            hidden.push((init(width, spec.hidden_dim), Tensor::zeros(vec![spec.hidden_dim])));
            if spec.uses_layer_norm() {
                norms.push((
                    Tensor::full(vec![spec.hidden_dim], T::ONE),
                    Tensor::zeros(vec![spec.hidden_dim]),
                ));
            }
            width = spec.hidden_dim;
        }
        let output = (init(width, 1), Tensor::zeros(vec![1]));
        Ok(HeadWeights {
            spec: spec.clone(),
            hidden,
            norms,
            output,
        })
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.hidden.iter().enumerate() {
            out.push((format!("head.hidden.{i}.weight"), w));
            out.push((format!("head.hidden.{i}.bias"), b));
        }
        for (i, (g, b)) in self.norms.iter().enumerate() {
            out.push((format!("head.ln.{i}.gain"), g));
            out.push((format!("head.ln.{i}.bias"), b));
        }
        out.push(("head.output.weight".to_string(), &self.output.0));
        out.push(("head.output.bias".to_string(), &self.output.1));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.hidden.iter_mut().enumerate() {
            out.push((format!("head.hidden.{i}.weight"), w));
            out.push((format!("head.hidden.{i}.bias"), b));
        }
        for (i, (g, b)) in self.norms.iter_mut().enumerate() {
            out.push((format!("head.ln.{i}.gain"), g));
            out.push((format!("head.ln.{i}.bias"), b));
        }
        out.push(("head.output.weight".to_string(), &mut self.output.0));
        out.push(("head.output.bias".to_string(), &mut self.output.1));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Forward pass over a batch of row vectors; output shape [n, 1].
    pub fn forward(
        &self,
        session: &mut crate::encoder::Session<T>,
        x: &Var<T>,
        mode: &mut Mode<'_>,
    ) -> Result<Var<T>, TrainError> {
        let mut h = x.clone();
        for i in 0..self.hidden.len() {
            let w = session.leaf(&format!("head.hidden.{i}.weight"), &self.hidden[i].0);
            let b = session.leaf(&format!("head.hidden.{i}.bias"), &self.hidden[i].1);
            let mut z = ops::add_row(&ops::matmul(&h, &w)?, &b)?;
            z = match self.spec.kind {
                HeadKind::Mlp2Tanh => ops::tanh(&z)?,
                _ => ops::gelu(&z)?,
            };
            if self.spec.uses_layer_norm() {
                let gain = session.leaf(&format!("head.ln.{i}.gain"), &self.norms[i].0);
                let bias = session.leaf(&format!("head.ln.{i}.bias"), &self.norms[i].1);
                z = ops::layer_norm(&z, &gain, &bias, crate::encoder::LAYER_NORM_EPS)?;
            }
            if self.spec.dropout > 0.0 {
                z = match mode {
                    Mode::Train(rng) => ops::dropout(&z, self.spec.dropout, rng, true)?,
                    Mode::Eval => z,
                };
            }
            h = if self.spec.uses_residual() {
                ops::add(&h, &z)?
            } else {
                z
            };
        }
        let w = session.leaf("head.output.weight", &self.output.0);
        let b = session.leaf("head.output.bias", &self.output.1);
        Ok(ops::add_row(&ops::matmul(&h, &w)?, &b)?)
    }
}
