//! Forward passes: disentangled attention, the hybrid first layer, the
//! enhanced mask decoder, the MLM objective and mean pooling.

#![allow(clippy::needless_range_loop)]

use std::collections::BTreeMap;

use super::{EncoderError, EncoderWeights};
use crate::corpus::masking::MaskedBatch;
use crate::rng::Rng;
use crate::tensor::ops;
use crate::tensor::{Real, Tensor, TensorError, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Dropout context for one forward pass.
pub enum Mode<'a> {
    Train(&'a mut Rng),
    Eval,
}

fn apply_dropout<T: Real>(
    x: &Var<T>,
    rate: f64,
    mode: &mut Mode<'_>,
) -> Result<Var<T>, TensorError> {
    match mode {
        Mode::Train(rng) => ops::dropout(x, rate, rng, true),
        Mode::Eval => Ok(x.clone()),
    }
}

/// Binds weight tensors to graph leaves, one leaf per name. Binding a name
/// twice returns the same node, which is what ties the enhanced mask decoder
/// to the final layer and accumulates gradients across batch rows.
pub struct Session<T: Real> {
    bound: Vec<(String, Var<T>)>,
}

impl<T: Real> Default for Session<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Session<T> {
    pub fn new() -> Self {
        Session { bound: Vec::new() }
    }

    pub fn leaf(&mut self, name: &str, value: &Tensor<T>) -> Var<T> {
        if let Some((_, var)) = self.bound.iter().find(|(n, _)| n == name) {
            return var.clone();
        }
        let var = Var::leaf(value.clone());
        self.bound.push((name.to_string(), var.clone()));
        var
    }

    /// Pre-bind an existing node under a name; later `leaf` calls for that
    /// name return it. Lets verification harnesses own the leaves.
    pub fn bind_var(&mut self, name: &str, var: Var<T>) {
        if !self.bound.iter().any(|(n, _)| n == name) {
            self.bound.push((name.to_string(), var));
        }
    }

    /// Gradients accumulated by a completed backward pass, keyed by name.
    /// Unused parameters are absent.
    pub fn gradients(&self) -> BTreeMap<String, Tensor<T>> {
        self.bound
            .iter()
            .filter_map(|(n, v)| v.grad().map(|g| (n.clone(), g)))
            .collect()
    }

    /// Every bound leaf as a named parameter with its accumulated gradient
    /// (zeros when the backward pass never reached it).
    pub fn parameters(&self) -> Vec<crate::tensor::Parameter<T>> {
        self.bound
            .iter()
            .map(|(n, v)| {
                let mut p = crate::tensor::Parameter::new(n.clone(), v.value().clone());
                if let Some(g) = v.grad() {
                    p.grad = g;
                }
                p
            })
            .collect()
    }
}

/// Clipped relative-distance bucket: 0 when i - j <= -kappa, 2 kappa - 1 when
/// i - j >= kappa, i - j + kappa in between. delta(i, i) = kappa.
pub fn relative_bucket(i: usize, j: usize, kappa: usize) -> usize {
    let diff = i as isize - j as isize;
    let k = kappa as isize;
    if diff <= -k {
        0
    } else if diff >= k {
        (2 * k - 1) as usize
    } else {
        (diff + k) as usize
    }
}

fn linear<T: Real>(
    session: &mut Session<T>,
    name: &str,
    weights: &super::Linear<T>,
    x: &Var<T>,
) -> Result<Var<T>, TensorError> {
    let w = session.leaf(&format!("{name}.weight"), &weights.weight);
    let b = session.leaf(&format!("{name}.bias"), &weights.bias);
    ops::add_row(&ops::matmul(x, &w)?, &b)
}

fn layer_norm<T: Real>(
    session: &mut Session<T>,
    name: &str,
    weights: &super::weights::LayerNormWeights<T>,
    x: &Var<T>,
) -> Result<Var<T>, TensorError> {
    let gain = session.leaf(&format!("{name}.gain"), &weights.gain);
    let bias = session.leaf(&format!("{name}.bias"), &weights.bias);
    ops::layer_norm(x, &gain, &bias, LAYER_NORM_EPS)
}

/// The attention sublayer of one block: content scores plus (when enabled)
/// content-to-position and position-to-content terms over the shared
/// relative-position table, scaled by 1/sqrt(3 d_h), masked, softmaxed,
/// applied to values, concatenated over heads and output-projected.
/// Queries come from `q_input`; keys and values from `kv_input`.
pub fn disentangled_attention_layer<T: Real>(
    session: &mut Session<T>,
    weights: &EncoderWeights<T>,
    layer_idx: usize,
    q_input: &Var<T>,
    kv_input: &Var<T>,
    attention_mask: &[bool],
    mode: &mut Mode<'_>,
) -> Result<Var<T>, EncoderError> {
    let config = &weights.config;
    let layer = &weights.layers[layer_idx];
    let prefix = format!("layers.{layer_idx}.attn");
    let n = q_input.value().rows();
    let dh = config.head_dim();
    let kappa = config.max_relative_distance;

    let q = linear(session, &format!("{prefix}.q"), &layer.q, q_input)?;
    let k = linear(session, &format!("{prefix}.k"), &layer.k, kv_input)?;
    let v = linear(session, &format!("{prefix}.v"), &layer.v, kv_input)?;

    // Projected relative-position vectors, shared table per-layer projected.
    let rel = if config.use_disentangled {
        let table = session.leaf(
            "rel_embedding",
            weights
                .rel_embedding
                .as_ref()
                .expect("disentangled config carries a relative table"),
        );
        let wq = session.leaf(
            &format!("{prefix}.rel_q.weight"),
            layer.rel_q.as_ref().expect("rel_q present"),
        );
        let wk = session.leaf(
            &format!("{prefix}.rel_k.weight"),
            layer.rel_k.as_ref().expect("rel_k present"),
        );
        Some((ops::matmul(&table, &wq)?, ops::matmul(&table, &wk)?))
    } else {
        None
    };

    // Bucket index grids for the two cross terms.
    let mut c2p_rows = Vec::with_capacity(n * n);
    let mut c2p_cols = Vec::with_capacity(n * n);
    let mut p2c_rows = Vec::with_capacity(n * n);
    let mut p2c_cols = Vec::with_capacity(n * n);
    if rel.is_some() {
        for i in 0..n {
            for j in 0..n {
                c2p_rows.push(i);
                c2p_cols.push(relative_bucket(i, j, kappa));
                p2c_rows.push(j);
                p2c_cols.push(relative_bucket(j, i, kappa));
            }
        }
    }

    let mut heads = Vec::with_capacity(config.heads);
    for a in 0..config.heads {
        let qh = ops::slice_cols(&q, a * dh, dh)?;
        let kh = ops::slice_cols(&k, a * dh, dh)?;
        let vh = ops::slice_cols(&v, a * dh, dh)?;
        let mut scores = ops::matmul(&qh, &ops::transpose(&kh)?)?;
        if let Some((q_rel, k_rel)) = &rel {
            let krel_h = ops::slice_cols(k_rel, a * dh, dh)?;
            let qrel_h = ops::slice_cols(q_rel, a * dh, dh)?;
            // Content-to-position: Q_i^c . K_r[delta(i, j)].
            let c2p_all = ops::matmul(&qh, &ops::transpose(&krel_h)?)?;
            let c2p = ops::gather2(&c2p_all, c2p_rows.clone(), c2p_cols.clone(), vec![n, n])?;
            // Position-to-content: K_j^c . Q_r[delta(j, i)].
            let p2c_all = ops::matmul(&kh, &ops::transpose(&qrel_h)?)?;
            let p2c = ops::gather2(&p2c_all, p2c_rows.clone(), p2c_cols.clone(), vec![n, n])?;
            scores = ops::add(&ops::add(&scores, &c2p)?, &p2c)?;
        }
        let scaled = ops::scale(&scores, config.attention_scale())?;
        let probs = ops::softmax_rows(&scaled, Some(attention_mask))?;
        let probs = apply_dropout(&probs, config.dropout_rate, mode)?;
        heads.push(ops::matmul(&probs, &vh)?);
    }
    let merged = ops::concat_cols(&heads)?;
    let projected = linear(session, &format!("{prefix}.out"), &layer.out, &merged)?;
    Ok(apply_dropout(&projected, config.dropout_rate, mode)?)
}

fn ffn_sublayer<T: Real>(
    session: &mut Session<T>,
    weights: &EncoderWeights<T>,
    layer_idx: usize,
    x: &Var<T>,
    mode: &mut Mode<'_>,
) -> Result<Var<T>, EncoderError> {
    let layer = &weights.layers[layer_idx];
    let prefix = format!("layers.{layer_idx}");
    let h = ops::gelu(&linear(session, &format!("{prefix}.ffn.w1"), &layer.ffn1, x)?)?;
    let h = linear(session, &format!("{prefix}.ffn.w2"), &layer.ffn2, &h)?;
    let h = apply_dropout(&h, weights.config.dropout_rate, mode)?;
    Ok(layer_norm(
        session,
        &format!("{prefix}.ln_ffn"),
        &layer.ln_ffn,
        &ops::add(x, &h)?,
    )?)
}

/// Standard post-norm transformer block, with separate query and key/value
/// inputs so the mask decoder can reuse it.
pub fn transformer_block<T: Real>(
    session: &mut Session<T>,
    weights: &EncoderWeights<T>,
    layer_idx: usize,
    q_input: &Var<T>,
    kv_input: &Var<T>,
    attention_mask: &[bool],
    mode: &mut Mode<'_>,
) -> Result<Var<T>, EncoderError> {
    let attn = disentangled_attention_layer(
        session,
        weights,
        layer_idx,
        q_input,
        kv_input,
        attention_mask,
        mode,
    )?;
    let layer = &weights.layers[layer_idx];
    let merged = layer_norm(
        session,
        &format!("layers.{layer_idx}.ln_attn"),
        &layer.ln_attn,
        &ops::add(q_input, &attn)?,
    )?;
    ffn_sublayer(session, weights, layer_idx, &merged, mode)
}

/// Hybrid first layer: a width-3 convolution branch runs in parallel with
/// self-attention and the two are summed before the post-attention norm
/// (the convolution branch plays the role of the residual path).
pub fn ngie_layer<T: Real>(
    session: &mut Session<T>,
    weights: &EncoderWeights<T>,
    x: &Var<T>,
    attention_mask: &[bool],
    mode: &mut Mode<'_>,
) -> Result<Var<T>, EncoderError> {
    let conv_weights = weights.conv.as_ref().expect("ngie config carries a kernel");
    let attn = disentangled_attention_layer(session, weights, 0, x, x, attention_mask, mode)?;
    let kernel = session.leaf("conv.kernel", &conv_weights.kernel);
    let bias = session.leaf("conv.bias", &conv_weights.bias);
    let conv = ops::conv1d_same(x, &kernel, &bias)?;
    let conv = ops::tanh(&apply_dropout(&conv, weights.config.dropout_rate, mode)?)?;
    let merged = layer_norm(
        session,
        "layers.0.ln_attn",
        &weights.layers[0].ln_attn,
        &ops::add(&attn, &conv)?,
    )?;
    ffn_sublayer(session, weights, 0, &merged, mode)
}

/// Two weight-tied refinement steps of the final layer's block, with absolute
/// position embeddings injected only into the query:
/// Q0 = H + P_abs, K = V = H, Qt = Block_L(Q_{t-1}, K, V).
pub fn enhanced_mask_decoder<T: Real>(
    session: &mut Session<T>,
    weights: &EncoderWeights<T>,
    hidden: &Var<T>,
    attention_mask: &[bool],
    mode: &mut Mode<'_>,
) -> Result<Var<T>, EncoderError> {
    let config = &weights.config;
    let n = hidden.value().rows();
    if n > config.max_len {
        return Err(EncoderError::PositionOverflow {
            n,
            max_len: config.max_len,
        });
    }
    let pos_table = session.leaf("abs_position", &weights.abs_position);
    let positions: Vec<usize> = (0..n).collect();
    let pos = ops::embedding_lookup(&pos_table, &positions)?;
    let mut q = ops::add(hidden, &pos)?;
    let last = config.n_layers - 1;
    for _ in 0..2 {
        q = transformer_block(session, weights, last, &q, hidden, attention_mask, mode)?;
    }
    Ok(q)
}

/// Full encoder pass over one sequence: embeddings, the layer stack and
/// (when enabled) the enhanced mask decoder. Returns the final hidden states.
pub fn forward_hidden<T: Real>(
    session: &mut Session<T>,
    weights: &EncoderWeights<T>,
    input_ids: &[u32],
    attention_mask: &[bool],
    mode: &mut Mode<'_>,
) -> Result<Var<T>, EncoderError> {
    let config = &weights.config;
    config.validate()?;
    let n = input_ids.len();
    if n == 0 {
        return Err(EncoderError::Tensor(TensorError::EmptySequence {
            op: "forward",
        }));
    }
    if n > config.max_len {
        return Err(EncoderError::PositionOverflow {
            n,
            max_len: config.max_len,
        });
    }
    if let Some(&bad) = input_ids.iter().find(|&&id| id as usize >= config.vocab_size) {
        return Err(EncoderError::TokenOutOfRange {
            id: bad,
            vocab: config.vocab_size,
        });
    }

    let table = session.leaf("token_embedding", &weights.token_embedding);
    let ids: Vec<usize> = input_ids.iter().map(|&id| id as usize).collect();
    let mut x = ops::embedding_lookup(&table, &ids)?;
    if !config.use_emd {
        // Ablation: absolute positions enter at the input layer instead of
        // the decoder.
        let pos_table = session.leaf("abs_position", &weights.abs_position);
        let positions: Vec<usize> = (0..n).collect();
        x = ops::add(&x, &ops::embedding_lookup(&pos_table, &positions)?)?;
    }
    // Zero PAD rows so the convolution branch cannot leak padding into
    // neighboring positions.
    if attention_mask.iter().any(|&m| !m) {
        let h = config.hidden;
        let mut mask = Tensor::zeros(vec![n, h]);
        for (i, &keep) in attention_mask.iter().enumerate() {
            if keep {
                mask.row_mut(i).fill(T::ONE);
            }
        }
        x = ops::mul(&x, &Var::constant(mask))?;
    }

    let blocks = if config.use_emd {
        config.n_layers - 1
    } else {
        config.n_layers
    };
    for idx in 0..blocks {
        x = if idx == 0 && config.use_ngie {
            ngie_layer(session, weights, &x, attention_mask, mode)?
        } else {
            transformer_block(session, weights, idx, &x, &x, attention_mask, mode)?
        };
    }
    if config.use_emd {
        x = enhanced_mask_decoder(session, weights, &x, attention_mask, mode)?;
    }
    Ok(x)
}

/// MLM projection head: dense + GELU + layer norm + decoder to vocab logits.
pub fn mlm_head<T: Real>(
    session: &mut Session<T>,
    weights: &EncoderWeights<T>,
    hidden: &Var<T>,
) -> Result<Var<T>, EncoderError> {
    let head = &weights.mlm_head;
    let d = linear(session, "mlm_head.dense", &head.dense, hidden)?;
    let a = ops::gelu(&d)?;
    let normed = layer_norm(session, "mlm_head.ln", &head.ln, &a)?;
    Ok(linear(session, "mlm_head.decoder", &head.decoder, &normed)?)
}

pub struct MlmOutput<T: Real> {
    /// Cross-entropy averaged over loss-mask positions; exactly zero (with
    /// zero gradients) when the batch has no masked positions.
    pub loss: Var<T>,
    /// Per-row vocab logits.
    pub logits: Vec<Tensor<T>>,
    pub masked_positions: usize,
}

/// Full MLM pass over a padded batch.
pub fn forward_mlm<T: Real>(
    session: &mut Session<T>,
    weights: &EncoderWeights<T>,
    batch: &MaskedBatch,
    mode: &mut Mode<'_>,
) -> Result<MlmOutput<T>, EncoderError> {
    let mut loss_terms: Vec<Var<T>> = Vec::new();
    let mut logits_out = Vec::with_capacity(batch.len());
    let mut total = 0usize;
    for r in 0..batch.len() {
        let hidden = forward_hidden(
            session,
            weights,
            &batch.input_ids[r],
            &batch.attention_mask[r],
            mode,
        )?;
        let logits = mlm_head(session, weights, &hidden)?;
        let targets: Vec<usize> = batch.target_ids[r].iter().map(|&t| t as usize).collect();
        let (loss_sum, count) =
            ops::cross_entropy_sum(&logits, &targets, &batch.loss_mask[r])?;
        logits_out.push(logits.value().clone());
        if count > 0 {
            loss_terms.push(loss_sum);
            total += count;
        }
    }
    let loss = match loss_terms.into_iter().reduce(|a, b| {
        ops::add(&a, &b).expect("scalar shapes agree")
    }) {
        Some(sum) if total > 0 => ops::scale(&sum, 1.0 / total as f64)?,
        _ => Var::constant(Tensor::scalar(T::ZERO)),
    };
    Ok(MlmOutput {
        loss,
        logits: logits_out,
        masked_positions: total,
    })
}

/// Mean of the final hidden states over non-PAD positions; the sequence
/// embedding used by downstream heads.
pub fn mean_pool<T: Real>(
    session: &mut Session<T>,
    weights: &EncoderWeights<T>,
    input_ids: &[u32],
    attention_mask: &[bool],
    mode: &mut Mode<'_>,
) -> Result<Var<T>, EncoderError> {
    let hidden = forward_hidden(session, weights, input_ids, attention_mask, mode)?;
    Ok(ops::mean_rows_masked(&hidden, attention_mask)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::masking::MaskedBatch;
    use crate::encoder::ModelConfig;

    fn tiny_config() -> ModelConfig {
        let mut cfg = ModelConfig::new(13, 8, 3, 2);
        cfg.max_relative_distance = 4;
        cfg.max_len = 16;
        cfg
    }

    fn eval_hidden(weights: &EncoderWeights<f64>, ids: &[u32], mask: &[bool]) -> Tensor<f64> {
        let mut session = Session::new();
        forward_hidden(&mut session, weights, ids, mask, &mut Mode::Eval)
            .unwrap()
            .value()
            .clone()
    }

    #[test]
    fn bucket_properties() {
        let kappa = 4;
        for i in 0..10 {
            assert_eq!(relative_bucket(i, i, kappa), kappa);
        }
        // Clipping boundaries.
        assert_eq!(relative_bucket(0, 4, kappa), 0);
        assert_eq!(relative_bucket(0, 9, kappa), 0);
        assert_eq!(relative_bucket(4, 0, kappa), 2 * kappa - 1);
        assert_eq!(relative_bucket(9, 0, kappa), 2 * kappa - 1);
        // Asymmetry inside the window.
        for i in 0..6usize {
            for j in 0..6usize {
                if i.abs_diff(j) < kappa {
                    assert_eq!(
                        relative_bucket(i, j, kappa) + relative_bucket(j, i, kappa),
                        2 * kappa
                    );
                }
            }
        }
    }

    #[test]
    fn single_token_attention_weight_is_one() {
        // Softmax over a singleton is exactly 1, so the value row passes
        // through the attention weighting unchanged.
        let x = Var::leaf(Tensor::from_vec(vec![1, 4], vec![0.3, -0.8, 1.2, 0.0]));
        let sm = ops::softmax_rows(&x, Some(&[true, false, false, false])).unwrap();
        assert_eq!(sm.value().get2(0, 0), 1.0);
    }

    #[test]
    fn zero_relative_tables_reduce_to_content_only_attention() {
        let cfg = tiny_config();
        let mut weights = EncoderWeights::<f64>::init(&cfg, 3).unwrap();
        if let Some(rel) = weights.rel_embedding.as_mut() {
            rel.fill(0.0);
        }
        let n = 5;
        let ids: Vec<u32> = (0..n as u32).collect();
        let mask = vec![true; n];

        // Reference: independently computed content-only attention for one
        // layer, same 1/sqrt(3 d_h) scale.
        let mut session = Session::new();
        let table = session.leaf("token_embedding", &weights.token_embedding);
        let ids_usize: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let x = ops::embedding_lookup(&table, &ids_usize).unwrap();
        let got = disentangled_attention_layer(
            &mut session,
            &weights,
            1,
            &x,
            &x,
            &mask,
            &mut Mode::Eval,
        )
        .unwrap();

        let h = cfg.hidden;
        let dh = cfg.head_dim();
        let xv = x.value();
        let layer = &weights.layers[1];
        let project = |w: &Tensor<f64>, b: &Tensor<f64>| {
            let mut out = xv.matmul(w).unwrap();
            for i in 0..n {
                for (o, bv) in out.row_mut(i).iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
            out
        };
        let q = project(&layer.q.weight, &layer.q.bias);
        let k = project(&layer.k.weight, &layer.k.bias);
        let v = project(&layer.v.weight, &layer.v.bias);
        let scale = 1.0 / (3.0 * dh as f64).sqrt();
        let mut merged = Tensor::zeros(vec![n, h]);
        for a in 0..cfg.heads {
            for i in 0..n {
                let mut scores = vec![0.0f64; n];
                for j in 0..n {
                    let mut dot = 0.0;
                    for c in 0..dh {
                        dot += q.get2(i, a * dh + c) * k.get2(j, a * dh + c);
                    }
                    scores[j] = dot * scale;
                }
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for c in 0..dh {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += exps[j] / z * v.get2(j, a * dh + c);
                    }
                    merged.set2(i, a * dh + c, acc);
                }
            }
        }
        let mut expect = merged.matmul(&layer.out.weight).unwrap();
        for i in 0..n {
            for (o, bv) in expect.row_mut(i).iter_mut().zip(layer.out.bias.data()) {
                *o += bv;
            }
        }
        for (g, e) in got.value().data().iter().zip(expect.data()) {
            assert!((g - e).abs() < 1e-10, "{g} vs {e}");
        }
    }

    #[test]
    fn zero_conv_branch_collapses_to_layer_norm_of_attention() {
        let cfg = tiny_config();
        let mut weights = EncoderWeights::<f64>::init(&cfg, 7).unwrap();
        if let Some(conv) = weights.conv.as_mut() {
            conv.kernel.fill(0.0);
            conv.bias.fill(0.0);
        }
        let n = 4;
        let ids: Vec<u32> = vec![1, 5, 2, 8];
        let mask = vec![true; n];

        let mut session = Session::new();
        let table = session.leaf("token_embedding", &weights.token_embedding);
        let x = ops::embedding_lookup(&table, &[1, 5, 2, 8]).unwrap();
        let got = ngie_layer(&mut session, &weights, &x, &mask, &mut Mode::Eval).unwrap();

        // Expected: the same block with the conv contribution dropped.
        let mut session2 = Session::new();
        let table2 = session2.leaf("token_embedding", &weights.token_embedding);
        let x2 = ops::embedding_lookup(&table2, &[1, 5, 2, 8]).unwrap();
        let attn = disentangled_attention_layer(
            &mut session2,
            &weights,
            0,
            &x2,
            &x2,
            &mask,
            &mut Mode::Eval,
        )
        .unwrap();
        let normed = layer_norm(
            &mut session2,
            "layers.0.ln_attn",
            &weights.layers[0].ln_attn,
            &attn,
        )
        .unwrap();
        let expect = ffn_sublayer(&mut session2, &weights, 0, &normed, &mut Mode::Eval).unwrap();
        let _ = ids;
        for (g, e) in got.value().data().iter().zip(expect.value().data()) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn emd_shares_parameters_with_last_layer() {
        let cfg = tiny_config();
        let mut weights = EncoderWeights::<f64>::init(&cfg, 11).unwrap();
        let ids = [1u32, 2, 3, 4, 5];
        let mask = [true; 5];
        let base = eval_hidden(&weights, &ids, &mask);
        // Perturb one weight of the final layer: the decoder output must move.
        let last = weights.layers.len() - 1;
        let delta = 0.05;
        weights.layers[last].ffn1.weight.data_mut()[3] += delta;
        let bumped = eval_hidden(&weights, &ids, &mask);
        assert!(
            bumped
                .data()
                .iter()
                .zip(base.data())
                .any(|(a, b)| (a - b).abs() > 1e-9),
            "perturbing the tied layer must change the EMD output"
        );
    }

    #[test]
    fn emd_with_zero_positions_composes_the_tied_block() {
        // With P_abs = 0, Q0 = H = K = V, so the decoder is exactly two
        // passes of the final layer's block with keys/values pinned to H;
        // the first refinement equals a standard self-attention pass.
        let cfg = tiny_config();
        let mut weights = EncoderWeights::<f64>::init(&cfg, 41).unwrap();
        weights.abs_position.fill(0.0);
        let mask = [true; 4];
        let h = Var::constant(Tensor::from_vec(
            vec![4, cfg.hidden],
            (0..4 * cfg.hidden).map(|i| 0.05 * i as f64 - 0.7).collect(),
        ));
        let last = cfg.n_layers - 1;

        let mut s1 = Session::new();
        let got = enhanced_mask_decoder(&mut s1, &weights, &h, &mask, &mut Mode::Eval).unwrap();

        let mut s2 = Session::new();
        let step1 = transformer_block(&mut s2, &weights, last, &h, &h, &mask, &mut Mode::Eval)
            .unwrap();
        let step2 =
            transformer_block(&mut s2, &weights, last, &step1, &h, &mask, &mut Mode::Eval)
                .unwrap();
        // First refinement = a plain self-attention pass of the last layer.
        let mut s3 = Session::new();
        let plain = transformer_block(&mut s3, &weights, last, &h, &h, &mask, &mut Mode::Eval)
            .unwrap();
        for (a, b) in step1.value().data().iter().zip(plain.value().data()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in got.value().data().iter().zip(step2.value().data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pad_rows_do_not_disturb_real_positions() {
        let cfg = tiny_config();
        let weights = EncoderWeights::<f64>::init(&cfg, 13).unwrap();
        let ids = [1u32, 2, 3];
        let mask = [true, true, true];
        let short = eval_hidden(&weights, &ids, &mask);
        let padded_ids = [1u32, 2, 3, 12, 12];
        let padded_mask = [true, true, true, false, false];
        let padded = eval_hidden(&weights, &padded_ids, &padded_mask);
        for i in 0..3 {
            for j in 0..cfg.hidden {
                assert!(
                    (short.get2(i, j) - padded.get2(i, j)).abs() < 1e-10,
                    "row {i} differs under padding"
                );
            }
        }
    }

    #[test]
    fn permuting_tokens_changes_output() {
        let cfg = tiny_config();
        let weights = EncoderWeights::<f64>::init(&cfg, 17).unwrap();
        let mask = [true; 4];
        let a = eval_hidden(&weights, &[1, 2, 3, 4], &mask);
        let b = eval_hidden(&weights, &[4, 3, 2, 1], &mask);
        // Pooled representations must differ: positions matter.
        let pool = |t: &Tensor<f64>| -> Vec<f64> {
            (0..cfg.hidden)
                .map(|j| (0..4).map(|i| t.get2(i, j)).sum::<f64>() / 4.0)
                .collect()
        };
        let (pa, pb) = (pool(&a), pool(&b));
        assert!(pa.iter().zip(&pb).any(|(x, y)| (x - y).abs() > 1e-8));
    }

    #[test]
    fn mean_pool_of_identical_rows_is_that_row() {
        let cfg = tiny_config();
        let weights = EncoderWeights::<f64>::init(&cfg, 19).unwrap();
        let mut session = Session::new();
        // Same token everywhere gives identical hidden rows only with
        // positions off; instead check the op directly on constructed rows.
        let row = vec![0.4, -1.0, 2.0];
        let x = Var::leaf(Tensor::from_vec(
            vec![3, 3],
            [row.clone(), row.clone(), row.clone()].concat(),
        ));
        let pooled = ops::mean_rows_masked(&x, &[true, true, true]).unwrap();
        for (p, r) in pooled.value().data().iter().zip(&row) {
            assert!((p - r).abs() < 1e-15);
        }
        // And the full path produces an H-vector.
        let pooled = mean_pool(
            &mut session,
            &weights,
            &[1, 2, 3],
            &[true, true, true],
            &mut Mode::Eval,
        )
        .unwrap();
        assert_eq!(pooled.shape(), &[1, cfg.hidden]);
    }

    #[test]
    fn mlm_loss_on_empty_mask_is_zero() {
        let cfg = tiny_config();
        let weights = EncoderWeights::<f64>::init(&cfg, 23).unwrap();
        let batch = MaskedBatch {
            input_ids: vec![vec![1, 2, 3]],
            target_ids: vec![vec![1, 2, 3]],
            loss_mask: vec![vec![false, false, false]],
            attention_mask: vec![vec![true, true, true]],
        };
        let mut session = Session::new();
        let out = forward_mlm(&mut session, &weights, &batch, &mut Mode::Eval).unwrap();
        assert_eq!(out.loss.value().item(), 0.0);
        assert_eq!(out.masked_positions, 0);
        out.loss.backward();
        assert!(session.gradients().is_empty());
    }

    #[test]
    fn session_parameters_carry_accumulated_gradients() {
        let cfg = tiny_config();
        let weights = EncoderWeights::<f64>::init(&cfg, 53).unwrap();
        let batch = MaskedBatch {
            input_ids: vec![vec![10, 2, 3]],
            target_ids: vec![vec![1, 2, 3]],
            loss_mask: vec![vec![true, false, true]],
            attention_mask: vec![vec![true; 3]],
        };
        let mut session = Session::new();
        let out = forward_mlm(&mut session, &weights, &batch, &mut Mode::Eval).unwrap();
        out.loss.backward();
        let grads = session.gradients();
        let params = session.parameters();
        assert!(!params.is_empty());
        for p in &params {
            assert_eq!(p.grad.shape(), p.value.shape(), "{}", p.name);
            if let Some(g) = grads.get(&p.name) {
                assert_eq!(&p.grad, g, "{}", p.name);
            } else {
                assert!(p.grad.data().iter().all(|&v| v == 0.0), "{}", p.name);
            }
        }
        // zero_grad resets without touching values.
        let mut first = params.into_iter().next().unwrap();
        let value_before = first.value.clone();
        first.zero_grad();
        assert!(first.grad.data().iter().all(|&v| v == 0.0));
        assert_eq!(first.value, value_before);
    }

    #[test]
    fn initial_loss_is_near_log_vocab() {
        let cfg = tiny_config();
        let weights = EncoderWeights::<f64>::init(&cfg, 29).unwrap();
        let batch = MaskedBatch {
            input_ids: vec![vec![10, 2, 3, 4, 5, 6, 7, 8]; 4],
            target_ids: vec![vec![1, 2, 3, 4, 5, 6, 7, 8]; 4],
            loss_mask: vec![vec![true, false, false, true, false, true, false, true]; 4],
            attention_mask: vec![vec![true; 8]; 4],
        };
        let mut session = Session::new();
        let out = forward_mlm(&mut session, &weights, &batch, &mut Mode::Eval).unwrap();
        let expect = (cfg.vocab_size as f64).ln();
        let got = out.loss.value().item();
        assert!(
            (got - expect).abs() / expect < 0.10,
            "initial loss {got} vs ln(V) {expect}"
        );
    }

    #[test]
    fn rejects_overlong_sequences() {
        let cfg = tiny_config();
        let weights = EncoderWeights::<f64>::init(&cfg, 31).unwrap();
        let ids: Vec<u32> = (0..20).map(|i| (i % 10) as u32).collect();
        let mask = vec![true; 20];
        let mut session = Session::new();
        let err = forward_hidden(&mut session, &weights, &ids, &mask, &mut Mode::Eval)
            .unwrap_err();
        assert!(matches!(err, EncoderError::PositionOverflow { .. }));
    }

    #[test]
    fn rejects_out_of_vocab_tokens() {
        let cfg = tiny_config();
        let weights = EncoderWeights::<f64>::init(&cfg, 37).unwrap();
        let mut session = Session::new();
        let err = forward_hidden(&mut session, &weights, &[99], &[true], &mut Mode::Eval)
            .unwrap_err();
        assert!(matches!(err, EncoderError::TokenOutOfRange { .. }));
    }
}
