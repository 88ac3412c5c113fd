//! Downstream protocols: full fine-tuning, head fine-tuning and linear
//! probing, for regression over sequences and either task over precomputed
//! feature vectors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::heads::{HeadKind, HeadSpec, HeadWeights};
use super::optimizer::{clip_gradients, cosine_lr, AdamWState, CosineSchedule, OptimizerHyper};
use super::TrainError;
use crate::corpus::splits::DatasetSplit;
use crate::encoder::{mean_pool, EncoderWeights, Mode, Session};
use crate::eval::{classification_metrics, regression_metrics, MetricReport};
use crate::linalg::Mat;
use crate::rng::Rng;
use crate::tensor::{ops, Real, Tensor, Var};
use crate::tokenizer::TokenSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Encoder and head both trainable, separate learning rates.
    FullFinetune,
    /// Frozen encoder, trainable non-linear head.
    HeadFinetune,
    /// Frozen encoder, single linear layer.
    LinearProbe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub protocol: Protocol,
    pub head_kind: HeadKind,
    pub encoder_lr: f64,
    pub head_lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub min_lr: f64,
    /// Positive class weight for binary tasks.
    pub pos_weight: f64,
    pub seed: u64,
}

impl FinetuneConfig {
    pub fn new(protocol: Protocol) -> Self {
        let head_kind = match protocol {
            Protocol::LinearProbe => HeadKind::SingleLinear,
            _ => HeadKind::ResidualMlp3,
        };
        FinetuneConfig {
            protocol,
            head_kind,
            encoder_lr: 3e-5,
            head_lr: if protocol == Protocol::LinearProbe {
                1e-3
            } else {
                1e-4
            },
            batch_size: 32,
            max_epochs: 200,
            patience: 20,
            weight_decay: 0.01,
            grad_clip: 1.0,
            min_lr: 0.0,
            pos_weight: 4.0,
            seed: 0,
        }
    }

    fn effective_head_kind(&self) -> HeadKind {
        match self.protocol {
            Protocol::LinearProbe => HeadKind::SingleLinear,
            _ => self.head_kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    pub y_true: f64,
    pub y_pred: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneOutput {
    pub report: MetricReport,
    /// Test predictions per fold.
    pub fold_predictions: Vec<Vec<PredictionRow>>,
    /// Fine-tuned encoder weights per fold (full fine-tuning only).
    pub validation_curves: Vec<Vec<f64>>,
}

enum Target<'a> {
    Numeric(&'a [f64]),
    Binary(&'a [bool]),
}

impl Target<'_> {
    fn numeric_at(&self, idx: &[usize]) -> Vec<f64> {
        match self {
            Target::Numeric(y) => idx.iter().map(|&i| y[i]).collect(),
            Target::Binary(y) => idx.iter().map(|&i| if y[i] { 1.0 } else { 0.0 }).collect(),
        }
    }

    fn binary_at(&self, idx: &[usize]) -> Vec<bool> {
        match self {
            Target::Numeric(_) => panic!("regression target used as binary"),
            Target::Binary(y) => idx.iter().map(|&i| y[i]).collect(),
        }
    }

    fn is_binary(&self) -> bool {
        matches!(self, Target::Binary(_))
    }
}

fn id_positions(ids: &[String]) -> BTreeMap<&str, usize> {
    ids.iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect()
}

fn resolve(ids: &BTreeMap<&str, usize>, wanted: &[String]) -> Result<Vec<usize>, TrainError> {
    wanted
        .iter()
        .map(|id| {
            ids.get(id.as_str())
                .copied()
                .ok_or_else(|| TrainError::UnknownSplitId(id.clone()))
        })
        .collect()
}

fn rows_tensor<T: Real>(x: &Mat, idx: &[usize]) -> Tensor<T> {
    let mut out = Tensor::zeros(vec![idx.len(), x.cols]);
    for (r, &i) in idx.iter().enumerate() {
        for (dst, &v) in out.row_mut(r).iter_mut().zip(x.row(i)) {
            *dst = T::from_f64(v);
        }
    }
    out
}

fn loss_for<T: Real>(
    pred: &Var<T>,
    target: &Target<'_>,
    idx: &[usize],
    pos_weight: f64,
) -> Result<Var<T>, TrainError> {
    Ok(match target {
        Target::Numeric(_) => ops::mse_mean(pred, &target.numeric_at(idx))?,
        Target::Binary(_) => ops::bce_logits_weighted(pred, &target.binary_at(idx), pos_weight)?,
    })
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Train a head on fixed feature vectors for one fold. Returns test
/// predictions (scores for binary tasks) and the validation-loss curve.
fn train_head_on_vectors<T: Real>(
    x: &Mat,
    target: &Target<'_>,
    train_idx: &[usize],
    val_idx: &[usize],
    test_idx: &[usize],
    config: &FinetuneConfig,
    fold_seed: u64,
) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    let spec = HeadSpec::new(config.effective_head_kind(), x.cols);
    let mut head = HeadWeights::<T>::init(&spec, fold_seed)?;
    let mut optimizer = AdamWState::<T>::new(OptimizerHyper {
        weight_decay: config.weight_decay,
        ..OptimizerHyper::default()
    });
    let steps_per_epoch = train_idx.len().div_ceil(config.batch_size).max(1);
    let schedule = CosineSchedule {
        base_lr: config.head_lr,
        min_lr: config.min_lr,
        total_steps: config.max_epochs * steps_per_epoch,
    };

    let eval_loss = |head: &HeadWeights<T>, idx: &[usize]| -> Result<f64, TrainError> {
        if idx.is_empty() {
            return Ok(0.0);
        }
        let xv = Var::constant(rows_tensor::<T>(x, idx));
        let mut session = Session::new();
        let pred = head.forward(&mut session, &xv, &mut Mode::Eval)?;
        Ok(loss_for(&pred, target, idx, config.pos_weight)?
            .value()
            .item()
            .to_f64())
    };

    let mut rng = Rng::seed_from(fold_seed);
    let mut best: Option<(f64, HeadWeights<T>)> = None;
    let mut since_best = 0usize;
    let mut global_step = 0usize;
    let mut val_curve = Vec::new();
    for epoch in 0..config.max_epochs {
        let mut order = train_idx.to_vec();
        rng.shuffle(&mut order);
        let mut dropout_rng = Rng::seed_from(fold_seed ^ (epoch as u64 + 1));
        for chunk in order.chunks(config.batch_size) {
            let xv = Var::constant(rows_tensor::<T>(x, chunk));
            let mut session = Session::new();
            let pred = head.forward(&mut session, &xv, &mut Mode::Train(&mut dropout_rng))?;
            let loss = loss_for(&pred, target, chunk, config.pos_weight)?;
            loss.backward();
            let mut grads = session.gradients();
            clip_gradients(&mut grads, config.grad_clip);
            let lr = cosine_lr(global_step, &schedule);
            optimizer.begin_step();
            for (name, value) in head.named_tensors_mut() {
                if let Some(grad) = grads.get(&name) {
                    optimizer.update(&name, value, grad, lr)?;
                }
            }
            global_step += 1;
        }
        let val_loss = eval_loss(&head, val_idx)?;
        val_curve.push(val_loss);
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, head.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    let best_head = best.map(|(_, h)| h).unwrap_or(head);

    let xt = Var::constant(rows_tensor::<T>(x, test_idx));
    let mut session = Session::new();
    let raw = best_head.forward(&mut session, &xt, &mut Mode::Eval)?;
    let preds: Vec<f64> = raw
        .value()
        .data()
        .iter()
        .map(|v| {
            let z = v.to_f64();
            if target.is_binary() {
                sigmoid(z)
            } else {
                z
            }
        })
        .collect();
    Ok((preds, val_curve))
}

fn metrics_into_report(
    report: &mut BTreeMap<String, Vec<f64>>,
    target: &Target<'_>,
    y_true_num: &[f64],
    preds: &[f64],
) -> Result<(), TrainError> {
    match target {
        Target::Numeric(_) => {
            let m = regression_metrics(y_true_num, preds)?;
            report.entry("r2".into()).or_default().push(m.r2);
            report
                .entry("pearson_r".into())
                .or_default()
                .push(m.pearson_r);
            report.entry("rmse".into()).or_default().push(m.rmse);
            report.entry("mae".into()).or_default().push(m.mae);
        }
        Target::Binary(_) => {
            let labels: Vec<bool> = y_true_num.iter().map(|&v| v > 0.5).collect();
            let m = classification_metrics(&labels, preds, 0.5)?;
            report.entry("roc_auc".into()).or_default().push(m.roc_auc);
            report.entry("pr_auc".into()).or_default().push(m.pr_auc);
            report.entry("mcc".into()).or_default().push(m.mcc);
            report
                .entry("balanced_accuracy".into())
                .or_default()
                .push(m.balanced_accuracy);
        }
    }
    Ok(())
}

fn assemble_output(
    task: &str,
    per_metric: BTreeMap<String, Vec<f64>>,
    fold_predictions: Vec<Vec<PredictionRow>>,
    validation_curves: Vec<Vec<f64>>,
    folds: usize,
) -> FinetuneOutput {
    let mut report = MetricReport::new(task, folds);
    for (name, values) in per_metric {
        report.insert(name, values);
    }
    FinetuneOutput {
        report,
        fold_predictions,
        validation_curves,
    }
}

fn vectors_run<T: Real>(
    task: &str,
    x: &Mat,
    ids: &[String],
    target: Target<'_>,
    split: &DatasetSplit,
    config: &FinetuneConfig,
) -> Result<FinetuneOutput, TrainError> {
    let positions = id_positions(ids);
    let mut per_metric: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut fold_predictions = Vec::new();
    let mut curves = Vec::new();
    for (f, fold) in split.folds.iter().enumerate() {
        let train_idx = resolve(&positions, &fold.train)?;
        let val_idx = resolve(&positions, &fold.val)?;
        let test_idx = resolve(&positions, &fold.test)?;
        let (preds, curve) = train_head_on_vectors::<T>(
            x,
            &target,
            &train_idx,
            &val_idx,
            &test_idx,
            config,
            config.seed ^ ((f as u64 + 1) << 8),
        )?;
        let y_true = target.numeric_at(&test_idx);
        metrics_into_report(&mut per_metric, &target, &y_true, &preds)?;
        fold_predictions.push(
            fold.test
                .iter()
                .zip(y_true.iter().zip(&preds))
                .map(|(id, (&yt, &yp))| PredictionRow {
                    id: id.clone(),
                    y_true: yt,
                    y_pred: yp,
                })
                .collect(),
        );
        curves.push(curve);
    }
    Ok(assemble_output(
        task,
        per_metric,
        fold_predictions,
        curves,
        split.fold_count,
    ))
}

/// Head fine-tuning or linear probing on precomputed feature vectors
/// (frozen-encoder protocols; the encoder is never touched).
pub fn finetune_regression_vectors(
    task: &str,
    x: &Mat,
    ids: &[String],
    y: &[f64],
    split: &DatasetSplit,
    config: &FinetuneConfig,
) -> Result<FinetuneOutput, TrainError> {
    vectors_run::<f32>(task, x, ids, Target::Numeric(y), split, config)
}

/// `finetune_regression_vectors` at an explicit precision.
pub fn finetune_regression_vectors_at<T: Real>(
    task: &str,
    x: &Mat,
    ids: &[String],
    y: &[f64],
    split: &DatasetSplit,
    config: &FinetuneConfig,
) -> Result<FinetuneOutput, TrainError> {
    vectors_run::<T>(task, x, ids, Target::Numeric(y), split, config)
}

/// Binary pair classification on concatenated peptide/protein vectors with
/// the weighted cross-entropy loss.
pub fn finetune_binary_vectors(
    task: &str,
    x: &Mat,
    ids: &[String],
    y: &[bool],
    split: &DatasetSplit,
    config: &FinetuneConfig,
) -> Result<FinetuneOutput, TrainError> {
    vectors_run::<f32>(task, x, ids, Target::Binary(y), split, config)
}

/// `finetune_binary_vectors` at an explicit precision.
pub fn finetune_binary_vectors_at<T: Real>(
    task: &str,
    x: &Mat,
    ids: &[String],
    y: &[bool],
    split: &DatasetSplit,
    config: &FinetuneConfig,
) -> Result<FinetuneOutput, TrainError> {
    vectors_run::<T>(task, x, ids, Target::Binary(y), split, config)
}

/// Mean-pooled embeddings of every sequence under a frozen encoder.
pub fn pooled_embeddings<T: Real>(
    encoder: &EncoderWeights<T>,
    sequences: &[TokenSequence],
    pad_id: u32,
) -> Result<Mat, TrainError> {
    let mut rows = Vec::with_capacity(sequences.len());
    for seq in sequences {
        let mask: Vec<bool> = seq.ids.iter().map(|&id| id != pad_id).collect();
        let mut session = Session::new();
        let pooled = mean_pool(&mut session, encoder, &seq.ids, &mask, &mut Mode::Eval)?;
        rows.push(pooled.value().data().iter().map(|v| v.to_f64()).collect());
    }
    Ok(Mat::from_rows(&rows))
}

/// Regression over token sequences under any of the three protocols. Frozen
/// protocols precompute pooled embeddings once; full fine-tuning
/// backpropagates into the encoder with its own learning rate.
#[allow(clippy::too_many_arguments)]
pub fn finetune_regression_sequences<T: Real>(
    task: &str,
    encoder: &EncoderWeights<T>,
    sequences: &[TokenSequence],
    ids: &[String],
    y: &[f64],
    pad_id: u32,
    split: &DatasetSplit,
    config: &FinetuneConfig,
) -> Result<FinetuneOutput, TrainError> {
    if sequences.len() != ids.len() || ids.len() != y.len() {
        return Err(TrainError::BadConfig(
            "sequences, ids and targets must align".to_string(),
        ));
    }
    match config.protocol {
        Protocol::HeadFinetune | Protocol::LinearProbe => {
            let x = pooled_embeddings(encoder, sequences, pad_id)?;
            finetune_regression_vectors(task, &x, ids, y, split, config)
        }
        Protocol::FullFinetune => {
            full_finetune_sequences(task, encoder, sequences, ids, y, pad_id, split, config)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn full_finetune_sequences<T: Real>(
    task: &str,
    encoder: &EncoderWeights<T>,
    sequences: &[TokenSequence],
    ids: &[String],
    y: &[f64],
    pad_id: u32,
    split: &DatasetSplit,
    config: &FinetuneConfig,
) -> Result<FinetuneOutput, TrainError> {
    let positions = id_positions(ids);
    let masks: Vec<Vec<bool>> = sequences
        .iter()
        .map(|s| s.ids.iter().map(|&id| id != pad_id).collect())
        .collect();
    let spec = HeadSpec::new(config.effective_head_kind(), encoder.config.hidden);
    let target = Target::Numeric(y);

    let forward_batch = |enc: &EncoderWeights<T>,
                         head: &HeadWeights<T>,
                         idx: &[usize],
                         session: &mut Session<T>,
                         mode: &mut Mode<'_>|
     -> Result<Var<T>, TrainError> {
        let mut pooled = Vec::with_capacity(idx.len());
        for &i in idx {
            pooled.push(mean_pool(
                session,
                enc,
                &sequences[i].ids,
                &masks[i],
                mode,
            )?);
        }
        let stacked = ops::concat_rows(&pooled)?;
        head.forward(session, &stacked, mode)
    };

    let mut per_metric: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut fold_predictions = Vec::new();
    let mut curves = Vec::new();
    for (f, fold) in split.folds.iter().enumerate() {
        let fold_seed = config.seed ^ ((f as u64 + 1) << 8);
        let train_idx = resolve(&positions, &fold.train)?;
        let val_idx = resolve(&positions, &fold.val)?;
        let test_idx = resolve(&positions, &fold.test)?;
        let mut enc = encoder.clone();
        let mut head = HeadWeights::<T>::init(&spec, fold_seed)?;
        let mut optimizer = AdamWState::<T>::new(OptimizerHyper {
            weight_decay: config.weight_decay,
            ..OptimizerHyper::default()
        });
        let steps_per_epoch = train_idx.len().div_ceil(config.batch_size).max(1);
        let enc_schedule = CosineSchedule {
            base_lr: config.encoder_lr,
            min_lr: config.min_lr,
            total_steps: config.max_epochs * steps_per_epoch,
        };
        let head_schedule = CosineSchedule {
            base_lr: config.head_lr,
            min_lr: config.min_lr,
            total_steps: config.max_epochs * steps_per_epoch,
        };

        let eval_loss = |enc: &EncoderWeights<T>,
                         head: &HeadWeights<T>,
                         idx: &[usize]|
         -> Result<f64, TrainError> {
            if idx.is_empty() {
                return Ok(0.0);
            }
            let mut session = Session::new();
            let pred = forward_batch(enc, head, idx, &mut session, &mut Mode::Eval)?;
            Ok(loss_for(&pred, &target, idx, config.pos_weight)?
                .value()
                .item()
                .to_f64())
        };

        let mut rng = Rng::seed_from(fold_seed);
        let mut best: Option<(f64, EncoderWeights<T>, HeadWeights<T>)> = None;
        let mut since_best = 0usize;
        let mut global_step = 0usize;
        let mut curve = Vec::new();
        for epoch in 0..config.max_epochs {
            let mut order = train_idx.clone();
            rng.shuffle(&mut order);
            let mut dropout_rng = Rng::seed_from(fold_seed ^ (epoch as u64 + 0x51));
            for chunk in order.chunks(config.batch_size) {
                let mut session = Session::new();
                let pred = forward_batch(
                    &enc,
                    &head,
                    chunk,
                    &mut session,
                    &mut Mode::Train(&mut dropout_rng),
                )?;
                let loss = loss_for(&pred, &target, chunk, config.pos_weight)?;
                loss.backward();
                let mut grads = session.gradients();
                clip_gradients(&mut grads, config.grad_clip);
                let enc_lr = cosine_lr(global_step, &enc_schedule);
                let head_lr = cosine_lr(global_step, &head_schedule);
                optimizer.begin_step();
                for (name, value) in enc.named_tensors_mut() {
                    if let Some(grad) = grads.get(&name) {
                        optimizer.update(&name, value, grad, enc_lr)?;
                    }
                }
                for (name, value) in head.named_tensors_mut() {
                    if let Some(grad) = grads.get(&name) {
                        optimizer.update(&name, value, grad, head_lr)?;
                    }
                }
                global_step += 1;
            }
            let val_loss = eval_loss(&enc, &head, &val_idx)?;
            curve.push(val_loss);
            if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
                best = Some((val_loss, enc.clone(), head.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    break;
                }
            }
        }
        let (_, best_enc, best_head) = best.expect("at least one epoch");
        let mut session = Session::new();
        let raw = forward_batch(&best_enc, &best_head, &test_idx, &mut session, &mut Mode::Eval)?;
        let preds: Vec<f64> = raw.value().data().iter().map(|v| v.to_f64()).collect();
        let y_true = target.numeric_at(&test_idx);
        metrics_into_report(&mut per_metric, &target, &y_true, &preds)?;
        fold_predictions.push(
            fold.test
                .iter()
                .zip(y_true.iter().zip(&preds))
                .map(|(id, (&yt, &yp))| PredictionRow {
                    id: id.clone(),
                    y_true: yt,
                    y_pred: yp,
                })
                .collect(),
        );
        curves.push(curve);
    }
    Ok(assemble_output(
        task,
        per_metric,
        fold_predictions,
        curves,
        split.fold_count,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::splits::make_kfold_splits;

    fn linear_dataset(n: usize, d: usize, seed: u64) -> (Mat, Vec<String>, Vec<f64>) {
        let mut rng = Rng::seed_from(seed);
        let w: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let mut rows = Vec::new();
        let mut y = Vec::new();
        let mut ids = Vec::new();
        for i in 0..n {
            let x: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            y.push(crate::linalg::dot(&x, &w) + 0.25);
            rows.push(x);
            ids.push(format!("s{i:03}"));
        }
        (Mat::from_rows(&rows), ids, y)
    }

    #[test]
    fn linear_probe_fits_exact_linear_targets() {
        let (x, ids, y) = linear_dataset(120, 6, 3);
        let split = make_kfold_splits(&ids, 4, 0.1, 7).unwrap();
        let mut config = FinetuneConfig::new(Protocol::LinearProbe);
        config.head_lr = 0.05;
        config.max_epochs = 300;
        config.patience = 300;
        config.seed = 1;
        let out =
            finetune_regression_vectors("probe", &x, &ids, &y, &split, &config).unwrap();
        let r2 = &out.report.metrics["r2"];
        assert!(r2.mean >= 0.999, "r2 {}", r2.mean);
    }

    #[test]
    fn head_lr_zero_freezes_head() {
        let (x, ids, y) = linear_dataset(40, 4, 9);
        let split = make_kfold_splits(&ids, 2, 0.1, 1).unwrap();
        let mut config = FinetuneConfig::new(Protocol::LinearProbe);
        config.head_lr = 0.0;
        config.max_epochs = 5;
        config.seed = 4;
        // With lr 0 the head never moves, so predictions are those of the
        // freshly initialized head regardless of training.
        let out1 =
            finetune_regression_vectors("frozen", &x, &ids, &y, &split, &config).unwrap();
        config.max_epochs = 1;
        let out2 =
            finetune_regression_vectors("frozen", &x, &ids, &y, &split, &config).unwrap();
        assert_eq!(out1.fold_predictions, out2.fold_predictions);
    }

    fn tiny_sequence_task() -> (
        crate::encoder::EncoderWeights<f32>,
        Vec<TokenSequence>,
        Vec<String>,
        Vec<f64>,
        u32,
    ) {
        let corpus = crate::synthetic::random_corpus(
            91,
            16,
            &crate::synthetic::SyntheticParams {
                max_polymers: 1,
                max_monomers: 4,
                coded_monomer_prob: 0.2,
                connection_prob: 0.2,
                version_prob: 0.5,
            },
        );
        let vocab = crate::tokenizer::Vocabulary::build(
            &corpus,
            &crate::tokenizer::CompressionMap::default_paper(),
        )
        .unwrap();
        let sequences: Vec<TokenSequence> = corpus.iter().map(|s| vocab.encode(s)).collect();
        let ids: Vec<String> = (0..corpus.len()).map(|i| format!("seq{i:02}")).collect();
        // Length is a function the pooled representation can expose.
        let y: Vec<f64> = sequences.iter().map(|s| s.len() as f64 * 0.1).collect();
        let mut cfg = crate::encoder::ModelConfig::new(vocab.size(), 8, 2, 2);
        cfg.max_relative_distance = 4;
        cfg.max_len = 128;
        cfg.dropout_rate = 0.0;
        let weights = crate::encoder::EncoderWeights::<f32>::init(&cfg, 17).unwrap();
        (weights, sequences, ids, y, vocab.special.pad)
    }

    #[test]
    fn full_finetune_trains_encoder_and_head_groups() {
        let (weights, sequences, ids, y, pad) = tiny_sequence_task();
        let split = make_kfold_splits(&ids, 2, 0.1, 5).unwrap();
        let mut config = FinetuneConfig::new(Protocol::FullFinetune);
        config.max_epochs = 3;
        config.patience = 3;
        config.batch_size = 8;
        config.seed = 2;
        let out = finetune_regression_sequences(
            "perm", &weights, &sequences, &ids, &y, pad, &split, &config,
        )
        .unwrap();
        assert_eq!(out.fold_predictions.len(), 2);
        let total: usize = out.fold_predictions.iter().map(|f| f.len()).sum();
        assert_eq!(total, ids.len(), "every record predicted exactly once");
        assert!(out.report.metrics.contains_key("r2"));
        for curve in &out.validation_curves {
            assert!(!curve.is_empty());
            assert!(curve.iter().all(|v| v.is_finite()));
        }
        // With the encoder group silenced, full fine-tuning degenerates to
        // head-only behavior on the same seeds.
        let mut frozen_enc = config.clone();
        frozen_enc.encoder_lr = 0.0;
        let a = finetune_regression_sequences(
            "perm", &weights, &sequences, &ids, &y, pad, &split, &frozen_enc,
        )
        .unwrap();
        let b = finetune_regression_sequences(
            "perm", &weights, &sequences, &ids, &y, pad, &split, &frozen_enc,
        )
        .unwrap();
        assert_eq!(a.fold_predictions, b.fold_predictions, "deterministic");
    }

    #[test]
    fn frozen_protocols_leave_the_encoder_untouched() {
        let (weights, sequences, ids, y, pad) = tiny_sequence_task();
        let before = weights.clone();
        let split = make_kfold_splits(&ids, 2, 0.1, 6).unwrap();
        let mut config = FinetuneConfig::new(Protocol::HeadFinetune);
        config.max_epochs = 2;
        config.patience = 2;
        config.seed = 3;
        finetune_regression_sequences(
            "perm", &weights, &sequences, &ids, &y, pad, &split, &config,
        )
        .unwrap();
        assert_eq!(weights, before, "frozen protocol must not mutate weights");
    }

    #[test]
    fn binary_head_learns_separable_pairs() {
        let mut rng = Rng::seed_from(12);
        let n = 120;
        let mut rows = Vec::new();
        let mut y = Vec::new();
        let mut ids = Vec::new();
        for i in 0..n {
            let label = i % 2 == 0;
            let shift = if label { 1.5 } else { -1.5 };
            rows.push(vec![
                shift + 0.3 * rng.normal(),
                -shift + 0.3 * rng.normal(),
                0.1 * rng.normal(),
            ]);
            y.push(label);
            ids.push(format!("p{i:03}"));
        }
        let x = Mat::from_rows(&rows);
        let split = make_kfold_splits(&ids, 3, 0.1, 2).unwrap();
        let mut config = FinetuneConfig::new(Protocol::HeadFinetune);
        config.head_lr = 0.01;
        config.max_epochs = 60;
        config.patience = 60;
        config.seed = 6;
        let out = finetune_binary_vectors("pairs", &x, &ids, &y, &split, &config).unwrap();
        let auc = &out.report.metrics["roc_auc"];
        assert!(auc.mean > 0.97, "roc auc {}", auc.mean);
        // Scores are probabilities.
        for fold in &out.fold_predictions {
            for row in fold {
                assert!((0.0..=1.0).contains(&row.y_pred));
            }
        }
    }

    #[test]
    fn unknown_split_id_is_reported() {
        let (x, ids, y) = linear_dataset(10, 2, 5);
        let mut split = make_kfold_splits(&ids, 2, 0.1, 3).unwrap();
        split.folds[0].test.push("ghost".to_string());
        let config = FinetuneConfig::new(Protocol::LinearProbe);
        assert!(matches!(
            finetune_regression_vectors("bad", &x, &ids, &y, &split, &config),
            Err(TrainError::UnknownSplitId(id)) if id == "ghost"
        ));
    }

    #[test]
    fn positive_weight_flows_through_config() {
        let config = FinetuneConfig::new(Protocol::HeadFinetune);
        assert_eq!(config.pos_weight, 4.0);
    }
}
