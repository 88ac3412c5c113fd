//! Prediction metrics, embedding probes and cluster-separability indices.

#![allow(clippy::needless_range_loop)]

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::linalg::{euclidean_distance, solve, Mat};
use crate::rng::Rng;
use crate::stats::{mean, sample_std};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("y_true has zero variance")]
    ZeroVariance,
    #[error("y_true contains a single class")]
    SingleClass,
    #[error("inputs have mismatched lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("need at least two distinct labels")]
    TooFewLabels,
    #[error("empty input")]
    EmptyInput,
}

/// Per-fold metric values with mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub per_fold: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl MetricSummary {
    pub fn from_folds(per_fold: Vec<f64>) -> Self {
        let m = mean(&per_fold);
        let std = if per_fold.len() > 1 {
            sample_std(&per_fold)
        } else {
            0.0
        };
        MetricSummary {
            per_fold,
            mean: m,
            std,
        }
    }
}

/// Fold-wise report for one task; the unit the statistics module compares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: String,
    pub fold_count: usize,
    pub metrics: BTreeMap<String, MetricSummary>,
}

impl MetricReport {
    pub fn new(task: impl Into<String>, fold_count: usize) -> Self {
        MetricReport {
            task: task.into(),
            fold_count,
            metrics: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, per_fold: Vec<f64>) {
        assert_eq!(per_fold.len(), self.fold_count, "fold count mismatch");
        self.metrics
            .insert(name.into(), MetricSummary::from_folds(per_fold));
    }

    pub fn to_vectors(&self) -> crate::stats::MetricVectors {
        crate::stats::MetricVectors {
            task: self.task.clone(),
            metrics: self
                .metrics
                .iter()
                .map(|(k, v)| (k.clone(), v.per_fold.clone()))
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Regression metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub r2: f64,
    pub pearson_r: f64,
    pub rmse: f64,
    pub mae: f64,
}

pub fn regression_metrics(y_true: &[f64], y_pred: &[f64]) -> Result<RegressionMetrics, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let my = mean(y_true);
    let ss_tot: f64 = y_true.iter().map(|y| (y - my) * (y - my)).sum();
    if ss_tot == 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    let ss_res: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(y, p)| (y - p) * (y - p))
        .sum();
    let n = y_true.len() as f64;
    let mp = mean(y_pred);
    let cov: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(y, p)| (y - my) * (p - mp))
        .sum();
    let sp: f64 = y_pred.iter().map(|p| (p - mp) * (p - mp)).sum();
    let pearson_r = if sp == 0.0 {
        // Constant predictions are uncorrelated with anything.
        0.0
    } else {
        cov / (ss_tot * sp).sqrt()
    };
    Ok(RegressionMetrics {
        r2: 1.0 - ss_res / ss_tot,
        pearson_r,
        rmse: (ss_res / n).sqrt(),
        mae: y_true
            .iter()
            .zip(y_pred)
            .map(|(y, p)| (y - p).abs())
            .sum::<f64>()
            / n,
    })
}

// ---------------------------------------------------------------------------
// Classification metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub roc_auc: f64,
    pub pr_auc: f64,
    pub mcc: f64,
    pub balanced_accuracy: f64,
}

/// ROC-AUC (rank statistic with midrank tie correction), PR-AUC (step-wise
/// interpolation), MCC and balanced accuracy at `threshold`.
pub fn classification_metrics(
    y_true: &[bool],
    scores: &[f64],
    threshold: f64,
) -> Result<ClassificationMetrics, EvalError> {
    if y_true.len() != scores.len() {
        return Err(EvalError::LengthMismatch(y_true.len(), scores.len()));
    }
    let n_pos = y_true.iter().filter(|&&y| y).count();
    let n_neg = y_true.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }

    let roc_auc = roc_auc_midrank(y_true, scores, n_pos, n_neg);
    let pr_auc = pr_auc_stepwise(y_true, scores, n_pos);

    let (mut tp, mut fp, mut tn, mut fne) = (0.0f64, 0.0, 0.0, 0.0);
    for (&y, &s) in y_true.iter().zip(scores) {
        match (y, s >= threshold) {
            (true, true) => tp += 1.0,
            (true, false) => fne += 1.0,
            (false, true) => fp += 1.0,
            (false, false) => tn += 1.0,
        }
    }
    let denom = ((tp + fp) * (tp + fne) * (tn + fp) * (tn + fne)).sqrt();
    let mcc = if denom == 0.0 {
        0.0
    } else {
        (tp * tn - fp * fne) / denom
    };
    let balanced_accuracy = 0.5 * (tp / (tp + fne) + tn / (tn + fp));

    Ok(ClassificationMetrics {
        roc_auc,
        pr_auc,
        mcc,
        balanced_accuracy,
    })
}

fn roc_auc_midrank(y_true: &[bool], scores: &[f64], n_pos: usize, n_neg: usize) -> f64 {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Midranks over tied score groups.
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = midrank;
        }
        i = j + 1;
    }
    let rank_sum_pos: f64 = y_true
        .iter()
        .zip(&ranks)
        .filter(|(&y, _)| y)
        .map(|(_, &r)| r)
        .sum();
    let np = n_pos as f64;
    (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64)
}

fn pr_auc_stepwise(y_true: &[bool], scores: &[f64], n_pos: usize) -> f64 {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    // Descending by score; stable on ties via index.
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut tp = 0usize;
    let mut auc = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < n {
        // Consume all items sharing one score as a single operating point.
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            if y_true[idx] {
                tp += 1;
            }
        }
        let retrieved = j + 1;
        let precision = tp as f64 / retrieved as f64;
        let recall = tp as f64 / n_pos as f64;
        auc += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    auc
}

/// Multiclass Matthews correlation (Gorodkin's R_K).
pub fn multiclass_mcc(y_true: &[usize], y_pred: &[usize]) -> f64 {
    let s = y_true.len() as f64;
    let n_classes = y_true.iter().chain(y_pred).max().map_or(0, |&m| m + 1);
    let mut t = vec![0.0f64; n_classes];
    let mut p = vec![0.0f64; n_classes];
    let mut correct = 0.0f64;
    for (&yt, &yp) in y_true.iter().zip(y_pred) {
        t[yt] += 1.0;
        p[yp] += 1.0;
        if yt == yp {
            correct += 1.0;
        }
    }
    let sum_tp: f64 = t.iter().zip(&p).map(|(a, b)| a * b).sum();
    let sum_t2: f64 = t.iter().map(|a| a * a).sum();
    let sum_p2: f64 = p.iter().map(|a| a * a).sum();
    let denom = ((s * s - sum_p2) * (s * s - sum_t2)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        (correct * s - sum_tp) / denom
    }
}

// ---------------------------------------------------------------------------
// Linear probing
// ---------------------------------------------------------------------------

/// Probe target: a numeric regression target or integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbeTarget {
    Numeric(Vec<f64>),
    Class(Vec<usize>),
}

/// Ridge regression with unpenalized intercept: returns (weights, intercept).
pub fn ridge_fit(x: &Mat, y: &[f64], l2: f64) -> (Vec<f64>, f64) {
    let (n, d) = (x.rows, x.cols);
    let mut x_mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in x_mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    for m in &mut x_mean {
        *m /= n as f64;
    }
    let y_mean = mean(y);

    // Normal equations on centered data.
    let mut gram = Mat::zeros(d, d);
    let mut xty = vec![0.0; d];
    for i in 0..n {
        let row = x.row(i);
        let yc = y[i] - y_mean;
        for a in 0..d {
            let xa = row[a] - x_mean[a];
            xty[a] += xa * yc;
            for b in a..d {
                gram[(a, b)] += xa * (row[b] - x_mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
        gram[(a, a)] += l2;
    }
    let beta = solve(&gram, &xty).unwrap_or_else(|| vec![0.0; d]);
    let intercept = y_mean - crate::linalg::dot(&beta, &x_mean);
    (beta, intercept)
}

pub fn ridge_predict(x: &Mat, beta: &[f64], intercept: f64) -> Vec<f64> {
    (0..x.rows)
        .map(|i| crate::linalg::dot(x.row(i), beta) + intercept)
        .collect()
}

/// L2-regularized multinomial logistic regression trained by full-batch
/// gradient descent with an adaptive step. Bias is unpenalized.
pub struct LogisticModel {
    /// One (weights, bias) row per class.
    weights: Mat,
    biases: Vec<f64>,
}

impl LogisticModel {
    pub fn fit(x: &Mat, labels: &[usize], n_classes: usize, l2: f64, max_iter: usize) -> Self {
        let (n, d) = (x.rows, x.cols);
        let mut w = Mat::zeros(n_classes, d);
        let mut b = vec![0.0; n_classes];
        let mut lr = 1.0;
        let mut prev_loss = f64::INFINITY;
        for _ in 0..max_iter {
            let mut grad_w = Mat::zeros(n_classes, d);
            let mut grad_b = vec![0.0; n_classes];
            let mut loss = 0.0;
            for i in 0..n {
                let row = x.row(i);
                let mut logits: Vec<f64> = (0..n_classes)
                    .map(|c| crate::linalg::dot(w.row(c), row) + b[c])
                    .collect();
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for l in &mut logits {
                    *l = (*l - max).exp();
                    z += *l;
                }
                for (c, l) in logits.iter().enumerate() {
                    let p = l / z;
                    let indicator = if c == labels[i] { 1.0 } else { 0.0 };
                    if c == labels[i] {
                        loss -= (p.max(1e-300)).ln();
                    }
                    let g = p - indicator;
                    grad_b[c] += g;
                    for (gw, xv) in grad_w.row_mut(c).iter_mut().zip(row) {
                        *gw += g * xv;
                    }
                }
            }
            loss /= n as f64;
            for c in 0..n_classes {
                for (gw, wv) in grad_w.row_mut(c).iter_mut().zip(w.row(c)) {
                    *gw = *gw / n as f64 + l2 * wv;
                }
                grad_b[c] /= n as f64;
                loss += 0.5 * l2 * crate::linalg::dot(w.row(c), w.row(c));
            }
            if loss > prev_loss {
                lr *= 0.5;
                if lr < 1e-8 {
                    break;
                }
            } else {
                lr *= 1.05;
            }
            prev_loss = loss;
            for c in 0..n_classes {
                for (wv, gw) in w.row_mut(c).iter_mut().zip(grad_w.row(c)) {
                    *wv -= lr * gw;
                }
                b[c] -= lr * grad_b[c];
            }
        }
        LogisticModel {
            weights: w,
            biases: b,
        }
    }

    pub fn predict(&self, x: &Mat) -> Vec<usize> {
        (0..x.rows)
            .map(|i| {
                let row = x.row(i);
                (0..self.weights.rows)
                    .map(|c| crate::linalg::dot(self.weights.row(c), row) + self.biases[c])
                    .enumerate()
                    .max_by(|(_, a), (_, b)| a.total_cmp(b))
                    .map(|(c, _)| c)
                    .unwrap_or(0)
            })
            .collect()
    }
}

fn fold_partition(n: usize, folds: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let mut groups = vec![Vec::new(); folds];
    for (i, id) in idx.into_iter().enumerate() {
        groups[i % folds].push(id);
    }
    groups
}

fn select_rows(x: &Mat, rows: &[usize]) -> Mat {
    let mut out = Mat::zeros(rows.len(), x.cols);
    for (r, &i) in rows.iter().enumerate() {
        out.row_mut(r).copy_from_slice(x.row(i));
    }
    out
}

/// Cross-validated linear probe: ridge regression for numeric targets,
/// multinomial logistic for class targets, with the L2 strength selected on
/// an inner validation split of each training fold.
pub fn linear_probe_cv(
    embeddings: &Mat,
    target: &ProbeTarget,
    folds: usize,
    l2_grid: &[f64],
    seed: u64,
) -> Result<MetricReport, EvalError> {
    let n = embeddings.rows;
    let target_len = match target {
        ProbeTarget::Numeric(y) => y.len(),
        ProbeTarget::Class(y) => y.len(),
    };
    if target_len != n {
        return Err(EvalError::LengthMismatch(n, target_len));
    }
    if n < folds || folds < 2 {
        return Err(EvalError::TooFewSamples { need: folds, got: n });
    }
    let grid: Vec<f64> = if l2_grid.is_empty() {
        vec![1e-3, 1e-2, 1e-1, 1.0, 10.0]
    } else {
        l2_grid.to_vec()
    };
    let mut rng = Rng::seed_from(seed);
    let groups = fold_partition(n, folds, &mut rng);

    let mut r2s = Vec::new();
    let mut accs = Vec::new();
    let mut mccs = Vec::new();
    for fold in 0..folds {
        let test_idx = &groups[fold];
        let train_idx: Vec<usize> = (0..folds)
            .filter(|&g| g != fold)
            .flat_map(|g| groups[g].iter().copied())
            .collect();
        // Inner 80/20 split for selecting the regularization strength.
        let mut inner = train_idx.clone();
        rng.derive(fold as u64).shuffle(&mut inner);
        let n_val = (inner.len() / 5).max(1);
        let (inner_val, inner_train) = inner.split_at(n_val);

        let x_train = select_rows(embeddings, &train_idx);
        let x_test = select_rows(embeddings, test_idx);
        let x_inner_train = select_rows(embeddings, inner_train);
        let x_inner_val = select_rows(embeddings, inner_val);

        match target {
            ProbeTarget::Numeric(y) => {
                let pick = |idx: &[usize]| -> Vec<f64> { idx.iter().map(|&i| y[i]).collect() };
                let mut best = (f64::NEG_INFINITY, grid[0]);
                for &l2 in &grid {
                    let (beta, b0) = ridge_fit(&x_inner_train, &pick(inner_train), l2);
                    let pred = ridge_predict(&x_inner_val, &beta, b0);
                    let score = regression_metrics(&pick(inner_val), &pred)
                        .map(|m| m.r2)
                        .unwrap_or(f64::NEG_INFINITY);
                    if score > best.0 {
                        best = (score, l2);
                    }
                }
                let (beta, b0) = ridge_fit(&x_train, &pick(&train_idx), best.1);
                let pred = ridge_predict(&x_test, &beta, b0);
                r2s.push(regression_metrics(&pick(test_idx), &pred)?.r2);
            }
            ProbeTarget::Class(y) => {
                let n_classes = y.iter().max().map_or(0, |&m| m + 1);
                if n_classes < 2 {
                    return Err(EvalError::TooFewLabels);
                }
                let pick = |idx: &[usize]| -> Vec<usize> { idx.iter().map(|&i| y[i]).collect() };
                let mut best = (f64::NEG_INFINITY, grid[0]);
                for &l2 in &grid {
                    let model =
                        LogisticModel::fit(&x_inner_train, &pick(inner_train), n_classes, l2, 200);
                    let pred = model.predict(&x_inner_val);
                    let truth = pick(inner_val);
                    let acc = accuracy(&truth, &pred);
                    if acc > best.0 {
                        best = (acc, l2);
                    }
                }
                let model = LogisticModel::fit(&x_train, &pick(&train_idx), n_classes, best.1, 300);
                let pred = model.predict(&x_test);
                let truth = pick(test_idx);
                accs.push(accuracy(&truth, &pred));
                mccs.push(multiclass_mcc(&truth, &pred));
            }
        }
    }

    let mut report = MetricReport::new("linear_probe", folds);
    match target {
        ProbeTarget::Numeric(_) => report.insert("r2", r2s),
        ProbeTarget::Class(_) => {
            report.insert("accuracy", accs);
            report.insert("mcc", mccs);
        }
    }
    Ok(report)
}

pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> f64 {
    let hits = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    hits as f64 / y_true.len() as f64
}

// ---------------------------------------------------------------------------
// K-NN classification
// ---------------------------------------------------------------------------

/// Leave-one-out k-nearest-neighbor accuracy (Euclidean metric). Vote ties
/// are broken by the nearest neighbor's label; distance ties by index order.
pub fn knn_classify(embeddings: &Mat, labels: &[usize], k: usize) -> Result<f64, EvalError> {
    let n = embeddings.rows;
    if labels.len() != n {
        return Err(EvalError::LengthMismatch(n, labels.len()));
    }
    if n < 2 {
        return Err(EvalError::TooFewSamples { need: 2, got: n });
    }
    let mut hits = 0usize;
    for i in 0..n {
        let mut neighbors: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (euclidean_distance(embeddings.row(i), embeddings.row(j)), j))
            .collect();
        neighbors.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let top = &neighbors[..k.min(neighbors.len())];
        let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
        for &(_, j) in top {
            *votes.entry(labels[j]).or_insert(0) += 1;
        }
        let max_votes = votes.values().copied().max().unwrap_or(0);
        let tied: Vec<usize> = votes
            .iter()
            .filter(|(_, &v)| v == max_votes)
            .map(|(&l, _)| l)
            .collect();
        let predicted = if tied.len() == 1 {
            tied[0]
        } else {
            // Nearest neighbor among the tied labels decides.
            top.iter()
                .map(|&(_, j)| labels[j])
                .find(|l| tied.contains(l))
                .expect("tied label present among neighbors")
        };
        if predicted == labels[i] {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

// ---------------------------------------------------------------------------
// Cluster separability indices
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterIndices {
    pub silhouette: f64,
    pub davies_bouldin: f64,
    pub calinski_harabasz: f64,
}

/// Silhouette score, Davies-Bouldin index and Calinski-Harabasz index with
/// Euclidean distances, applied to ground-truth labels. Points in singleton
/// clusters contribute silhouette 0.
pub fn clustering_indices(
    embeddings: &Mat,
    labels: &[usize],
) -> Result<ClusterIndices, EvalError> {
    let n = embeddings.rows;
    if labels.len() != n {
        return Err(EvalError::LengthMismatch(n, labels.len()));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(EvalError::TooFewLabels);
    }
    let members: Vec<Vec<usize>> = classes
        .iter()
        .map(|&c| (0..n).filter(|&i| labels[i] == c).collect())
        .collect();

    // Silhouette.
    let mut sil_sum = 0.0;
    for i in 0..n {
        let own = classes.iter().position(|&c| c == labels[i]).unwrap();
        if members[own].len() == 1 {
            continue; // singleton: s = 0
        }
        let a = members[own]
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| euclidean_distance(embeddings.row(i), embeddings.row(j)))
            .sum::<f64>()
            / (members[own].len() - 1) as f64;
        let b = members
            .iter()
            .enumerate()
            .filter(|(c, _)| *c != own)
            .map(|(_, m)| {
                m.iter()
                    .map(|&j| euclidean_distance(embeddings.row(i), embeddings.row(j)))
                    .sum::<f64>()
                    / m.len() as f64
            })
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            sil_sum += (b - a) / denom;
        }
    }
    let silhouette = sil_sum / n as f64;

    // Centroids and within-cluster dispersion.
    let d = embeddings.cols;
    let k = classes.len();
    let mut centroids = Mat::zeros(k, d);
    for (c, m) in members.iter().enumerate() {
        for &i in m {
            for (acc, v) in centroids.row_mut(c).iter_mut().zip(embeddings.row(i)) {
                *acc += v;
            }
        }
        for acc in centroids.row_mut(c) {
            *acc /= m.len() as f64;
        }
    }
    let mut global = vec![0.0; d];
    for i in 0..n {
        for (g, v) in global.iter_mut().zip(embeddings.row(i)) {
            *g += v;
        }
    }
    for g in &mut global {
        *g /= n as f64;
    }

    // Davies-Bouldin: mean over clusters of the worst (S_i + S_j) / M_ij.
    let scatter: Vec<f64> = members
        .iter()
        .enumerate()
        .map(|(c, m)| {
            m.iter()
                .map(|&i| euclidean_distance(embeddings.row(i), centroids.row(c)))
                .sum::<f64>()
                / m.len() as f64
        })
        .collect();
    let mut db_sum = 0.0;
    for i in 0..k {
        let mut worst = 0.0f64;
        for j in 0..k {
            if i == j {
                continue;
            }
            let m_ij = euclidean_distance(centroids.row(i), centroids.row(j));
            let num = scatter[i] + scatter[j];
            let ratio = if num == 0.0 {
                0.0
            } else if m_ij == 0.0 {
                f64::INFINITY
            } else {
                num / m_ij
            };
            worst = worst.max(ratio);
        }
        db_sum += worst;
    }
    let davies_bouldin = db_sum / k as f64;

    // Calinski-Harabasz: between/within variance ratio.
    let between: f64 = members
        .iter()
        .enumerate()
        .map(|(c, m)| {
            let dist = euclidean_distance(centroids.row(c), &global);
            m.len() as f64 * dist * dist
        })
        .sum();
    let within: f64 = members
        .iter()
        .enumerate()
        .map(|(c, m)| {
            m.iter()
                .map(|&i| {
                    let dist = euclidean_distance(embeddings.row(i), centroids.row(c));
                    dist * dist
                })
                .sum::<f64>()
        })
        .sum();
    let calinski_harabasz = if within == 0.0 {
        if between == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (between / (k as f64 - 1.0)) / (within / (n as f64 - k as f64))
    };

    Ok(ClusterIndices {
        silhouette,
        davies_bouldin,
        calinski_harabasz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regression_perfect_prediction() {
        let y = [1.0, 2.0, 3.0];
        let m = regression_metrics(&y, &y).unwrap();
        assert_eq!(m.r2, 1.0);
        assert!((m.pearson_r - 1.0).abs() < 1e-12);
        assert_eq!(m.rmse, 0.0);
        assert_eq!(m.mae, 0.0);
    }

    #[test]
    fn regression_constant_mean_prediction_gives_zero_r2() {
        let y = [1.0, 2.0, 3.0];
        let m = regression_metrics(&y, &[2.0, 2.0, 2.0]).unwrap();
        assert!(m.r2.abs() < 1e-12);
    }

    #[test]
    fn regression_hand_example() {
        let m = regression_metrics(&[0.0, 1.0, 2.0], &[0.0, 1.0, 1.0]).unwrap();
        assert!((m.mae - 1.0 / 3.0).abs() < 1e-12);
        assert!((m.rmse - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((m.r2 - 0.5).abs() < 1e-12);
        assert!((m.pearson_r - 3.0f64.sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn regression_zero_variance_truth_is_error() {
        assert_eq!(
            regression_metrics(&[1.0, 1.0], &[1.0, 2.0]),
            Err(EvalError::ZeroVariance)
        );
    }

    #[test]
    fn classification_perfect_ranking() {
        let y = [true, true, false, false];
        let s = [0.9, 0.8, 0.2, 0.1];
        let m = classification_metrics(&y, &s, 0.5).unwrap();
        assert_eq!(m.roc_auc, 1.0);
        assert!((m.pr_auc - 1.0).abs() < 1e-12);
        assert_eq!(m.mcc, 1.0);
        assert_eq!(m.balanced_accuracy, 1.0);
    }

    #[test]
    fn classification_hand_example() {
        let y = [true, false, true, false];
        let s = [0.9, 0.8, 0.7, 0.1];
        let m = classification_metrics(&y, &s, 0.5).unwrap();
        assert!((m.roc_auc - 0.75).abs() < 1e-12);
        // AP: positive at rank 1 (P=1) and rank 3 (P=2/3), each 1/2 recall.
        assert!((m.pr_auc - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
        // Threshold 0.5: TP=2 FP=1 TN=1 FN=0.
        assert!((m.mcc - 2.0 / 12.0f64.sqrt()).abs() < 1e-12);
        assert!((m.balanced_accuracy - 0.75).abs() < 1e-12);
    }

    #[test]
    fn classification_ties_use_midranks() {
        let m = classification_metrics(&[true, false], &[0.5, 0.5], 0.5).unwrap();
        assert!((m.roc_auc - 0.5).abs() < 1e-12);
    }

    #[test]
    fn classification_single_class_is_error() {
        assert_eq!(
            classification_metrics(&[true, true], &[0.5, 0.6], 0.5),
            Err(EvalError::SingleClass)
        );
    }

    #[test]
    fn random_scores_give_half_auc() {
        let mut rng = Rng::seed_from(12345);
        let n = 100_000;
        let y: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let s: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let m = classification_metrics(&y, &s, 0.5).unwrap();
        assert!((m.roc_auc - 0.5).abs() < 0.02, "auc {}", m.roc_auc);
    }

    #[test]
    fn roc_matches_pairwise_bruteforce() {
        let mut rng = Rng::seed_from(77);
        for case in 0..24 {
            // Cover the full documented range, including n = 500.
            let n = if case < 20 { 30 + rng.below(100) } else { 500 };
            let y: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.4)).collect();
            if y.iter().all(|&b| b) || y.iter().all(|&b| !b) {
                continue;
            }
            // Coarse scores force ties.
            let s: Vec<f64> = (0..n).map(|_| (rng.below(10) as f64) / 10.0).collect();
            let m = classification_metrics(&y, &s, 0.5).unwrap();
            let mut num = 0.0;
            let mut count = 0.0;
            for i in 0..n {
                if !y[i] {
                    continue;
                }
                for j in 0..n {
                    if y[j] {
                        continue;
                    }
                    count += 1.0;
                    if s[i] > s[j] {
                        num += 1.0;
                    } else if s[i] == s[j] {
                        num += 0.5;
                    }
                }
            }
            assert!((m.roc_auc - num / count).abs() < 1e-12);
        }
    }

    #[test]
    fn probe_recovers_exact_linear_map() {
        let mut rng = Rng::seed_from(5);
        let n = 120;
        let d = 6;
        let mut x = Mat::zeros(n, d);
        for i in 0..n {
            for j in 0..d {
                x[(i, j)] = rng.normal();
            }
        }
        let w = [0.5, -1.0, 2.0, 0.0, 0.3, 1.5];
        let y: Vec<f64> = (0..n)
            .map(|i| crate::linalg::dot(x.row(i), &w) + 0.7)
            .collect();
        let report = linear_probe_cv(&x, &ProbeTarget::Numeric(y), 5, &[], 13).unwrap();
        let r2 = &report.metrics["r2"];
        assert!(r2.mean >= 0.999, "mean r2 {}", r2.mean);
    }

    #[test]
    fn probe_is_deterministic_given_seed() {
        let mut rng = Rng::seed_from(41);
        let rows: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.normal(), rng.normal()]).collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0] - r[1]).collect();
        let x = Mat::from_rows(&rows);
        let a = linear_probe_cv(&x, &ProbeTarget::Numeric(y.clone()), 5, &[], 9).unwrap();
        let b = linear_probe_cv(&x, &ProbeTarget::Numeric(y), 5, &[], 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn probe_separable_classes_reach_full_accuracy() {
        let mut rng = Rng::seed_from(6);
        let n_per = 40;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..3usize {
            let center = [4.0 * c as f64, -3.0 * c as f64];
            for _ in 0..n_per {
                rows.push(vec![
                    center[0] + 0.2 * rng.normal(),
                    center[1] + 0.2 * rng.normal(),
                ]);
                labels.push(c);
            }
        }
        let x = Mat::from_rows(&rows);
        let report = linear_probe_cv(&x, &ProbeTarget::Class(labels), 5, &[], 21).unwrap();
        assert_eq!(report.metrics["accuracy"].mean, 1.0);
        assert_eq!(report.metrics["mcc"].mean, 1.0);
    }

    #[test]
    fn knn_separated_clusters() {
        let mut rng = Rng::seed_from(8);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..3usize {
            for _ in 0..50 {
                rows.push(vec![
                    10.0 * c as f64 + 0.3 * rng.normal(),
                    -8.0 * c as f64 + 0.3 * rng.normal(),
                ]);
                labels.push(c);
            }
        }
        let x = Mat::from_rows(&rows);
        assert_eq!(knn_classify(&x, &labels, 3).unwrap(), 1.0);
    }

    #[test]
    fn knn_k1_matches_nearest_neighbor_rule() {
        let x = Mat::from_rows(&[
            vec![0.0],
            vec![0.1],
            vec![5.0],
            vec![5.1],
            vec![9.0],
        ]);
        let labels = [0, 0, 1, 1, 0];
        // Nearest neighbors: 1<-0, 0<-1, 3<-2, 2<-3, 3<-4 (label 1, mismatch).
        let expected = 4.0 / 5.0;
        assert_eq!(knn_classify(&x, &labels, 1).unwrap(), expected);
    }

    #[test]
    fn knn_duplicate_points_tie_rule_is_deterministic() {
        // Three identical points with conflicting labels plus one more: the
        // nearest neighbor (lowest index among ties) decides.
        let x = Mat::from_rows(&[vec![0.0], vec![0.0], vec![0.0], vec![0.0]]);
        let labels = [0, 1, 2, 0];
        let acc = knn_classify(&x, &labels, 3).unwrap();
        // Point 0: neighbors 1,2,3 vote 1,2,0 tied; nearest is 1 -> wrong.
        // Point 1: neighbors 0,2,3 vote 0,2,0; majority 0 -> wrong.
        // Point 2: neighbors 0,1,3 vote 0,1,0; majority 0 -> wrong.
        // Point 3: neighbors 0,1,2 vote 0,1,2 tied; nearest is 0 -> correct.
        assert_eq!(acc, 0.25);
    }

    #[test]
    fn silhouette_two_cluster_hand_example() {
        let x = Mat::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![10.0, 10.0],
            vec![10.0, 11.0],
        ]);
        let idx = clustering_indices(&x, &[0, 0, 1, 1]).unwrap();
        // a(i) = 1 for every point; b by explicit distances.
        let b00 = (200.0f64.sqrt() + 221.0f64.sqrt()) / 2.0;
        let b01 = (181.0f64.sqrt() + 200.0f64.sqrt()) / 2.0;
        let expected = ((1.0 - 1.0 / b00) + (1.0 - 1.0 / b01)) / 2.0;
        assert!(
            (idx.silhouette - expected).abs() < 1e-6,
            "{} vs {expected}",
            idx.silhouette
        );
    }

    #[test]
    fn degenerate_identical_points() {
        let x = Mat::from_rows(&vec![vec![1.0, 1.0]; 6]);
        let idx = clustering_indices(&x, &[0, 0, 0, 1, 1, 1]).unwrap();
        assert_eq!(idx.silhouette, 0.0);
        assert_eq!(idx.calinski_harabasz, 0.0);
    }

    #[test]
    fn separation_improves_indices() {
        let build = |gap: f64| {
            let mut rows = Vec::new();
            let mut labels = Vec::new();
            let mut rng = Rng::seed_from(3);
            for c in 0..2usize {
                for _ in 0..20 {
                    rows.push(vec![gap * c as f64 + 0.1 * rng.normal(), 0.1 * rng.normal()]);
                    labels.push(c);
                }
            }
            clustering_indices(&Mat::from_rows(&rows), &labels).unwrap()
        };
        let near = build(2.0);
        let far = build(20.0);
        assert!(far.calinski_harabasz > near.calinski_harabasz);
        assert!(far.davies_bouldin < near.davies_bouldin);
        assert!(far.silhouette > near.silhouette);
    }

    #[test]
    fn indices_stay_in_documented_ranges() {
        let mut rng = Rng::seed_from(91);
        for _ in 0..20 {
            let n = 10 + rng.below(30);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| vec![rng.normal(), rng.normal(), rng.normal()])
                .collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.below(3)).collect();
            let distinct = {
                let mut l = labels.clone();
                l.sort_unstable();
                l.dedup();
                l.len()
            };
            if distinct < 2 {
                continue;
            }
            let idx = clustering_indices(&Mat::from_rows(&rows), &labels).unwrap();
            assert!((-1.0..=1.0).contains(&idx.silhouette));
            assert!(idx.davies_bouldin >= 0.0);
            assert!(idx.calinski_harabasz >= 0.0);
        }
    }

    #[test]
    fn multiclass_mcc_perfect_and_degenerate() {
        assert_eq!(multiclass_mcc(&[0, 1, 2, 0], &[0, 1, 2, 0]), 1.0);
        assert_eq!(multiclass_mcc(&[0, 1], &[1, 1]), 0.0);
    }
}
