//! Fold-wise model comparison: corrected resampled t-test, Benjamini-Hochberg
//! FDR adjustment and Cohen's d effect sizes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("need at least two folds, got {0}")]
    TooFewFolds(usize),
    #[error("fold counts differ: {0} vs {1}")]
    FoldCountMismatch(usize, usize),
    #[error("p-value {0} outside [0, 1]")]
    PValueOutOfRange(f64),
    #[error("zero variance in fold differences")]
    ZeroVariance,
    #[error("train/test sizes must be positive")]
    BadSampleSizes,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with the n-1 convention.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn sample_std(xs: &[f64]) -> f64 {
    sample_variance(xs).sqrt()
}

// ---------------------------------------------------------------------------
// Student-t distribution via the regularized incomplete beta function.
// ---------------------------------------------------------------------------

/// Lanczos approximation of ln Gamma(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEFFS[0];
    for (i, c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 400;
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        // Even step.
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        // Odd step.
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    assert!((0.0..=1.0).contains(&x), "x must lie in [0, 1]");
    if x == 0.0 {
        return 0.0;
    }
    if x == 1.0 {
        return 1.0;
    }
    let ln_front =
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// CDF of Student's t with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    let tail = 0.5 * incomplete_beta(0.5 * df, 0.5, x);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Two-sided p-value for an observed t statistic.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    incomplete_beta(0.5 * df, 0.5, x).min(1.0)
}

// ---------------------------------------------------------------------------
// Corrected resampled t-test
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub p: f64,
    /// True when the fold differences have zero variance and the statistic is
    /// reported by convention rather than computed.
    pub degenerate: bool,
}

/// Corrected resampled t-test over k fold-wise differences:
/// t = mean / sqrt((1/k + n_test/n_train) * var), p two-sided from t with
/// k-1 degrees of freedom. The correction widens the naive paired test to
/// account for overlapping training sets.
pub fn corrected_resampled_ttest(
    diffs: &[f64],
    n_train: usize,
    n_test: usize,
) -> Result<TTestResult, StatsError> {
    let k = diffs.len();
    if k < 2 {
        return Err(StatsError::TooFewFolds(k));
    }
    if n_train == 0 || n_test == 0 {
        return Err(StatsError::BadSampleSizes);
    }
    let m = mean(diffs);
    let var = sample_variance(diffs);
    if var == 0.0 {
        return Ok(if m == 0.0 {
            TTestResult {
                t: 0.0,
                p: 1.0,
                degenerate: true,
            }
        } else {
            TTestResult {
                t: if m > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY },
                p: 0.0,
                degenerate: true,
            }
        });
    }
    let correction = 1.0 / k as f64 + n_test as f64 / n_train as f64;
    let t = m / (correction * var).sqrt();
    let p = student_t_two_sided_p(t, k as f64 - 1.0);
    Ok(TTestResult {
        t,
        p,
        degenerate: false,
    })
}

// ---------------------------------------------------------------------------
// Benjamini-Hochberg step-up procedure
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdrResult {
    /// Rejection flags, in input order.
    pub reject: Vec<bool>,
    /// Adjusted p-values, in input order.
    pub adjusted: Vec<f64>,
}

/// Benjamini-Hochberg FDR control at level `q`: sort p ascending, reject all
/// i <= i* where i* = max{i : p_(i) <= (i/m) q}; adjusted p_(i) =
/// min_{j >= i} (m p_(j) / j) capped at 1.
pub fn bh_fdr(p_values: &[f64], q: f64) -> Result<FdrResult, StatsError> {
    for &p in p_values {
        if !(0.0..=1.0).contains(&p) || p.is_nan() {
            return Err(StatsError::PValueOutOfRange(p));
        }
    }
    let m = p_values.len();
    if m == 0 {
        return Ok(FdrResult {
            reject: vec![],
            adjusted: vec![],
        });
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));

    // Largest i with p_(i) <= (i/m) q (1-based rank).
    let mut cutoff_rank = 0;
    for (rank0, &idx) in order.iter().enumerate() {
        let rank = rank0 + 1;
        if p_values[idx] <= rank as f64 / m as f64 * q {
            cutoff_rank = rank;
        }
    }

    let mut adjusted_sorted = vec![0.0; m];
    let mut running_min = 1.0_f64;
    for rank0 in (0..m).rev() {
        let idx = order[rank0];
        let candidate = (m as f64 * p_values[idx] / (rank0 as f64 + 1.0)).min(1.0);
        running_min = running_min.min(candidate);
        adjusted_sorted[rank0] = running_min;
    }

    let mut reject = vec![false; m];
    let mut adjusted = vec![0.0; m];
    for (rank0, &idx) in order.iter().enumerate() {
        reject[idx] = rank0 < cutoff_rank;
        adjusted[idx] = adjusted_sorted[rank0];
    }
    Ok(FdrResult { reject, adjusted })
}

// ---------------------------------------------------------------------------
// Cohen's d
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectMagnitude {
    Negligible,
    Small,
    Medium,
    Large,
}

impl EffectMagnitude {
    /// Conventional thresholds: |d| < 0.2 negligible, 0.2 <= |d| < 0.5 small,
    /// 0.5 <= |d| < 0.8 medium, |d| >= 0.8 large.
    pub fn from_d(d: f64) -> Self {
        let a = d.abs();
        if a < 0.2 {
            EffectMagnitude::Negligible
        } else if a < 0.5 {
            EffectMagnitude::Small
        } else if a < 0.8 {
            EffectMagnitude::Medium
        } else {
            EffectMagnitude::Large
        }
    }
}

/// Cohen's d for fold-wise differences: mean / sample standard deviation.
pub fn cohens_d(diffs: &[f64]) -> Result<f64, StatsError> {
    if diffs.len() < 2 {
        return Err(StatsError::TooFewFolds(diffs.len()));
    }
    let sd = sample_std(diffs);
    if sd == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok(mean(diffs) / sd)
}

// ---------------------------------------------------------------------------
// Comparison reports
// ---------------------------------------------------------------------------

/// Fold-wise metric vectors for one model on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricVectors {
    pub task: String,
    /// Metric name -> one value per fold.
    pub metrics: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub metric: String,
    pub fold_differences: Vec<f64>,
    pub t: f64,
    pub raw_p: f64,
    pub adjusted_p: f64,
    /// Dagger convention: adjusted p below the FDR level.
    pub significant: bool,
    pub cohens_d: Option<f64>,
    pub magnitude: Option<EffectMagnitude>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub task: String,
    pub n_train: usize,
    pub n_test: usize,
    pub fdr_level: f64,
    pub comparisons: Vec<PairComparison>,
}

/// Compare two models metric-by-metric (differences are a minus b), adjusting
/// p-values across the shared metrics with Benjamini-Hochberg.
pub fn compare_metric_sets(
    a: &MetricVectors,
    b: &MetricVectors,
    n_train: usize,
    n_test: usize,
    fdr_level: f64,
) -> Result<ComparisonReport, StatsError> {
    let mut metrics = Vec::new();
    let mut tests = Vec::new();
    let mut diff_sets = Vec::new();
    for (name, va) in &a.metrics {
        let Some(vb) = b.metrics.get(name) else {
            continue;
        };
        if va.len() != vb.len() {
            return Err(StatsError::FoldCountMismatch(va.len(), vb.len()));
        }
        let diffs: Vec<f64> = va.iter().zip(vb).map(|(x, y)| x - y).collect();
        tests.push(corrected_resampled_ttest(&diffs, n_train, n_test)?);
        metrics.push(name.clone());
        diff_sets.push(diffs);
    }
    let raw_ps: Vec<f64> = tests.iter().map(|t| t.p).collect();
    let fdr = bh_fdr(&raw_ps, fdr_level)?;
    let comparisons = metrics
        .into_iter()
        .zip(diff_sets)
        .zip(tests)
        .zip(fdr.reject.iter().zip(&fdr.adjusted))
        .map(|(((metric, diffs), test), (&reject, &adjusted))| {
            let d = cohens_d(&diffs).ok();
            PairComparison {
                metric,
                t: test.t,
                raw_p: test.p,
                adjusted_p: adjusted,
                significant: reject,
                magnitude: d.map(EffectMagnitude::from_d),
                cohens_d: d,
                degenerate: test.degenerate || d.is_none(),
                fold_differences: diffs,
            }
        })
        .collect();
    Ok(ComparisonReport {
        task: a.task.clone(),
        n_train,
        n_test,
        fdr_level,
        comparisons,
    })
}
