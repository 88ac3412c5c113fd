//! PCA reduction of signature vectors (e.g. 3600-dim aCSM down to 50).

use super::CorpusError;
use crate::linalg::{jacobi_eigen_symmetric, Mat};

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    /// n x dims projection of the centered data.
    pub projected: Mat,
    /// d x dims principal components (columns). Rank-deficient inputs keep
    /// the available components and zero-pad the rest.
    pub components: Mat,
    /// Explained variance per retained component, non-increasing.
    pub explained_variance: Vec<f64>,
    pub mean: Vec<f64>,
    /// Number of non-degenerate components actually recovered.
    pub rank: usize,
}

/// Mean-centered projection onto the top `dims` principal components,
/// eigenvalues in descending order, each component's sign fixed so its
/// largest-magnitude loading is positive.
pub fn pca_reduce(data: &Mat, dims: usize) -> Result<PcaResult, CorpusError> {
    let (n, d) = (data.rows, data.cols);
    if n < dims {
        return Err(CorpusError::TooFewPoints { need: dims, got: n });
    }
    if dims == 0 || dims > d {
        return Err(CorpusError::Format(format!(
            "requested {dims} components from {d}-dimensional data"
        )));
    }

    let mut mean = vec![0.0f64; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(data.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut centered = data.clone();
    for i in 0..n {
        for (v, m) in centered.row_mut(i).iter_mut().zip(&mean) {
            *v -= m;
        }
    }

    // Eigendecompose the smaller Gram matrix.
    let (eigenvalues, components_full) = if n <= d {
        let gram = centered.matmul(&centered.transpose());
        let (vals, vecs) = jacobi_eigen_symmetric(&gram);
        // Components are X^T u / sqrt(lambda).
        let mut comp = Mat::zeros(d, vals.len());
        let xt = centered.transpose();
        for (c, &lambda) in vals.iter().enumerate() {
            if lambda <= 0.0 {
                continue;
            }
            let inv = 1.0 / lambda.sqrt();
            for row in 0..d {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += xt[(row, k)] * vecs[(k, c)];
                }
                comp[(row, c)] = acc * inv;
            }
        }
        (vals, comp)
    } else {
        let cov = centered.transpose().matmul(&centered);
        jacobi_eigen_symmetric(&cov)
    };

    let max_eig = eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    let tol = max_eig * 1e-10;
    let mut components = Mat::zeros(d, dims);
    let mut explained = Vec::with_capacity(dims);
    let mut rank = 0usize;
    for c in 0..dims {
        let lambda = eigenvalues.get(c).copied().unwrap_or(0.0);
        if lambda <= tol {
            // Degenerate directions stay zero-padded.
            explained.push(0.0);
            continue;
        }
        rank += 1;
        explained.push(lambda / (n as f64 - 1.0).max(1.0));
        // Sign convention: largest-magnitude loading positive.
        let mut max_abs = 0.0;
        let mut sign = 1.0;
        for row in 0..d {
            let v = components_full[(row, c)];
            if v.abs() > max_abs {
                max_abs = v.abs();
                sign = if v >= 0.0 { 1.0 } else { -1.0 };
            }
        }
        for row in 0..d {
            components[(row, c)] = components_full[(row, c)] * sign;
        }
    }

    let projected = centered.matmul(&components);
    Ok(PcaResult {
        projected,
        components,
        explained_variance: explained,
        mean,
        rank,
    })
}

/// Project new centered data onto previously fitted components.
pub fn pca_transform(fit: &PcaResult, data: &Mat) -> Mat {
    let mut centered = data.clone();
    for i in 0..centered.rows {
        for (v, m) in centered.row_mut(i).iter_mut().zip(&fit.mean) {
            *v -= m;
        }
    }
    centered.matmul(&fit.components)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn planar_data_reconstructs_exactly() {
        // Points lying in a 2-D plane embedded in 5-D.
        let mut rng = Rng::seed_from(14);
        let basis = [
            [1.0, 0.0, 2.0, -1.0, 0.5],
            [0.0, 1.0, -1.0, 0.5, 2.0],
        ];
        let n = 30;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let (a, b) = (rng.normal(), rng.normal());
                (0..5).map(|j| a * basis[0][j] + b * basis[1][j]).collect()
            })
            .collect();
        let data = Mat::from_rows(&rows);
        let fit = pca_reduce(&data, 2).unwrap();
        assert_eq!(fit.rank, 2);
        // Reconstruction: projected * components^T + mean.
        let recon = fit.projected.matmul(&fit.components.transpose());
        for i in 0..n {
            for j in 0..5 {
                let rebuilt = recon[(i, j)] + fit.mean[j];
                assert!((rebuilt - data[(i, j)]).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn components_are_orthonormal() {
        let mut rng = Rng::seed_from(15);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..6).map(|_| rng.normal()).collect())
            .collect();
        let fit = pca_reduce(&Mat::from_rows(&rows), 4).unwrap();
        let gram = fit.components.transpose().matmul(&fit.components);
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - expect).abs() < 1e-10, "({i},{j})");
            }
        }
    }

    #[test]
    fn explained_variance_is_non_increasing() {
        let mut rng = Rng::seed_from(16);
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| {
                vec![
                    5.0 * rng.normal(),
                    2.0 * rng.normal(),
                    0.5 * rng.normal(),
                    0.1 * rng.normal(),
                ]
            })
            .collect();
        let fit = pca_reduce(&Mat::from_rows(&rows), 4).unwrap();
        for w in fit.explained_variance.windows(2) {
            assert!(w[0] >= w[1] - 1e-12);
        }
    }

    #[test]
    fn rank_deficient_zero_pads() {
        // All points on a line: only one real component exists.
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![i as f64, 2.0 * i as f64, -i as f64])
            .collect();
        let fit = pca_reduce(&Mat::from_rows(&rows), 3).unwrap();
        assert_eq!(fit.rank, 1);
        assert_eq!(fit.explained_variance[1], 0.0);
        for row in 0..3 {
            assert_eq!(fit.components[(row, 1)], 0.0);
            assert_eq!(fit.components[(row, 2)], 0.0);
        }
    }

    #[test]
    fn transform_matches_fit_projection() {
        let mut rng = Rng::seed_from(17);
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..4).map(|_| rng.normal()).collect())
            .collect();
        let data = Mat::from_rows(&rows);
        let fit = pca_reduce(&data, 2).unwrap();
        let again = pca_transform(&fit, &data);
        for i in 0..20 {
            for j in 0..2 {
                assert!((again[(i, j)] - fit.projected[(i, j)]).abs() < 1e-10);
            }
        }
    }
}
