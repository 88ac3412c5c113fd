//! Finite-difference verification of reverse-mode gradients (f64 only).

use super::{Tensor, TensorError, Var};

/// Compare analytic gradients of a scalar-valued computation against central
/// differences. Returns the max over all parameter elements of
/// |analytic - numeric| / max(1, |numeric|).
pub fn grad_check<F>(params: &[Tensor<f64>], f: F, epsilon: f64) -> Result<f64, TensorError>
where
    F: Fn(&[Var<f64>]) -> Result<Var<f64>, TensorError>,
{
    // Analytic pass.
    let leaves: Vec<Var<f64>> = params.iter().map(|p| Var::leaf(p.clone())).collect();
    let out = f(&leaves)?;
    out.backward();
    let analytic: Vec<Tensor<f64>> = leaves
        .iter()
        .map(|l| {
            l.grad()
                .unwrap_or_else(|| Tensor::zeros(l.shape().to_vec()))
        })
        .collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let leaves: Vec<Var<f64>> = perturbed.iter().map(|p| Var::leaf(p.clone())).collect();
        Ok(f(&leaves)?.value().item())
    };

    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut max_err = 0.0f64;
    for pi in 0..params.len() {
        for ei in 0..params[pi].len() {
            let original = work[pi].data()[ei];
            work[pi].data_mut()[ei] = original + epsilon;
            let plus = eval(&work)?;
            work[pi].data_mut()[ei] = original - epsilon;
            let minus = eval(&work)?;
            work[pi].data_mut()[ei] = original;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = (analytic[pi].data()[ei] - numeric).abs() / numeric.abs().max(1.0);
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}
