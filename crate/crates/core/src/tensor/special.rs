//! Error function, needed for the exact Gaussian-CDF form of GELU.

/// erf(x) via the confluent hypergeometric series
/// erf(x) = 2x e^{-x^2}/sqrt(pi) * sum_n (2x^2)^n / (2n+1)!!,
/// whose terms are all positive (no cancellation). Accurate to ~1e-15.
pub fn erf(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let ax = x.abs();
    if ax >= 6.0 {
        // erfc(6) < 3e-17: saturated at double precision.
        return x.signum();
    }
    let z = 2.0 * ax * ax;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut n = 0u32;
    loop {
        n += 1;
        term *= z / (2.0 * n as f64 + 1.0);
        sum += term;
        if term < 1e-18 * sum || n > 300 {
            break;
        }
    }
    let value = 2.0 * ax * (-ax * ax).exp() / std::f64::consts::PI.sqrt() * sum;
    value.copysign(x)
}

/// Standard normal PDF.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}
