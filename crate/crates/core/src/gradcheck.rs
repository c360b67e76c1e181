//! Central finite-difference gradient checking, used by the test suites.
//!
//! The oracle only evaluates forward passes; it never touches the reverse
//! pass it is checking. Run it with f64 graphs for tight tolerances.

/// Central finite differences of a scalar function at `x` with step `h`.
pub fn central_diff<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = f(&xp);
        xp[i] = orig - h;
        let fm = f(&xp);
        xp[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Maximum relative error between two gradient vectors. The denominator is
/// floored at 1 so near-zero components compare absolutely.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// Convenience: check an analytic gradient against central differences.
pub fn check<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], analytic: &[f64], h: f64) -> f64 {
    let fd = central_diff(f, x, h);
    max_rel_err(analytic, &fd)
}
