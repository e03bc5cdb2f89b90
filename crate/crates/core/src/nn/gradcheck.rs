//! Finite-difference gradient oracle.
//!
//! Uses only function evaluations, so it stays independent of the
//! analytic backward passes it is used to check.

/// Central differences of `f` at `x` with step `h`.
pub fn central_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest elementwise `|a - b| / max(|a|, |b|, 1e-6)`.
///
/// The floor keeps entries that are zero in both up to round-off from
/// dominating the ratio.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
