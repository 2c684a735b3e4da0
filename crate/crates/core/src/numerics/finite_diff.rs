//! Central finite differences, used as the independent oracle for `backward`.

/// Estimates the gradient of `f` at `params` coordinate by coordinate with
/// `(f(θ + h·eᵢ) − f(θ − h·eᵢ)) / 2h`.
pub fn finite_diff<F>(mut f: F, params: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite_diff step must be positive");
    let mut theta = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + h;
        let plus = f(&theta);
        theta[i] = orig - h;
        let minus = f(&theta);
        theta[i] = orig;
        grad.push((plus - minus) / (2.0 * h));
    }
    grad
}

/// `|a − b| / max(|a|, |b|, floor)`.
///
/// The floor keeps coordinates whose true gradient is near zero from
/// dominating the maximum through finite-difference noise.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    if denom == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Largest [`relative_error`] across paired gradient entries.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n, floor))
        .fold(0.0, f64::max)
}
