//! Central finite differences for validating analytic gradients.

/// Numerically estimate `d loss / d params[i]` for each index in `indices` by
/// central differences with step `h`. `loss` must rebuild its computation from
/// scratch on every call (it receives the perturbed parameter slice), which
/// keeps the estimate independent of the analytic backward path.
pub fn numerical_gradient<F>(params: &mut [f64], indices: &[usize], h: f64, mut loss: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grads = Vec::with_capacity(indices.len());
    for &i in indices {
        let orig = params[i];
        params[i] = orig + h;
        let up = loss(params);
        params[i] = orig - h;
        let down = loss(params);
        params[i] = orig;
        grads.push((up - down) / (2.0 * h));
    }
    grads
}

/// Relative error between an analytic and a numerical derivative. The
/// denominator is floored at 1e-6: below that magnitude a central difference
/// with h around 1e-5 is dominated by its own truncation and roundoff, so the
/// comparison degrades into an absolute one instead of dividing by noise.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}
