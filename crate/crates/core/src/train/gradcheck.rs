use alloc::vec::Vec;

/// Central-difference gradient of `f` at `point`.
pub fn numerical_gradient(f: &dyn Fn(&[f64]) -> f64, point: &[f64], eps: f64) -> Vec<f64> {
    let mut x = point.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + eps;
            let up = f(&x);
            x[i] = orig - eps;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Largest relative error `|a − n| / max(|a|, |n|, 1e-8)` between the
/// analytic gradient `grad` and central differences of `f`.
pub fn grad_check(f: &dyn Fn(&[f64]) -> f64, grad: &[f64], point: &[f64], eps: f64) -> f64 {
    assert_eq!(grad.len(), point.len(), "gradient and point lengths differ");
    numerical_gradient(f, point, eps)
        .iter()
        .zip(grad)
        .map(|(n, a)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}
