use super::Tensor;

/// Central-difference gradient of a scalar function at `x`.
///
/// The result has the dims of `x` and holds the gradient in its values.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, h: f64) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.dims());
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Worst-case ratio of `|a - b|` to the allowed error
/// `max(rtol * max(|a|, |b|), atol)`. Values `<= 1` mean every entry agrees.
pub fn tolerance_ratio(a: &[f64], b: &[f64], rtol: f64, atol: f64) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient length mismatch");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / (rtol * x.abs().max(y.abs())).max(atol))
        .fold(0.0, f64::max)
}
