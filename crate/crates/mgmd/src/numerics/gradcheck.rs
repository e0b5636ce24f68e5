//! Central finite differences for validating analytic gradients. The oracle
//! only re-evaluates the loss at perturbed inputs, so it stays independent of
//! how `Tape::backward` is implemented.

use crate::error::Result;
use crate::numerics::tensor::Tensor;

/// Numeric gradient of `loss` with respect to every entry of every tensor in
/// `leaves`, via the central difference (f(x+h) - f(x-h)) / 2h.
pub fn finite_difference_grads(
    leaves: &[Tensor],
    h: f64,
    mut loss: impl FnMut(&[Tensor]) -> Result<f64>,
) -> Result<Vec<Tensor>> {
    let mut grads = Vec::with_capacity(leaves.len());
    let mut work: Vec<Tensor> = leaves.to_vec();
    for t in 0..leaves.len() {
        let mut g = Tensor::zeros(leaves[t].shape().to_vec());
        for e in 0..leaves[t].numel() {
            let orig = leaves[t].data()[e];
            work[t].data_mut()[e] = orig + h;
            let plus = loss(&work)?;
            work[t].data_mut()[e] = orig - h;
            let minus = loss(&work)?;
            work[t].data_mut()[e] = orig;
            g.data_mut()[e] = (plus - minus) / (2.0 * h);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// True when `analytic` and `numeric` agree elementwise within
/// `atol + rtol * max(|a|, |n|)`.
pub fn grads_close(analytic: &[Tensor], numeric: &[Tensor], rtol: f64, atol: f64) -> bool {
    max_grad_error(analytic, numeric, rtol, atol) <= 1.0
}

/// Largest elementwise error ratio |a - n| / (atol + rtol * max(|a|, |n|)).
/// Values at or below 1.0 mean agreement within tolerance.
pub fn max_grad_error(analytic: &[Tensor], numeric: &[Tensor], rtol: f64, atol: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        assert_eq!(a.shape(), n.shape());
        for (av, nv) in a.data().iter().zip(n.data()) {
            let scale = atol + rtol * av.abs().max(nv.abs());
            worst = worst.max((av - nv).abs() / scale);
        }
    }
    worst
}
