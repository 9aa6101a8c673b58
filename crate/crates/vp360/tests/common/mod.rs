//! Shared test oracles.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vp360::tensor::Tensor;

/// Central finite differences of a scalar function w.r.t. every element of
/// every input tensor.
pub fn finite_diff_grads(
    f: &dyn Fn(&[Tensor]) -> f64,
    inputs: &[Tensor],
    step: f64,
) -> Vec<Tensor> {
    let mut grads = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[i].shape());
        for e in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[e] += step;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[e] -= step;
            g.data_mut()[e] = (f(&plus) - f(&minus)) / (2.0 * step);
        }
        grads.push(g);
    }
    grads
}

/// Elementwise comparison with relative tolerance; small values fall back to
/// an absolute comparison at `tol * 1e-3`.
pub fn assert_grads_close(analytic: &[Tensor], numeric: &[Tensor], tol: f64, context: &str) {
    assert_eq!(analytic.len(), numeric.len(), "{context}: tensor count");
    for (idx, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        assert_eq!(a.shape(), n.shape(), "{context}: shape of input {idx}");
        for (e, (&av, &nv)) in a.data().iter().zip(n.data()).enumerate() {
            let denom = av.abs().max(nv.abs()).max(1e-3);
            let rel = (av - nv).abs() / denom;
            assert!(
                rel <= tol,
                "{context}: input {idx} elem {e}: analytic {av} vs numeric {nv} (rel {rel:.3e})"
            );
        }
    }
}

/// Random tensor with entries uniform in [-1, 1].
pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Random tensor with entries uniform in (lo, hi).
pub fn random_tensor_in(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}
