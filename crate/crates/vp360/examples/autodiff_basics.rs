//! Build a small computation on the tape, take gradients, and confirm one of
//! them against a central finite difference.

use vp360::tensor::{Tape, Tensor};

fn run(weights: &Tensor) -> (f64, Tensor) {
    // loss = mean(sigmoid(w . x)) for a 1x2x2 input.
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![1, 2, 2], vec![0.5, -1.0, 2.0, 0.0]).unwrap());
    let w = tape.leaf(weights.clone());
    let prod = tape.mul(w, x).unwrap();
    let act = tape.sigmoid(prod);
    let loss = tape.mean_all(act);
    let grads = tape.backward(loss).unwrap();
    (tape.value(loss).item(), tape.grad(&grads, w).clone())
}

fn main() -> vp360::Result<()> {
    let w = Tensor::new(vec![1, 2, 2], vec![0.7, 0.1, -0.3, 1.2])?;
    let (loss, grad) = run(&w);
    println!("loss = {loss:.6}");
    println!("dloss/dw (tape)        = {:?}", grad.data());

    // Central finite difference on the first weight.
    let h = 1e-6;
    let mut wp = w.clone();
    wp.data_mut()[0] += h;
    let mut wm = w.clone();
    wm.data_mut()[0] -= h;
    let numeric = (run(&wp).0 - run(&wm).0) / (2.0 * h);
    println!("dloss/dw[0] (finite diff) = {numeric:.8}");
    println!("difference                = {:.2e}", (grad.data()[0] - numeric).abs());
    Ok(())
}
