//! Forward-value oracles and finite-difference gradient checks for the
//! tensor engine.

mod common;

use common::{assert_grads_close, finite_diff_grads, random_tensor, random_tensor_in};
use rand::Rng;
use vp360::tensor::{
    depthwise_separable_conv, se_block, seeded_rng, Tape, Tensor, LOSS_EPS,
};

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

// ── conv2d forward oracles ───────────────────────────────────────────

#[test]
fn conv2d_identity_kernel_passes_input_through() {
    let mut rng = seeded_rng(1);
    let input = random_tensor(&mut rng, &[1, 4, 5]);
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone());
    let k = tape.leaf(Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap());
    let b = tape.leaf(Tensor::zeros(&[1]));
    let y = tape.conv2d(x, k, b).unwrap();
    assert_eq!(tape.value(y), &input);
}

#[test]
fn conv2d_zero_kernels_give_zero_output() {
    let mut rng = seeded_rng(2);
    let input = random_tensor(&mut rng, &[3, 4, 4]);
    let mut tape = Tape::new();
    let x = tape.leaf(input);
    let k = tape.leaf(Tensor::zeros(&[2, 3, 3, 3]));
    let b = tape.leaf(Tensor::zeros(&[2]));
    let y = tape.conv2d(x, k, b).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv2d_ones_kernel_on_constant_input_counts_padding() {
    // 3x3 all-ones kernel over a 3x3 constant input v: center sums all 9
    // cells, corners see only a 2x2 window through the zero padding.
    let v = 1.7;
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::full(&[1, 3, 3], v));
    let k = tape.leaf(Tensor::full(&[1, 1, 3, 3], 1.0));
    let b = tape.leaf(Tensor::zeros(&[1]));
    let y = tape.conv2d(x, k, b).unwrap();
    let out = tape.value(y).data();
    assert!((out[4] - 9.0 * v).abs() < 1e-12, "center");
    for corner in [0, 2, 6, 8] {
        assert!((out[corner] - 4.0 * v).abs() < 1e-12, "corner {corner}");
    }
}

#[test]
fn conv2d_rejects_channel_mismatch() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(&[2, 3, 3]));
    let k = tape.leaf(Tensor::zeros(&[1, 3, 3, 3]));
    let b = tape.leaf(Tensor::zeros(&[1]));
    assert!(tape.conv2d(x, k, b).is_err());
}

// ── depthwise separable conv ─────────────────────────────────────────

#[test]
fn separable_identity_maps_input_to_itself() {
    let mut rng = seeded_rng(3);
    let input = random_tensor(&mut rng, &[2, 3, 4]);
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone());
    // Per-channel identity spatial kernels and the identity channel mix.
    let mut dw = Tensor::zeros(&[2, 3, 3]);
    dw.data_mut()[4] = 1.0;
    dw.data_mut()[13] = 1.0;
    let d = tape.leaf(dw);
    let p = tape.leaf(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let b = tape.leaf(Tensor::zeros(&[2]));
    let y = depthwise_separable_conv(&mut tape, x, d, p, b).unwrap();
    for (a, e) in tape.value(y).data().iter().zip(input.data()) {
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
fn separable_pointwise_ones_sums_channels() {
    // C=2, O=1, pointwise [1,1]: output is the sum of the two depthwise
    // channel results; checked on a 2x2 input against hand composition.
    let input = Tensor::new(vec![2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0]).unwrap();
    let dw = Tensor::new(vec![2, 1, 1], vec![2.0, 0.5]).unwrap();
    let mut tape = Tape::new();
    let x = tape.leaf(input);
    let d = tape.leaf(dw);
    let p = tape.leaf(Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap());
    let b = tape.leaf(Tensor::zeros(&[1]));
    let y = depthwise_separable_conv(&mut tape, x, d, p, b).unwrap();
    // channel0*2 + channel1*0.5, elementwise
    let expected = [2.0 + 5.0, 4.0 + 10.0, 6.0 + 15.0, 8.0 + 20.0];
    for (a, e) in tape.value(y).data().iter().zip(expected) {
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
fn separable_equals_factored_dense_conv() {
    // kernels[o,c] = pointwise[o,c] * depthwise[c] reproduces the separable
    // layer exactly (up to fp noise) for random inputs.
    let mut rng = seeded_rng(4);
    for _ in 0..10 {
        let (c, o, h, w, k) = (3, 2, 4, 5, 3);
        let input = random_tensor(&mut rng, &[c, h, w]);
        let dw = random_tensor(&mut rng, &[c, k, k]);
        let pw = random_tensor(&mut rng, &[o, c]);
        let bias = random_tensor(&mut rng, &[o]);

        let mut dense = Tensor::zeros(&[o, c, k, k]);
        for oc in 0..o {
            for ic in 0..c {
                for e in 0..k * k {
                    dense.data_mut()[(oc * c + ic) * k * k + e] =
                        pw.data()[oc * c + ic] * dw.data()[ic * k * k + e];
                }
            }
        }

        let mut t1 = Tape::new();
        let x1 = t1.leaf(input.clone());
        let d1 = t1.leaf(dw);
        let p1 = t1.leaf(pw);
        let b1 = t1.leaf(bias.clone());
        let sep = depthwise_separable_conv(&mut t1, x1, d1, p1, b1).unwrap();

        let mut t2 = Tape::new();
        let x2 = t2.leaf(input);
        let k2 = t2.leaf(dense);
        let b2 = t2.leaf(bias);
        let full = t2.conv2d(x2, k2, b2).unwrap();

        for (a, e) in t1.value(sep).data().iter().zip(t2.value(full).data()) {
            assert!((a - e).abs() < 1e-10);
        }
    }
}

// ── SE block ─────────────────────────────────────────────────────────

#[test]
fn se_zero_weights_scale_by_half() {
    let mut rng = seeded_rng(5);
    let input = random_tensor(&mut rng, &[4, 3, 3]);
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone());
    let w1 = tape.leaf(Tensor::zeros(&[2, 4]));
    let w2 = tape.leaf(Tensor::zeros(&[4, 2]));
    let y = se_block(&mut tape, x, w1, w2).unwrap();
    for (a, e) in tape.value(y).data().iter().zip(input.data()) {
        assert!((a - 0.5 * e).abs() < 1e-12);
    }
}

#[test]
fn se_saturated_excitation_approaches_identity() {
    let input = Tensor::full(&[2, 2, 2], 3.0);
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone());
    // Large positive pre-activation drives the sigmoid to 1.
    let w1 = tape.leaf(Tensor::full(&[2, 2], 10.0));
    let w2 = tape.leaf(Tensor::full(&[2, 2], 10.0));
    let y = se_block(&mut tape, x, w1, w2).unwrap();
    for (a, e) in tape.value(y).data().iter().zip(input.data()) {
        assert!((a - e).abs() < 1e-10);
    }
}

#[test]
fn se_hand_oracle_constant_channels() {
    // C=2, r=1 (bottleneck width 2 here), constant channels: the whole block
    // reduces to a scalar chain computable by hand.
    let input = Tensor::new(vec![2, 1, 2], vec![2.0, 2.0, -1.0, -1.0]).unwrap();
    let w1 = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let w2 = Tensor::new(vec![2, 2], vec![0.5, 0.5, -0.5, 0.0]).unwrap();
    // squeeze = [2, -1]; relu(w1*s) = [2, 0]
    // pre = w2*[2,0] = [1.0, -1.0]; excitation = [sigmoid(1), sigmoid(-1)]
    let e0 = 1.0 / (1.0 + (-1.0f64).exp());
    let e1 = 1.0 / (1.0 + 1.0f64.exp());
    let mut tape = Tape::new();
    let x = tape.leaf(input);
    let a = tape.leaf(w1);
    let b = tape.leaf(w2);
    let y = se_block(&mut tape, x, a, b).unwrap();
    let out = tape.value(y).data();
    assert!((out[0] - 2.0 * e0).abs() < 1e-12);
    assert!((out[1] - 2.0 * e0).abs() < 1e-12);
    assert!((out[2] + e1).abs() < 1e-12);
    assert!((out[3] + e1).abs() < 1e-12);
}

#[test]
fn se_rejects_bad_reduction() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(&[4, 2, 2]));
    let w1 = tape.leaf(Tensor::zeros(&[3, 4]));
    let w2 = tape.leaf(Tensor::zeros(&[4, 3]));
    assert!(se_block(&mut tape, x, w1, w2).is_err());
}

#[test]
fn se_output_never_exceeds_input_magnitude() {
    let mut rng = seeded_rng(6);
    for _ in 0..20 {
        let input = random_tensor(&mut rng, &[4, 3, 3]);
        let w1 = random_tensor(&mut rng, &[2, 4]);
        let w2 = random_tensor(&mut rng, &[4, 2]);
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone());
        let a = tape.leaf(w1);
        let b = tape.leaf(w2);
        let y = se_block(&mut tape, x, a, b).unwrap();
        for (o, i) in tape.value(y).data().iter().zip(input.data()) {
            assert!(o.abs() <= i.abs() + 1e-12, "excitation must stay in (0,1)");
        }
    }
}

// ── activations and simple ops ───────────────────────────────────────

#[test]
fn activation_fixed_points() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(0.0));
    let s = tape.sigmoid(x);
    let t = tape.tanh(x);
    assert!((tape.value(s).item() - 0.5).abs() < 1e-15);
    assert!(tape.value(t).item().abs() < 1e-15);
}

#[test]
fn hadamard_with_ones_is_identity() {
    let mut rng = seeded_rng(7);
    let input = random_tensor(&mut rng, &[2, 3, 3]);
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone());
    let ones = tape.leaf(Tensor::full(&[2, 3, 3], 1.0));
    let y = tape.mul(x, ones).unwrap();
    assert_eq!(tape.value(y), &input);
}

#[test]
fn global_avg_pool_of_constant_map() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::full(&[3, 4, 4], 2.5));
    let y = tape.global_avg_pool(x).unwrap();
    assert_eq!(tape.value(y).shape(), [3]);
    assert!(tape.value(y).data().iter().all(|&v| (v - 2.5).abs() < 1e-15));
}

// ── losses ───────────────────────────────────────────────────────────

#[test]
fn bce_perfect_prediction_is_near_zero() {
    let target = Tensor::from_vec(vec![1.0, 0.0, 1.0]);
    let mut tape = Tape::new();
    let p = tape.leaf(target.clone());
    let loss = tape.bce_loss(p, &target).unwrap();
    assert!(tape.value(loss).item() >= 0.0);
    assert!(tape.value(loss).item() < 1e-6);
}

#[test]
fn bce_at_half_is_ln_two() {
    let target = Tensor::from_vec(vec![1.0, 0.0, 1.0, 0.0]);
    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::full(&[4], 0.5));
    let loss = tape.bce_loss(p, &target).unwrap();
    assert!((tape.value(loss).item() - 2.0f64.ln()).abs() < 1e-12);
}

#[test]
fn bce_hand_arithmetic() {
    // pred [0.9, 0.2], target [1, 0] -> -(ln 0.9 + ln 0.8)/2
    let target = Tensor::from_vec(vec![1.0, 0.0]);
    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::from_vec(vec![0.9, 0.2]));
    let loss = tape.bce_loss(p, &target).unwrap();
    let expected = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
    assert!((tape.value(loss).item() - expected).abs() < 1e-12);
    assert!((expected - 0.1643).abs() < 1e-4);
}

#[test]
fn kl_of_equal_distributions_is_zero() {
    let target = Tensor::from_vec(vec![0.25, 0.25, 0.5]);
    let mut tape = Tape::new();
    let p = tape.leaf(target.clone());
    let loss = tape.kl_loss(p, &target).unwrap();
    assert!(tape.value(loss).item().abs() < 1e-12);
}

#[test]
fn kl_hand_arithmetic() {
    let target = Tensor::from_vec(vec![0.5, 0.5]);
    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::from_vec(vec![0.25, 0.75]));
    let loss = tape.kl_loss(p, &target).unwrap();
    let expected = 0.5 * 2.0f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
    assert!((tape.value(loss).item() - expected).abs() < 1e-12);
    assert!((expected - 0.1438).abs() < 1e-4);
}

#[test]
fn kl_nonnegative_on_random_pairs() {
    let mut rng = seeded_rng(8);
    for _ in 0..50 {
        let normalize = |t: Tensor| {
            let s: f64 = t.data().iter().sum();
            t.map(|v| v / s)
        };
        let pred = normalize(random_tensor_in(&mut rng, &[8], 0.01, 1.0));
        let target = normalize(random_tensor_in(&mut rng, &[8], 0.01, 1.0));
        let mut tape = Tape::new();
        let p = tape.leaf(pred);
        let loss = tape.kl_loss(p, &target).unwrap();
        assert!(tape.value(loss).item() >= -1e-12);
    }
}

// ── backward basics ──────────────────────────────────────────────────

#[test]
fn square_gradient_matches_analytic() {
    // L = x^2 at x = 3: dL/dx = 6.
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(3.0));
    let y = tape.mul(x, x).unwrap();
    let grads = tape.backward(y).unwrap();
    assert!((tape.grad(&grads, x).item() - 6.0).abs() < 1e-12);
}

#[test]
fn unused_parameter_gets_zero_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(2.0));
    let unused = tape.leaf(Tensor::full(&[3], 5.0));
    let y = tape.mul(x, x).unwrap();
    let grads = tape.backward(y).unwrap();
    assert!(tape.grad(&grads, unused).data().iter().all(|&v| v == 0.0));
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(&[2, 2]));
    assert!(tape.backward(x).is_err());
}

// ── finite-difference gradient checks per layer ──────────────────────

fn check_layer_grads(
    name: &str,
    shapes: &[&[usize]],
    seed: u64,
    f: impl Fn(&[Tensor]) -> f64,
    analytic: impl Fn(&[Tensor]) -> Vec<Tensor>,
) {
    let mut rng = seeded_rng(seed);
    for round in 0..5 {
        let inputs: Vec<Tensor> = shapes.iter().map(|s| random_tensor(&mut rng, s)).collect();
        let numeric = finite_diff_grads(&f, &inputs, FD_STEP);
        let an = analytic(&inputs);
        assert_grads_close(&an, &numeric, FD_TOL, &format!("{name} round {round}"));
    }
}

#[test]
fn conv2d_gradients_match_finite_differences() {
    let forward = |inputs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let x = tape.leaf(inputs[0].clone());
        let k = tape.leaf(inputs[1].clone());
        let b = tape.leaf(inputs[2].clone());
        let y = tape.conv2d(x, k, b).unwrap();
        let s = tape.tanh(y);
        let m = tape.mean_all(s);
        tape.value(m).item()
    };
    check_layer_grads(
        "conv2d",
        &[&[2, 4, 5], &[3, 2, 3, 3], &[3]],
        11,
        forward,
        |inputs| {
            let mut tape = Tape::new();
            let x = tape.leaf(inputs[0].clone());
            let k = tape.leaf(inputs[1].clone());
            let b = tape.leaf(inputs[2].clone());
            let y = tape.conv2d(x, k, b).unwrap();
            let s = tape.tanh(y);
            let m = tape.mean_all(s);
            let grads = tape.backward(m).unwrap();
            vec![
                tape.grad(&grads, x).clone(),
                tape.grad(&grads, k).clone(),
                tape.grad(&grads, b).clone(),
            ]
        },
    );
}

#[test]
fn separable_conv_gradients_match_finite_differences() {
    let run = |inputs: &[Tensor]| {
        let mut tape = Tape::new();
        let x = tape.leaf(inputs[0].clone());
        let d = tape.leaf(inputs[1].clone());
        let p = tape.leaf(inputs[2].clone());
        let b = tape.leaf(inputs[3].clone());
        let y = depthwise_separable_conv(&mut tape, x, d, p, b).unwrap();
        let s = tape.sigmoid(y);
        let m = tape.mean_all(s);
        (tape, x, d, p, b, m)
    };
    check_layer_grads(
        "separable_conv",
        &[&[3, 4, 4], &[3, 3, 3], &[2, 3], &[2]],
        12,
        |inputs| {
            let (tape, _, _, _, _, m) = run(inputs);
            tape.value(m).item()
        },
        |inputs| {
            let (tape, x, d, p, b, m) = run(inputs);
            let grads = tape.backward(m).unwrap();
            vec![
                tape.grad(&grads, x).clone(),
                tape.grad(&grads, d).clone(),
                tape.grad(&grads, p).clone(),
                tape.grad(&grads, b).clone(),
            ]
        },
    );
}

#[test]
fn se_block_gradients_match_finite_differences() {
    let run = |inputs: &[Tensor]| {
        let mut tape = Tape::new();
        let x = tape.leaf(inputs[0].clone());
        let w1 = tape.leaf(inputs[1].clone());
        let w2 = tape.leaf(inputs[2].clone());
        let y = se_block(&mut tape, x, w1, w2).unwrap();
        let m = tape.mean_all(y);
        (tape, x, w1, w2, m)
    };
    check_layer_grads(
        "se_block",
        &[&[4, 3, 3], &[2, 4], &[4, 2]],
        13,
        |inputs| {
            let (tape, _, _, _, m) = run(inputs);
            tape.value(m).item()
        },
        |inputs| {
            let (tape, x, w1, w2, m) = run(inputs);
            let grads = tape.backward(m).unwrap();
            vec![
                tape.grad(&grads, x).clone(),
                tape.grad(&grads, w1).clone(),
                tape.grad(&grads, w2).clone(),
            ]
        },
    );
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut rng = seeded_rng(14);
    for _ in 0..5 {
        // Keep predictions comfortably inside the clamp band.
        let pred = random_tensor_in(&mut rng, &[12], 0.05, 0.95);
        let target = Tensor::from_vec(
            (0..12)
                .map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
                .collect(),
        );
        let f = |inputs: &[Tensor]| {
            let mut tape = Tape::new();
            let p = tape.leaf(inputs[0].clone());
            let l = tape.bce_loss(p, &target).unwrap();
            tape.value(l).item()
        };
        let numeric = finite_diff_grads(&f, std::slice::from_ref(&pred), FD_STEP);
        let mut tape = Tape::new();
        let p = tape.leaf(pred.clone());
        let l = tape.bce_loss(p, &target).unwrap();
        let grads = tape.backward(l).unwrap();
        assert_grads_close(
            &[tape.grad(&grads, p).clone()],
            &numeric,
            FD_TOL,
            "bce_loss",
        );
    }
}

#[test]
fn softmax_kl_gradients_match_finite_differences() {
    let mut rng = seeded_rng(15);
    for _ in 0..5 {
        let logits = random_tensor(&mut rng, &[1, 3, 4]);
        let target = {
            let t = random_tensor_in(&mut rng, &[1, 3, 4], 0.01, 1.0);
            let s: f64 = t.data().iter().sum();
            t.map(|v| v / s)
        };
        let f = |inputs: &[Tensor]| {
            let mut tape = Tape::new();
            let z = tape.leaf(inputs[0].clone());
            let p = tape.softmax_all(z);
            let l = tape.kl_loss(p, &target).unwrap();
            tape.value(l).item()
        };
        let numeric = finite_diff_grads(&f, std::slice::from_ref(&logits), FD_STEP);
        let mut tape = Tape::new();
        let z = tape.leaf(logits.clone());
        let p = tape.softmax_all(z);
        let l = tape.kl_loss(p, &target).unwrap();
        let grads = tape.backward(l).unwrap();
        assert_grads_close(
            &[tape.grad(&grads, z).clone()],
            &numeric,
            FD_TOL,
            "softmax+kl",
        );
    }
}

#[test]
fn pooling_and_upsample_gradients_match_finite_differences() {
    let f = |inputs: &[Tensor]| {
        let mut tape = Tape::new();
        let x = tape.leaf(inputs[0].clone());
        let p = tape.avg_pool2d(x, 2, 2).unwrap();
        let u = tape.upsample_nearest(p, 2).unwrap();
        let t = tape.tanh(u);
        let m = tape.mean_all(t);
        tape.value(m).item()
    };
    check_layer_grads("pool+upsample", &[&[2, 4, 6]], 16, f, |inputs| {
        let mut tape = Tape::new();
        let x = tape.leaf(inputs[0].clone());
        let p = tape.avg_pool2d(x, 2, 2).unwrap();
        let u = tape.upsample_nearest(p, 2).unwrap();
        let t = tape.tanh(u);
        let m = tape.mean_all(t);
        let grads = tape.backward(m).unwrap();
        vec![tape.grad(&grads, x).clone()]
    });
}

#[test]
fn concat_slice_gradients_match_finite_differences() {
    let f = |inputs: &[Tensor]| {
        let mut tape = Tape::new();
        let a = tape.leaf(inputs[0].clone());
        let b = tape.leaf(inputs[1].clone());
        let cat = tape.concat_channels(a, b).unwrap();
        let top = tape.slice_channels(cat, 1, 2).unwrap();
        let s = tape.sigmoid(top);
        let m = tape.mean_all(s);
        tape.value(m).item()
    };
    check_layer_grads("concat+slice", &[&[2, 3, 3], &[1, 3, 3]], 17, f, |inputs| {
        let mut tape = Tape::new();
        let a = tape.leaf(inputs[0].clone());
        let b = tape.leaf(inputs[1].clone());
        let cat = tape.concat_channels(a, b).unwrap();
        let top = tape.slice_channels(cat, 1, 2).unwrap();
        let s = tape.sigmoid(top);
        let m = tape.mean_all(s);
        let grads = tape.backward(m).unwrap();
        vec![tape.grad(&grads, a).clone(), tape.grad(&grads, b).clone()]
    });
}

#[test]
fn determinism_same_inputs_same_outputs() {
    let run = || {
        let mut rng = seeded_rng(99);
        let input = random_tensor(&mut rng, &[2, 4, 4]);
        let k = random_tensor(&mut rng, &[2, 2, 3, 3]);
        let b = random_tensor(&mut rng, &[2]);
        let mut tape = Tape::new();
        let x = tape.leaf(input);
        let kn = tape.leaf(k);
        let bn = tape.leaf(b);
        let y = tape.conv2d(x, kn, bn).unwrap();
        let s = tape.sigmoid(y);
        tape.value(s).data().to_vec()
    };
    assert_eq!(run(), run(), "bit-identical outputs under a fixed seed");
}

#[test]
fn loss_clamp_floor_matches_epsilon() {
    // Clamping at LOSS_EPS keeps a perfect 0/1 prediction's loss at the floor.
    let target = Tensor::from_vec(vec![1.0, 0.0]);
    let mut tape = Tape::new();
    let p = tape.leaf(target.clone());
    let l = tape.bce_loss(p, &target).unwrap();
    let floor = -((1.0 - LOSS_EPS) as f64).ln();
    assert!((tape.value(l).item() - floor).abs() < 1e-9);
}
