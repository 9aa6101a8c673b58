use super::{sigmoid, Tensor, LOSS_EPS};
use crate::error::{Error, Result};

/// Index of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

struct Node {
    value: Tensor,
    parents: Vec<NodeId>,
    // Maps the gradient w.r.t. this node's output to gradients w.r.t. each
    // parent, in `parents` order. Leaves have no grad_fn.
    grad_fn: Option<Box<dyn Fn(&Tensor) -> Vec<Tensor>>>,
}

/// Append-only record of a forward computation.
///
/// Parent indices always precede children, so a single reverse sweep in
/// [`Tape::backward`] visits every node after all of its consumers.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(
        &mut self,
        value: Tensor,
        parents: Vec<NodeId>,
        grad_fn: Option<Box<dyn Fn(&Tensor) -> Vec<Tensor>>>,
    ) -> NodeId {
        debug_assert!(value.is_finite(), "non-finite forward value");
        self.nodes.push(Node {
            value,
            parents,
            grad_fn,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Record an input or parameter tensor.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, vec![], None)
    }

    // ── elementwise ──────────────────────────────────────────────────

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.value(a).zip(self.value(b), |x, y| x + y)?;
        Ok(self.push(
            out,
            vec![a, b],
            Some(Box::new(|g: &Tensor| vec![g.clone(), g.clone()])),
        ))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.value(a).zip(self.value(b), |x, y| x - y)?;
        Ok(self.push(
            out,
            vec![a, b],
            Some(Box::new(|g: &Tensor| vec![g.clone(), g.map(|v| -v)])),
        ))
    }

    /// Hadamard (elementwise) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let va = self.value(a).clone();
        let vb = self.value(b).clone();
        let out = va.zip(&vb, |x, y| x * y)?;
        Ok(self.push(
            out,
            vec![a, b],
            Some(Box::new(move |g: &Tensor| {
                vec![
                    g.zip(&vb, |gv, y| gv * y).unwrap(),
                    g.zip(&va, |gv, x| gv * x).unwrap(),
                ]
            })),
        ))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let out = self.value(a).map(|v| v * factor);
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g: &Tensor| vec![g.map(|v| v * factor)])),
        )
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let out = self.value(a).map(|v| v + c);
        self.push(out, vec![a], Some(Box::new(|g: &Tensor| vec![g.clone()])))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(sigmoid);
        let saved = out.clone();
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                vec![g.zip(&saved, |gv, s| gv * s * (1.0 - s)).unwrap()]
            })),
        )
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(f64::tanh);
        let saved = out.clone();
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                vec![g.zip(&saved, |gv, t| gv * (1.0 - t * t)).unwrap()]
            })),
        )
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let input = self.value(a).clone();
        let out = input.map(|v| v.max(0.0));
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                vec![g
                    .zip(&input, |gv, x| if x > 0.0 { gv } else { 0.0 })
                    .unwrap()]
            })),
        )
    }

    // ── convolutions (CHW layout, "same" zero padding, stride 1) ─────

    /// Dense 2-D convolution: input `[C,H,W]`, kernels `[O,C,kh,kw]`, bias `[O]`.
    pub fn conv2d(&mut self, input: NodeId, kernels: NodeId, bias: NodeId) -> Result<NodeId> {
        let inp = self.value(input).clone();
        let ker = self.value(kernels).clone();
        let b = self.value(bias).clone();
        let (c, h, w) = chw(&inp)?;
        let ks = ker.shape();
        if ks.len() != 4 {
            return Err(Error::shape("conv2d kernels must be [O,C,kh,kw]"));
        }
        let (o, kc, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if kc != c {
            return Err(Error::shape(format!(
                "conv2d channel mismatch: input {c}, kernels {kc}"
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::invalid("conv2d kernel dims must be odd"));
        }
        if b.shape() != [o] {
            return Err(Error::shape("conv2d bias must be [O]"));
        }
        let (ph, pw) = (kh / 2, kw / 2);

        let mut out = vec![0.0; o * h * w];
        for oc in 0..o {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = b.data()[oc];
                    for ic in 0..c {
                        for dy in 0..kh {
                            let iy = y + dy;
                            if iy < ph || iy - ph >= h {
                                continue;
                            }
                            let iy = iy - ph;
                            for dx in 0..kw {
                                let ix = x + dx;
                                if ix < pw || ix - pw >= w {
                                    continue;
                                }
                                let ix = ix - pw;
                                acc += inp.data()[(ic * h + iy) * w + ix]
                                    * ker.data()[((oc * c + ic) * kh + dy) * kw + dx];
                            }
                        }
                    }
                    out[(oc * h + y) * w + x] = acc;
                }
            }
        }
        let out = Tensor::new(vec![o, h, w], out)?;

        let grad = move |g: &Tensor| {
            let mut gi = vec![0.0; c * h * w];
            let mut gk = vec![0.0; o * c * kh * kw];
            let mut gb = vec![0.0; o];
            for oc in 0..o {
                for y in 0..h {
                    for x in 0..w {
                        let gv = g.data()[(oc * h + y) * w + x];
                        gb[oc] += gv;
                        for ic in 0..c {
                            for dy in 0..kh {
                                let iy = y + dy;
                                if iy < ph || iy - ph >= h {
                                    continue;
                                }
                                let iy = iy - ph;
                                for dx in 0..kw {
                                    let ix = x + dx;
                                    if ix < pw || ix - pw >= w {
                                        continue;
                                    }
                                    let ix = ix - pw;
                                    gi[(ic * h + iy) * w + ix] +=
                                        gv * ker.data()[((oc * c + ic) * kh + dy) * kw + dx];
                                    gk[((oc * c + ic) * kh + dy) * kw + dx] +=
                                        gv * inp.data()[(ic * h + iy) * w + ix];
                                }
                            }
                        }
                    }
                }
            }
            vec![
                Tensor::new(vec![c, h, w], gi).unwrap(),
                Tensor::new(vec![o, c, kh, kw], gk).unwrap(),
                Tensor::new(vec![o], gb).unwrap(),
            ]
        };
        Ok(self.push(out, vec![input, kernels, bias], Some(Box::new(grad))))
    }

    /// Per-channel spatial convolution: input `[C,H,W]`, kernels `[C,kh,kw]`.
    pub fn depthwise_conv(&mut self, input: NodeId, kernels: NodeId) -> Result<NodeId> {
        let inp = self.value(input).clone();
        let ker = self.value(kernels).clone();
        let (c, h, w) = chw(&inp)?;
        let ks = ker.shape();
        if ks.len() != 3 || ks[0] != c {
            return Err(Error::shape("depthwise kernels must be [C,kh,kw]"));
        }
        let (kh, kw) = (ks[1], ks[2]);
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::invalid("depthwise kernel dims must be odd"));
        }
        let (ph, pw) = (kh / 2, kw / 2);

        let mut out = vec![0.0; c * h * w];
        for ic in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for dy in 0..kh {
                        let iy = y + dy;
                        if iy < ph || iy - ph >= h {
                            continue;
                        }
                        let iy = iy - ph;
                        for dx in 0..kw {
                            let ix = x + dx;
                            if ix < pw || ix - pw >= w {
                                continue;
                            }
                            let ix = ix - pw;
                            acc += inp.data()[(ic * h + iy) * w + ix]
                                * ker.data()[(ic * kh + dy) * kw + dx];
                        }
                    }
                    out[(ic * h + y) * w + x] = acc;
                }
            }
        }
        let out = Tensor::new(vec![c, h, w], out)?;

        let grad = move |g: &Tensor| {
            let mut gi = vec![0.0; c * h * w];
            let mut gk = vec![0.0; c * kh * kw];
            for ic in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let gv = g.data()[(ic * h + y) * w + x];
                        for dy in 0..kh {
                            let iy = y + dy;
                            if iy < ph || iy - ph >= h {
                                continue;
                            }
                            let iy = iy - ph;
                            for dx in 0..kw {
                                let ix = x + dx;
                                if ix < pw || ix - pw >= w {
                                    continue;
                                }
                                let ix = ix - pw;
                                gi[(ic * h + iy) * w + ix] +=
                                    gv * ker.data()[(ic * kh + dy) * kw + dx];
                                gk[(ic * kh + dy) * kw + dx] +=
                                    gv * inp.data()[(ic * h + iy) * w + ix];
                            }
                        }
                    }
                }
            }
            vec![
                Tensor::new(vec![c, h, w], gi).unwrap(),
                Tensor::new(vec![c, kh, kw], gk).unwrap(),
            ]
        };
        Ok(self.push(out, vec![input, kernels], Some(Box::new(grad))))
    }

    /// 1x1 channel-mixing convolution: input `[C,H,W]`, weights `[O,C]`, bias `[O]`.
    pub fn pointwise_conv(&mut self, input: NodeId, weights: NodeId, bias: NodeId) -> Result<NodeId> {
        let inp = self.value(input).clone();
        let wgt = self.value(weights).clone();
        let b = self.value(bias).clone();
        let (c, h, w) = chw(&inp)?;
        let ws = wgt.shape();
        if ws.len() != 2 || ws[1] != c {
            return Err(Error::shape("pointwise weights must be [O,C]"));
        }
        let o = ws[0];
        if b.shape() != [o] {
            return Err(Error::shape("pointwise bias must be [O]"));
        }

        let hw = h * w;
        let mut out = vec![0.0; o * hw];
        for oc in 0..o {
            for p in 0..hw {
                let mut acc = b.data()[oc];
                for ic in 0..c {
                    acc += wgt.data()[oc * c + ic] * inp.data()[ic * hw + p];
                }
                out[oc * hw + p] = acc;
            }
        }
        let out = Tensor::new(vec![o, h, w], out)?;

        let grad = move |g: &Tensor| {
            let mut gi = vec![0.0; c * hw];
            let mut gw = vec![0.0; o * c];
            let mut gb = vec![0.0; o];
            for oc in 0..o {
                for p in 0..hw {
                    let gv = g.data()[oc * hw + p];
                    gb[oc] += gv;
                    for ic in 0..c {
                        gi[ic * hw + p] += gv * wgt.data()[oc * c + ic];
                        gw[oc * c + ic] += gv * inp.data()[ic * hw + p];
                    }
                }
            }
            vec![
                Tensor::new(vec![c, h, w], gi).unwrap(),
                Tensor::new(vec![o, c], gw).unwrap(),
                Tensor::new(vec![o], gb).unwrap(),
            ]
        };
        Ok(self.push(out, vec![input, weights, bias], Some(Box::new(grad))))
    }

    // ── shape and channel ops ────────────────────────────────────────

    /// Stack two `[C,H,W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let va = self.value(a).clone();
        let vb = self.value(b).clone();
        let (ca, h, w) = chw(&va)?;
        let (cb, hb, wb) = chw(&vb)?;
        if (h, w) != (hb, wb) {
            return Err(Error::shape("concat_channels spatial mismatch"));
        }
        let mut data = va.data().to_vec();
        data.extend_from_slice(vb.data());
        let out = Tensor::new(vec![ca + cb, h, w], data)?;
        let split = ca * h * w;
        let grad = move |g: &Tensor| {
            vec![
                Tensor::new(vec![ca, h, w], g.data()[..split].to_vec()).unwrap(),
                Tensor::new(vec![cb, h, w], g.data()[split..].to_vec()).unwrap(),
            ]
        };
        Ok(self.push(out, vec![a, b], Some(Box::new(grad))))
    }

    /// Select `count` channels starting at `start` from a `[C,H,W]` tensor.
    pub fn slice_channels(&mut self, a: NodeId, start: usize, count: usize) -> Result<NodeId> {
        let va = self.value(a).clone();
        let (c, h, w) = chw(&va)?;
        if start + count > c {
            return Err(Error::shape(format!(
                "slice [{start}, {}) out of {c} channels",
                start + count
            )));
        }
        let hw = h * w;
        let out = Tensor::new(
            vec![count, h, w],
            va.data()[start * hw..(start + count) * hw].to_vec(),
        )?;
        let grad = move |g: &Tensor| {
            let mut gi = vec![0.0; c * hw];
            gi[start * hw..(start + count) * hw].copy_from_slice(g.data());
            vec![Tensor::new(vec![c, h, w], gi).unwrap()]
        };
        Ok(self.push(out, vec![a], Some(Box::new(grad))))
    }

    /// Per-channel spatial mean: `[C,H,W]` -> `[C]`.
    pub fn global_avg_pool(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a).clone();
        let (c, h, w) = chw(&va)?;
        let hw = h * w;
        let out: Vec<f64> = (0..c)
            .map(|ic| va.data()[ic * hw..(ic + 1) * hw].iter().sum::<f64>() / hw as f64)
            .collect();
        let out = Tensor::new(vec![c], out)?;
        let grad = move |g: &Tensor| {
            let mut gi = vec![0.0; c * hw];
            for ic in 0..c {
                let share = g.data()[ic] / hw as f64;
                for p in 0..hw {
                    gi[ic * hw + p] = share;
                }
            }
            vec![Tensor::new(vec![c, h, w], gi).unwrap()]
        };
        Ok(self.push(out, vec![a], Some(Box::new(grad))))
    }

    /// Non-overlapping average pooling with window `(ph, pw)`.
    pub fn avg_pool2d(&mut self, a: NodeId, ph: usize, pw: usize) -> Result<NodeId> {
        let va = self.value(a).clone();
        let (c, h, w) = chw(&va)?;
        if ph == 0 || pw == 0 || h % ph != 0 || w % pw != 0 {
            return Err(Error::shape(format!(
                "pool window {ph}x{pw} does not tile {h}x{w}"
            )));
        }
        let (oh, ow) = (h / ph, w / pw);
        let win = (ph * pw) as f64;
        let mut out = vec![0.0; c * oh * ow];
        for ic in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for dy in 0..ph {
                        for dx in 0..pw {
                            acc += va.data()[(ic * h + oy * ph + dy) * w + ox * pw + dx];
                        }
                    }
                    out[(ic * oh + oy) * ow + ox] = acc / win;
                }
            }
        }
        let out = Tensor::new(vec![c, oh, ow], out)?;
        let grad = move |g: &Tensor| {
            let mut gi = vec![0.0; c * h * w];
            for ic in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let share = g.data()[(ic * oh + oy) * ow + ox] / win;
                        for dy in 0..ph {
                            for dx in 0..pw {
                                gi[(ic * h + oy * ph + dy) * w + ox * pw + dx] += share;
                            }
                        }
                    }
                }
            }
            vec![Tensor::new(vec![c, h, w], gi).unwrap()]
        };
        Ok(self.push(out, vec![a], Some(Box::new(grad))))
    }

    /// Nearest-neighbor upsampling by an integer factor in both spatial dims.
    pub fn upsample_nearest(&mut self, a: NodeId, factor: usize) -> Result<NodeId> {
        if factor == 0 {
            return Err(Error::invalid("upsample factor must be positive"));
        }
        let va = self.value(a).clone();
        let (c, h, w) = chw(&va)?;
        let (oh, ow) = (h * factor, w * factor);
        let mut out = vec![0.0; c * oh * ow];
        for ic in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    out[(ic * oh + y) * ow + x] = va.data()[(ic * h + y / factor) * w + x / factor];
                }
            }
        }
        let out = Tensor::new(vec![c, oh, ow], out)?;
        let grad = move |g: &Tensor| {
            let mut gi = vec![0.0; c * h * w];
            for ic in 0..c {
                for y in 0..oh {
                    for x in 0..ow {
                        gi[(ic * h + y / factor) * w + x / factor] +=
                            g.data()[(ic * oh + y) * ow + x];
                    }
                }
            }
            vec![Tensor::new(vec![c, h, w], gi).unwrap()]
        };
        Ok(self.push(out, vec![a], Some(Box::new(grad))))
    }

    /// Matrix-vector product: `w [M,N] * x [N] -> [M]`.
    pub fn matvec(&mut self, weights: NodeId, x: NodeId) -> Result<NodeId> {
        let wgt = self.value(weights).clone();
        let vx = self.value(x).clone();
        let ws = wgt.shape();
        if ws.len() != 2 || vx.shape().len() != 1 || ws[1] != vx.shape()[0] {
            return Err(Error::shape("matvec expects [M,N] x [N]"));
        }
        let (m, n) = (ws[0], ws[1]);
        let out: Vec<f64> = (0..m)
            .map(|i| (0..n).map(|j| wgt.data()[i * n + j] * vx.data()[j]).sum())
            .collect();
        let out = Tensor::new(vec![m], out)?;
        let grad = move |g: &Tensor| {
            let mut gw = vec![0.0; m * n];
            let mut gx = vec![0.0; n];
            for i in 0..m {
                for j in 0..n {
                    gw[i * n + j] = g.data()[i] * vx.data()[j];
                    gx[j] += g.data()[i] * wgt.data()[i * n + j];
                }
            }
            vec![
                Tensor::new(vec![m, n], gw).unwrap(),
                Tensor::new(vec![n], gx).unwrap(),
            ]
        };
        Ok(self.push(out, vec![weights, x], Some(Box::new(grad))))
    }

    /// Scale each channel of `[C,H,W]` input by the matching entry of `[C]`.
    pub fn channel_scale(&mut self, input: NodeId, scales: NodeId) -> Result<NodeId> {
        let inp = self.value(input).clone();
        let sc = self.value(scales).clone();
        let (c, h, w) = chw(&inp)?;
        if sc.shape() != [c] {
            return Err(Error::shape("channel_scale scales must be [C]"));
        }
        let hw = h * w;
        let mut out = vec![0.0; c * hw];
        for ic in 0..c {
            for p in 0..hw {
                out[ic * hw + p] = inp.data()[ic * hw + p] * sc.data()[ic];
            }
        }
        let out = Tensor::new(vec![c, h, w], out)?;
        let grad = move |g: &Tensor| {
            let mut gi = vec![0.0; c * hw];
            let mut gs = vec![0.0; c];
            for ic in 0..c {
                for p in 0..hw {
                    gi[ic * hw + p] = g.data()[ic * hw + p] * sc.data()[ic];
                    gs[ic] += g.data()[ic * hw + p] * inp.data()[ic * hw + p];
                }
            }
            vec![
                Tensor::new(vec![c, h, w], gi).unwrap(),
                Tensor::new(vec![c], gs).unwrap(),
            ]
        };
        Ok(self.push(out, vec![input, scales], Some(Box::new(grad))))
    }

    // ── reductions and losses ────────────────────────────────────────

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).numel() as f64;
        let shape = self.value(a).shape().to_vec();
        let out = Tensor::scalar(self.value(a).data().iter().sum::<f64>() / n);
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                vec![Tensor::full(&shape, g.item() / n)]
            })),
        )
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let shape = self.value(a).shape().to_vec();
        let out = Tensor::scalar(self.value(a).data().iter().sum::<f64>());
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                vec![Tensor::full(&shape, g.item())]
            })),
        )
    }

    /// Normalize all elements into a distribution via softmax.
    pub fn softmax_all(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a).clone();
        let max = va.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = va.data().iter().map(|&v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let out = Tensor::new(
            va.shape().to_vec(),
            exps.iter().map(|&e| e / total).collect(),
        )
        .unwrap();
        let saved = out.clone();
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g: &Tensor| {
                let dot: f64 = g
                    .data()
                    .iter()
                    .zip(saved.data())
                    .map(|(gv, p)| gv * p)
                    .sum();
                vec![g.zip(&saved, |gv, p| p * (gv - dot)).unwrap()]
            })),
        )
    }

    /// Mean binary cross entropy of predictions against a constant 0/1 target.
    /// Predictions are clamped to `[eps, 1-eps]` with eps = [`LOSS_EPS`].
    pub fn bce_loss(&mut self, pred: NodeId, target: &Tensor) -> Result<NodeId> {
        let p = self.value(pred).clone();
        if p.shape() != target.shape() {
            return Err(Error::shape("bce_loss shape mismatch"));
        }
        let n = p.numel() as f64;
        let eps = LOSS_EPS;
        let clamped: Vec<f64> = p.data().iter().map(|&v| v.clamp(eps, 1.0 - eps)).collect();
        let loss = clamped
            .iter()
            .zip(target.data())
            .map(|(&pv, &t)| -(t * pv.ln() + (1.0 - t) * (1.0 - pv).ln()))
            .sum::<f64>()
            / n;
        let shape = p.shape().to_vec();
        let raw = p.data().to_vec();
        let tgt = target.data().to_vec();
        let grad = move |g: &Tensor| {
            let gs = g.item();
            let gi: Vec<f64> = raw
                .iter()
                .zip(&tgt)
                .map(|(&pv, &t)| {
                    if pv <= eps || pv >= 1.0 - eps {
                        0.0
                    } else {
                        gs * (-t / pv + (1.0 - t) / (1.0 - pv)) / n
                    }
                })
                .collect();
            vec![Tensor::new(shape.clone(), gi).unwrap()]
        };
        Ok(self.push(Tensor::scalar(loss), vec![pred], Some(Box::new(grad))))
    }

    /// KL divergence `sum target * ln(target / pred)` against a constant target
    /// distribution. Both sides are clamped at [`LOSS_EPS`] before the logs.
    pub fn kl_loss(&mut self, pred: NodeId, target: &Tensor) -> Result<NodeId> {
        let p = self.value(pred).clone();
        if p.shape() != target.shape() {
            return Err(Error::shape("kl_loss shape mismatch"));
        }
        let eps = LOSS_EPS;
        let loss: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&pv, &t)| {
                let t = t.max(eps);
                let pv = pv.max(eps);
                t * (t.ln() - pv.ln())
            })
            .sum();
        let shape = p.shape().to_vec();
        let raw = p.data().to_vec();
        let tgt = target.data().to_vec();
        let grad = move |g: &Tensor| {
            let gs = g.item();
            let gi: Vec<f64> = raw
                .iter()
                .zip(&tgt)
                .map(|(&pv, &t)| {
                    if pv <= eps {
                        0.0
                    } else {
                        gs * (-t.max(eps) / pv)
                    }
                })
                .collect();
            vec![Tensor::new(shape.clone(), gi).unwrap()]
        };
        Ok(self.push(Tensor::scalar(loss), vec![pred], Some(Box::new(grad))))
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss node. Returns one gradient tensor per
    /// tape node; nodes the loss does not depend on get zero gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Vec<Tensor>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::invalid("backward requires a scalar loss node"));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Some(grad_fn) = &node.grad_fn {
                let parent_grads = grad_fn(&g);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (pid, pg) in node.parents.iter().zip(parent_grads) {
                    match &mut grads[pid.0] {
                        Some(existing) => existing.add_assign(&pg),
                        slot => *slot = Some(pg),
                    }
                }
            }
            grads[idx] = Some(g);
        }

        Ok(grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.unwrap_or_else(|| Tensor::zeros(self.nodes[i].value.shape())))
            .collect())
    }

    /// Convenience accessor: gradient for one node after [`Tape::backward`].
    pub fn grad<'a>(&self, grads: &'a [Tensor], id: NodeId) -> &'a Tensor {
        &grads[id.0]
    }
}

fn chw(t: &Tensor) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        s => Err(Error::shape(format!("expected [C,H,W], got {s:?}"))),
    }
}
