//! Composite layers built from tape primitives.

use super::{NodeId, Tape};
use crate::error::{Error, Result};

/// Depthwise separable convolution: per-channel spatial convolution followed
/// by a 1x1 channel-mixing convolution.
///
/// `input [C,H,W]`, `depthwise [C,kh,kw]`, `pointwise [O,C]`, `bias [O]`.
/// Equals a dense conv2d with `kernels[o,c] = pointwise[o,c] * depthwise[c]`.
pub fn depthwise_separable_conv(
    tape: &mut Tape,
    input: NodeId,
    depthwise: NodeId,
    pointwise: NodeId,
    bias: NodeId,
) -> Result<NodeId> {
    let spatial = tape.depthwise_conv(input, depthwise)?;
    tape.pointwise_conv(spatial, pointwise, bias)
}

/// Squeeze-and-excitation channel reweighting.
///
/// `input [C,H,W]`, `w1 [C/r, C]`, `w2 [C, C/r]`. The squeeze is a global
/// average pool, the excitation is `sigmoid(w2 . relu(w1 . squeeze))`, and the
/// output scales each input channel by its excitation weight.
pub fn se_block(tape: &mut Tape, input: NodeId, w1: NodeId, w2: NodeId) -> Result<NodeId> {
    let c = match tape.value(input).shape() {
        [c, _, _] => *c,
        s => return Err(Error::shape(format!("se_block expects [C,H,W], got {s:?}"))),
    };
    let w1s = tape.value(w1).shape().to_vec();
    let w2s = tape.value(w2).shape().to_vec();
    if w1s.len() != 2 || w1s[1] != c || w2s.len() != 2 || w2s[0] != c || w2s[1] != w1s[0] {
        return Err(Error::shape(format!(
            "se_block weights must be [C/r,C] and [C,C/r] for C={c}, got {w1s:?} and {w2s:?}"
        )));
    }
    if c % w1s[0] != 0 {
        return Err(Error::invalid(format!(
            "se_block reduction {} does not divide channel count {c}",
            w1s[0]
        )));
    }
    let squeeze = tape.global_avg_pool(input)?;
    let bottleneck = tape.matvec(w1, squeeze)?;
    let bottleneck = tape.relu(bottleneck);
    let pre = tape.matvec(w2, bottleneck)?;
    let excitation = tape.sigmoid(pre);
    tape.channel_scale(input, excitation)
}
