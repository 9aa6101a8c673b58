//! Trace-driven toolkit for tile-based 360-degree live streaming.
//!
//! The crate covers the full client-side loop at desk scale:
//!
//! - [`tensor`] — a small f64 autodiff engine with the convolution, SE and
//!   loss primitives the predictors need, plus RMSprop and checkpointing.
//! - [`geometry`] — equirectangular tiling, viewport-to-tile mapping,
//!   wrap-around distances, saliency downsampling and prediction metrics.
//! - [`predictors`] — the linear-regression baseline and a modified ConvLSTM
//!   (depthwise separable convolutions + squeeze-and-excitation gating) that
//!   maps saliency/viewport history to per-tile viewing probabilities.
//! - [`meta`] — a first-order MAML trainer over saliency-prediction tasks,
//!   with a fine-tuning stage and analytic validation oracles.
//! - [`abr`] — classification-based bitrate adaptation (CBA), the pyramid
//!   baseline (PBA), the QoE objective, and the overhead planner.
//! - [`sim`] — a chunk-by-chunk session simulator replaying head-movement and
//!   bandwidth traces.
//! - [`cli`] — config handling and the subcommand entry points used by the
//!   `vp360` binary.
//!
//! See the crate `examples/` directory for one runnable example per
//! capability.

pub mod abr;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod meta;
pub mod predictors;
pub mod sim;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
