//! Client-side viewport predictors: the linear-regression baseline and the
//! modified ConvLSTM (depthwise separable convolutions + SE gating) that maps
//! (saliency map, viewport history) windows to per-tile viewing probabilities.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    viewport_to_tiles, FovSpec, SaliencyMap, TileGrid, TileMatrix, ViewportSample,
};
use crate::tensor::{
    depthwise_separable_conv, load_checkpoint, save_checkpoint, se_block, seeded_rng, NodeId,
    ParameterSet, RmsProp, Tape, Tensor,
};

/// Per-tile viewing probabilities over a grid, each in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix {
    grid: TileGrid,
    p: Vec<f64>,
}

impl ProbabilityMatrix {
    pub fn new(grid: TileGrid, p: Vec<f64>) -> Result<Self> {
        if p.len() != grid.tile_count() {
            return Err(Error::shape("probability count does not match grid"));
        }
        if p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::invalid("probabilities must lie in [0,1]"));
        }
        Ok(ProbabilityMatrix { grid, p })
    }

    pub fn from_tiles(tiles: &TileMatrix) -> Self {
        ProbabilityMatrix {
            grid: tiles.grid(),
            p: tiles
                .cells()
                .iter()
                .map(|&c| if c { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    pub fn grid(&self) -> TileGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.p
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.p[row * self.grid.cols() + col]
    }

    /// Tiles with probability at or above the threshold.
    pub fn at_least(&self, threshold: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.grid.rows() {
            for c in 0..self.grid.cols() {
                if self.get(r, c) >= threshold {
                    out.push((r, c));
                }
            }
        }
        out
    }

    /// Tile with the highest probability.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.p.iter().enumerate() {
            if v > self.p[best] {
                best = i;
            }
        }
        (best / self.grid.cols(), best % self.grid.cols())
    }
}

/// Chronological sequence of (viewport tile matrix, downsampled saliency map)
/// pairs feeding one ConvLSTM prediction.
#[derive(Debug, Clone)]
pub struct HistoryWindow {
    steps: Vec<(TileMatrix, SaliencyMap)>,
}

impl HistoryWindow {
    pub fn new(steps: Vec<(TileMatrix, SaliencyMap)>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::invalid("history window must be nonempty"));
        }
        let grid = steps[0].0.grid();
        let (h, w) = (steps[0].1.height(), steps[0].1.width());
        for (tiles, map) in &steps {
            if tiles.grid() != grid || map.height() != h || map.width() != w {
                return Err(Error::shape("history window shapes must be uniform"));
            }
        }
        Ok(HistoryWindow { steps })
    }

    pub fn steps(&self) -> &[(TileMatrix, SaliencyMap)] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn grid(&self) -> TileGrid {
        self.steps[0].0.grid()
    }

    pub fn map_shape(&self) -> (usize, usize) {
        (self.steps[0].1.height(), self.steps[0].1.width())
    }
}

/// Topology of the modified ConvLSTM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLstmConfig {
    /// Spatial height of the (downsampled) input maps.
    pub input_h: usize,
    /// Spatial width of the input maps.
    pub input_w: usize,
    pub hidden_channels: usize,
    pub num_cells: usize,
    /// Depthwise kernel size (odd).
    pub kernel: usize,
    /// SE bottleneck reduction; must divide 4 * hidden_channels.
    pub se_reduction: usize,
    /// History window length in steps.
    pub window_len: usize,
    /// Use a 1x1 projection head instead of a plain channel mean.
    pub head_projection: bool,
}

impl Default for ConvLstmConfig {
    fn default() -> Self {
        ConvLstmConfig {
            input_h: 20,
            input_w: 40,
            hidden_channels: 8,
            num_cells: 2,
            kernel: 3,
            se_reduction: 2,
            window_len: 5,
            head_projection: true,
        }
    }
}

impl ConvLstmConfig {
    pub fn validate(&self, grid: TileGrid) -> Result<()> {
        if self.hidden_channels == 0 || self.num_cells == 0 || self.window_len == 0 {
            return Err(Error::Config("ConvLSTM topology fields must be positive".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config("ConvLSTM kernel must be odd".into()));
        }
        let gates = 4 * self.hidden_channels;
        if self.se_reduction == 0 || gates % self.se_reduction != 0 {
            return Err(Error::Config(format!(
                "SE reduction {} must divide {gates}",
                self.se_reduction
            )));
        }
        if self.input_h % grid.rows() != 0 || self.input_w % grid.cols() != 0 {
            return Err(Error::Config(format!(
                "input {}x{} must be an integer multiple of the {}x{} grid",
                self.input_h,
                self.input_w,
                grid.rows(),
                grid.cols()
            )));
        }
        Ok(())
    }
}

/// Hidden and cell state of one ConvLSTM cell.
#[derive(Debug, Clone)]
pub struct ConvLstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl ConvLstmState {
    pub fn zeros(hidden: usize, h: usize, w: usize) -> Self {
        ConvLstmState {
            h: Tensor::zeros(&[hidden, h, w]),
            c: Tensor::zeros(&[hidden, h, w]),
        }
    }
}

/// The modified ConvLSTM predictor.
#[derive(Debug, Clone)]
pub struct ConvLstm {
    config: ConvLstmConfig,
    params: ParameterSet,
}

fn cell_param_names(cell: usize) -> [String; 5] {
    [
        format!("cell{cell}.depthwise"),
        format!("cell{cell}.pointwise"),
        format!("cell{cell}.bias"),
        format!("cell{cell}.se_w1"),
        format!("cell{cell}.se_w2"),
    ]
}

impl ConvLstm {
    /// Seeded uniform initialization of all weights.
    pub fn init(config: ConvLstmConfig, grid: TileGrid, seed: u64) -> Result<Self> {
        config.validate(grid)?;
        let mut rng = seeded_rng(seed);
        let mut params = ParameterSet::new();
        let hidden = config.hidden_channels;
        let gates = 4 * hidden;
        let k = config.kernel;
        for cell in 0..config.num_cells {
            // Cell 0 sees the two input channels; deeper cells see the
            // previous cell's hidden state.
            let in_ch = if cell == 0 { 2 } else { hidden };
            let cin = in_ch + hidden;
            let [dw, pw, bias, w1, w2] = cell_param_names(cell);
            params.insert_init(dw, &[cin, k, k], k * k, &mut rng)?;
            params.insert_init(pw, &[gates, cin], cin, &mut rng)?;
            params.insert(bias, Tensor::zeros(&[gates]))?;
            params.insert_init(w1, &[gates / config.se_reduction, gates], gates, &mut rng)?;
            params.insert_init(
                w2,
                &[gates, gates / config.se_reduction],
                gates / config.se_reduction,
                &mut rng,
            )?;
        }
        if config.head_projection {
            params.insert_init("head.pointwise", &[1, hidden], hidden, &mut rng)?;
            params.insert("head.bias", Tensor::zeros(&[1]))?;
        }
        Ok(ConvLstm { config, params })
    }

    pub fn from_parts(config: ConvLstmConfig, params: ParameterSet) -> Self {
        ConvLstm { config, params }
    }

    pub fn config(&self) -> &ConvLstmConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    /// One cell update on the tape:
    /// `u = se(separable(concat(x, h_prev)))`, split into (i, f, o, g),
    /// `c_next = f*c_prev + i*g`, `h_next = o*tanh(c_next)`.
    pub fn cell_step_on_tape(
        &self,
        tape: &mut Tape,
        nodes: &BTreeMap<String, NodeId>,
        cell: usize,
        x: NodeId,
        h_prev: NodeId,
        c_prev: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let hidden = self.config.hidden_channels;
        let [dw, pw, bias, w1, w2] = cell_param_names(cell);
        let z = tape.concat_channels(x, h_prev)?;
        let u = depthwise_separable_conv(tape, z, nodes[&dw], nodes[&pw], nodes[&bias])?;
        let u = se_block(tape, u, nodes[&w1], nodes[&w2])?;
        let i_pre = tape.slice_channels(u, 0, hidden)?;
        let f_pre = tape.slice_channels(u, hidden, hidden)?;
        let o_pre = tape.slice_channels(u, 2 * hidden, hidden)?;
        let g_pre = tape.slice_channels(u, 3 * hidden, hidden)?;
        let i = tape.sigmoid(i_pre);
        let f = tape.sigmoid(f_pre);
        let o = tape.sigmoid(o_pre);
        let g = tape.tanh(g_pre);
        let keep = tape.mul(f, c_prev)?;
        let write = tape.mul(i, g)?;
        let c_next = tape.add(keep, write)?;
        let c_act = tape.tanh(c_next);
        let h_next = tape.mul(o, c_act)?;
        Ok((h_next, c_next))
    }

    /// Full forward pass on a tape; returns the [1, m, n] probability node.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        nodes: &BTreeMap<String, NodeId>,
        window: &HistoryWindow,
    ) -> Result<NodeId> {
        let grid = window.grid();
        self.config.validate(grid)?;
        let (mh, mw) = window.map_shape();
        if (mh, mw) != (self.config.input_h, self.config.input_w) {
            return Err(Error::shape(format!(
                "window maps are {mh}x{mw}, model expects {}x{}",
                self.config.input_h, self.config.input_w
            )));
        }
        let hidden = self.config.hidden_channels;
        let mut states: Vec<(NodeId, NodeId)> = (0..self.config.num_cells)
            .map(|_| {
                let z = ConvLstmState::zeros(hidden, mh, mw);
                (tape.leaf(z.h), tape.leaf(z.c))
            })
            .collect();

        let mut last_h = states[0].0;
        for (tiles, map) in window.steps() {
            let sal = tape.leaf(map.to_tensor());
            let tiles_up = tape.leaf(upsample_tiles(tiles, mh, mw)?);
            let mut x = tape.concat_channels(sal, tiles_up)?;
            for cell in 0..self.config.num_cells {
                let (h_prev, c_prev) = states[cell];
                let (h_next, c_next) = self.cell_step_on_tape(tape, nodes, cell, x, h_prev, c_prev)?;
                states[cell] = (h_next, c_next);
                x = h_next;
            }
            last_h = x;
        }

        let pooled = tape.avg_pool2d(last_h, mh / grid.rows(), mw / grid.cols())?;
        let logits = if self.config.head_projection {
            tape.pointwise_conv(pooled, nodes["head.pointwise"], nodes["head.bias"])?
        } else {
            // Plain channel mean: a fixed 1/hidden pointwise mix.
            let mix = tape.leaf(Tensor::full(&[1, hidden], 1.0 / hidden as f64));
            let zero = tape.leaf(Tensor::zeros(&[1]));
            tape.pointwise_conv(pooled, mix, zero)?
        };
        Ok(tape.sigmoid(logits))
    }

    /// Inference: probabilities for the next chunk from a history window.
    pub fn predict(&self, window: &HistoryWindow) -> Result<ProbabilityMatrix> {
        let mut tape = Tape::new();
        let nodes = self.params.inject(&mut tape);
        let out = self.forward_on_tape(&mut tape, &nodes, window)?;
        ProbabilityMatrix::new(window.grid(), tape.value(out).data().to_vec())
    }

    /// BCE loss and parameter gradients for one (window, ground truth) pair.
    pub fn loss_and_grads(
        &self,
        window: &HistoryWindow,
        truth: &TileMatrix,
    ) -> Result<(f64, BTreeMap<String, Tensor>)> {
        let mut tape = Tape::new();
        let nodes = self.params.inject(&mut tape);
        let out = self.forward_on_tape(&mut tape, &nodes, window)?;
        let target = truth.to_tensor();
        let loss = tape.bce_loss(out, &target)?;
        let grads = tape.backward(loss)?;
        let named = nodes
            .iter()
            .map(|(name, &id)| (name.clone(), tape.grad(&grads, id).clone()))
            .collect();
        Ok((tape.value(loss).item(), named))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::to_string(&self.config)
            .map_err(|e| Error::Data(format!("config serialization: {e}")))?;
        save_checkpoint(path, &self.params, &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, meta) = load_checkpoint(path)?;
        let config: ConvLstmConfig = serde_json::from_str(&meta)
            .map_err(|e| Error::Data(format!("{}: bad model metadata: {e}", path.display())))?;
        Ok(ConvLstm { config, params })
    }
}

/// Nearest-neighbor upsample of an m x n tile matrix to H' x W'.
fn upsample_tiles(tiles: &TileMatrix, th: usize, tw: usize) -> Result<Tensor> {
    let grid = tiles.grid();
    if th % grid.rows() != 0 || tw % grid.cols() != 0 {
        return Err(Error::shape(format!(
            "cannot upsample {}x{} tiles to {th}x{tw}",
            grid.rows(),
            grid.cols()
        )));
    }
    let (fy, fx) = (th / grid.rows(), tw / grid.cols());
    let mut data = vec![0.0; th * tw];
    for y in 0..th {
        for x in 0..tw {
            if tiles.get(y / fy, x / fx) {
                data[y * tw + x] = 1.0;
            }
        }
    }
    Tensor::new(vec![1, th, tw], data)
}

/// Training settings for the ConvLSTM.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            learning_rate: 1e-2,
            rmsprop_decay: 0.9,
            rmsprop_epsilon: 1e-8,
        }
    }
}

/// Per-epoch mean training loss.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

/// RMSprop training on BCE loss, one update per example in fixed order.
pub fn train_convlstm(
    model: &mut ConvLstm,
    dataset: &[(HistoryWindow, TileMatrix)],
    config: &TrainConfig,
) -> Result<TrainReport> {
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset must be nonempty"));
    }
    let mut opt = RmsProp::new(config.learning_rate, config.rmsprop_decay, config.rmsprop_epsilon)?;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut total = 0.0;
        for (window, truth) in dataset {
            let (loss, grads) = model.loss_and_grads(window, truth)?;
            opt.step(model.params_mut(), &grads)?;
            total += loss;
        }
        epoch_losses.push(total / dataset.len() as f64);
    }
    Ok(TrainReport { epoch_losses })
}

// ── linear-regression baseline ───────────────────────────────────────

/// Least-squares line fit per axis over the history, extrapolated to
/// `t_last + horizon`; yaw is unwrapped before the fit so seam crossings do
/// not break the line.
pub fn lr_predict(
    history: &[ViewportSample],
    horizon: f64,
    grid: TileGrid,
    fov: FovSpec,
) -> Result<ProbabilityMatrix> {
    let extrapolated = lr_extrapolate(history, horizon)?;
    let tiles = viewport_to_tiles(extrapolated, grid, fov);
    Ok(ProbabilityMatrix::from_tiles(&tiles))
}

/// The extrapolated viewport sample behind [`lr_predict`].
pub fn lr_extrapolate(history: &[ViewportSample], horizon: f64) -> Result<ViewportSample> {
    if history.len() < 2 {
        return Err(Error::invalid("linear predictor needs at least 2 samples"));
    }
    let times: Vec<f64> = history.iter().map(|s| s.t).collect();
    let yaw_unwrapped = unwrap_angles(history.iter().map(|s| s.yaw));
    let pitch: Vec<f64> = history.iter().map(|s| s.pitch).collect();

    let t_target = times[times.len() - 1] + horizon;
    let yaw = fit_line_at(&times, &yaw_unwrapped, t_target);
    let pv = fit_line_at(&times, &pitch, t_target);
    ViewportSample::new(
        t_target.max(0.0),
        crate::geometry::wrap_yaw(yaw),
        pv.clamp(-90.0, 90.0),
    )
}

/// Unwrap a yaw sequence so consecutive deltas stay within +-180 degrees.
fn unwrap_angles(angles: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    let mut offset = 0.0;
    let mut prev: Option<f64> = None;
    for a in angles {
        if let Some(p) = prev {
            let mut delta = a - p;
            while delta > 180.0 {
                delta -= 360.0;
                offset -= 360.0;
            }
            while delta < -180.0 {
                delta += 360.0;
                offset += 360.0;
            }
        }
        prev = Some(a);
        out.push(a + offset);
    }
    out
}

/// Least-squares slope/intercept evaluated at `t`; falls back to the mean for
/// a degenerate time spread.
fn fit_line_at(times: &[f64], values: &[f64], t: f64) -> f64 {
    let n = times.len() as f64;
    let tm = times.iter().sum::<f64>() / n;
    let vm = values.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&ti, &vi) in times.iter().zip(values) {
        sxx += (ti - tm) * (ti - tm);
        sxy += (ti - tm) * (vi - vm);
    }
    if sxx <= 0.0 {
        return vm;
    }
    let slope = sxy / sxx;
    vm + slope * (t - tm)
}
