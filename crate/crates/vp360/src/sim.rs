//! Chunk-by-chunk live-streaming session simulator: replays a head-movement
//! trace against a bandwidth trace, runs predictor and bitrate adaptation
//! every chunk, models sequential downloads with a one-chunk startup delay,
//! and aggregates quality/rebuffering/bandwidth metrics.

use std::collections::VecDeque;
use std::path::Path;

use crate::abr::{
    cba_solve, classify_tiles, pba_solve, qoe_q1, qoe_q2, saliency_cost_mbps,
    saliency_map_bytes, BitrateLadder, ChunkDecision, ClassMap, ConfidenceModel,
};
use crate::error::{Error, Result};
use crate::geometry::{
    downsample_saliency, downsample_shape, ground_truth_tiles, prediction_metrics,
    viewport_to_tiles, FovSpec, PredictionMetrics, SaliencyMap, TileGrid, ViewportSample,
};
use crate::predictors::{lr_predict, ConvLstm, HistoryWindow, ProbabilityMatrix};

/// Version tag written at the top of exported session CSVs.
pub const SESSION_LOG_SCHEMA: &str = "vp360-session-log/1";

// ── bandwidth trace ──────────────────────────────────────────────────

/// Piecewise-constant throughput over time; each sample gives the rate from
/// its timestamp until the next one, extended by last value past the end.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthTrace {
    /// `(t_seconds, mbps)`, t strictly increasing.
    samples: Vec<(f64, f64)>,
}

impl BandwidthTrace {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("bandwidth trace must be nonempty".into()));
        }
        if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Data("trace timestamps must strictly increase".into()));
        }
        if samples.iter().any(|&(_, v)| v <= 0.0) {
            return Err(Error::Data("trace throughput must be positive".into()));
        }
        Ok(BandwidthTrace { samples })
    }

    pub fn constant(mbps: f64) -> Result<Self> {
        BandwidthTrace::new(vec![(0.0, mbps)])
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    /// Multiply every throughput sample by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if factor <= 0.0 {
            return Err(Error::invalid("scale factor must be positive"));
        }
        BandwidthTrace::new(self.samples.iter().map(|&(t, v)| (t, v * factor)).collect())
    }

    /// Throughput in Mbps at time `t` (first value before the trace starts).
    pub fn throughput_at(&self, t: f64) -> f64 {
        match self.samples.iter().rev().find(|&&(ts, _)| ts <= t) {
            Some(&(_, v)) => v,
            None => self.samples[0].1,
        }
    }

    /// Seconds to move `bits` through the trace starting at `start`, by exact
    /// inversion of the piecewise-constant rate integral.
    pub fn transfer_time(&self, bits: f64, start: f64) -> f64 {
        if bits <= 0.0 {
            return 0.0;
        }
        let mut remaining = bits;
        let mut t = start;
        let mut idx = match self.samples.iter().rposition(|&(ts, _)| ts <= start) {
            Some(i) => i,
            None => 0,
        };
        loop {
            let rate_bps = self.samples[idx].1 * 1e6;
            let seg_end = if idx + 1 < self.samples.len() {
                Some(self.samples[idx + 1].0)
            } else {
                None
            };
            match seg_end {
                Some(end) if end > t => {
                    let cap = (end - t) * rate_bps;
                    if cap >= remaining {
                        return t + remaining / rate_bps - start;
                    }
                    remaining -= cap;
                    t = end;
                    idx += 1;
                }
                Some(_) => {
                    idx += 1;
                }
                None => {
                    return t + remaining / rate_bps - start;
                }
            }
        }
    }

    /// Trace capacity in bits over `[t0, t1]`.
    pub fn capacity_bits(&self, t0: f64, t1: f64) -> f64 {
        if t1 <= t0 {
            return 0.0;
        }
        let mut total = 0.0;
        let mut t = t0;
        while t < t1 {
            let rate = self.throughput_at(t);
            let next = self
                .samples
                .iter()
                .map(|&(ts, _)| ts)
                .find(|&ts| ts > t)
                .unwrap_or(f64::INFINITY)
                .min(t1);
            total += (next - t) * rate * 1e6;
            t = next;
        }
        total
    }

    /// Read a trace CSV, auto-detected by header: either
    /// `t_ms,bytes,ms_since_last` (cellular-dataset shape, converted to Mbps)
    /// or `t_s,mbps`. Throughputs are multiplied by `scale`.
    pub fn from_csv(path: &Path, scale: f64) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Data(e.to_string()))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let parse = |field: &str| -> Result<f64> {
            field
                .trim()
                .parse()
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
        };
        let mut samples = Vec::new();
        if headers == ["t_ms", "bytes", "ms_since_last"] {
            for rec in rdr.records() {
                let rec = rec.map_err(|e| Error::Data(e.to_string()))?;
                let t_ms = parse(&rec[0])?;
                let bytes = parse(&rec[1])?;
                let dt_ms = parse(&rec[2])?;
                if dt_ms <= 0.0 {
                    return Err(Error::Data(format!(
                        "{}: ms_since_last must be positive",
                        path.display()
                    )));
                }
                // Rate over the interval that ended at t_ms.
                let mbps = bytes * 8.0 / (dt_ms * 1000.0);
                samples.push(((t_ms - dt_ms) / 1000.0, mbps * scale));
            }
        } else if headers == ["t_s", "mbps"] {
            for rec in rdr.records() {
                let rec = rec.map_err(|e| Error::Data(e.to_string()))?;
                samples.push((parse(&rec[0])?, parse(&rec[1])? * scale));
            }
        } else {
            return Err(Error::Data(format!(
                "{}: unrecognized trace header {headers:?}",
                path.display()
            )));
        }
        BandwidthTrace::new(samples)
    }
}

// ── throughput estimator ─────────────────────────────────────────────

/// Moving average over the last 5 per-chunk throughput measurements.
#[derive(Debug, Clone, Default)]
pub struct ThroughputEstimator {
    ring: VecDeque<f64>,
}

pub const THROUGHPUT_WINDOW: usize = 5;

impl ThroughputEstimator {
    pub fn new() -> Self {
        ThroughputEstimator {
            ring: VecDeque::with_capacity(THROUGHPUT_WINDOW),
        }
    }

    pub fn record(&mut self, mbps: f64) {
        if self.ring.len() == THROUGHPUT_WINDOW {
            self.ring.pop_front();
        }
        self.ring.push_back(mbps);
    }

    pub fn estimate(&self) -> Result<f64> {
        if self.ring.is_empty() {
            return Err(Error::invalid("no throughput samples recorded yet"));
        }
        Ok(self.ring.iter().sum::<f64>() / self.ring.len() as f64)
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }
}

// ── session configuration ────────────────────────────────────────────

/// Viewport predictor used inside the session loop.
#[derive(Debug, Clone)]
pub enum Predictor {
    ConvLstm(Box<ConvLstm>),
    LinearRegression,
    /// Perfect-information stub: predicts the true tiles of the next chunk.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbrChoice {
    Cba,
    Pba,
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    /// Chunk length L in seconds.
    pub chunk_length: f64,
    pub grid: TileGrid,
    pub ladder: BitrateLadder,
    pub lambda: f64,
    pub fov: FovSpec,
    /// Head-sample rate (samples/second) used to build prediction history.
    pub sf: f64,
    /// Saliency downsampling ratio (pixels per tile).
    pub ratio: usize,
    /// History steps fed to the predictor.
    pub window_len: usize,
    /// Viewport probability threshold.
    pub p_vp: f64,
    pub confidence: ConfidenceModel,
    /// Throughput assumed before any measurement exists, Mbps.
    pub bootstrap_mbps: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            chunk_length: 1.0,
            grid: TileGrid::default_10x20(),
            ladder: BitrateLadder::default(),
            lambda: 2.0,
            fov: FovSpec::default_90(),
            sf: 8.0,
            ratio: 144,
            window_len: 5,
            p_vp: 0.5,
            confidence: ConfidenceModel::default(),
            bootstrap_mbps: 10.0,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_length <= 0.0 {
            return Err(Error::Config("chunk length must be positive".into()));
        }
        if self.sf <= 0.0 || self.window_len == 0 {
            return Err(Error::Config("sf and window length must be positive".into()));
        }
        if !(0.0 < self.p_vp && self.p_vp < 1.0) {
            return Err(Error::Config("p_vp must lie in (0,1)".into()));
        }
        if self.bootstrap_mbps <= 0.0 {
            return Err(Error::Config("bootstrap throughput must be positive".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        self.confidence.validate()?;
        downsample_shape(self.grid, self.ratio)?;
        Ok(())
    }
}

// ── session log ──────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct ChunkRecord {
    pub chunk: usize,
    pub probabilities: ProbabilityMatrix,
    pub classmap: ClassMap,
    pub decision: ChunkDecision,
    pub estimated_mbps: f64,
    pub measured_mbps: f64,
    pub download_time: f64,
    pub rebuffer: f64,
    pub saliency_bytes: usize,
    pub q1: f64,
    pub q2: f64,
    pub objective: f64,
    pub metrics: PredictionMetrics,
}

#[derive(Debug, Clone)]
pub struct SessionLog {
    pub records: Vec<ChunkRecord>,
    pub total_bits: f64,
    /// Arrival time of the last chunk, seconds from session start.
    pub last_arrival: f64,
}

/// Aggregate metric suite over one session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionSummary {
    pub avg_quality_level: f64,
    pub quality_level_change: f64,
    pub rebuffer_total_s: f64,
    pub bandwidth_total_mbit: f64,
    pub mean_accuracy: f64,
    pub mean_f1: f64,
}

impl SessionLog {
    /// One CSV row per chunk, prefixed by a schema-version comment line.
    pub fn to_csv_string(&self) -> String {
        let mut out = format!("# {SESSION_LOG_SCHEMA}\n");
        out.push_str(
            "chunk,estimated_mbps,measured_mbps,download_time_s,rebuffer_s,\
             saliency_bytes,mean_level,over_budget,q1,q2,objective,accuracy,f1\n",
        );
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{},{:.6},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                r.chunk,
                r.estimated_mbps,
                r.measured_mbps,
                r.download_time,
                r.rebuffer,
                r.saliency_bytes,
                r.decision.mean_level(),
                r.decision.over_budget,
                r.q1,
                r.q2,
                r.objective,
                r.metrics.accuracy,
                r.metrics.f1,
            ));
        }
        out
    }

    pub fn export_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    pub fn summary_csv_string(&self) -> Result<String> {
        let s = aggregate_metrics(self)?;
        Ok(format!(
            "# {SESSION_LOG_SCHEMA}\navg_quality_level,quality_level_change,\
             rebuffer_total_s,bandwidth_total_mbit,mean_accuracy,mean_f1\n\
             {:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            s.avg_quality_level,
            s.quality_level_change,
            s.rebuffer_total_s,
            s.bandwidth_total_mbit,
            s.mean_accuracy,
            s.mean_f1
        ))
    }
}

/// Mean quality level, level variation (inter-chunk jump plus intra-chunk
/// spread), totals, and mean prediction metrics.
pub fn aggregate_metrics(log: &SessionLog) -> Result<SessionSummary> {
    if log.records.is_empty() {
        return Err(Error::invalid("cannot aggregate an empty session log"));
    }
    let n = log.records.len() as f64;
    let means: Vec<f64> = log.records.iter().map(|r| r.decision.mean_level()).collect();
    let avg_quality_level = means.iter().sum::<f64>() / n;

    let inter = if means.len() < 2 {
        0.0
    } else {
        means.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (means.len() - 1) as f64
    };
    let intra = log
        .records
        .iter()
        .map(|r| {
            let levels = r.decision.levels();
            let m = levels.iter().sum::<usize>() as f64 / levels.len() as f64;
            (levels
                .iter()
                .map(|&lv| (lv as f64 - m) * (lv as f64 - m))
                .sum::<f64>()
                / levels.len() as f64)
                .sqrt()
        })
        .sum::<f64>()
        / n;

    Ok(SessionSummary {
        avg_quality_level,
        quality_level_change: inter + intra,
        rebuffer_total_s: log.records.iter().map(|r| r.rebuffer).sum(),
        bandwidth_total_mbit: log.total_bits / 1e6,
        mean_accuracy: log.records.iter().map(|r| r.metrics.accuracy).sum::<f64>() / n,
        mean_f1: log.records.iter().map(|r| r.metrics.f1).sum::<f64>() / n,
    })
}

// ── download model ───────────────────────────────────────────────────

/// Bits of one chunk (tile payload plus the saliency map) and the time to
/// fetch them through the trace starting at `start`.
pub fn download_model(
    decision: &ChunkDecision,
    ladder: &BitrateLadder,
    saliency_bytes: usize,
    chunk_length: f64,
    trace: &BandwidthTrace,
    start: f64,
) -> (f64, f64) {
    let bits = decision.total_mbps(ladder) * chunk_length * 1e6 + saliency_bytes as f64 * 8.0;
    (trace.transfer_time(bits, start), bits)
}

// ── session loop ─────────────────────────────────────────────────────

/// History sample times for chunk `c`: `window_len` instants at rate `sf`
/// ending just before the chunk starts; times before the trace are served by
/// the earliest sample (left padding).
fn history_samples(
    head: &[ViewportSample],
    chunk_start: f64,
    window_len: usize,
    sf: f64,
) -> Vec<ViewportSample> {
    (0..window_len)
        .map(|j| {
            let t = chunk_start - (window_len - j) as f64 / sf;
            match head.iter().rev().find(|s| s.t <= t) {
                Some(&s) => s,
                None => head[0],
            }
        })
        .collect()
}

fn predict_chunk(
    predictor: &Predictor,
    head: &[ViewportSample],
    chunk_maps: &[SaliencyMap],
    chunk: usize,
    truth: &crate::geometry::TileMatrix,
    config: &SessionConfig,
) -> Result<ProbabilityMatrix> {
    let chunk_start = chunk as f64 * config.chunk_length;
    match predictor {
        Predictor::Oracle => Ok(ProbabilityMatrix::from_tiles(truth)),
        Predictor::LinearRegression => {
            let samples = history_samples(head, chunk_start, config.window_len, config.sf);
            let last_t = samples.last().unwrap().t;
            let horizon = chunk_start + 0.5 * config.chunk_length - last_t;
            lr_predict(&samples, horizon, config.grid, config.fov)
        }
        Predictor::ConvLstm(model) => {
            let samples = history_samples(head, chunk_start, config.window_len, config.sf);
            let steps = samples
                .iter()
                .map(|&s| {
                    let tiles = viewport_to_tiles(s, config.grid, config.fov);
                    // Saliency of the chunk the sample falls into.
                    let idx = ((s.t / config.chunk_length).floor().max(0.0) as usize)
                        .min(chunk_maps.len() - 1);
                    (tiles, chunk_maps[idx].clone())
                })
                .collect();
            model.predict(&HistoryWindow::new(steps)?)
        }
    }
}

/// Run one live session: sequential downloads, one-chunk startup delay,
/// stall-until-arrival rebuffering. `saliency` holds one map per chunk at
/// any resolution; maps are downsampled to the configured ratio on entry.
pub fn simulate_session(
    head: &[ViewportSample],
    saliency: &[SaliencyMap],
    trace: &BandwidthTrace,
    predictor: &Predictor,
    abr: AbrChoice,
    config: &SessionConfig,
) -> Result<SessionLog> {
    config.validate()?;
    if head.is_empty() {
        return Err(Error::Data("head trace is empty".into()));
    }
    if saliency.is_empty() {
        return Err(Error::Data("need at least one saliency map".into()));
    }
    let chunks = saliency.len();
    let l_len = config.chunk_length;

    let (ds_h, ds_w) = downsample_shape(config.grid, config.ratio)?;
    let chunk_maps: Vec<SaliencyMap> = saliency
        .iter()
        .map(|m| {
            if m.height() == ds_h && m.width() == ds_w {
                Ok(m.clone())
            } else {
                downsample_saliency(m, config.grid, config.ratio)
            }
        })
        .collect::<Result<_>>()?;
    let sal_bytes = saliency_map_bytes(ds_h * ds_w);
    let sal_mbps = saliency_cost_mbps(sal_bytes, 1, l_len);
    let conf = config.confidence.confidence(config.sf);
    let k = config.ladder.levels();

    let mut estimator = ThroughputEstimator::new();
    let mut records = Vec::with_capacity(chunks);
    let mut clock: f64 = 0.0;
    let mut rebuffer_acc = 0.0;
    let mut q1_prev = 0.0;
    let mut total_bits = 0.0;

    for c in 0..chunks {
        let chunk_start = c as f64 * l_len;
        let chunk_end = chunk_start + l_len;
        let in_chunk: Vec<ViewportSample> = head
            .iter()
            .filter(|s| s.t >= chunk_start - 1e-9 && s.t < chunk_end - 1e-9)
            .cloned()
            .collect();
        if in_chunk.is_empty() {
            return Err(Error::Data(format!(
                "head trace has no samples in chunk {c} [{chunk_start}, {chunk_end})"
            )));
        }
        let truth = ground_truth_tiles(&in_chunk, config.grid, config.fov)?;

        let probs = predict_chunk(predictor, head, &chunk_maps, c, &truth, config)?;
        let classmap = classify_tiles(&probs, config.p_vp, k)?;
        let estimated = estimator.estimate().unwrap_or(config.bootstrap_mbps);

        let decision = if c == 0 {
            // Bootstrap chunk: lowest level everywhere.
            ChunkDecision::from_class_levels(&classmap, vec![1; k], &config.ladder)?
        } else {
            match abr {
                AbrChoice::Cba => cba_solve(
                    &classmap,
                    &config.ladder,
                    estimated,
                    sal_mbps,
                    config.lambda,
                    q1_prev,
                    conf,
                )?,
                AbrChoice::Pba => {
                    pba_solve(&classmap, &config.ladder, estimated, sal_mbps)?
                }
            }
        };

        let q1 = qoe_q1(&decision, &classmap, &config.ladder, conf)?;
        let q2 = qoe_q2(&decision, &classmap, &config.ladder, q1, q1_prev)?;

        // Live source: chunk c cannot be fetched before it exists at cL.
        let start = clock.max(chunk_start);
        let (dl_time, bits) =
            download_model(&decision, &config.ladder, sal_bytes, l_len, trace, start);
        let arrival = start + dl_time;
        // Startup delay of one chunk: chunk c plays at (c+1)L plus stalls.
        let deadline = chunk_end + rebuffer_acc;
        let rebuffer = (arrival - deadline).max(0.0);
        rebuffer_acc += rebuffer;
        let measured = bits / dl_time / 1e6;
        estimator.record(measured);
        clock = arrival;
        total_bits += bits;

        let metrics = prediction_metrics(probs.values(), &truth, config.p_vp)?;
        q1_prev = q1;
        records.push(ChunkRecord {
            chunk: c,
            probabilities: probs,
            classmap,
            decision,
            estimated_mbps: estimated,
            measured_mbps: measured,
            download_time: dl_time,
            rebuffer,
            saliency_bytes: sal_bytes,
            q1,
            q2,
            objective: q1 - config.lambda * q2,
            metrics,
        });
    }

    Ok(SessionLog {
        records,
        total_bits,
        last_arrival: clock,
    })
}
