//! Seeded synthetic data: moving-blob saliency maps with a head trajectory
//! that follows the blob. Used by the bundled demos, the predictor benchmark
//! and the meta-learning task family, so nothing in the crate needs an
//! external dataset.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::{wrap_yaw, SaliencyMap, ViewportSample};
use crate::tensor::seeded_rng;

/// Normalized Gaussian blob on an ERP-shaped map; the x axis wraps.
pub fn gaussian_blob(h: usize, w: usize, cy: f64, cx: f64, sigma: f64) -> SaliencyMap {
    let mut values = vec![0.0; h * w];
    let inv = 1.0 / (2.0 * sigma * sigma);
    for y in 0..h {
        let dy = y as f64 + 0.5 - cy;
        for x in 0..w {
            let mut dx = (x as f64 + 0.5 - cx).abs();
            dx = dx.min(w as f64 - dx);
            values[y * w + x] = (-(dx * dx + dy * dy) * inv).exp();
        }
    }
    SaliencyMap::new(h, w, values)
        .and_then(SaliencyMap::normalized)
        .expect("gaussian blob is always normalizable")
}

/// Generator settings for a synthetic viewing session.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub chunks: usize,
    pub chunk_length: f64,
    /// Head samples per second.
    pub sample_rate: f64,
    pub map_h: usize,
    pub map_w: usize,
    /// Blob radius in map pixels.
    pub blob_sigma: f64,
    /// Chance per chunk of picking a new yaw velocity.
    pub turn_prob: f64,
    /// Yaw speed bound, degrees per second.
    pub max_speed_deg: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            chunks: 30,
            chunk_length: 1.0,
            sample_rate: 8.0,
            map_h: 20,
            map_w: 40,
            blob_sigma: 2.0,
            turn_prob: 0.3,
            max_speed_deg: 40.0,
        }
    }
}

/// One generated session: the head trace and one saliency map per chunk.
#[derive(Debug, Clone)]
pub struct SynthSession {
    pub head: Vec<ViewportSample>,
    pub saliency: Vec<SaliencyMap>,
}

/// Piecewise-linear yaw trajectory; pitch oscillates gently. The viewport
/// center coincides with the saliency blob center at all times.
pub fn generate_session(cfg: &SynthConfig, seed: u64) -> Result<SynthSession> {
    let mut rng = seeded_rng(seed);
    let mut yaw = rng.gen_range(-180.0..180.0);
    let mut speed = rng.gen_range(-cfg.max_speed_deg..=cfg.max_speed_deg);
    let pitch_amp = rng.gen_range(5.0..25.0);
    let pitch_period = rng.gen_range(6.0..14.0);
    let pitch_phase = rng.gen_range(0.0..std::f64::consts::TAU);

    let duration = cfg.chunks as f64 * cfg.chunk_length;
    let dt = 1.0 / cfg.sample_rate;
    let mut head = Vec::new();
    let mut saliency = Vec::new();
    let mut chunk_boundary = cfg.chunk_length;
    let mut t = 0.0;
    let mut chunk = 0usize;

    let pitch_at = |t: f64| pitch_amp * (std::f64::consts::TAU * t / pitch_period + pitch_phase).sin();
    let record_chunk_map = |yaw: f64, pitch: f64, saliency: &mut Vec<SaliencyMap>| {
        let cx = (yaw + 180.0) / 360.0 * cfg.map_w as f64;
        let cy = (90.0 - pitch) / 180.0 * cfg.map_h as f64;
        saliency.push(gaussian_blob(cfg.map_h, cfg.map_w, cy, cx, cfg.blob_sigma));
    };

    // Map for chunk c is taken at the chunk midpoint.
    let mut mid_yaw = yaw + speed * cfg.chunk_length / 2.0;
    let mut mid_pitch = pitch_at(cfg.chunk_length / 2.0);
    record_chunk_map(wrap_yaw(mid_yaw), mid_pitch, &mut saliency);

    while t < duration - 1e-9 {
        head.push(ViewportSample::new(t, wrap_yaw(yaw), pitch_at(t).clamp(-90.0, 90.0))?);
        t += dt;
        yaw += speed * dt;
        if t >= chunk_boundary - 1e-9 && chunk + 1 < cfg.chunks {
            chunk += 1;
            chunk_boundary += cfg.chunk_length;
            if rng.gen_bool(cfg.turn_prob) {
                speed = rng.gen_range(-cfg.max_speed_deg..=cfg.max_speed_deg);
            }
            mid_yaw = yaw + speed * cfg.chunk_length / 2.0;
            mid_pitch = pitch_at(t + cfg.chunk_length / 2.0);
            record_chunk_map(wrap_yaw(mid_yaw), mid_pitch, &mut saliency);
        }
    }

    Ok(SynthSession { head, saliency })
}

/// Supervised windows for predictor training: for each chunk with a full
/// history, the preceding `window_len` chunks' (watched tiles, saliency map)
/// pairs become the input and the chunk's own watched tiles the target.
pub fn chunk_windows(
    session: &SynthSession,
    cfg: &SynthConfig,
    grid: crate::geometry::TileGrid,
    fov: crate::geometry::FovSpec,
    window_len: usize,
) -> Result<Vec<(crate::predictors::HistoryWindow, crate::geometry::TileMatrix)>> {
    use crate::error::Error;
    use crate::geometry::ground_truth_tiles;
    use crate::predictors::HistoryWindow;

    if window_len == 0 {
        return Err(Error::invalid("window length must be positive"));
    }
    let chunks = session.saliency.len();
    let mut per_chunk_tiles = Vec::with_capacity(chunks);
    for c in 0..chunks {
        let lo = c as f64 * cfg.chunk_length;
        let hi = lo + cfg.chunk_length;
        let samples: Vec<_> = session
            .head
            .iter()
            .filter(|s| s.t >= lo - 1e-9 && s.t < hi - 1e-9)
            .cloned()
            .collect();
        if samples.is_empty() {
            return Err(Error::Data(format!("no head samples in chunk {c}")));
        }
        per_chunk_tiles.push(ground_truth_tiles(&samples, grid, fov)?);
    }
    let mut out = Vec::new();
    for c in window_len..chunks {
        let steps = (c - window_len..c)
            .map(|j| (per_chunk_tiles[j].clone(), session.saliency[j].clone()))
            .collect();
        out.push((HistoryWindow::new(steps)?, per_chunk_tiles[c].clone()));
    }
    Ok(out)
}

/// Random blob center for task generation, kept away from the poles.
pub fn random_center(rng: &mut ChaCha8Rng, h: usize, w: usize) -> (f64, f64) {
    (
        rng.gen_range(0.2 * h as f64..0.8 * h as f64),
        rng.gen_range(0.0..w as f64),
    )
}
