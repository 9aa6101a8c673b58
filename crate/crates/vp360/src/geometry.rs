//! Equirectangular tiling, viewport-to-tile mapping, wrap-around distances,
//! saliency-map handling and prediction metrics.
//!
//! Conventions: an ERP frame spans yaw [-180, 180) left to right and pitch
//! [-90, 90] with row 0 at the top (pitch +90). The column axis wraps.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The m x n tiling of an equirectangular frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileGrid {
    rows: usize,
    cols: usize,
}

impl TileGrid {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows < 1 {
            return Err(Error::invalid("grid needs at least one row"));
        }
        if cols < 2 || cols % 2 != 0 {
            return Err(Error::invalid(
                "grid column count must be even and at least 2",
            ));
        }
        Ok(TileGrid { rows, cols })
    }

    /// The default 10x20 tiling.
    pub fn default_10x20() -> Self {
        TileGrid { rows: 10, cols: 20 }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn tile_count(&self) -> usize {
        self.rows * self.cols
    }

    /// Degrees of pitch covered by one row.
    pub fn row_extent_deg(&self) -> f64 {
        180.0 / self.rows as f64
    }

    /// Degrees of yaw covered by one column.
    pub fn col_extent_deg(&self) -> f64 {
        360.0 / self.cols as f64
    }
}

/// One head-orientation sample: yaw in [-180, 180), pitch in [-90, 90].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewportSample {
    pub t: f64,
    pub yaw: f64,
    pub pitch: f64,
}

impl ViewportSample {
    pub fn new(t: f64, yaw: f64, pitch: f64) -> Result<Self> {
        if t < 0.0 || !t.is_finite() {
            return Err(Error::invalid(format!("sample time {t} out of range")));
        }
        if !(-180.0..180.0).contains(&yaw) {
            return Err(Error::invalid(format!("yaw {yaw} out of [-180, 180)")));
        }
        if !(-90.0..=90.0).contains(&pitch) {
            return Err(Error::invalid(format!("pitch {pitch} out of [-90, 90]")));
        }
        Ok(ViewportSample { t, yaw, pitch })
    }
}

/// Angular extents of the field of view, in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FovSpec {
    pub h_deg: f64,
    pub v_deg: f64,
}

impl FovSpec {
    pub fn new(h_deg: f64, v_deg: f64) -> Result<Self> {
        if !(h_deg > 0.0 && h_deg <= 360.0) {
            return Err(Error::invalid("horizontal FoV must be in (0, 360]"));
        }
        if !(v_deg > 0.0 && v_deg <= 180.0) {
            return Err(Error::invalid("vertical FoV must be in (0, 180]"));
        }
        Ok(FovSpec { h_deg, v_deg })
    }

    /// Common HMD default: 90 x 90 degrees.
    pub fn default_90() -> Self {
        FovSpec {
            h_deg: 90.0,
            v_deg: 90.0,
        }
    }
}

/// Binary occupancy matrix over a tile grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileMatrix {
    grid: TileGrid,
    cells: Vec<bool>,
}

impl TileMatrix {
    pub fn empty(grid: TileGrid) -> Self {
        TileMatrix {
            grid,
            cells: vec![false; grid.tile_count()],
        }
    }

    pub fn from_cells(grid: TileGrid, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != grid.tile_count() {
            return Err(Error::shape("cell count does not match grid"));
        }
        Ok(TileMatrix { grid, cells })
    }

    pub fn grid(&self) -> TileGrid {
        self.grid
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.grid.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.cells[row * self.grid.cols + col] = value;
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn count_ones(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Elementwise OR with another matrix over the same grid.
    pub fn union_with(&mut self, other: &TileMatrix) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::shape("tile matrix grids differ"));
        }
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            *a |= b;
        }
        Ok(())
    }

    /// Marked tiles as (row, col) indices.
    pub fn ones(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.grid.rows {
            for c in 0..self.grid.cols {
                if self.get(r, c) {
                    out.push((r, c));
                }
            }
        }
        out
    }

    /// 0/1 values as an f64 tensor of shape [1, m, n].
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![1, self.grid.rows, self.grid.cols],
            self.cells.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap()
    }
}

/// Nonnegative heat map over an ERP frame; normalized to unit mass.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("saliency map dimensions must be positive"));
        }
        if values.len() != height * width {
            return Err(Error::shape("saliency value count does not match size"));
        }
        if values.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Data("saliency values must be finite and >= 0".into()));
        }
        Ok(SaliencyMap {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Scale to unit mass. Errors on an all-zero map.
    pub fn normalize(&mut self) -> Result<()> {
        let total = self.total();
        if total <= 0.0 {
            return Err(Error::Data("cannot normalize an all-zero saliency map".into()));
        }
        for v in &mut self.values {
            *v /= total;
        }
        Ok(())
    }

    pub fn normalized(mut self) -> Result<Self> {
        self.normalize()?;
        Ok(self)
    }

    /// Values as an f64 tensor of shape [1, H, W].
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, self.height, self.width], self.values.clone()).unwrap()
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape() {
            [1, h, w] => SaliencyMap::new(*h, *w, t.data().to_vec()),
            [h, w] => SaliencyMap::new(*h, *w, t.data().to_vec()),
            s => Err(Error::shape(format!("expected [H,W] map, got {s:?}"))),
        }
    }

    /// (row, col) of the largest value.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }
}

// ── viewport mapping ─────────────────────────────────────────────────

/// Wrap an angle into [-180, 180).
pub fn wrap_yaw(yaw: f64) -> f64 {
    let mut y = (yaw + 180.0) % 360.0;
    if y < 0.0 {
        y += 360.0;
    }
    y - 180.0
}

// A tile counts as watched when its angular rectangle overlaps the FoV
// rectangle with positive measure (grazing contact does not count).
fn interval_overlaps(a_lo: f64, a_hi: f64, b_lo: f64, b_hi: f64) -> bool {
    a_lo < b_hi && a_hi > b_lo
}

/// Mark every tile whose angular rectangle intersects the FoV rectangle
/// centered at the sample's (yaw, pitch), with yaw wraparound.
pub fn viewport_to_tiles(sample: ViewportSample, grid: TileGrid, fov: FovSpec) -> TileMatrix {
    let mut out = TileMatrix::empty(grid);

    let (pitch_lo, pitch_hi) = if fov.v_deg >= 180.0 {
        (-90.0, 90.0)
    } else {
        (
            (sample.pitch - fov.v_deg / 2.0).max(-90.0),
            (sample.pitch + fov.v_deg / 2.0).min(90.0),
        )
    };

    // Yaw coverage as one or two segments within [-180, 180).
    let raw_lo = sample.yaw - fov.h_deg / 2.0;
    let mut yaw_segments: Vec<(f64, f64)> = Vec::with_capacity(2);
    if fov.h_deg >= 360.0 {
        yaw_segments.push((-180.0, 180.0));
    } else {
        let lo = wrap_yaw(raw_lo);
        let hi = lo + fov.h_deg;
        if hi <= 180.0 {
            yaw_segments.push((lo, hi));
        } else {
            yaw_segments.push((lo, 180.0));
            yaw_segments.push((-180.0, hi - 360.0));
        }
    }

    let row_ext = grid.row_extent_deg();
    let col_ext = grid.col_extent_deg();
    for r in 0..grid.rows() {
        let tile_pitch_hi = 90.0 - r as f64 * row_ext;
        let tile_pitch_lo = tile_pitch_hi - row_ext;
        let row_hit = interval_overlaps(tile_pitch_lo, tile_pitch_hi, pitch_lo, pitch_hi)
            // A pole-clamped zero-height FoV band still watches the pole row.
            || (pitch_lo == pitch_hi && pitch_lo >= tile_pitch_lo && pitch_hi <= tile_pitch_hi);
        if !row_hit {
            continue;
        }
        for c in 0..grid.cols() {
            let tile_yaw_lo = -180.0 + c as f64 * col_ext;
            let tile_yaw_hi = tile_yaw_lo + col_ext;
            if yaw_segments
                .iter()
                .any(|&(lo, hi)| interval_overlaps(tile_yaw_lo, tile_yaw_hi, lo, hi))
            {
                out.set(r, c, true);
            }
        }
    }
    out
}

// ── distances ────────────────────────────────────────────────────────

/// Manhattan distance with wraparound on the column axis.
pub fn wrap_manhattan_distance(
    a: (usize, usize),
    b: (usize, usize),
    grid: TileGrid,
) -> Result<usize> {
    for &(r, c) in [&a, &b] {
        if r >= grid.rows() || c >= grid.cols() {
            return Err(Error::invalid(format!(
                "tile ({r},{c}) out of {}x{} grid",
                grid.rows(),
                grid.cols()
            )));
        }
    }
    let dr = a.0.abs_diff(b.0);
    let dc_direct = a.1.abs_diff(b.1);
    let dc = dc_direct.min(grid.cols() - dc_direct);
    Ok(dr + dc)
}

/// Minimum wrap-Manhattan distance from `tile` to any member of `set`.
pub fn min_distance_to_set(
    tile: (usize, usize),
    set: &[(usize, usize)],
    grid: TileGrid,
) -> Result<usize> {
    if set.is_empty() {
        return Err(Error::invalid("distance to an empty tile set is undefined"));
    }
    let mut best = usize::MAX;
    for &member in set {
        best = best.min(wrap_manhattan_distance(tile, member, grid)?);
    }
    Ok(best)
}

// ── saliency downsampling ────────────────────────────────────────────

/// Shape of the downsampled map for a grid and ratio: `ratio * m * n` pixels
/// at the 2:1 ERP aspect.
pub fn downsample_shape(grid: TileGrid, ratio: usize) -> Result<(usize, usize)> {
    if ratio == 0 {
        return Err(Error::invalid("downsampling ratio must be positive"));
    }
    let pixels = ratio * grid.tile_count();
    if pixels % 2 != 0 {
        return Err(Error::invalid(format!(
            "{pixels} pixels cannot form a 2:1 map"
        )));
    }
    let h2 = pixels / 2;
    let h = (h2 as f64).sqrt().round() as usize;
    if h == 0 || h * h != h2 {
        return Err(Error::invalid(format!(
            "{pixels} pixels cannot form a 2:1 integer-sized map"
        )));
    }
    Ok((h, 2 * h))
}

/// Area-average the map down to `ratio * m * n` pixels (2:1 aspect), then
/// renormalize to unit mass.
pub fn downsample_saliency(map: &SaliencyMap, grid: TileGrid, ratio: usize) -> Result<SaliencyMap> {
    let (th, tw) = downsample_shape(grid, ratio)?;
    if map.height() < th || map.width() < tw {
        return Err(Error::invalid(format!(
            "source {}x{} smaller than target {th}x{tw}",
            map.height(),
            map.width()
        )));
    }
    let out = area_average(map, th, tw);
    SaliencyMap::new(th, tw, out)?.normalized()
}

// Exact box-overlap area averaging; handles non-integer scale factors.
fn area_average(map: &SaliencyMap, th: usize, tw: usize) -> Vec<f64> {
    let sy = map.height() as f64 / th as f64;
    let sx = map.width() as f64 / tw as f64;
    let mut out = vec![0.0; th * tw];
    for oy in 0..th {
        let y0 = oy as f64 * sy;
        let y1 = (oy + 1) as f64 * sy;
        for ox in 0..tw {
            let x0 = ox as f64 * sx;
            let x1 = (ox + 1) as f64 * sx;
            let mut acc = 0.0;
            let mut area = 0.0;
            let iy0 = y0.floor() as usize;
            let iy1 = (y1.ceil() as usize).min(map.height());
            let ix0 = x0.floor() as usize;
            let ix1 = (x1.ceil() as usize).min(map.width());
            for iy in iy0..iy1 {
                let oy_frac = (y1.min((iy + 1) as f64) - y0.max(iy as f64)).max(0.0);
                for ix in ix0..ix1 {
                    let ox_frac = (x1.min((ix + 1) as f64) - x0.max(ix as f64)).max(0.0);
                    let a = oy_frac * ox_frac;
                    acc += a * map.get(iy, ix);
                    area += a;
                }
            }
            out[oy * tw + ox] = if area > 0.0 { acc / area } else { 0.0 };
        }
    }
    out
}

// ── ground truth and metrics ─────────────────────────────────────────

/// Union of the tiles watched across all samples in a chunk.
pub fn ground_truth_tiles(
    samples: &[ViewportSample],
    grid: TileGrid,
    fov: FovSpec,
) -> Result<TileMatrix> {
    if samples.is_empty() {
        return Err(Error::invalid("ground truth needs at least one sample"));
    }
    let mut out = TileMatrix::empty(grid);
    for &s in samples {
        out.union_with(&viewport_to_tiles(s, grid, fov))?;
    }
    Ok(out)
}

/// Per-tile classification metrics of a thresholded probability matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Binarize `pred` at `threshold` and compare against `truth`.
/// F1 is defined as 0 when precision + recall is 0.
pub fn prediction_metrics(
    pred: &[f64],
    truth: &TileMatrix,
    threshold: f64,
) -> Result<PredictionMetrics> {
    if pred.len() != truth.grid().tile_count() {
        return Err(Error::shape("probability count does not match grid"));
    }
    if !(0.0 < threshold && threshold < 1.0) {
        return Err(Error::invalid("threshold must be in (0,1)"));
    }
    let (mut tp, mut tn, mut fp, mut fne) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth.cells()) {
        match (p >= threshold, t) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
        }
    }
    let total = (tp + tn + fp + fne) as f64;
    let accuracy = (tp + tn) as f64 / total;
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if tp + fne > 0 {
        tp as f64 / (tp + fne) as f64
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(PredictionMetrics {
        accuracy,
        precision,
        recall,
        f1,
    })
}

// ── trace and saliency file formats ──────────────────────────────────

/// Read a head-movement trace CSV with header `t,yaw,pitch`.
pub fn load_head_trace(path: &Path) -> Result<Vec<ViewportSample>> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::Data(e.to_string()))?
        .clone();
    let expected = ["t", "yaw", "pitch"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Data(format!(
            "{}: expected header t,yaw,pitch, got {:?}",
            path.display(),
            headers
        )));
    }
    let mut samples = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::Data(e.to_string()))?;
        let parse = |j: usize| -> Result<f64> {
            row.get(j)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Data(format!("{}: bad value on row {}", path.display(), i + 2)))
        };
        let s = ViewportSample::new(parse(0)?, wrap_yaw(parse(1)?), parse(2)?.clamp(-90.0, 90.0))?;
        if s.t <= last_t {
            return Err(Error::Data(format!(
                "{}: timestamps must be strictly increasing (row {})",
                path.display(),
                i + 2
            )));
        }
        last_t = s.t;
        samples.push(s);
    }
    Ok(samples)
}

const SALIENCY_MAGIC: &[u8; 8] = b"VP360SAL";

/// Write a saliency map as a binary container: magic, H, W (u32 LE), then
/// row-major little-endian f64 values.
pub fn save_saliency(path: &Path, map: &SaliencyMap) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SALIENCY_MAGIC)?;
    w.write_all(&(map.height() as u32).to_le_bytes())?;
    w.write_all(&(map.width() as u32).to_le_bytes())?;
    for &v in map.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_saliency(path: &Path) -> Result<SaliencyMap> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != SALIENCY_MAGIC {
        return Err(Error::Data(format!(
            "{}: not a saliency container (bad magic)",
            path.display()
        )));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    let h = u32::from_le_bytes(buf4) as usize;
    r.read_exact(&mut buf4)?;
    let w = u32::from_le_bytes(buf4) as usize;
    let mut values = Vec::with_capacity(h * w);
    let mut buf8 = [0u8; 8];
    for _ in 0..h * w {
        r.read_exact(&mut buf8)?;
        values.push(f64::from_le_bytes(buf8));
    }
    SaliencyMap::new(h, w, values)
}

/// Read a hand-authored saliency map from headerless CSV rows of numbers.
pub fn load_saliency_csv(path: &Path) -> Result<SaliencyMap> {
    let text = std::fs::read_to_string(path)?;
    let mut values = Vec::new();
    let mut width = None;
    let mut height = 0;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Data(format!("{}: bad number {s:?}", path.display())))
            })
            .collect::<Result<_>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Data(format!(
                    "{}: ragged rows ({} vs {w})",
                    path.display(),
                    row.len()
                )))
            }
            _ => {}
        }
        values.extend(row);
        height += 1;
    }
    let width = width.ok_or_else(|| Error::Data(format!("{}: empty file", path.display())))?;
    SaliencyMap::new(height, width, values)
}
