//! Classification-based bitrate adaptation: tile ranking from predicted
//! viewing probabilities, a confidence-weighted quality objective with a
//! smoothness penalty, pruned exhaustive search over class-to-level maps, a
//! pyramid baseline, and the planner that picks the sampling frequency and
//! saliency downsampling ratio under a per-chunk compute deadline.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{min_distance_to_set, TileGrid};
use crate::predictors::ProbabilityMatrix;

const TIE_EPS: f64 = 1e-12;
/// Slack for the budget comparison so exact-boundary budgets stay feasible.
const BUDGET_EPS: f64 = 1e-9;

// ── domain types ─────────────────────────────────────────────────────

/// Ordered encoding ladder, bitrates in Mbps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitrateLadder {
    mbps: Vec<f64>,
}

impl Default for BitrateLadder {
    /// 360p through 4K: 1, 2.5, 5, 8, 16, 40 Mbps.
    fn default() -> Self {
        BitrateLadder {
            mbps: vec![1.0, 2.5, 5.0, 8.0, 16.0, 40.0],
        }
    }
}

impl BitrateLadder {
    pub fn new(mbps: Vec<f64>) -> Result<Self> {
        if mbps.len() < 2 {
            return Err(Error::Config("ladder needs at least 2 levels".into()));
        }
        if mbps[0] <= 0.0 || mbps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "ladder bitrates must be positive and strictly increasing".into(),
            ));
        }
        Ok(BitrateLadder { mbps })
    }

    pub fn levels(&self) -> usize {
        self.mbps.len()
    }

    /// Bitrate of a 1-based level.
    pub fn rate(&self, level: usize) -> f64 {
        self.mbps[level - 1]
    }

    pub fn lowest(&self) -> f64 {
        self.mbps[0]
    }

    pub fn highest(&self) -> f64 {
        *self.mbps.last().unwrap()
    }

    pub fn rates(&self) -> &[f64] {
        &self.mbps
    }
}

/// Per-tile importance ranks in `[1, k]`; higher means closer to the
/// predicted viewport.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMap {
    grid: TileGrid,
    rank: Vec<usize>,
    k: usize,
}

impl ClassMap {
    pub fn new(grid: TileGrid, rank: Vec<usize>, k: usize) -> Result<Self> {
        if rank.len() != grid.tile_count() {
            return Err(Error::shape("rank matrix size must match the grid"));
        }
        if k == 0 || rank.iter().any(|&r| r < 1 || r > k) {
            return Err(Error::invalid("ranks must lie in [1, k]"));
        }
        if !rank.contains(&k) {
            return Err(Error::invalid("at least one tile must carry rank k"));
        }
        Ok(ClassMap { grid, rank, k })
    }

    pub fn grid(&self) -> TileGrid {
        self.grid
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rank(&self, row: usize, col: usize) -> usize {
        self.rank[row * self.grid.cols() + col]
    }

    pub fn ranks(&self) -> &[usize] {
        &self.rank
    }
}

/// Per-tile quality levels for one chunk, produced from a class-to-level map.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkDecision {
    grid: TileGrid,
    level: Vec<usize>,
    /// Level chosen for each rank, index 0 = rank 1.
    class_levels: Vec<usize>,
    /// Set when even the all-lowest assignment exceeded the budget.
    pub over_budget: bool,
}

impl ChunkDecision {
    /// Expand a class-to-level assignment (index 0 = rank 1) over the grid.
    pub fn from_class_levels(
        classmap: &ClassMap,
        class_levels: Vec<usize>,
        ladder: &BitrateLadder,
    ) -> Result<Self> {
        if class_levels.len() != classmap.k() {
            return Err(Error::invalid("need one level per class"));
        }
        if class_levels
            .iter()
            .any(|&lv| lv < 1 || lv > ladder.levels())
        {
            return Err(Error::invalid("levels must lie in [1, l]"));
        }
        if class_levels.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("levels must be non-decreasing in rank"));
        }
        let level = classmap
            .ranks()
            .iter()
            .map(|&r| class_levels[r - 1])
            .collect();
        Ok(ChunkDecision {
            grid: classmap.grid(),
            level,
            class_levels,
            over_budget: false,
        })
    }

    pub fn grid(&self) -> TileGrid {
        self.grid
    }

    pub fn level(&self, row: usize, col: usize) -> usize {
        self.level[row * self.grid.cols() + col]
    }

    pub fn levels(&self) -> &[usize] {
        &self.level
    }

    pub fn class_levels(&self) -> &[usize] {
        &self.class_levels
    }

    pub fn mean_level(&self) -> f64 {
        self.level.iter().sum::<usize>() as f64 / self.level.len() as f64
    }

    /// Total tile bitrate demand in Mbps.
    pub fn total_mbps(&self, ladder: &BitrateLadder) -> f64 {
        self.level.iter().map(|&lv| ladder.rate(lv)).sum()
    }
}

/// Logistic model of prediction confidence as a function of the head-sample
/// rate SF (samples per second).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfidenceModel {
    /// Midpoint sample rate.
    pub sf0: f64,
    pub steepness: f64,
    pub floor: f64,
    pub ceiling: f64,
}

impl Default for ConfidenceModel {
    /// Synthetic stand-in parameters; fit from measurements when available.
    fn default() -> Self {
        ConfidenceModel {
            sf0: 4.0,
            steepness: 1.0,
            floor: 0.5,
            ceiling: 0.98,
        }
    }
}

impl ConfidenceModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.floor)
            || self.ceiling <= self.floor
            || self.ceiling > 1.0
        {
            return Err(Error::Config(
                "confidence needs 0 <= floor < ceiling <= 1".into(),
            ));
        }
        if self.steepness < 0.0 {
            return Err(Error::Config("confidence steepness must be >= 0".into()));
        }
        Ok(())
    }

    /// Confidence in (0,1), monotone non-decreasing in `sf`.
    pub fn confidence(&self, sf: f64) -> f64 {
        let sig = 1.0 / (1.0 + (-self.steepness * (sf - self.sf0)).exp());
        self.floor + (self.ceiling - self.floor) * sig
    }

    /// Least-squares logistic fit to `(sf, confidence)` points: grid search
    /// over midpoint and steepness with closed-form floor/ceiling per cell.
    pub fn fit(points: &[(f64, f64)]) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::Data("confidence fit needs >= 3 points".into()));
        }
        let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            return Err(Error::Data("confidence fit needs distinct sf values".into()));
        }
        let mut best: Option<(f64, ConfidenceModel)> = None;
        for i in 0..=40 {
            let sf0 = lo + (hi - lo) * i as f64 / 40.0;
            for j in 0..=40 {
                let s = 0.05 * 1.2f64.powi(j);
                // With sigma fixed the model is linear in (floor, ceiling).
                let sig: Vec<f64> = points
                    .iter()
                    .map(|&(sf, _)| 1.0 / (1.0 + (-s * (sf - sf0)).exp()))
                    .collect();
                if let Some((c0, c1)) = linear_fit_2basis(points, &sig) {
                    let m = ConfidenceModel {
                        sf0,
                        steepness: s,
                        floor: c0.clamp(0.0, 0.999),
                        ceiling: c1.clamp(c0.max(0.0) + 1e-6, 1.0),
                    };
                    let r: f64 = points
                        .iter()
                        .map(|&(sf, y)| (m.confidence(sf) - y).powi(2))
                        .sum();
                    if best.as_ref().map_or(true, |(br, _)| r < *br) {
                        best = Some((r, m));
                    }
                }
            }
        }
        Ok(best.unwrap().1)
    }
}

/// Least squares of `y = c0 * (1 - sig) + c1 * sig`.
fn linear_fit_2basis(points: &[(f64, f64)], sig: &[f64]) -> Option<(f64, f64)> {
    let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&(_, y), &g) in points.iter().zip(sig) {
        let u = 1.0 - g;
        s11 += u * u;
        s12 += u * g;
        s22 += g * g;
        b1 += u * y;
        b2 += g * y;
    }
    let det = s11 * s22 - s12 * s12;
    if det.abs() < 1e-12 {
        return None;
    }
    Some(((s22 * b1 - s12 * b2) / det, (s11 * b2 - s12 * b1) / det))
}

/// Linear model of on-device prediction time:
/// `T(sf, ratio) = a * sf * (c_r + d * ratio) + b`, seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeModel {
    pub a: f64,
    pub c_r: f64,
    pub d: f64,
    pub b: f64,
    /// Root-mean-square residual of the fit, 0 for hand-set models.
    pub residual: f64,
}

impl TimeModel {
    pub fn new(a: f64, c_r: f64, d: f64, b: f64) -> Result<Self> {
        if a < 0.0 || c_r < 0.0 || d < 0.0 || b < 0.0 {
            return Err(Error::Config("time model coefficients must be >= 0".into()));
        }
        Ok(TimeModel {
            a,
            c_r,
            d,
            b,
            residual: 0.0,
        })
    }

    /// Seconds to produce one prediction at the given sample rate and
    /// downsampling ratio.
    pub fn time(&self, sf: f64, ratio: f64) -> f64 {
        self.a * sf * (self.c_r + self.d * ratio) + self.b
    }

    /// Fit from two measurement sweeps: `(sf, time_s)` at `ratio_ref` and
    /// `(ratio, time_s)` at `sf_ref`. The overall scale `a` is fixed to 1.
    pub fn fit(
        sf_points: &[(f64, f64)],
        ratio_points: &[(f64, f64)],
        sf_ref: f64,
        ratio_ref: f64,
    ) -> Result<Self> {
        let (m1, b1, r1) = linear_fit(sf_points)?;
        let (m2, _, r2) = linear_fit(ratio_points)?;
        if sf_ref <= 0.0 {
            return Err(Error::invalid("sf_ref must be positive"));
        }
        let d = (m2 / sf_ref).max(0.0);
        let c_r = (m1 - d * ratio_ref).max(0.0);
        let mut model = TimeModel::new(1.0, c_r, d, b1.max(0.0))?;
        model.residual = (r1 * r1 + r2 * r2).sqrt();
        Ok(model)
    }
}

/// Ordinary least squares `y = m x + b`; returns (m, b, rms residual).
pub fn linear_fit(points: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    if points.len() < 2 {
        return Err(Error::Data("linear fit needs >= 2 points".into()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx < 1e-12 {
        return Err(Error::Data("linear fit needs distinct x values".into()));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let m = sxy / sxx;
    let b = my - m * mx;
    let rms = (points
        .iter()
        .map(|&(x, y)| (m * x + b - y).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok((m, b, rms))
}

// ── classification ───────────────────────────────────────────────────

/// Rank tiles by wrap-Manhattan distance to the thresholded viewport set:
/// `rank = max(k - Dis, 1)`. An empty set falls back to the most probable
/// tile so the map is always defined.
pub fn classify_tiles(p: &ProbabilityMatrix, p_vp: f64, k: usize) -> Result<ClassMap> {
    if !(0.0..1.0).contains(&p_vp) || p_vp == 0.0 {
        return Err(Error::invalid("p_vp must lie in (0,1)"));
    }
    if k == 0 {
        return Err(Error::invalid("class count must be >= 1"));
    }
    let grid = p.grid();
    let mut viewport = p.at_least(p_vp);
    if viewport.is_empty() {
        viewport.push(p.argmax());
    }
    let mut rank = Vec::with_capacity(grid.tile_count());
    for i in 0..grid.rows() {
        for j in 0..grid.cols() {
            let dis = min_distance_to_set((i, j), &viewport, grid)?;
            rank.push(if dis >= k { 1 } else { k - dis });
        }
    }
    ClassMap::new(grid, rank, k)
}

// ── QoE objective ────────────────────────────────────────────────────

/// Basic perceived quality: `conf * mean over tiles of rank * bitrate`.
pub fn qoe_q1(
    decision: &ChunkDecision,
    classmap: &ClassMap,
    ladder: &BitrateLadder,
    conf: f64,
) -> Result<f64> {
    check_consistent(decision, classmap)?;
    let total: f64 = classmap
        .ranks()
        .iter()
        .zip(decision.levels())
        .map(|(&r, &lv)| r as f64 * ladder.rate(lv))
        .sum();
    Ok(conf * total / classmap.ranks().len() as f64)
}

/// Quality variation: inter-chunk quality jump plus the population standard
/// deviation of bitrates over tiles ranked above 1 (0 if fewer than two).
pub fn qoe_q2(
    decision: &ChunkDecision,
    classmap: &ClassMap,
    ladder: &BitrateLadder,
    q1_now: f64,
    q1_prev: f64,
) -> Result<f64> {
    check_consistent(decision, classmap)?;
    let rates: Vec<f64> = classmap
        .ranks()
        .iter()
        .zip(decision.levels())
        .filter(|(&r, _)| r > 1)
        .map(|(_, &lv)| ladder.rate(lv))
        .collect();
    let sd = if rates.len() < 2 {
        0.0
    } else {
        let mean = rates.iter().sum::<f64>() / rates.len() as f64;
        (rates.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / rates.len() as f64).sqrt()
    };
    Ok((q1_now - q1_prev).abs() + sd)
}

fn check_consistent(decision: &ChunkDecision, classmap: &ClassMap) -> Result<()> {
    if decision.grid() != classmap.grid() {
        return Err(Error::invalid("decision and classmap use different grids"));
    }
    for (&r, &lv) in classmap.ranks().iter().zip(decision.levels()) {
        if decision.class_levels()[r - 1] != lv {
            return Err(Error::invalid("decision does not follow its class levels"));
        }
    }
    Ok(())
}

// ── solvers ──────────────────────────────────────────────────────────

/// All non-decreasing class-to-level assignments (length `k`, values
/// `1..=l`), in lexicographic order. `C(k+l-1, k)` of them.
pub fn enumerate_class_levels(k: usize, l: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(cur: &mut Vec<usize>, k: usize, l: usize, min: usize, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for lv in min..=l {
            cur.push(lv);
            rec(cur, k, l, lv, out);
            cur.pop();
        }
    }
    rec(&mut cur, k, l, 1, &mut out);
    out
}

/// Per-candidate evaluation record for the debug/evaluation mode.
#[derive(Debug, Clone)]
pub struct CandidateEval {
    pub class_levels: Vec<usize>,
    pub demand_mbps: f64,
    pub feasible: bool,
    pub q1: f64,
    pub q2: f64,
    pub objective: f64,
}

/// Score every candidate class-to-level map against the budget and the
/// objective `Q1 - lambda * Q2`.
pub fn evaluate_candidates(
    classmap: &ClassMap,
    ladder: &BitrateLadder,
    budget_mbps: f64,
    saliency_mbps: f64,
    lambda: f64,
    q1_prev: f64,
    conf: f64,
) -> Result<Vec<CandidateEval>> {
    let mut out = Vec::new();
    for levels in enumerate_class_levels(classmap.k(), ladder.levels()) {
        let d = ChunkDecision::from_class_levels(classmap, levels.clone(), ladder)?;
        let demand = d.total_mbps(ladder);
        let q1 = qoe_q1(&d, classmap, ladder, conf)?;
        let q2 = qoe_q2(&d, classmap, ladder, q1, q1_prev)?;
        out.push(CandidateEval {
            class_levels: levels,
            demand_mbps: demand,
            feasible: demand + saliency_mbps <= budget_mbps + BUDGET_EPS,
            q1,
            q2,
            objective: q1 - lambda * q2,
        });
    }
    Ok(out)
}

/// Exhaustive search over the pruned candidate space: maximize
/// `Q1 - lambda * Q2` subject to the bandwidth budget. Ties go to the higher
/// `Q1`, then to the lexicographically smaller assignment. If even the
/// all-lowest assignment is infeasible it is returned flagged `over_budget`.
pub fn cba_solve(
    classmap: &ClassMap,
    ladder: &BitrateLadder,
    budget_mbps: f64,
    saliency_mbps: f64,
    lambda: f64,
    q1_prev: f64,
    conf: f64,
) -> Result<ChunkDecision> {
    if budget_mbps <= saliency_mbps {
        let mut d =
            ChunkDecision::from_class_levels(classmap, vec![1; classmap.k()], ladder)?;
        d.over_budget = true;
        return Ok(d);
    }
    let mut best: Option<(f64, f64, ChunkDecision)> = None;
    for cand in evaluate_candidates(
        classmap,
        ladder,
        budget_mbps,
        saliency_mbps,
        lambda,
        q1_prev,
        conf,
    )? {
        if !cand.feasible {
            continue;
        }
        let take = match &best {
            None => true,
            Some((obj, q1, _)) => {
                cand.objective > obj + TIE_EPS
                    || ((cand.objective - obj).abs() <= TIE_EPS && cand.q1 > q1 + TIE_EPS)
            }
        };
        if take {
            let d = ChunkDecision::from_class_levels(classmap, cand.class_levels, ladder)?;
            best = Some((cand.objective, cand.q1, d));
        }
    }
    match best {
        Some((_, _, d)) => Ok(d),
        None => {
            let mut d =
                ChunkDecision::from_class_levels(classmap, vec![1; classmap.k()], ladder)?;
            d.over_budget = true;
            Ok(d)
        }
    }
}

/// Pyramid baseline: start at `level(rank r) = max(l - (k - r), 1)` and
/// decrement the whole pyramid uniformly (floored at 1) until it fits the
/// budget. Flagged `over_budget` if even the flat all-lowest pyramid fails.
pub fn pba_solve(
    classmap: &ClassMap,
    ladder: &BitrateLadder,
    budget_mbps: f64,
    saliency_mbps: f64,
) -> Result<ChunkDecision> {
    let k = classmap.k();
    let l = ladder.levels();
    for shift in 0..l {
        let levels: Vec<usize> = (1..=k)
            .map(|r| (l + r).saturating_sub(k + shift).max(1))
            .collect();
        let d = ChunkDecision::from_class_levels(classmap, levels, ladder)?;
        if d.total_mbps(ladder) + saliency_mbps <= budget_mbps + BUDGET_EPS {
            return Ok(d);
        }
    }
    let mut d = ChunkDecision::from_class_levels(classmap, vec![1; k], ladder)?;
    d.over_budget = true;
    Ok(d)
}

// ── overhead planning ────────────────────────────────────────────────

/// Sampling frequency and downsampling ratio chosen by the planner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverheadPlan {
    pub sf: f64,
    pub ratio: usize,
}

/// Keep the default downsampling ratio and pick the highest sample rate
/// whose prediction time still beats the chunk deadline.
pub fn plan_overheads(
    time_model: &TimeModel,
    chunk_length: f64,
    sf_grid: &[f64],
    ratio_default: usize,
) -> Result<OverheadPlan> {
    if chunk_length <= 0.0 {
        return Err(Error::invalid("chunk length must be positive"));
    }
    if sf_grid.is_empty() || sf_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("sf grid must be nonempty and ascending"));
    }
    let ratio = ratio_default as f64;
    for &sf in sf_grid.iter().rev() {
        if time_model.time(sf, ratio) < chunk_length {
            return Ok(OverheadPlan {
                sf,
                ratio: ratio_default,
            });
        }
    }
    Err(Error::Infeasible(format!(
        "prediction takes {:.4}s even at sf={}, exceeding the {:.4}s chunk",
        time_model.time(sf_grid[0], ratio),
        sf_grid[0],
        chunk_length
    )))
}

// ── saliency transfer cost ───────────────────────────────────────────

/// Bytes of one downsampled saliency map (8-byte samples).
pub fn saliency_map_bytes(pixels: usize) -> usize {
    pixels * 8
}

/// Transfer cost of `maps_per_chunk` maps expressed as Mbps over the chunk.
pub fn saliency_cost_mbps(map_bytes: usize, maps_per_chunk: usize, chunk_length: f64) -> f64 {
    (map_bytes * maps_per_chunk) as f64 * 8.0 / 1e6 / chunk_length
}

// ── accuracy vs. ratio curve ─────────────────────────────────────────

/// Fitted parameters of `f1 = b * ratio^(-a) + c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1RatioFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub residual: f64,
}

impl F1RatioFit {
    pub fn f1(&self, ratio: f64) -> f64 {
        self.b * ratio.powf(-self.a) + self.c
    }
}

/// Least-squares fit of `f1 = b * ratio^(-a) + c`: the model is linear in
/// `(b, c)` for fixed `a`, so search the exponent and solve the rest exactly.
pub fn f1_ratio_model(points: &[(f64, f64)]) -> Result<F1RatioFit> {
    if points.len() < 3 {
        return Err(Error::Data("f1/ratio fit needs >= 3 points".into()));
    }
    let first = points[0].0;
    if points.iter().all(|p| (p.0 - first).abs() < 1e-12) {
        return Err(Error::Data("f1/ratio fit needs distinct ratios".into()));
    }
    if points.iter().any(|p| p.0 <= 0.0) {
        return Err(Error::Data("ratios must be positive".into()));
    }

    let eval = |a: f64| -> (f64, f64, f64) {
        // Least squares of f1 = b * basis + c with basis = ratio^(-a).
        let n = points.len() as f64;
        let basis: Vec<f64> = points.iter().map(|p| p.0.powf(-a)).collect();
        let mb = basis.iter().sum::<f64>() / n;
        let my = points.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = basis.iter().map(|x| (x - mb) * (x - mb)).sum();
        let (b, c) = if sxx < 1e-15 {
            (0.0, my)
        } else {
            let sxy: f64 = basis
                .iter()
                .zip(points)
                .map(|(x, p)| (x - mb) * (p.1 - my))
                .sum();
            let b = sxy / sxx;
            (b, my - b * mb)
        };
        let r: f64 = basis
            .iter()
            .zip(points)
            .map(|(x, p)| (b * x + c - p.1).powi(2))
            .sum();
        (r, b, c)
    };

    // Coarse exponent sweep, then ternary refinement around the best cell.
    let grid: Vec<f64> = (0..=300).map(|i| 1e-3 + i as f64 * (8.0 - 1e-3) / 300.0).collect();
    let mut best_i = 0;
    let mut best_r = f64::INFINITY;
    for (i, &a) in grid.iter().enumerate() {
        let (r, _, _) = eval(a);
        if r < best_r {
            best_r = r;
            best_i = i;
        }
    }
    let mut lo = grid[best_i.saturating_sub(1)];
    let mut hi = grid[(best_i + 1).min(grid.len() - 1)];
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if eval(m1).0 <= eval(m2).0 {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let a = 0.5 * (lo + hi);
    let (r, b, c) = eval(a);
    Ok(F1RatioFit {
        a,
        b,
        c,
        residual: r.sqrt(),
    })
}

// ── measurements CSV ─────────────────────────────────────────────────

/// Two-column measurement CSV (e.g. `sf,time_ms`, `ratio,time_ms`,
/// `sf,f1`); the header is returned alongside the rows.
pub fn load_measurements_csv(path: &Path) -> Result<(Vec<String>, Vec<(f64, f64)>)> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Data(e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    if headers.len() != 2 {
        return Err(Error::Data(format!(
            "{}: expected 2 columns, found {}",
            path.display(),
            headers.len()
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Data(e.to_string()))?;
        let x: f64 = rec[0]
            .trim()
            .parse()
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let y: f64 = rec[1]
            .trim()
            .parse()
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        rows.push((x, y));
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    Ok((headers, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictors::ProbabilityMatrix;

    fn uniform_probs(grid: TileGrid, p: f64) -> ProbabilityMatrix {
        ProbabilityMatrix::new(grid, vec![p; grid.tile_count()]).unwrap()
    }

    #[test]
    fn ladder_default_and_validation() {
        let l = BitrateLadder::default();
        assert_eq!(l.levels(), 6);
        assert_eq!(l.lowest(), 1.0);
        assert_eq!(l.highest(), 40.0);
        assert!(BitrateLadder::new(vec![1.0]).is_err());
        assert!(BitrateLadder::new(vec![2.0, 2.0]).is_err());
    }

    #[test]
    fn all_tiles_above_threshold_rank_k() {
        let grid = TileGrid::new(3, 6).unwrap();
        let cm = classify_tiles(&uniform_probs(grid, 0.9), 0.5, 6).unwrap();
        assert!(cm.ranks().iter().all(|&r| r == 6));
    }

    #[test]
    fn single_viewport_tile_ranks_follow_distance() {
        let grid = TileGrid::default_10x20();
        let mut p = vec![0.0; grid.tile_count()];
        p[5 * 20 + 10] = 0.9;
        let probs = ProbabilityMatrix::new(grid, p).unwrap();
        let cm = classify_tiles(&probs, 0.5, 6).unwrap();
        assert_eq!(cm.rank(5, 10), 6);
        assert_eq!(cm.rank(5, 11), 5);
        assert_eq!(cm.rank(4, 10), 5);
        assert_eq!(cm.rank(5, 15), 1); // distance 5
        assert_eq!(cm.rank(0, 0), 1); // far away
    }

    #[test]
    fn empty_viewport_falls_back_to_argmax() {
        let grid = TileGrid::new(3, 6).unwrap();
        let mut p = vec![0.01; grid.tile_count()];
        p[7] = 0.3; // below threshold, still the max
        let probs = ProbabilityMatrix::new(grid, p).unwrap();
        let cm = classify_tiles(&probs, 0.5, 3).unwrap();
        assert_eq!(cm.rank(1, 1), 3);
    }

    #[test]
    fn classify_matches_brute_force_on_random_fields() {
        use rand::Rng;
        let grid = TileGrid::new(4, 8).unwrap();
        let mut rng = crate::tensor::seeded_rng(21);
        for _ in 0..50 {
            let p: Vec<f64> = (0..grid.tile_count()).map(|_| rng.gen_range(0.0..1.0)).collect();
            let probs = ProbabilityMatrix::new(grid, p.clone()).unwrap();
            let k = rng.gen_range(1..=6);
            let cm = classify_tiles(&probs, 0.5, k).unwrap();
            // Independent re-derivation with explicit distance minimization.
            let mut vp: Vec<(usize, usize)> = (0..4)
                .flat_map(|i| (0..8).map(move |j| (i, j)))
                .filter(|&(i, j)| p[i * 8 + j] >= 0.5)
                .collect();
            if vp.is_empty() {
                let (mut bi, mut bj, mut bv) = (0, 0, f64::NEG_INFINITY);
                for i in 0..4 {
                    for j in 0..8 {
                        if p[i * 8 + j] > bv {
                            bv = p[i * 8 + j];
                            bi = i;
                            bj = j;
                        }
                    }
                }
                vp.push((bi, bj));
            }
            for i in 0..4 {
                for j in 0..8 {
                    let dis = vp
                        .iter()
                        .map(|&(u, v)| {
                            let dr = (i as i64 - u as i64).unsigned_abs() as usize;
                            let dc = (j as i64 - v as i64).unsigned_abs() as usize;
                            dr + dc.min(8 - dc)
                        })
                        .min()
                        .unwrap();
                    let expect = if dis >= k { 1 } else { k - dis };
                    assert_eq!(cm.rank(i, j), expect);
                }
            }
        }
    }

    #[test]
    fn confidence_midpoint_limits_and_default_value() {
        let m = ConfidenceModel::default();
        assert!((m.confidence(4.0) - 0.74).abs() < 1e-12);
        assert!(m.confidence(30.0) < 0.98);
        assert!(m.confidence(30.0) > 0.9799);
        assert!(m.confidence(0.0) > 0.5);
        let mut prev = 0.0;
        for sf in 0..20 {
            let c = m.confidence(sf as f64);
            assert!(c > prev && c > 0.0 && c < 1.0);
            prev = c;
        }
    }

    #[test]
    fn confidence_fit_recovers_curve() {
        let truth = ConfidenceModel {
            sf0: 5.0,
            steepness: 0.8,
            floor: 0.55,
            ceiling: 0.95,
        };
        let points: Vec<(f64, f64)> =
            (0..=16).map(|i| (i as f64, truth.confidence(i as f64))).collect();
        let fit = ConfidenceModel::fit(&points).unwrap();
        for &(sf, y) in &points {
            assert!((fit.confidence(sf) - y).abs() < 0.02);
        }
    }

    #[test]
    fn q1_hand_example() {
        let grid = TileGrid::new(2, 2).unwrap();
        let ladder = BitrateLadder::new(vec![1.0, 2.5]).unwrap();
        let cm = ClassMap::new(grid, vec![2, 1, 1, 1], 2).unwrap();
        let d = ChunkDecision::from_class_levels(&cm, vec![1, 2], &ladder).unwrap();
        let q1 = qoe_q1(&d, &cm, &ladder, 1.0).unwrap();
        assert!((q1 - 2.0).abs() < 1e-12);
        let half = qoe_q1(&d, &cm, &ladder, 0.5).unwrap();
        assert!((half - 1.0).abs() < 1e-12);
    }

    #[test]
    fn q2_population_stddev_and_conventions() {
        let grid = TileGrid::new(1, 4).unwrap();
        let ladder = BitrateLadder::new(vec![1.0, 5.0]).unwrap();
        // Two rank-2 tiles at bitrates 1 and 5: population stddev = 2.
        let cm = ClassMap::new(grid, vec![2, 3, 1, 1], 3).unwrap();
        let d = ChunkDecision::from_class_levels(&cm, vec![1, 1, 2], &ladder).unwrap();
        let q2 = qoe_q2(&d, &cm, &ladder, 1.0, 1.0).unwrap();
        assert!((q2 - 2.0).abs() < 1e-12);

        // No tile above rank 1: only the inter-chunk term remains.
        let flat = ClassMap::new(grid, vec![1, 1, 1, 2], 2).unwrap();
        let d2 = ChunkDecision::from_class_levels(&flat, vec![1, 1], &ladder).unwrap();
        let q2b = qoe_q2(&d2, &flat, &ladder, 3.0, 1.0).unwrap();
        assert!((q2b - 2.0).abs() < 1e-12);
    }

    #[test]
    fn candidate_count_is_binomial() {
        assert_eq!(enumerate_class_levels(6, 6).len(), 462);
        assert_eq!(enumerate_class_levels(3, 3).len(), 10);
        assert_eq!(enumerate_class_levels(2, 3).len(), 6);
        for c in enumerate_class_levels(4, 5) {
            assert!(c.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn cba_unconstrained_picks_top_level_when_lambda_zero() {
        let grid = TileGrid::new(2, 4).unwrap();
        let ladder = BitrateLadder::default();
        let cm = classify_tiles(&uniform_probs(grid, 0.9), 0.5, 6).unwrap();
        let budget = grid.tile_count() as f64 * ladder.highest() + 10.0;
        let d = cba_solve(&cm, &ladder, budget, 1.0, 0.0, 0.0, 1.0).unwrap();
        assert!(d.levels().iter().all(|&lv| lv == 6));
        assert!(!d.over_budget);
    }

    #[test]
    fn cba_exact_boundary_budget_is_feasible() {
        let grid = TileGrid::new(2, 4).unwrap();
        let ladder = BitrateLadder::default();
        let cm = classify_tiles(&uniform_probs(grid, 0.9), 0.5, 6).unwrap();
        let b_sm = 0.25;
        let budget = grid.tile_count() as f64 * ladder.lowest() + b_sm;
        let d = cba_solve(&cm, &ladder, budget, b_sm, 2.0, 0.0, 0.8).unwrap();
        assert!(d.levels().iter().all(|&lv| lv == 1));
        assert!(!d.over_budget);
    }

    #[test]
    fn cba_flags_over_budget() {
        let grid = TileGrid::new(2, 4).unwrap();
        let ladder = BitrateLadder::default();
        let cm = classify_tiles(&uniform_probs(grid, 0.9), 0.5, 6).unwrap();
        let d = cba_solve(&cm, &ladder, 3.0, 0.5, 2.0, 0.0, 0.8).unwrap();
        assert!(d.over_budget);
        assert!(d.levels().iter().all(|&lv| lv == 1));
    }

    #[test]
    fn cba_matches_brute_force_small_instances() {
        use rand::Rng;
        let mut rng = crate::tensor::seeded_rng(31);
        let grid = TileGrid::new(2, 4).unwrap();
        let ladder = BitrateLadder::new(vec![1.0, 3.0, 7.0]).unwrap();
        for _ in 0..60 {
            let p: Vec<f64> = (0..grid.tile_count()).map(|_| rng.gen_range(0.0..1.0)).collect();
            let probs = ProbabilityMatrix::new(grid, p).unwrap();
            let cm = classify_tiles(&probs, 0.5, 3).unwrap();
            let budget = rng.gen_range(8.0..60.0);
            let b_sm = rng.gen_range(0.0..1.0);
            let q1_prev = rng.gen_range(0.0..5.0);
            let d = cba_solve(&cm, &ladder, budget, b_sm, 2.0, q1_prev, 0.8).unwrap();

            // Independent scan of all candidates via the same objective.
            let mut best: Option<(f64, f64, Vec<usize>)> = None;
            for cand in enumerate_class_levels(3, 3) {
                let dd = ChunkDecision::from_class_levels(&cm, cand.clone(), &ladder).unwrap();
                if dd.total_mbps(&ladder) + b_sm > budget + 1e-9 {
                    continue;
                }
                let q1 = qoe_q1(&dd, &cm, &ladder, 0.8).unwrap();
                let q2 = qoe_q2(&dd, &cm, &ladder, q1, q1_prev).unwrap();
                let obj = q1 - 2.0 * q2;
                let take = match &best {
                    None => true,
                    Some((bo, bq, _)) => {
                        obj > bo + 1e-12 || ((obj - bo).abs() <= 1e-12 && q1 > bq + 1e-12)
                    }
                };
                if take {
                    best = Some((obj, q1, cand));
                }
            }
            let (_, _, expect) = best.expect("lowest level always feasible here");
            assert_eq!(d.class_levels(), expect.as_slice());
        }
    }

    #[test]
    fn cba_choice_invariant_to_confidence_scale_when_lambda_zero() {
        use rand::Rng;
        let mut rng = crate::tensor::seeded_rng(33);
        let grid = TileGrid::new(2, 4).unwrap();
        let ladder = BitrateLadder::new(vec![1.0, 3.0, 7.0]).unwrap();
        for _ in 0..20 {
            let p: Vec<f64> = (0..grid.tile_count()).map(|_| rng.gen_range(0.0..1.0)).collect();
            let probs = ProbabilityMatrix::new(grid, p).unwrap();
            let cm = classify_tiles(&probs, 0.5, 3).unwrap();
            let budget = rng.gen_range(8.0..60.0);
            let a = cba_solve(&cm, &ladder, budget, 0.2, 0.0, 0.0, 0.3).unwrap();
            let b = cba_solve(&cm, &ladder, budget, 0.2, 0.0, 0.0, 0.9).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn pba_pyramid_identity_and_decrements() {
        let grid = TileGrid::default_10x20();
        let ladder = BitrateLadder::default();
        let mut p = vec![0.0; grid.tile_count()];
        p[5 * 20 + 10] = 0.9;
        let probs = ProbabilityMatrix::new(grid, p).unwrap();
        let cm = classify_tiles(&probs, 0.5, 6).unwrap();

        let rich = pba_solve(&cm, &ladder, 1e9, 0.0).unwrap();
        assert_eq!(rich.class_levels(), &[1, 2, 3, 4, 5, 6]);

        // Force exactly two decrements.
        let demand0 = rich.total_mbps(&ladder);
        let one_down =
            ChunkDecision::from_class_levels(&cm, vec![1, 1, 2, 3, 4, 5], &ladder).unwrap();
        let two_down =
            ChunkDecision::from_class_levels(&cm, vec![1, 1, 1, 2, 3, 4], &ladder).unwrap();
        assert!(one_down.total_mbps(&ladder) < demand0);
        let budget = two_down.total_mbps(&ladder) + 0.01;
        let squeezed = pba_solve(&cm, &ladder, budget, 0.0).unwrap();
        assert_eq!(squeezed.class_levels(), &[1, 1, 1, 2, 3, 4]);
    }

    #[test]
    fn pba_respects_budget_or_flags() {
        use rand::Rng;
        let mut rng = crate::tensor::seeded_rng(37);
        let grid = TileGrid::new(3, 6).unwrap();
        let ladder = BitrateLadder::default();
        for _ in 0..40 {
            let p: Vec<f64> = (0..grid.tile_count()).map(|_| rng.gen_range(0.0..1.0)).collect();
            let probs = ProbabilityMatrix::new(grid, p).unwrap();
            let cm = classify_tiles(&probs, 0.5, 6).unwrap();
            let budget = rng.gen_range(5.0..200.0);
            let d = pba_solve(&cm, &ladder, budget, 0.5).unwrap();
            assert!(d.over_budget || d.total_mbps(&ladder) + 0.5 <= budget + 1e-9);
            // Higher rank never gets a lower level.
            assert!(d.class_levels().windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn planner_picks_max_feasible_sf() {
        let tm = TimeModel::new(1.0, 0.05, 0.0, 0.1).unwrap();
        let grid: Vec<f64> = (1..=16).map(|i| i as f64).collect();
        let plan = plan_overheads(&tm, 1.0, &grid, 144).unwrap();
        assert_eq!(plan.sf, 16.0);
        assert_eq!(plan.ratio, 144);
        assert!(tm.time(plan.sf, plan.ratio as f64) < 1.0);
    }

    #[test]
    fn planner_errors_when_nothing_fits() {
        let tm = TimeModel::new(1.0, 0.2, 0.0, 0.9).unwrap();
        let grid: Vec<f64> = (1..=16).map(|i| i as f64).collect();
        match plan_overheads(&tm, 1.0, &grid, 144) {
            Err(Error::Infeasible(msg)) => assert!(msg.contains("1.1")),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn time_model_fit_recovers_linear_sweeps() {
        let truth = TimeModel::new(1.0, 0.02, 0.0002, 0.05).unwrap();
        let sf_pts: Vec<(f64, f64)> =
            (1..=10).map(|i| (i as f64, truth.time(i as f64, 144.0))).collect();
        let ratio_pts: Vec<(f64, f64)> =
            (1..=10).map(|i| ((i * 30) as f64, truth.time(4.0, (i * 30) as f64))).collect();
        let fit = TimeModel::fit(&sf_pts, &ratio_pts, 4.0, 144.0).unwrap();
        for sf in 1..=10 {
            assert!((fit.time(sf as f64, 144.0) - truth.time(sf as f64, 144.0)).abs() < 1e-9);
        }
        assert!(fit.residual < 1e-9);
    }

    #[test]
    fn f1_fit_recovers_exact_curve() {
        let (a, b, c) = (0.5, -0.3, 0.9);
        let points: Vec<(f64, f64)> = (1..=12)
            .map(|i| {
                let r = (i * 24) as f64;
                (r, b * r.powf(-a) + c)
            })
            .collect();
        let fit = f1_ratio_model(&points).unwrap();
        assert!((fit.a - a).abs() < 1e-6, "a = {}", fit.a);
        assert!((fit.b - b).abs() < 1e-6);
        assert!((fit.c - c).abs() < 1e-6);
        assert!(fit.residual < 1e-9);
    }

    #[test]
    fn f1_fit_handles_constant_data() {
        let points: Vec<(f64, f64)> = (1..=8).map(|i| ((i * 10) as f64, 0.8)).collect();
        let fit = f1_ratio_model(&points).unwrap();
        assert!(fit.b.abs() < 1e-6);
        assert!((fit.c - 0.8).abs() < 1e-6);
        assert!(fit.residual < 1e-9);
        let same: Vec<(f64, f64)> = (0..4).map(|_| (10.0, 0.8)).collect();
        assert!(f1_ratio_model(&same).is_err());
    }

    #[test]
    fn fitted_curve_monotone_when_b_negative() {
        let fit = F1RatioFit {
            a: 0.5,
            b: -0.3,
            c: 0.9,
            residual: 0.0,
        };
        let mut prev = f64::NEG_INFINITY;
        for i in 1..50 {
            let v = fit.f1((i * 10) as f64);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn saliency_cost_arithmetic() {
        // 120x240 map: 28800 px * 8 B = 230400 B -> 1.8432 Mbps over 1 s.
        let bytes = saliency_map_bytes(120 * 240);
        assert_eq!(bytes, 230_400);
        assert!((saliency_cost_mbps(bytes, 1, 1.0) - 1.8432).abs() < 1e-12);
    }

    #[test]
    fn measurements_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "sf,time_ms\n1,50\n2,95\n4,190\n").unwrap();
        let (headers, rows) = load_measurements_csv(&path).unwrap();
        assert_eq!(headers, vec!["sf", "time_ms"]);
        assert_eq!(rows, vec![(1.0, 50.0), (2.0, 95.0), (4.0, 190.0)]);
    }
}
