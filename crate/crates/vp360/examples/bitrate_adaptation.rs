//! Classify tiles around a predicted viewport and compare the classification
//! solver against the pyramid baseline on one chunk.

use vp360::abr::{
    cba_solve, classify_tiles, pba_solve, qoe_q1, qoe_q2, BitrateLadder, ConfidenceModel,
};
use vp360::geometry::TileGrid;
use vp360::predictors::ProbabilityMatrix;

fn main() -> vp360::Result<()> {
    let grid = TileGrid::default_10x20();
    let ladder = BitrateLadder::default();

    // A confident viewport prediction around tile (5, 10).
    let mut p = vec![0.05; grid.tile_count()];
    for (di, dj) in [(0i64, 0i64), (0, 1), (0, -1), (1, 0), (-1, 0)] {
        p[((5 + di) * 20 + (10 + dj)) as usize] = 0.9;
    }
    let probs = ProbabilityMatrix::new(grid, p)?;
    let classmap = classify_tiles(&probs, 0.5, ladder.levels())?;

    println!("tile ranks (higher = closer to the predicted viewport):");
    for row in 0..grid.rows() {
        let line: String = (0..grid.cols())
            .map(|col| char::from_digit(classmap.rank(row, col) as u32, 10).unwrap())
            .collect();
        println!("  {line}");
    }

    let conf = ConfidenceModel::default().confidence(8.0);
    let budget = 600.0; // Mbps for this chunk
    let b_sm = 1.0;
    let lambda = 0.5;

    let cba = cba_solve(&classmap, &ladder, budget, b_sm, lambda, 0.0, conf)?;
    let pba = pba_solve(&classmap, &ladder, budget, b_sm)?;
    for (name, d) in [("cba", &cba), ("pba", &pba)] {
        let q1 = qoe_q1(d, &classmap, &ladder, conf)?;
        let q2 = qoe_q2(d, &classmap, &ladder, q1, 0.0)?;
        println!(
            "{name}: class levels {:?}, demand {:.1} Mbps, Q1 {q1:.3}, Q2 {q2:.3}, objective {:.3}",
            d.class_levels(),
            d.total_mbps(&ladder),
            q1 - lambda * q2
        );
    }
    Ok(())
}
