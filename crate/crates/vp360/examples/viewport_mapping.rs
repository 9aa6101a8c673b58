//! Map a head orientation to the tiles it covers, measure wrap-around tile
//! distances, and downsample a saliency map.

use vp360::geometry::{
    downsample_saliency, viewport_to_tiles, wrap_manhattan_distance, FovSpec, TileGrid,
    ViewportSample,
};
use vp360::synthetic::gaussian_blob;

fn main() -> vp360::Result<()> {
    let grid = TileGrid::default_10x20();
    let fov = FovSpec::default_90();

    // A viewport straddling the yaw seam.
    let sample = ViewportSample::new(0.0, 175.0, 10.0)?;
    let tiles = viewport_to_tiles(sample, grid, fov);
    println!("viewport at yaw 175, pitch 10 covers {} tiles:", tiles.count_ones());
    for row in 0..grid.rows() {
        let line: String = (0..grid.cols())
            .map(|col| if tiles.get(row, col) { '#' } else { '.' })
            .collect();
        println!("  {line}");
    }

    // Column distance wraps around the seam.
    let d_direct = wrap_manhattan_distance((5, 1), (5, 18), grid)?;
    println!("distance (5,1) -> (5,18) = {d_direct} (3 across the seam, not 17)");

    // Downsample a 120x240 attention map to ratio 4 (20x40 pixels).
    let full = gaussian_blob(120, 240, 40.0, 200.0, 12.0);
    let small = downsample_saliency(&full, grid, 4)?;
    println!(
        "downsampled {}x{} -> {}x{}, mass preserved: {:.6}",
        full.height(),
        full.width(),
        small.height(),
        small.width(),
        small.total()
    );
    let (r, c) = small.argmax();
    println!("attention peak lands at pixel ({r}, {c})");
    Ok(())
}
