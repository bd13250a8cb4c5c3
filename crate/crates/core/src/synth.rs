//! Seeded synthetic imagery for exercising registration and stitching.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mosaic::MosaicError;
use crate::raster::Raster;
use crate::scan::ScanPlan;

/// Multi-octave value noise on a 0..255 scale, quantised to whole levels.
pub fn value_noise(width: usize, height: usize, seed: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = vec![0.0f64; width * height];
    let mut total = 0.0;
    let mut amp = 1.0;
    let mut cell = 96usize;
    while cell >= 2 {
        let gw = width / cell + 2;
        let gh = height / cell + 2;
        let grid: Vec<f64> = (0..gw * gh).map(|_| rng.random::<f64>()).collect();
        for y in 0..height {
            let gy = y as f64 / cell as f64;
            let y0 = gy.floor() as usize;
            let fy = smooth(gy - y0 as f64);
            for x in 0..width {
                let gx = x as f64 / cell as f64;
                let x0 = gx.floor() as usize;
                let fx = smooth(gx - x0 as f64);
                let g = |i: usize, j: usize| grid[j * gw + i];
                let top = g(x0, y0) * (1.0 - fx) + g(x0 + 1, y0) * fx;
                let bot = g(x0, y0 + 1) * (1.0 - fx) + g(x0 + 1, y0 + 1) * fx;
                acc[y * width + x] += amp * (top * (1.0 - fy) + bot * fy);
            }
        }
        total += amp;
        amp *= 0.6;
        cell /= 2;
    }
    // stretch to the full range
    let lo = acc.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = acc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { total };
    Raster::from_vec(width, height, acc.iter().map(|v| ((v - lo) / span * 255.0).round() as f32).collect())
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Tiles, the pixel origin of tile (0, 0) in the master, and the tile size.
pub type CutTiles = (Vec<Raster>, [usize; 2], [usize; 2]);

/// Cuts the tiles a plan would capture from `master`, centred.
pub fn plan_tiles(master: &Raster, plan: &ScanPlan, px_per_mm: f64) -> Result<CutTiles, MosaicError> {
    let tw = (plan.footprint_w * px_per_mm).round() as usize;
    let th = (plan.footprint_h * px_per_mm).round() as usize;
    let min_x = plan.positions.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let min_y = plan.positions.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let offs: Vec<[usize; 2]> = plan
        .positions
        .iter()
        .map(|p| [((p.x - min_x) * px_per_mm).round() as usize, ((p.y - min_y) * px_per_mm).round() as usize])
        .collect();
    let need_w = offs.iter().map(|o| o[0]).max().unwrap_or(0) + tw;
    let need_h = offs.iter().map(|o| o[1]).max().unwrap_or(0) + th;
    if need_w > master.width() || need_h > master.height() {
        return Err(MosaicError::InvalidParams(format!(
            "plan needs a {need_w}x{need_h} px master, have {}x{}",
            master.width(),
            master.height()
        )));
    }
    let origin = [(master.width() - need_w) / 2, (master.height() - need_h) / 2];
    let tiles = offs.iter().map(|o| master.crop(origin[0] + o[0], origin[1] + o[1], tw, th)).collect();
    Ok((tiles, origin, [tw, th]))
}
