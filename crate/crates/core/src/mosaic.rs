//! Translation-only registration and feathered compositing of scan tiles.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{numbered_images, Raster};
use crate::scan::ScanPlan;

pub const DEFAULT_SEARCH_RADIUS: i64 = 10;
pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.5;
pub const MIN_OVERLAP_PX: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MosaicError {
    #[error("overlap at offset ({0}, {1}) is smaller than {MIN_OVERLAP_PX}x{MIN_OVERLAP_PX} px")]
    InsufficientOverlap(i64, i64),
    #[error("tile ({row}, {col}) is missing")]
    MissingTile { row: usize, col: usize },
    #[error("tile sizes differ: {0}x{1} vs {2}x{3}")]
    TileSizeMismatch(usize, usize, usize, usize),
    #[error("plan has {plan} positions but {found} tiles were supplied")]
    TileCount { plan: usize, found: usize },
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("tile input: {0}")]
    Io(String),
}

impl MosaicError {
    pub fn name(&self) -> &'static str {
        match self {
            MosaicError::InsufficientOverlap(..) => "InsufficientOverlap",
            MosaicError::MissingTile { .. } => "MissingTile",
            MosaicError::TileSizeMismatch(..) => "TileSizeMismatch",
            MosaicError::TileCount { .. } => "MissingTile",
            MosaicError::InvalidParams(_) => "InvalidParams",
            MosaicError::Io(_) => "TileIo",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Tile {
    pub image: Raster,
    pub row: usize,
    pub col: usize,
    /// Expected position of the tile's top-left corner relative to tile
    /// (0, 0), in pixels.
    pub nominal: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    /// Position of `b`'s top-left corner in `a`'s frame.
    pub offset: [i64; 2],
    /// Peak normalised cross-correlation.
    pub confidence: f64,
    /// The peak was below threshold; `offset` is the rounded nominal.
    pub low_confidence: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegisterOptions {
    pub search_radius: i64,
    pub min_confidence: f64,
}

impl Default for RegisterOptions {
    fn default() -> Self {
        RegisterOptions { search_radius: DEFAULT_SEARCH_RADIUS, min_confidence: DEFAULT_MIN_CONFIDENCE }
    }
}

/// Overlap window of `a` and `b` when `b` sits at `(dx, dy)` in `a`'s frame.
fn overlap(a: &Raster, b: &Raster, dx: i64, dy: i64) -> Option<(usize, usize, usize, usize)> {
    let x0 = dx.max(0);
    let y0 = dy.max(0);
    let x1 = (a.width() as i64).min(dx + b.width() as i64);
    let y1 = (a.height() as i64).min(dy + b.height() as i64);
    if x1 - x0 <= 0 || y1 - y0 <= 0 {
        return None;
    }
    Some((x0 as usize, y0 as usize, (x1 - x0) as usize, (y1 - y0) as usize))
}

/// Normalised cross-correlation over the overlap at one integer offset.
pub fn ncc(a: &Raster, b: &Raster, dx: i64, dy: i64) -> Option<f64> {
    let (x0, y0, w, h) = overlap(a, b, dx, dy)?;
    let bx = (x0 as i64 - dx) as usize;
    let by = (y0 as i64 - dy) as usize;
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for r in 0..h {
        let ra = &a.row(y0 + r)[x0..x0 + w];
        let rb = &b.row(by + r)[bx..bx + w];
        // per-row f32 partials keep the inner loop vectorisable
        let (mut pa, mut pb, mut paa, mut pbb, mut pab) = (0.0f32, 0.0f32, 0.0f32, 0.0f32, 0.0f32);
        for (&u, &v) in ra.iter().zip(rb) {
            pa += u;
            pb += v;
            paa += u * u;
            pbb += v * v;
            pab += u * v;
        }
        sa += pa as f64;
        sb += pb as f64;
        saa += paa as f64;
        sbb += pbb as f64;
        sab += pab as f64;
    }
    let n = (w * h) as f64;
    let cov = sab - sa * sb / n;
    let va = saa - sa * sa / n;
    let vb = sbb - sb * sb / n;
    if va <= 1e-9 * n || vb <= 1e-9 * n {
        return Some(0.0);
    }
    Some(cov / (va * vb).sqrt())
}

/// Best integer offset of `b` relative to `a` within `radius` of `nominal`.
pub fn register_pair(
    a: &Raster,
    b: &Raster,
    nominal: [f64; 2],
    opts: RegisterOptions,
) -> Result<Registration, MosaicError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(MosaicError::TileSizeMismatch(a.width(), a.height(), b.width(), b.height()));
    }
    if opts.search_radius < 0 {
        return Err(MosaicError::InvalidParams(format!("search radius {}", opts.search_radius)));
    }
    let cx = nominal[0].round() as i64;
    let cy = nominal[1].round() as i64;
    match overlap(a, b, cx, cy) {
        Some((_, _, w, h)) if w >= MIN_OVERLAP_PX && h >= MIN_OVERLAP_PX => {}
        _ => return Err(MosaicError::InsufficientOverlap(cx, cy)),
    }
    let r = opts.search_radius;
    let mut best: Option<([i64; 2], f64)> = None;
    for dy in cy - r..=cy + r {
        for dx in cx - r..=cx + r {
            match overlap(a, b, dx, dy) {
                Some((_, _, w, h)) if w >= MIN_OVERLAP_PX && h >= MIN_OVERLAP_PX => {}
                _ => continue,
            }
            let c = ncc(a, b, dx, dy).unwrap_or(0.0);
            // ties go to the offset closest to nominal, then scan order
            let closer = |o: [i64; 2]| (o[0] - cx).pow(2) + (o[1] - cy).pow(2);
            let better = match best {
                None => true,
                Some((o, bc)) => c > bc || (c == bc && closer([dx, dy]) < closer(o)),
            };
            if better {
                best = Some(([dx, dy], c));
            }
        }
    }
    let (offset, confidence) = best.unwrap();
    if !(confidence >= opts.min_confidence) {
        return Ok(Registration { offset: [cx, cy], confidence, low_confidence: true });
    }
    Ok(Registration { offset, confidence, low_confidence: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub row: usize,
    pub col: usize,
    pub x: i64,
    pub y: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adjacency {
    pub a: [usize; 2],
    pub b: [usize; 2],
    pub nominal: [f64; 2],
    pub refined: [i64; 2],
    pub confidence: f64,
    pub low_confidence: bool,
    pub in_tree: bool,
    /// Distance between the refined offset and the offset implied by the
    /// final placements; zero on tree edges.
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct Mosaic {
    pub canvas: Raster,
    /// Placements in canvas pixels.
    pub placements: Vec<Placement>,
    pub adjacencies: Vec<Adjacency>,
    pub tile_width: usize,
    pub tile_height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosaicReport {
    pub width: usize,
    pub height: usize,
    pub tile_width: usize,
    pub tile_height: usize,
    pub placements: Vec<Placement>,
    pub adjacencies: Vec<Adjacency>,
    pub low_confidence: usize,
    pub max_residual: f64,
}

impl Mosaic {
    pub fn report(&self) -> MosaicReport {
        MosaicReport {
            width: self.canvas.width(),
            height: self.canvas.height(),
            tile_width: self.tile_width,
            tile_height: self.tile_height,
            placements: self.placements.clone(),
            adjacencies: self.adjacencies.clone(),
            low_confidence: self.adjacencies.iter().filter(|a| a.low_confidence).count(),
            max_residual: self.adjacencies.iter().map(|a| a.residual).fold(0.0, f64::max),
        }
    }
}

/// Tiles in plan order with nominal offsets from the plan geometry.
pub fn tiles_from_plan(images: Vec<Raster>, plan: &ScanPlan, px_per_mm: f64) -> Result<Vec<Tile>, MosaicError> {
    if images.len() != plan.positions.len() {
        return Err(MosaicError::TileCount { plan: plan.positions.len(), found: images.len() });
    }
    let anchor = plan.index_of(0, 0).map(|i| plan.positions[i]).ok_or(MosaicError::MissingTile { row: 0, col: 0 })?;
    Ok(images
        .into_iter()
        .zip(&plan.positions)
        .map(|(image, p)| Tile {
            image,
            row: p.row,
            col: p.col,
            nominal: [(p.x - anchor.x) * px_per_mm, (p.y - anchor.y) * px_per_mm],
        })
        .collect())
}

pub fn load_tiles(dir: &Path, plan: &ScanPlan, px_per_mm: f64) -> Result<Vec<Tile>, MosaicError> {
    let paths = numbered_images(dir).map_err(|e| MosaicError::Io(e.to_string()))?;
    let images = paths
        .iter()
        .map(|p| Raster::load(p).map_err(|e| MosaicError::Io(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    tiles_from_plan(images, plan, px_per_mm)
}

/// Registers all row and column neighbours, places tiles along a row-major
/// spanning tree from tile (0, 0), and feather-blends the result.
pub fn compose(tiles: &[Tile], opts: RegisterOptions) -> Result<Mosaic, MosaicError> {
    if tiles.is_empty() {
        return Err(MosaicError::MissingTile { row: 0, col: 0 });
    }
    let rows = tiles.iter().map(|t| t.row).max().unwrap() + 1;
    let cols = tiles.iter().map(|t| t.col).max().unwrap() + 1;
    let mut grid: Vec<Option<usize>> = vec![None; rows * cols];
    for (i, t) in tiles.iter().enumerate() {
        grid[t.row * cols + t.col] = Some(i);
    }
    let at = |r: usize, c: usize| grid[r * cols + c].ok_or(MosaicError::MissingTile { row: r, col: c });
    let (tw, th) = (tiles[0].image.width(), tiles[0].image.height());
    for t in tiles {
        if t.image.width() != tw || t.image.height() != th {
            return Err(MosaicError::TileSizeMismatch(tw, th, t.image.width(), t.image.height()));
        }
    }

    let mut pairs = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let i = at(r, c)?;
            if c + 1 < cols {
                pairs.push((i, at(r, c + 1)?, true));
            }
            if r + 1 < rows {
                pairs.push((i, at(r + 1, c)?, c == 0));
            }
        }
    }
    let regs = pairs
        .par_iter()
        .map(|&(i, j, _)| {
            let nominal = [tiles[j].nominal[0] - tiles[i].nominal[0], tiles[j].nominal[1] - tiles[i].nominal[1]];
            register_pair(&tiles[i].image, &tiles[j].image, nominal, opts).map(|r| (nominal, r))
        })
        .collect::<Result<Vec<_>, _>>()?;

    // every horizontal link and the column-0 vertical links form the tree
    let mut pos: Vec<Option<[i64; 2]>> = vec![None; tiles.len()];
    pos[at(0, 0)?] = Some([0, 0]);
    let link = |i: usize, j: usize| pairs.iter().position(|p| p.0 == i && p.1 == j).unwrap();
    for r in 0..rows {
        if r > 0 {
            let (up, me) = (at(r - 1, 0)?, at(r, 0)?);
            let o = regs[link(up, me)].1.offset;
            let p = pos[up].unwrap();
            pos[me] = Some([p[0] + o[0], p[1] + o[1]]);
        }
        for c in 1..cols {
            let (left, me) = (at(r, c - 1)?, at(r, c)?);
            let o = regs[link(left, me)].1.offset;
            let p = pos[left].unwrap();
            pos[me] = Some([p[0] + o[0], p[1] + o[1]]);
        }
    }
    let pos: Vec<[i64; 2]> = pos.into_iter().map(Option::unwrap).collect();

    let adjacencies = pairs
        .iter()
        .zip(&regs)
        .map(|(&(i, j, in_tree), (nominal, reg))| {
            let implied = [pos[j][0] - pos[i][0], pos[j][1] - pos[i][1]];
            let residual = ((implied[0] - reg.offset[0]) as f64).hypot((implied[1] - reg.offset[1]) as f64);
            Adjacency {
                a: [tiles[i].row, tiles[i].col],
                b: [tiles[j].row, tiles[j].col],
                nominal: *nominal,
                refined: reg.offset,
                confidence: reg.confidence,
                low_confidence: reg.low_confidence,
                in_tree,
                residual,
            }
        })
        .collect();

    let min_x = pos.iter().map(|p| p[0]).min().unwrap();
    let min_y = pos.iter().map(|p| p[1]).min().unwrap();
    let placements: Vec<Placement> = tiles
        .iter()
        .zip(&pos)
        .map(|(t, p)| Placement { row: t.row, col: t.col, x: p[0] - min_x, y: p[1] - min_y })
        .collect();
    let canvas = blend(tiles, &placements, tw, th);
    Ok(Mosaic { canvas, placements, adjacencies, tile_width: tw, tile_height: th })
}

/// Linear feather weight: distance to the nearest tile edge, in pixels.
fn feather(x: usize, y: usize, w: usize, h: usize) -> f32 {
    (x + 1).min(w - x).min(y + 1).min(h - y) as f32
}

fn blend(tiles: &[Tile], placements: &[Placement], tw: usize, th: usize) -> Raster {
    let cw = placements.iter().map(|p| p.x as usize + tw).max().unwrap();
    let ch = placements.iter().map(|p| p.y as usize + th).max().unwrap();
    let mut sum = vec![0.0f32; cw * ch];
    let mut wsum = vec![0.0f32; cw * ch];
    for (t, p) in tiles.iter().zip(placements) {
        for y in 0..th {
            let row = t.image.row(y);
            let base = (p.y as usize + y) * cw + p.x as usize;
            for (x, &v) in row.iter().enumerate() {
                let w = feather(x, y, tw, th);
                sum[base + x] += w * v;
                wsum[base + x] += w;
            }
        }
    }
    Raster::from_vec(cw, ch, sum.iter().zip(&wsum).map(|(s, w)| if *w > 0.0 { s / w } else { 0.0 }).collect())
}
