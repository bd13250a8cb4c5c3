//! Raster scan planning for close-range comb imaging.
//!
//! Overlap is a fraction of the image footprint: neighbouring tiles share
//! `overlap * footprint` millimetres, so the pitch is
//! `footprint * (1 - overlap)`. Positions are the stage coordinates of each
//! tile's minimum corner; image `+x`/`+y` are aligned with the stage axes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stage::{min_move_duration, Axis, StageConfig, StageError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScanError {
    #[error("invalid scan parameter {name} = {value}")]
    InvalidParams { name: &'static str, value: f64 },
    #[error("footprint exceeds the requested area; falling back to a single position")]
    FootprintTooLarge { fallback: Box<ScanPlan> },
    #[error(transparent)]
    Stage(#[from] StageError),
}

impl ScanError {
    pub fn name(&self) -> &'static str {
        match self {
            ScanError::InvalidParams { .. } => "InvalidParams",
            ScanError::FootprintTooLarge { .. } => "FootprintTooLarge",
            ScanError::Stage(e) => e.name(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPosition {
    pub x: f64,
    pub y: f64,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPlan {
    pub rows: usize,
    pub cols: usize,
    pub row_overlap: f64,
    pub col_overlap: f64,
    pub footprint_w: f64,
    pub footprint_h: f64,
    pub origin: [f64; 2],
    pub serpentine: bool,
    /// Capture order.
    pub positions: Vec<ScanPosition>,
}

/// Parameters for [`plan_grid`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub footprint_w: f64,
    pub footprint_h: f64,
    pub row_overlap: f64,
    pub col_overlap: f64,
    pub origin: [f64; 2],
    pub serpentine: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            rows: 7,
            cols: 8,
            footprint_w: 40.0,
            footprint_h: 30.0,
            row_overlap: 0.604,
            col_overlap: 0.555,
            origin: [20.0, 20.0],
            serpentine: true,
        }
    }
}

fn check(name: &'static str, value: f64, ok: bool) -> Result<(), ScanError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(ScanError::InvalidParams { name, value })
    }
}

/// Equally pitched grid; serpentine order reverses every odd row.
pub fn plan_grid(spec: &GridSpec) -> Result<ScanPlan, ScanError> {
    check("rows", spec.rows as f64, spec.rows >= 1)?;
    check("cols", spec.cols as f64, spec.cols >= 1)?;
    check("footprint_w", spec.footprint_w, spec.footprint_w > 0.0)?;
    check("footprint_h", spec.footprint_h, spec.footprint_h > 0.0)?;
    check("row_overlap", spec.row_overlap, (0.0..1.0).contains(&spec.row_overlap))?;
    check("col_overlap", spec.col_overlap, (0.0..1.0).contains(&spec.col_overlap))?;
    let pitch_w = spec.footprint_w * (1.0 - spec.col_overlap);
    let pitch_h = spec.footprint_h * (1.0 - spec.row_overlap);
    let mut positions = Vec::with_capacity(spec.rows * spec.cols);
    for row in 0..spec.rows {
        let reversed = spec.serpentine && row % 2 == 1;
        for i in 0..spec.cols {
            let col = if reversed { spec.cols - 1 - i } else { i };
            positions.push(ScanPosition {
                x: spec.origin[0] + col as f64 * pitch_w,
                y: spec.origin[1] + row as f64 * pitch_h,
                row,
                col,
            });
        }
    }
    Ok(ScanPlan {
        rows: spec.rows,
        cols: spec.cols,
        row_overlap: spec.row_overlap,
        col_overlap: spec.col_overlap,
        footprint_w: spec.footprint_w,
        footprint_h: spec.footprint_h,
        origin: spec.origin,
        serpentine: spec.serpentine,
        positions,
    })
}

/// Smallest tile count along one axis whose evenly spread tiles span
/// `area` with at least `min_overlap`; returns `(count, achieved_overlap)`.
fn tiles_for_span(area: f64, footprint: f64, min_overlap: f64) -> (usize, f64) {
    if area <= footprint {
        return (1, 0.0);
    }
    let needed = (area - footprint) / (footprint * (1.0 - min_overlap));
    let n = 1 + (needed - 1e-9).ceil().max(1.0) as usize;
    let pitch = (area - footprint) / (n - 1) as f64;
    (n, 1.0 - pitch / footprint)
}

/// Inverse planner: fewest rows and columns that cover the area with at
/// least `min_overlap` between neighbours.
pub fn plan_for_area(
    area_w: f64,
    area_h: f64,
    footprint_w: f64,
    footprint_h: f64,
    min_overlap: f64,
    origin: [f64; 2],
) -> Result<ScanPlan, ScanError> {
    check("area_w", area_w, area_w > 0.0)?;
    check("area_h", area_h, area_h > 0.0)?;
    check("min_overlap", min_overlap, (0.0..1.0).contains(&min_overlap))?;
    let too_large = footprint_w > area_w || footprint_h > area_h;
    let (cols, col_overlap) = tiles_for_span(area_w, footprint_w, min_overlap);
    let (rows, row_overlap) = tiles_for_span(area_h, footprint_h, min_overlap);
    let plan = plan_grid(&GridSpec {
        rows,
        cols,
        footprint_w,
        footprint_h,
        row_overlap,
        col_overlap,
        origin,
        serpentine: true,
    })?;
    if too_large {
        let fallback = plan_grid(&GridSpec {
            rows: 1,
            cols: 1,
            row_overlap: 0.0,
            col_overlap: 0.0,
            ..GridSpec { footprint_w, footprint_h, origin, ..GridSpec::default() }
        })?;
        return Err(ScanError::FootprintTooLarge { fallback: Box::new(fallback) });
    }
    Ok(plan)
}

impl ScanPlan {
    pub fn pitch_w(&self) -> f64 {
        self.footprint_w * (1.0 - self.col_overlap)
    }

    pub fn pitch_h(&self) -> f64 {
        self.footprint_h * (1.0 - self.row_overlap)
    }

    /// Total covered width.
    pub fn covered_w(&self) -> f64 {
        self.footprint_w * (1.0 + (self.cols - 1) as f64 * (1.0 - self.col_overlap))
    }

    pub fn covered_h(&self) -> f64 {
        self.footprint_h * (1.0 + (self.rows - 1) as f64 * (1.0 - self.row_overlap))
    }

    /// `(covered_w / footprint_w, covered_h / footprint_h)`.
    pub fn coverage_factors(&self) -> (f64, f64) {
        (
            1.0 + (self.cols - 1) as f64 * (1.0 - self.col_overlap),
            1.0 + (self.rows - 1) as f64 * (1.0 - self.row_overlap),
        )
    }

    /// Summed straight-line travel between consecutive positions.
    pub fn travel_length(&self) -> f64 {
        self.positions.windows(2).map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y)).sum()
    }

    /// Index into `positions` of grid cell `(row, col)`.
    pub fn index_of(&self, row: usize, col: usize) -> Option<usize> {
        self.positions.iter().position(|p| p.row == row && p.col == col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    /// Move to the next row.
    Row,
    /// Move along a row.
    Column,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub from: usize,
    pub to: usize,
    pub kind: TransitionKind,
    pub move_s: f64,
    pub settle_s: f64,
    pub exposure_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    /// Settle and exposure for the first image.
    pub first_capture_s: f64,
    pub transitions: Vec<Transition>,
    pub total_s: f64,
    pub mean_row_transition_s: Option<f64>,
    pub mean_col_transition_s: Option<f64>,
}

/// Dwell at each position before moving on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptureTiming {
    /// Time the carriage rests before the capture is triggered.
    pub settle_s: f64,
    /// Capture dwell: exposure plus image readout and storage.
    pub exposure_s: f64,
}

impl Default for CaptureTiming {
    fn default() -> Self {
        CaptureTiming { settle_s: 2.0, exposure_s: 8.0 }
    }
}

/// Per-transition durations from the stage kinematics.
pub fn estimate_timing(plan: &ScanPlan, stage: &StageConfig, timing: CaptureTiming) -> Result<TimingReport, ScanError> {
    check("settle_s", timing.settle_s, timing.settle_s >= 0.0)?;
    check("exposure_s", timing.exposure_s, timing.exposure_s >= 0.0)?;
    for p in &plan.positions {
        stage.check_point(p.x, p.y)?;
    }
    let dwell = timing.settle_s + timing.exposure_s;
    let mut transitions = Vec::new();
    for (i, w) in plan.positions.windows(2).enumerate() {
        let move_s = Axis::BOTH
            .iter()
            .map(|&axis| {
                let c = stage.axis(axis);
                let (a, b) = match axis {
                    Axis::X => (w[0].x, w[1].x),
                    Axis::Y => (w[0].y, w[1].y),
                };
                min_move_duration(c.quantize(b) - c.quantize(a), c.v_max, c.a_max)
            })
            .fold(0.0, f64::max);
        transitions.push(Transition {
            from: i,
            to: i + 1,
            kind: if w[0].row != w[1].row { TransitionKind::Row } else { TransitionKind::Column },
            move_s,
            settle_s: timing.settle_s,
            exposure_s: timing.exposure_s,
            total_s: move_s + dwell,
        });
    }
    let mean = |kind| {
        let v: Vec<f64> = transitions.iter().filter(|t| t.kind == kind).map(|t| t.total_s).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let first_capture_s = if plan.positions.is_empty() { 0.0 } else { dwell };
    Ok(TimingReport {
        first_capture_s,
        total_s: first_capture_s + transitions.iter().map(|t| t.total_s).sum::<f64>(),
        mean_row_transition_s: mean(TransitionKind::Row),
        mean_col_transition_s: mean(TransitionKind::Column),
        transitions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Union of `[start, start + len]` intervals; returns the covered span if
    /// it is gap-free.
    fn union_span(mut starts: Vec<f64>, len: f64) -> Option<(f64, f64)> {
        starts.sort_by(f64::total_cmp);
        starts.dedup();
        let mut lo = starts[0];
        let mut hi = lo + len;
        for &s in &starts[1..] {
            if s > hi + 1e-12 {
                return None;
            }
            hi = hi.max(s + len);
        }
        lo = lo.min(starts[0]);
        Some((lo, hi))
    }

    #[test]
    fn default_grid_coverage() {
        let plan = plan_grid(&GridSpec::default()).unwrap();
        assert_eq!(plan.positions.len(), 56);
        let (fw, fh) = plan.coverage_factors();
        assert!((fh - 3.376).abs() < 1e-9);
        assert!((fw - 4.115).abs() < 1e-9);
        let (y0, y1) = union_span(plan.positions.iter().map(|p| p.y).collect(), plan.footprint_h).unwrap();
        assert!((y1 - y0 - plan.covered_h()).abs() < 1e-9);
        let (x0, x1) = union_span(plan.positions.iter().map(|p| p.x).collect(), plan.footprint_w).unwrap();
        assert!((x1 - x0 - plan.covered_w()).abs() < 1e-9);
        assert_eq!((x0, y0), (20.0, 20.0));
    }

    #[test]
    fn single_tile() {
        let plan = plan_grid(&GridSpec { rows: 1, cols: 1, ..GridSpec::default() }).unwrap();
        assert_eq!(plan.positions.len(), 1);
        assert_eq!(plan.covered_w(), plan.footprint_w);
        assert_eq!(plan.covered_h(), plan.footprint_h);
    }

    #[test]
    fn serpentine_beats_raster() {
        let serp = plan_grid(&GridSpec::default()).unwrap();
        let raster = plan_grid(&GridSpec { serpentine: false, ..GridSpec::default() }).unwrap();
        assert!(serp.travel_length() < raster.travel_length());
        // adjacent tiles in a row overlap by exactly the pitch-derived fraction
        let a = serp.positions[0];
        let b = serp.positions[1];
        let overlap = 1.0 - (b.x - a.x) / serp.footprint_w;
        assert!((overlap - 0.555).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_overlap() {
        assert!(plan_grid(&GridSpec { row_overlap: 1.0, ..GridSpec::default() }).is_err());
        assert!(plan_grid(&GridSpec { rows: 0, ..GridSpec::default() }).is_err());
    }

    /// Enumerates counts directly rather than solving for them.
    fn brute_force_count(area: f64, footprint: f64, min_overlap: f64) -> (usize, f64) {
        for n in 1..=10usize {
            let overlap = if n == 1 { 0.0 } else { 1.0 - (area - footprint) / ((n - 1) as f64 * footprint) };
            let covered = if n == 1 { footprint } else { area };
            if covered + 1e-9 >= area && (n == 1 || overlap + 1e-9 >= min_overlap) {
                return (n, overlap);
            }
        }
        panic!("no count up to 10");
    }

    #[test]
    fn area_planner_matches_enumeration() {
        let plan = plan_for_area(40.0, 60.0, 40.0, 30.0, 0.5, [0.0, 0.0]).unwrap();
        assert_eq!(plan.rows, 3);
        assert!((plan.row_overlap - 0.5).abs() < 1e-12);
        assert_eq!(brute_force_count(60.0, 30.0, 0.5), (3, 0.5));
        assert_eq!(plan.cols, 1);

        let plan = plan_for_area(40.0, 90.0, 40.0, 30.0, 0.0, [0.0, 0.0]).unwrap();
        assert_eq!(plan.rows, 3);
        assert!(plan.row_overlap.abs() < 1e-12);
        assert_eq!(brute_force_count(90.0, 30.0, 0.0).0, 3);

        for &(area, m) in &[(75.0, 0.3), (100.0, 0.6), (47.0, 0.1), (121.0, 0.45)] {
            let plan = plan_for_area(area, area, 30.0, 30.0, m, [0.0, 0.0]).unwrap();
            let (n, ov) = brute_force_count(area, 30.0, m);
            assert_eq!(plan.rows, n);
            assert!((plan.row_overlap - ov).abs() < 1e-9);
            assert!(plan.row_overlap + 1e-9 >= m);
            assert!((plan.covered_h() - area).abs() < 1e-9);
        }
    }

    #[test]
    fn area_equal_to_footprint() {
        let plan = plan_for_area(40.0, 30.0, 40.0, 30.0, 0.5, [0.0, 0.0]).unwrap();
        assert_eq!((plan.rows, plan.cols), (1, 1));
    }

    #[test]
    fn footprint_too_large_falls_back() {
        match plan_for_area(30.0, 30.0, 40.0, 30.0, 0.5, [0.0, 0.0]) {
            Err(ScanError::FootprintTooLarge { fallback }) => assert_eq!(fallback.positions.len(), 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn timing_zero_distance_and_pitch() {
        let stage = StageConfig::default();
        let timing = CaptureTiming { settle_s: 0.5, exposure_s: 0.25 };
        let mut plan = plan_grid(&GridSpec { rows: 1, cols: 2, ..GridSpec::default() }).unwrap();
        plan.positions[1].x = plan.positions[0].x;
        let report = estimate_timing(&plan, &stage, timing).unwrap();
        assert_eq!(report.transitions[0].move_s, 0.0);
        assert_eq!(report.transitions[0].total_s, 0.75);

        // 10 mm pitch, v=50, a=200: triangular, 2 * sqrt(10 / 200)
        let plan =
            plan_grid(&GridSpec { rows: 2, cols: 1, footprint_h: 40.0, row_overlap: 0.75, ..GridSpec::default() })
                .unwrap();
        let report = estimate_timing(&plan, &stage, timing).unwrap();
        let expected = 2.0 * (10.0f64 / 200.0).sqrt();
        assert!((report.transitions[0].move_s - expected).abs() < 1e-12);
        assert_eq!(report.transitions[0].kind, TransitionKind::Row);
        assert!((report.mean_row_transition_s.unwrap() - (expected + 0.75)).abs() < 1e-12);
    }

    #[test]
    fn timing_out_of_travel() {
        let plan = plan_grid(&GridSpec { origin: [340.0, 20.0], ..GridSpec::default() }).unwrap();
        let err = estimate_timing(&plan, &StageConfig::default(), CaptureTiming::default()).unwrap_err();
        assert_eq!(err.name(), "OutOfTravel");
    }
}
