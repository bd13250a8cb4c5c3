//! Trajectory error analysis.
//!
//! Tracked runs arrive in image pixels, are converted to millimetres, and
//! resampled onto a uniform phase grid over one cycle. Each phase is compared
//! with the commanded path at the same phase: the error vector is split into
//! a cross-track part (along the commanded path normal) and an along-track
//! part (along its tangent).

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dance::{interpolate, TrajectoryPlan, Waypoint};

pub const DEFAULT_PX_PER_MM: f64 = 5.48;
pub const DEFAULT_PHASE_SAMPLES: usize = 500;
/// Tangent length (mm per phase step) below which a phase is degenerate.
const MIN_TANGENT: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("run has {0} samples; at least 2 are required")]
    TooFewSamples(usize),
    #[error("phase grids differ: {0} vs {1} samples")]
    GridMismatch(usize, usize),
    #[error("calibration factor must be positive, got {0}")]
    InvalidCalibration(f64),
    #[error("track timestamps must be strictly increasing (at t={0})")]
    NonMonotonicTime(f64),
    #[error("cycle window [{0}, {1}] is empty or outside the run")]
    InvalidWindow(f64, f64),
    #[error("commanded path is stationary at every phase")]
    DegenerateTangent,
    #[error("track file: {0}")]
    Format(String),
}

impl MetricsError {
    pub fn name(&self) -> &'static str {
        match self {
            MetricsError::TooFewSamples(_) => "TooFewSamples",
            MetricsError::GridMismatch(..) => "GridMismatch",
            MetricsError::InvalidCalibration(_) => "InvalidCalibration",
            MetricsError::NonMonotonicTime(_) => "NonMonotonicTime",
            MetricsError::InvalidWindow(..) => "InvalidWindow",
            MetricsError::DegenerateTangent => "DegenerateTangent",
            MetricsError::Format(_) => "TrackFormat",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    pub px_per_mm: f64,
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        CalibrationSpec { px_per_mm: DEFAULT_PX_PER_MM }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelSample {
    #[serde(rename = "t_s")]
    pub t: f64,
    #[serde(rename = "u_px")]
    pub u: f64,
    #[serde(rename = "v_px")]
    pub v: f64,
}

/// A point track in image space.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackedRun {
    pub samples: Vec<PixelSample>,
}

/// A track in physical units, not yet normalised.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRun {
    pub samples: Vec<Waypoint>,
}

/// Positions on a uniform phase grid `k / n`, `k = 0..n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedRun {
    pub points: Vec<[f64; 2]>,
}

impl NormalizedRun {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn phase(&self, k: usize) -> f64 {
        k as f64 / self.points.len() as f64
    }
}

/// Commanded path on the phase grid, including the closing point at phase 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandedPath {
    pub points: Vec<[f64; 2]>,
    pub end: [f64; 2],
}

impl CommandedPath {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_closed(&self) -> bool {
        let a = self.points[0];
        (a[0] - self.end[0]).hypot(a[1] - self.end[1]) <= 1e-6
    }

    /// Central-difference tangent at phase index `k`. Closed paths wrap; open
    /// paths fall back to one-sided differences at the start.
    fn tangent(&self, k: usize) -> [f64; 2] {
        let n = self.points.len();
        let next = if k + 1 < n { self.points[k + 1] } else { self.end };
        let prev = if k > 0 {
            Some(self.points[k - 1])
        } else if self.is_closed() && n > 1 {
            Some(self.points[n - 1])
        } else {
            None
        };
        match prev {
            Some(p) => [0.5 * (next[0] - p[0]), 0.5 * (next[1] - p[1])],
            None => [next[0] - self.points[k][0], next[1] - self.points[k][1]],
        }
    }
}

impl TrackedRun {
    pub fn from_mm(run: &MetricRun, cal: CalibrationSpec) -> Self {
        TrackedRun {
            samples: run
                .samples
                .iter()
                .map(|w| PixelSample { t: w.t, u: w.x * cal.px_per_mm, v: w.y * cal.px_per_mm })
                .collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t_s,u_px,v_px")?;
        for s in &self.samples {
            writeln!(out, "{:.6},{:.6},{:.6}", s.t, s.u, s.v)?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, MetricsError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let mut samples = Vec::new();
        for row in reader.deserialize::<PixelSample>() {
            samples.push(row.map_err(|e| MetricsError::Format(e.to_string()))?);
        }
        Ok(TrackedRun { samples })
    }
}

/// Pixel to millimetre conversion.
pub fn calibrate(run: &TrackedRun, cal: CalibrationSpec) -> Result<MetricRun, MetricsError> {
    if !(cal.px_per_mm > 0.0) {
        return Err(MetricsError::InvalidCalibration(cal.px_per_mm));
    }
    Ok(MetricRun {
        samples: run
            .samples
            .iter()
            .map(|s| Waypoint { t: s.t, x: s.u / cal.px_per_mm, y: s.v / cal.px_per_mm })
            .collect(),
    })
}

/// Resamples one cycle of `run` onto `n` phases by linear interpolation.
///
/// `window` gives the cycle's `[t_start, t_end)`; without it the cycle spans
/// the first to the last sample.
pub fn normalize_cycle(run: &MetricRun, n: usize, window: Option<(f64, f64)>) -> Result<NormalizedRun, MetricsError> {
    let s = &run.samples;
    if s.len() < 2 {
        return Err(MetricsError::TooFewSamples(s.len()));
    }
    if n < 2 {
        return Err(MetricsError::TooFewSamples(n));
    }
    for w in s.windows(2) {
        if !(w[1].t > w[0].t) {
            return Err(MetricsError::NonMonotonicTime(w[1].t));
        }
    }
    let (t0, t1) = window.unwrap_or((s[0].t, s[s.len() - 1].t));
    let tol = 1e-9 * (1.0 + t1.abs());
    if !(t1 > t0) || t0 < s[0].t - tol || t1 > s[s.len() - 1].t + tol {
        return Err(MetricsError::InvalidWindow(t0, t1));
    }
    let span = t1 - t0;
    let points = (0..n).map(|k| interpolate(s, t0 + span * (k as f64 / n as f64)).unwrap()).collect();
    Ok(NormalizedRun { points })
}

/// Commanded path for one cycle of `plan`, sampled on `n` phases.
pub fn commanded_cycle(plan: &TrajectoryPlan, cycle: Option<usize>, n: usize) -> Result<CommandedPath, MetricsError> {
    if plan.waypoints.len() < 2 {
        return Err(MetricsError::TooFewSamples(plan.waypoints.len()));
    }
    let (t0, t1) = match cycle {
        Some(k) => plan.cycle_window(k).ok_or(MetricsError::InvalidWindow(k as f64, k as f64))?,
        None => (plan.start_time(), plan.start_time() + plan.duration()),
    };
    commanded_window(&plan.waypoints, t0, t1, n)
}

pub fn commanded_window(waypoints: &[Waypoint], t0: f64, t1: f64, n: usize) -> Result<CommandedPath, MetricsError> {
    if !(t1 > t0) {
        return Err(MetricsError::InvalidWindow(t0, t1));
    }
    if n < 2 {
        return Err(MetricsError::TooFewSamples(n));
    }
    let span = t1 - t0;
    let points = (0..n).map(|k| interpolate(waypoints, t0 + span * (k as f64 / n as f64)).unwrap()).collect();
    Ok(CommandedPath { points, end: interpolate(waypoints, t1).unwrap() })
}

/// How a measured sample is paired with the commanded path.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matching {
    /// Same phase index.
    #[default]
    Phase,
    /// Cross-track from the closest point on the commanded polyline;
    /// along-track stays phase-matched.
    NearestPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseError {
    pub phase: f64,
    pub cte: f64,
    pub ate: f64,
    pub euclid: f64,
}

/// Per-phase errors for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunErrors {
    pub phases: Vec<PhaseError>,
    /// Phase indices dropped because the commanded tangent vanished.
    pub excluded: Vec<usize>,
    pub grid: usize,
}

pub fn decompose_errors(
    measured: &NormalizedRun,
    commanded: &CommandedPath,
    matching: Matching,
) -> Result<RunErrors, MetricsError> {
    if measured.len() != commanded.len() {
        return Err(MetricsError::GridMismatch(measured.len(), commanded.len()));
    }
    let n = measured.len();
    let mut phases = Vec::with_capacity(n);
    let mut excluded = Vec::new();
    for k in 0..n {
        let tg = commanded.tangent(k);
        let norm = tg[0].hypot(tg[1]);
        if norm < MIN_TANGENT {
            excluded.push(k);
            continue;
        }
        let t = [tg[0] / norm, tg[1] / norm];
        let normal = [-t[1], t[0]];
        let m = measured.points[k];
        let c = commanded.points[k];
        let e = [m[0] - c[0], m[1] - c[1]];
        let ate = e[0] * t[0] + e[1] * t[1];
        let (cte, euclid) = match matching {
            Matching::Phase => (e[0] * normal[0] + e[1] * normal[1], e[0].hypot(e[1])),
            Matching::NearestPoint => {
                let cte = nearest_signed_distance(commanded, m);
                (cte, cte.hypot(ate))
            }
        };
        phases.push(PhaseError { phase: measured.phase(k), cte, ate, euclid });
    }
    if phases.is_empty() {
        return Err(MetricsError::DegenerateTangent);
    }
    Ok(RunErrors { phases, excluded, grid: n })
}

/// Signed distance from `p` to the commanded polyline; positive on the left.
fn nearest_signed_distance(path: &CommandedPath, p: [f64; 2]) -> f64 {
    let mut best = f64::INFINITY;
    let mut signed = 0.0;
    let n = path.points.len();
    for i in 0..n {
        let a = path.points[i];
        let b = if i + 1 < n { path.points[i + 1] } else { path.end };
        let d = [b[0] - a[0], b[1] - a[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        let f = if len2 > 0.0 { (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let q = [a[0] + f * d[0], a[1] + f * d[1]];
        let r = [p[0] - q[0], p[1] - q[1]];
        let dist = r[0].hypot(r[1]);
        if dist < best {
            best = dist;
            let cross = d[0] * r[1] - d[1] * r[0];
            signed = if cross < 0.0 { -dist } else { dist };
        }
    }
    signed
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub cte_rms: f64,
    pub cte_max: f64,
    pub ate_rms: f64,
    pub ate_max: f64,
    pub euclid_rms: f64,
    pub euclid_max: f64,
    pub runs: usize,
    pub samples: usize,
    pub excluded_phases: usize,
    /// Per-phase RMS across runs.
    pub per_phase_errors: Vec<PhaseError>,
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v * v, c + 1));
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).sqrt()
    }
}

fn max_abs(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(0.0, |m: f64, v| m.max(v.abs()))
}

impl ErrorReport {
    /// Pools per-phase errors from all runs into one set of statistics.
    pub fn pool(runs: &[RunErrors]) -> Result<Self, MetricsError> {
        let first = runs.first().ok_or(MetricsError::TooFewSamples(0))?;
        if let Some(r) = runs.iter().find(|r| r.grid != first.grid) {
            return Err(MetricsError::GridMismatch(first.grid, r.grid));
        }
        let all = || runs.iter().flat_map(|r| r.phases.iter());
        let mut per_phase = Vec::new();
        // phases line up across runs only when the same indices were excluded
        if runs.iter().all(|r| r.excluded == first.excluded) {
            for (i, p) in first.phases.iter().enumerate() {
                let col = || runs.iter().map(move |r| r.phases[i]);
                per_phase.push(PhaseError {
                    phase: p.phase,
                    cte: rms(col().map(|e| e.cte)),
                    ate: rms(col().map(|e| e.ate)),
                    euclid: rms(col().map(|e| e.euclid)),
                });
            }
        }
        Ok(ErrorReport {
            cte_rms: rms(all().map(|e| e.cte)),
            cte_max: max_abs(all().map(|e| e.cte)),
            ate_rms: rms(all().map(|e| e.ate)),
            ate_max: max_abs(all().map(|e| e.ate)),
            euclid_rms: rms(all().map(|e| e.euclid)),
            euclid_max: max_abs(all().map(|e| e.euclid)),
            runs: runs.len(),
            samples: all().count(),
            excluded_phases: runs.iter().map(|r| r.excluded.len()).sum(),
            per_phase_errors: per_phase,
        })
    }

    pub fn write_phase_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "phase,cte_mm,ate_mm,euclid_mm")?;
        for p in &self.per_phase_errors {
            writeln!(out, "{:.6},{:.6},{:.6},{:.6}", p.phase, p.cte, p.ate, p.euclid)?;
        }
        Ok(())
    }
}

/// Per-phase mean path and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanPath {
    pub mean: Vec<[f64; 2]>,
    pub sd: Vec<[f64; 2]>,
}

pub fn average_runs(runs: &[NormalizedRun]) -> Result<MeanPath, MetricsError> {
    let first = runs.first().ok_or(MetricsError::TooFewSamples(0))?;
    let n = first.len();
    if let Some(r) = runs.iter().find(|r| r.len() != n) {
        return Err(MetricsError::GridMismatch(n, r.len()));
    }
    let count = runs.len() as f64;
    let mut mean = Vec::with_capacity(n);
    let mut sd = Vec::with_capacity(n);
    for k in 0..n {
        let mut m = [0.0; 2];
        for r in runs {
            m[0] += r.points[k][0];
            m[1] += r.points[k][1];
        }
        m = [m[0] / count, m[1] / count];
        let mut v = [0.0; 2];
        for r in runs {
            v[0] += (r.points[k][0] - m[0]).powi(2);
            v[1] += (r.points[k][1] - m[1]).powi(2);
        }
        mean.push(m);
        sd.push([(v[0] / count).sqrt(), (v[1] / count).sqrt()]);
    }
    Ok(MeanPath { mean, sd })
}

/// Full pipeline for runs that each cover one execution of `commanded`.
pub fn analyze_runs(
    runs: &[TrackedRun],
    plan: &TrajectoryPlan,
    cal: CalibrationSpec,
    n: usize,
    matching: Matching,
) -> Result<(ErrorReport, MeanPath), MetricsError> {
    let commanded = commanded_cycle(plan, None, n)?;
    let mut normalized = Vec::with_capacity(runs.len());
    let mut errors = Vec::with_capacity(runs.len());
    for run in runs {
        let mm = calibrate(run, cal)?;
        let norm = normalize_cycle(&mm, n, None)?;
        errors.push(decompose_errors(&norm, &commanded, matching)?);
        normalized.push(norm);
    }
    Ok((ErrorReport::pool(&errors)?, average_runs(&normalized)?))
}
