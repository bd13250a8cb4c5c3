//! Compositions used by the command line and the end-to-end checks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dance::{interpolate, TrajectoryPlan, Waypoint};
use crate::metrics::{self, ErrorReport, Matching, MeanPath, MetricRun, MetricsError, RunErrors};
use crate::stage::{FollowLog, Stage, StageConfig, StageError, StagePose};

/// Result of executing a plan on a fresh stage.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub log: FollowLog,
    /// Added to plan coordinates to get stage coordinates.
    pub offset: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub poses: usize,
    pub duration_s: f64,
    pub lead_s: f64,
    pub plan_duration_s: f64,
    pub timing_warnings: usize,
    pub endstops: usize,
    pub offset: [f64; 2],
}

impl Simulation {
    pub fn summary(&self) -> SimulationSummary {
        let r = self.log.report.as_ref();
        SimulationSummary {
            poses: self.log.poses.len(),
            duration_s: self.log.poses.last().map_or(0.0, |p| p.t) - self.log.poses.first().map_or(0.0, |p| p.t),
            lead_s: r.map_or(0.0, |r| r.lead_s),
            plan_duration_s: r.map_or(0.0, |r| r.plan_duration_s),
            timing_warnings: r.map_or(0, |r| r.warnings.len()),
            endstops: self.log.endstops.len(),
            offset: self.offset,
        }
    }
}

/// Runs `plan` from the stage's home pose (`relative`) or in absolute stage
/// coordinates.
pub fn simulate(plan: &TrajectoryPlan, cfg: StageConfig, relative: bool) -> Result<Simulation, StageError> {
    let mut stage = Stage::new(cfg)?;
    if !relative || plan.waypoints.is_empty() {
        return Ok(Simulation { log: stage.follow(plan)?, offset: [0.0, 0.0] });
    }
    let home = stage.pose();
    let first = plan.waypoints[0];
    let offset = [home.x - first.x, home.y - first.y];
    for w in &plan.waypoints {
        cfg.check_point(w.x + offset[0], w.y + offset[1])?;
    }
    let mut log = FollowLog { poses: vec![home], endstops: Vec::new(), report: None };
    let report = stage.start_follow(plan, offset)?;
    stage.run_to_idle(&mut log.poses, &mut log.endstops);
    log.report = Some(report);
    Ok(Simulation { log, offset })
}

fn pose_at(poses: &[StagePose], t: f64) -> [f64; 2] {
    let i = poses.partition_point(|p| p.t <= t).clamp(1, poses.len() - 1);
    let (a, b) = (poses[i - 1], poses[i]);
    let f = if b.t > a.t { ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0) } else { 0.0 };
    [a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)]
}

/// Splits the executed pose log into one track per plan cycle, expressed in
/// plan coordinates and plan time. Cycle ends are interpolated so each track
/// spans its cycle exactly. Optional isotropic Gaussian noise (mm) is added
/// to every sample.
pub fn cycle_tracks(plan: &TrajectoryPlan, sim: &Simulation, noise_mm: f64, seed: u64) -> Vec<MetricRun> {
    let Some(report) = sim.log.report.as_ref() else {
        return Vec::new();
    };
    let times: Vec<f64> = plan.waypoints.iter().map(|w| w.t).collect();
    let poses = &sim.log.poses;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_mm.max(0.0)).unwrap();
    let mut jitter = |p: [f64; 2]| -> [f64; 2] {
        if noise_mm > 0.0 {
            [p[0] + noise.sample(&mut rng), p[1] + noise.sample(&mut rng)]
        } else {
            p
        }
    };
    let mut runs = Vec::new();
    for k in 0..plan.cycles() {
        let (ta, tb) = plan.cycle_window(k).unwrap();
        let (sa, sb) = (report.stage_time(&times, ta), report.stage_time(&times, tb));
        // map stage time back to plan time linearly within the cycle
        let to_plan = |t: f64| ta + (t - sa) / (sb - sa) * (tb - ta);
        let mut samples = Vec::new();
        let mut push = |t: f64, p: [f64; 2]| {
            let q = jitter([p[0] - sim.offset[0], p[1] - sim.offset[1]]);
            samples.push(Waypoint { t: to_plan(t), x: q[0], y: q[1] });
        };
        push(sa, pose_at(poses, sa));
        for p in poses.iter().filter(|p| p.t > sa + 1e-9 && p.t < sb - 1e-9) {
            push(p.t, [p.x, p.y]);
        }
        push(sb, pose_at(poses, sb));
        runs.push(MetricRun { samples });
    }
    runs
}

/// Plan cycle whose window contains the midpoint of `run`.
pub fn matching_cycle(plan: &TrajectoryPlan, run: &MetricRun) -> Option<usize> {
    let s = &run.samples;
    let mid = 0.5 * (s.first()?.t + s.last()?.t);
    (0..plan.cycles()).find(|&k| {
        let (a, b) = plan.cycle_window(k).unwrap();
        mid >= a && mid <= b
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleAnalysis {
    pub report: ErrorReport,
    pub mean_path: MeanPath,
    pub cycles: Vec<usize>,
}

/// Scores each run against its plan cycle (by time, or `cycle` when given).
pub fn analyze_cycles(
    runs: &[MetricRun],
    plan: &TrajectoryPlan,
    n: usize,
    matching: Matching,
    cycle: Option<usize>,
) -> Result<CycleAnalysis, MetricsError> {
    let mut errors: Vec<RunErrors> = Vec::new();
    let mut normalized = Vec::new();
    let mut cycles = Vec::new();
    for run in runs {
        let k = cycle.or_else(|| matching_cycle(plan, run)).unwrap_or(0);
        let commanded = if plan.cycles() > 0 {
            metrics::commanded_cycle(plan, Some(k), n)?
        } else {
            metrics::commanded_cycle(plan, None, n)?
        };
        let norm = metrics::normalize_cycle(run, n, None)?;
        errors.push(metrics::decompose_errors(&norm, &commanded, matching)?);
        normalized.push(norm);
        cycles.push(k);
    }
    Ok(CycleAnalysis { report: ErrorReport::pool(&errors)?, mean_path: metrics::average_runs(&normalized)?, cycles })
}

/// Straight-segment track with lateral Gaussian noise, for checking the
/// error statistics against a known noise level.
pub fn noisy_straight_runs(
    length_mm: f64,
    duration_s: f64,
    samples: usize,
    runs: usize,
    sigma_mm: f64,
    seed: u64,
) -> (TrajectoryPlan, Vec<MetricRun>) {
    let plan = TrajectoryPlan::from_waypoints(vec![
        Waypoint { t: 0.0, x: 0.0, y: 0.0 },
        Waypoint { t: duration_s, x: 0.0, y: length_mm },
    ]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma_mm).unwrap();
    let out = (0..runs)
        .map(|_| MetricRun {
            samples: (0..=samples)
                .map(|i| {
                    let t = duration_s * i as f64 / samples as f64;
                    let p = interpolate(&plan.waypoints, t).unwrap();
                    Waypoint { t, x: p[0] + noise.sample(&mut rng), y: p[1] }
                })
                .collect(),
        })
        .collect();
    (plan, out)
}
