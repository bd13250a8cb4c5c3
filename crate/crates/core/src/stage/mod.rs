//! Deterministic two-axis stepper stage.
//!
//! Time advances in whole ticks and is stored as a tick count, so
//! `t = ticks * tick_s` is reproduced exactly on every run. At rest each axis
//! sits on an integer step count; while moving, positions follow the planned
//! profile in continuous millimetres. All arithmetic is plain IEEE-754 `f64`
//! without fused operations, so logs are bit-identical for identical inputs.

mod follow;
mod profile;

pub use follow::{SmoothedPath, TimingLimit, TimingWarning};
pub use profile::{min_move_duration, plan_move, MotionProfile};

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dance::TrajectoryPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub const BOTH: [Axis; 2] = [Axis::X, Axis::Y];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "X",
            Axis::Y => "Y",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StageError {
    #[error("{axis} target {position} mm outside travel [{min}, {max}]")]
    OutOfTravel { axis: Axis, position: f64, min: f64, max: f64 },
    #[error("invalid axis config: {0}")]
    InvalidConfig(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("stage is busy")]
    Busy,
}

impl StageError {
    pub fn name(&self) -> &'static str {
        match self {
            StageError::OutOfTravel { .. } => "OutOfTravel",
            StageError::InvalidConfig(_) => "InvalidConfig",
            StageError::InvalidPlan(_) => "InvalidPlan",
            StageError::Busy => "Busy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AxisConfig {
    pub steps_per_mm: f64,
    pub v_max: f64,
    pub a_max: f64,
    pub travel_min: f64,
    pub travel_max: f64,
}

impl Default for AxisConfig {
    fn default() -> Self {
        AxisConfig { steps_per_mm: 80.0, v_max: 50.0, a_max: 200.0, travel_min: 0.0, travel_max: 350.0 }
    }
}

impl AxisConfig {
    pub fn validate(&self) -> Result<(), StageError> {
        let bad = |msg: &str| Err(StageError::InvalidConfig(msg.to_string()));
        if !(self.steps_per_mm > 0.0) {
            return bad("steps_per_mm must be positive");
        }
        if !(self.v_max > 0.0) || !(self.a_max > 0.0) {
            return bad("v_max and a_max must be positive");
        }
        if !(self.travel_min < self.travel_max) {
            return bad("travel_min must be below travel_max");
        }
        for limit in [self.travel_min, self.travel_max] {
            let steps = limit * self.steps_per_mm;
            if (steps - steps.round()).abs() > 1e-6 {
                return bad("travel limits must lie on the step grid");
            }
        }
        Ok(())
    }

    pub fn step_pitch(&self) -> f64 {
        1.0 / self.steps_per_mm
    }

    pub fn to_steps(&self, mm: f64) -> i64 {
        (mm * self.steps_per_mm).round() as i64
    }

    pub fn to_mm(&self, steps: i64) -> f64 {
        steps as f64 / self.steps_per_mm
    }

    pub fn quantize(&self, mm: f64) -> f64 {
        self.to_mm(self.to_steps(mm))
    }

    pub fn check_travel(&self, axis: Axis, position: f64) -> Result<(), StageError> {
        if position < self.travel_min || position > self.travel_max || !position.is_finite() {
            return Err(StageError::OutOfTravel { axis, position, min: self.travel_min, max: self.travel_max });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageConfig {
    pub x: AxisConfig,
    pub y: AxisConfig,
    pub tick_s: f64,
    /// Pose at power-up.
    pub home: [f64; 2],
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            x: AxisConfig::default(),
            y: AxisConfig { travel_max: 200.0, ..AxisConfig::default() },
            tick_s: 0.001,
            home: [175.0, 100.0],
        }
    }
}

impl StageConfig {
    pub fn axis(&self, axis: Axis) -> &AxisConfig {
        match axis {
            Axis::X => &self.x,
            Axis::Y => &self.y,
        }
    }

    pub fn validate(&self) -> Result<(), StageError> {
        self.x.validate()?;
        self.y.validate()?;
        if !(self.tick_s > 0.0) {
            return Err(StageError::InvalidConfig("tick_s must be positive".into()));
        }
        for axis in Axis::BOTH {
            self.axis(axis).check_travel(axis, self.home[axis.index()])?;
        }
        Ok(())
    }

    pub fn check_point(&self, x: f64, y: f64) -> Result<(), StageError> {
        self.x.check_travel(Axis::X, x)?;
        self.y.check_travel(Axis::Y, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StagePose {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndstopEvent {
    pub axis: Axis,
    pub position: f64,
    pub t: f64,
}

/// Result of a single tick.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub pose: StagePose,
    pub endstops: Vec<EndstopEvent>,
    /// A motion finished (or was halted) during this tick.
    pub finished: bool,
}

/// Timing summary for a started path-following motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowReport {
    pub warnings: Vec<TimingWarning>,
    /// Executed time at which the plan's first timestamp is reached.
    pub lead_s: f64,
    /// Total executed duration including lead-in and lead-out.
    pub duration_s: f64,
    /// Retimed plan duration.
    pub plan_duration_s: f64,
    /// Stage time at which the motion started.
    pub start_t: f64,
    /// Waypoint times after retiming, relative to the first waypoint.
    #[serde(skip)]
    pub retimed_times: Vec<f64>,
}

impl FollowReport {
    /// Stage time at which plan time `t` (of a plan starting at `t0`) is
    /// executed, accounting for any retiming.
    pub fn stage_time(&self, plan_times: &[f64], t: f64) -> f64 {
        let t0 = plan_times[0];
        let n = plan_times.len().min(self.retimed_times.len());
        let rel = if n < 2 {
            t - t0
        } else {
            let i = plan_times[..n].partition_point(|&p| p <= t).clamp(1, n - 1);
            let (a, b) = (plan_times[i - 1], plan_times[i]);
            let (ra, rb) = (self.retimed_times[i - 1], self.retimed_times[i]);
            ra + (t - a) / (b - a) * (rb - ra)
        };
        self.start_t + self.lead_s + rel
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FollowLog {
    pub poses: Vec<StagePose>,
    pub endstops: Vec<EndstopEvent>,
    /// `None` for an empty plan.
    pub report: Option<FollowReport>,
}

#[derive(Debug, Clone)]
enum Motion {
    Idle,
    Move { start_tick: u64, axes: [Option<(MotionProfile, i64)>; 2] },
    Follow { start_tick: u64, path: Box<SmoothedPath>, offset: [f64; 2], end_steps: [i64; 2] },
}

#[derive(Debug, Clone)]
pub struct Stage {
    cfg: StageConfig,
    ticks: u64,
    pos: [f64; 2],
    prev: [f64; 2],
    motion: Motion,
}

impl Stage {
    pub fn new(cfg: StageConfig) -> Result<Self, StageError> {
        cfg.validate()?;
        let pos = [cfg.x.quantize(cfg.home[0]), cfg.y.quantize(cfg.home[1])];
        Ok(Stage { cfg, ticks: 0, pos, prev: pos, motion: Motion::Idle })
    }

    pub fn config(&self) -> &StageConfig {
        &self.cfg
    }

    pub fn time(&self) -> f64 {
        self.ticks as f64 * self.cfg.tick_s
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn pose(&self) -> StagePose {
        StagePose { t: self.time(), x: self.pos[0], y: self.pos[1] }
    }

    pub fn is_idle(&self) -> bool {
        matches!(self.motion, Motion::Idle)
    }

    /// Per-axis velocity over the last tick.
    pub fn velocity(&self) -> [f64; 2] {
        [(self.pos[0] - self.prev[0]) / self.cfg.tick_s, (self.pos[1] - self.prev[1]) / self.cfg.tick_s]
    }

    /// Current position in whole steps, rounded.
    pub fn steps(&self) -> [i64; 2] {
        [self.cfg.x.to_steps(self.pos[0]), self.cfg.y.to_steps(self.pos[1])]
    }

    /// Checked point-to-point move; returns the planned duration.
    pub fn move_to(&mut self, x: f64, y: f64) -> Result<f64, StageError> {
        self.cfg.check_point(x, y)?;
        self.move_to_unchecked(x, y)
    }

    /// Point-to-point move without soft-limit checks; the end-stops still
    /// apply. Axes are time-synchronised: the shorter move is slowed to the
    /// duration of the longer one.
    pub fn move_to_unchecked(&mut self, x: f64, y: f64) -> Result<f64, StageError> {
        if !self.is_idle() {
            return Err(StageError::Busy);
        }
        let targets = [self.cfg.x.to_steps(x), self.cfg.y.to_steps(y)];
        let mut duration: f64 = 0.0;
        for axis in Axis::BOTH {
            let c = self.cfg.axis(axis);
            let i = axis.index();
            duration = duration.max(min_move_duration(c.to_mm(targets[i]) - self.pos[i], c.v_max, c.a_max));
        }
        let mut axes = [None, None];
        for axis in Axis::BOTH {
            let c = self.cfg.axis(axis);
            let i = axis.index();
            let end = c.to_mm(targets[i]);
            if end != self.pos[i] {
                let profile = MotionProfile::with_duration(self.pos[i], end, c.v_max, c.a_max, duration);
                axes[i] = Some((profile, targets[i]));
            }
        }
        if axes.iter().any(Option::is_some) {
            self.motion = Motion::Move { start_tick: self.ticks, axes };
        }
        Ok(duration)
    }

    /// Starts following `plan` shifted by `offset`, without soft-limit
    /// checks. The first waypoint is pinned to the current pose and the last
    /// one to the step grid.
    pub fn start_follow(&mut self, plan: &TrajectoryPlan, offset: [f64; 2]) -> Result<FollowReport, StageError> {
        if !self.is_idle() {
            return Err(StageError::Busy);
        }
        if plan.waypoints.is_empty() {
            return Err(StageError::InvalidPlan("empty plan".into()));
        }
        let times: Vec<f64> = plan.waypoints.iter().map(|w| w.t).collect();
        let n = plan.waypoints.len();
        let last = plan.waypoints[n - 1];
        let end_steps = [self.cfg.x.to_steps(last.x + offset[0]), self.cfg.y.to_steps(last.y + offset[1])];
        let end_abs = [self.cfg.x.to_mm(end_steps[0]), self.cfg.y.to_mm(end_steps[1])];
        // relative to the start pose to keep the running integral small
        let origin = self.pos;
        let mut points: Vec<[f64; 2]> =
            plan.waypoints.iter().map(|w| [w.x + offset[0] - origin[0], w.y + offset[1] - origin[1]]).collect();
        points[0] = [0.0, 0.0];
        if n > 1 {
            points[n - 1] = [end_abs[0] - origin[0], end_abs[1] - origin[1]];
        }
        let (path, warnings) = SmoothedPath::build(&times, &points, [&self.cfg.x, &self.cfg.y])?;
        let report = FollowReport {
            warnings,
            lead_s: path.lead(),
            duration_s: path.duration(),
            plan_duration_s: path.plan_duration(),
            start_t: self.time(),
            retimed_times: path.retimed().to_vec(),
        };
        if n > 1 || end_abs != self.pos {
            self.motion = Motion::Follow { start_tick: self.ticks, path: Box::new(path), offset: origin, end_steps };
        }
        Ok(report)
    }

    /// Stops all motion at the current position, snapped to the step grid.
    pub fn halt(&mut self) {
        self.motion = Motion::Idle;
        self.pos = [self.cfg.x.quantize(self.pos[0]), self.cfg.y.quantize(self.pos[1])];
    }

    /// Advances the simulation by one tick.
    pub fn step(&mut self) -> StepOutcome {
        self.prev = self.pos;
        self.ticks += 1;
        let mut finished = false;
        let tick = self.cfg.tick_s;
        match &mut self.motion {
            Motion::Idle => {}
            Motion::Move { start_tick, axes } => {
                let tau = (self.ticks - *start_tick) as f64 * tick;
                for axis in Axis::BOTH {
                    let i = axis.index();
                    if let Some((profile, target)) = axes[i] {
                        if tau >= profile.duration {
                            self.pos[i] = self.cfg.axis(axis).to_mm(target);
                            axes[i] = None;
                        } else {
                            self.pos[i] = profile.position(tau);
                        }
                    }
                }
                if axes.iter().all(Option::is_none) {
                    self.motion = Motion::Idle;
                    finished = true;
                }
            }
            Motion::Follow { start_tick, path, offset, end_steps } => {
                let tau = (self.ticks - *start_tick) as f64 * tick;
                if tau >= path.duration() {
                    self.pos = [self.cfg.x.to_mm(end_steps[0]), self.cfg.y.to_mm(end_steps[1])];
                    self.motion = Motion::Idle;
                    finished = true;
                } else {
                    let p = path.position(tau);
                    self.pos = [offset[0] + p[0], offset[1] + p[1]];
                }
            }
        }

        let t = self.time();
        let mut endstops = Vec::new();
        for axis in Axis::BOTH {
            let c = *self.cfg.axis(axis);
            let i = axis.index();
            let hit = if self.pos[i] > c.travel_max {
                Some(c.travel_max)
            } else if self.pos[i] < c.travel_min {
                Some(c.travel_min)
            } else {
                None
            };
            if let Some(limit) = hit {
                self.pos[i] = limit;
                endstops.push(EndstopEvent { axis, position: limit, t });
                match &mut self.motion {
                    Motion::Move { axes, .. } => {
                        axes[i] = None;
                        if axes.iter().all(Option::is_none) {
                            self.motion = Motion::Idle;
                        }
                    }
                    Motion::Follow { .. } => self.motion = Motion::Idle,
                    Motion::Idle => {}
                }
            }
        }
        if !endstops.is_empty() {
            if self.is_idle() {
                self.halt();
            }
            finished = true;
        }
        StepOutcome { pose: self.pose(), endstops, finished }
    }

    /// Runs ticks until the current motion completes, logging every pose.
    pub fn run_to_idle(&mut self, log: &mut Vec<StagePose>, endstops: &mut Vec<EndstopEvent>) {
        while !self.is_idle() {
            let out = self.step();
            log.push(out.pose);
            endstops.extend(out.endstops);
        }
    }

    /// Follows `plan` in absolute coordinates, returning the pose log at
    /// tick resolution. The stage first moves to the first waypoint when it
    /// is not already there.
    pub fn follow(&mut self, plan: &TrajectoryPlan) -> Result<FollowLog, StageError> {
        let mut log = FollowLog { poses: Vec::new(), endstops: Vec::new(), report: None };
        if plan.waypoints.is_empty() {
            return Ok(log);
        }
        for w in &plan.waypoints {
            self.cfg.check_point(w.x, w.y)?;
        }
        if !self.is_idle() {
            return Err(StageError::Busy);
        }
        log.poses.push(self.pose());
        let first = plan.waypoints[0];
        let half_pitch = 0.5 * self.cfg.x.step_pitch().max(self.cfg.y.step_pitch());
        if (first.x - self.pos[0]).abs() > half_pitch || (first.y - self.pos[1]).abs() > half_pitch {
            self.move_to(first.x, first.y)?;
            self.run_to_idle(&mut log.poses, &mut log.endstops);
        }
        let report = self.start_follow(plan, [0.0, 0.0])?;
        self.run_to_idle(&mut log.poses, &mut log.endstops);
        log.report = Some(report);
        Ok(log)
    }
}

/// Writes a pose log as `t_s,x_mm,y_mm` CSV.
pub fn write_pose_csv<W: Write>(mut out: W, poses: &[StagePose]) -> std::io::Result<()> {
    writeln!(out, "t_s,x_mm,y_mm")?;
    for p in poses {
        writeln!(out, "{:.6},{:.6},{:.6}", p.t, p.x, p.y)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dance::Waypoint;

    fn stage() -> Stage {
        Stage::new(StageConfig::default()).unwrap()
    }

    fn plan(points: &[(f64, f64, f64)]) -> TrajectoryPlan {
        TrajectoryPlan::from_waypoints(points.iter().map(|&(t, x, y)| Waypoint { t, x, y }).collect())
    }

    #[test]
    fn idle_step_only_advances_time() {
        let mut s = stage();
        let before = s.pose();
        let out = s.step();
        assert_eq!(out.pose.x, before.x);
        assert_eq!(out.pose.y, before.y);
        assert!((out.pose.t - 0.001).abs() < 1e-15);
        assert!(out.endstops.is_empty());
    }

    #[test]
    fn cruise_advance_per_tick() {
        let mut s = stage();
        s.move_to(175.0 - 100.0, 100.0).unwrap();
        // 100 mm at 50 mm/s cruises from 0.25 s to 2.0 s
        for _ in 0..1000 {
            s.step();
        }
        let x0 = s.pose().x;
        s.step();
        let dx = x0 - s.pose().x;
        assert!((dx - 0.05).abs() <= s.config().x.step_pitch(), "dx={dx}");
    }

    #[test]
    fn move_duration_matches_closed_form() {
        let mut s = stage();
        let planned = s.move_to(75.0, 100.0).unwrap();
        let start = s.ticks();
        let mut poses = Vec::new();
        let mut ends = Vec::new();
        s.run_to_idle(&mut poses, &mut ends);
        let simulated = (s.ticks() - start) as f64 * 0.001;
        assert!((simulated - planned).abs() <= 0.001);
        assert!((planned - 2.25).abs() < 1e-12);
        assert_eq!(s.pose().x, 75.0);
        assert_eq!(s.steps()[0], 6000);
    }

    #[test]
    fn unchecked_move_stops_at_endstop() {
        let mut s = stage();
        s.move_to_unchecked(400.0, 100.0).unwrap();
        let mut poses = Vec::new();
        let mut ends = Vec::new();
        s.run_to_idle(&mut poses, &mut ends);
        assert_eq!(ends.len(), 1);
        assert_eq!(ends[0].axis, Axis::X);
        assert_eq!(ends[0].position, 350.0);
        assert_eq!(s.pose().x, 350.0);
        assert!(poses.iter().all(|p| p.x <= 350.0));
    }

    #[test]
    fn checked_move_rejects_out_of_travel() {
        let mut s = stage();
        assert_eq!(s.move_to(400.0, 10.0).unwrap_err().name(), "OutOfTravel");
        assert!(s.is_idle());
    }

    #[test]
    fn diagonal_axes_finish_together() {
        let mut s = stage();
        s.move_to(275.0, 110.0).unwrap();
        let mut poses = Vec::new();
        let mut ends = Vec::new();
        s.run_to_idle(&mut poses, &mut ends);
        // y must still be moving until the final ticks
        let n = poses.len();
        assert!(poses[n - 3].y < 110.0);
        assert_eq!(s.pose().y, 110.0);
    }

    #[test]
    fn follow_two_waypoints() {
        let mut s = stage();
        let p = plan(&[(0.0, 175.0, 100.0), (2.0, 215.0, 100.0)]);
        let log = s.follow(&p).unwrap();
        let last = log.poses.last().unwrap();
        assert!((last.x - 215.0).abs() <= s.config().x.step_pitch());
        assert!(log.report.unwrap().warnings.is_empty());
    }

    #[test]
    fn follow_too_fast_is_retimed_to_kinematic_minimum() {
        let mut s = stage();
        // 100 mm in 0.2 s is 10x v_max
        let p = plan(&[(0.0, 175.0, 100.0), (0.2, 275.0, 100.0)]);
        let log = s.follow(&p).unwrap();
        let report = log.report.unwrap();
        assert_eq!(report.warnings.len(), 1);
        assert_eq!(report.warnings[0].limit, TimingLimit::Speed);
        let min = min_move_duration(100.0, 50.0, 200.0);
        let executed = log.poses.last().unwrap().t - log.poses[0].t;
        assert!((report.duration_s - min).abs() < 1e-12);
        assert!((executed - min).abs() <= 0.001 + 1e-12);
    }

    #[test]
    fn follow_empty_plan() {
        let mut s = stage();
        let log = s.follow(&TrajectoryPlan::default()).unwrap();
        assert!(log.poses.is_empty());
        assert!(log.report.is_none());
        assert_eq!(s.ticks(), 0);
    }

    #[test]
    fn follow_rejects_out_of_travel() {
        let mut s = stage();
        let p = plan(&[(0.0, 175.0, 100.0), (1.0, 175.0, 250.0)]);
        assert_eq!(s.follow(&p).unwrap_err().name(), "OutOfTravel");
    }

    #[test]
    fn pose_csv_format() {
        let mut out = Vec::new();
        write_pose_csv(&mut out, &[StagePose { t: 0.001, x: 1.0, y: 2.5 }]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "t_s,x_mm,y_mm\n0.001000,1.000000,2.500000\n");
    }

    #[test]
    fn config_validation() {
        let mut cfg = StageConfig::default();
        cfg.x.travel_max = 10.00001;
        assert!(Stage::new(cfg).is_err());
        let cfg = StageConfig { home: [500.0, 0.0], ..StageConfig::default() };
        assert!(Stage::new(cfg).is_err());
    }
}
