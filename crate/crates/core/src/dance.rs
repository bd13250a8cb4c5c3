//! Waggle-dance trajectory generation.
//!
//! One dance cycle is a straight waggle run followed by a return loop made of
//! two semicircular turns of radius `loop_radius` joined by a straight leg
//! parallel to the run. Successive cycles loop on alternating sides of the
//! run, tracing the figure-eight. The path is tangent-continuous everywhere.
//!
//! Orientation is a heading in degrees measured clockwise from the stage `+y`
//! axis; orientation 0 runs from the origin towards `+y`, with the first loop
//! on the `+x` side.

use std::f64::consts::PI;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum number of waypoints per cycle.
pub const SAMPLES_PER_CYCLE: usize = 200;
/// Waypoints per lateral oscillation period along the run.
const SAMPLES_PER_WAG: f64 = 16.0;
/// Fraction of the run over which the lateral oscillation fades in and out.
const WAG_TAPER: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DanceError {
    #[error("loop radius {loop_radius} mm cannot close the path around a {lateral_amplitude} mm lateral oscillation")]
    DegenerateGeometry { loop_radius: f64, lateral_amplitude: f64 },
    #[error("invalid dance parameter {name} = {value}")]
    InvalidParams { name: &'static str, value: f64 },
    #[error("plan file: {0}")]
    Format(String),
}

impl DanceError {
    pub fn name(&self) -> &'static str {
        match self {
            DanceError::DegenerateGeometry { .. } => "DegenerateGeometry",
            DanceError::InvalidParams { .. } => "InvalidParams",
            DanceError::Format(_) => "PlanFormat",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    #[serde(rename = "t_s")]
    pub t: f64,
    #[serde(rename = "x_mm")]
    pub x: f64,
    #[serde(rename = "y_mm")]
    pub y: f64,
}

/// Timed waypoint sequence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPlan {
    pub waypoints: Vec<Waypoint>,
    /// Waypoint indices where each cycle starts, followed by the index of
    /// the final waypoint. Cycle `k` spans `cycle_marks[k]..=cycle_marks[k+1]`.
    #[serde(default)]
    pub cycle_marks: Vec<usize>,
    /// `[start, end]` times of each waggle run.
    #[serde(default)]
    pub waggle_runs: Vec<[f64; 2]>,
}

impl TrajectoryPlan {
    /// Plan treating the whole waypoint list as a single cycle.
    pub fn from_waypoints(waypoints: Vec<Waypoint>) -> Self {
        let cycle_marks = if waypoints.len() >= 2 { vec![0, waypoints.len() - 1] } else { Vec::new() };
        TrajectoryPlan { waypoints, cycle_marks, waggle_runs: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn start_time(&self) -> f64 {
        self.waypoints.first().map_or(0.0, |w| w.t)
    }

    pub fn duration(&self) -> f64 {
        match (self.waypoints.first(), self.waypoints.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    pub fn cycles(&self) -> usize {
        self.cycle_marks.len().saturating_sub(1)
    }

    /// `(t_start, t_end)` of cycle `k`.
    pub fn cycle_window(&self, k: usize) -> Option<(f64, f64)> {
        let a = *self.cycle_marks.get(k)?;
        let b = *self.cycle_marks.get(k + 1)?;
        Some((self.waypoints[a].t, self.waypoints[b].t))
    }

    pub fn cycle_waypoints(&self, k: usize) -> Option<&[Waypoint]> {
        let a = *self.cycle_marks.get(k)?;
        let b = *self.cycle_marks.get(k + 1)?;
        self.waypoints.get(a..=b)
    }

    /// Position at time `t`, linearly interpolated and clamped to the ends.
    pub fn position_at(&self, t: f64) -> Option<[f64; 2]> {
        interpolate(&self.waypoints, t)
    }

    pub fn arc_length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y)).sum()
    }

    /// Copy shifted by `(dx, dy)` in space and `dt` in time.
    pub fn translated(&self, dx: f64, dy: f64, dt: f64) -> Self {
        TrajectoryPlan {
            waypoints: self.waypoints.iter().map(|w| Waypoint { t: w.t + dt, x: w.x + dx, y: w.y + dy }).collect(),
            cycle_marks: self.cycle_marks.clone(),
            waggle_runs: self.waggle_runs.iter().map(|r| [r[0] + dt, r[1] + dt]).collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t_s,x_mm,y_mm")?;
        for w in &self.waypoints {
            writeln!(out, "{},{},{}", w.t, w.x, w.y)?;
        }
        Ok(())
    }

    /// Reads a `t_s,x_mm,y_mm` CSV. The result is a single-cycle plan.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, DanceError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let mut waypoints = Vec::new();
        for row in reader.deserialize::<Waypoint>() {
            waypoints.push(row.map_err(|e| DanceError::Format(e.to_string()))?);
        }
        for w in waypoints.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(DanceError::Format(format!("t_s not strictly increasing at {}", w[1].t)));
            }
        }
        Ok(TrajectoryPlan::from_waypoints(waypoints))
    }
}

/// Linear interpolation over timed waypoints, clamped outside the range.
pub fn interpolate(waypoints: &[Waypoint], t: f64) -> Option<[f64; 2]> {
    let first = waypoints.first()?;
    let last = waypoints.last()?;
    if t <= first.t {
        return Some([first.x, first.y]);
    }
    if t >= last.t {
        return Some([last.x, last.y]);
    }
    let i = waypoints.partition_point(|w| w.t <= t) - 1;
    let (a, b) = (waypoints[i], waypoints[i + 1]);
    let f = (t - a.t) / (b.t - a.t);
    Some([a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DanceParams {
    pub run_length: f64,
    /// Degrees clockwise from `+y`.
    pub orientation: f64,
    pub cycles: usize,
    pub run_speed: f64,
    /// Speed along the return loop; defaults to `run_speed`.
    pub return_speed: Option<f64>,
    pub lateral_amplitude: f64,
    pub lateral_freq: f64,
    pub loop_radius: f64,
    pub origin: [f64; 2],
}

impl Default for DanceParams {
    fn default() -> Self {
        DanceParams {
            run_length: 20.0,
            orientation: 0.0,
            cycles: 1,
            run_speed: 10.0,
            return_speed: None,
            lateral_amplitude: 0.0,
            lateral_freq: 13.0,
            loop_radius: 5.0,
            origin: [0.0, 0.0],
        }
    }
}

impl DanceParams {
    pub fn validate(&self) -> Result<(), DanceError> {
        let check = |name: &'static str, value: f64, ok: bool| {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(DanceError::InvalidParams { name, value })
            }
        };
        check("run_length", self.run_length, self.run_length > 0.0)?;
        check("cycles", self.cycles as f64, self.cycles >= 1)?;
        check("run_speed", self.run_speed, self.run_speed > 0.0)?;
        let ret = self.return_speed();
        check("return_speed", ret, ret > 0.0)?;
        check("lateral_amplitude", self.lateral_amplitude, self.lateral_amplitude >= 0.0)?;
        check("lateral_freq", self.lateral_freq, self.lateral_freq >= 0.0)?;
        check("orientation", self.orientation, true)?;
        if !(self.loop_radius > self.lateral_amplitude) || !(self.loop_radius > 0.0) {
            return Err(DanceError::DegenerateGeometry {
                loop_radius: self.loop_radius,
                lateral_amplitude: self.lateral_amplitude,
            });
        }
        Ok(())
    }

    pub fn return_speed(&self) -> f64 {
        self.return_speed.unwrap_or(self.run_speed)
    }

    pub fn run_duration(&self) -> f64 {
        self.run_length / self.run_speed
    }

    pub fn cycle_duration(&self) -> f64 {
        self.run_duration() + (2.0 * PI * self.loop_radius + self.run_length) / self.return_speed()
    }

    fn wagging(&self) -> bool {
        self.lateral_amplitude > 0.0 && self.lateral_freq > 0.0
    }
}

/// Smooth fade used at both ends of the lateral oscillation.
fn taper(u: f64) -> f64 {
    if u < WAG_TAPER {
        0.5 - 0.5 * (PI * u / WAG_TAPER).cos()
    } else if u > 1.0 - WAG_TAPER {
        0.5 - 0.5 * (PI * (1.0 - u) / WAG_TAPER).cos()
    } else {
        1.0
    }
}

/// Cycle-local position at time `tau` after the cycle start, in the
/// unrotated frame. `side` is `+1` for a loop on `+x`, `-1` for `-x`.
fn local_point(p: &DanceParams, side: f64, tau: f64) -> [f64; 2] {
    let l = p.run_length;
    let rho = p.loop_radius;
    let t_run = p.run_duration();
    let v_ret = p.return_speed();
    let t_turn = PI * rho / v_ret;
    let t_leg = l / v_ret;
    if tau <= t_run {
        let lateral = if p.wagging() {
            p.lateral_amplitude * taper(tau / t_run) * (2.0 * PI * p.lateral_freq * tau).sin()
        } else {
            0.0
        };
        return [lateral, (p.run_speed * tau).min(l)];
    }
    let tau = tau - t_run;
    if tau <= t_turn {
        let phi = PI * tau / t_turn;
        return [side * rho * (1.0 - phi.cos()), l + rho * phi.sin()];
    }
    let tau = tau - t_turn;
    if tau <= t_leg {
        return [2.0 * side * rho, l - (v_ret * tau).min(l)];
    }
    let tau = (tau - t_leg).min(t_turn);
    let phi = PI * tau / t_turn;
    [side * rho * (1.0 + phi.cos()), -rho * phi.sin()]
}

fn rotate(p: [f64; 2], heading_deg: f64) -> [f64; 2] {
    let (s, c) = heading_deg.to_radians().sin_cos();
    [p[0] * c + p[1] * s, -p[0] * s + p[1] * c]
}

/// Generates the timed waypoint plan for `params`.
pub fn generate(params: &DanceParams) -> Result<TrajectoryPlan, DanceError> {
    params.validate()?;
    let v_ret = params.return_speed();
    let t_run = params.run_duration();
    let t_turn = PI * params.loop_radius / v_ret;
    let t_leg = params.run_length / v_ret;
    let cycle = params.cycle_duration();

    let mut dt = cycle / SAMPLES_PER_CYCLE as f64;
    if params.wagging() {
        dt = dt.min(1.0 / (SAMPLES_PER_WAG * params.lateral_freq));
    }
    let pieces = [t_run, t_turn, t_leg, t_turn];
    // piece-local sample times, start inclusive, end exclusive
    let mut local_times = Vec::new();
    let mut piece_start = 0.0;
    for &len in &pieces {
        let n = ((len / dt) - 1e-9).ceil().max(1.0) as usize;
        for i in 0..n {
            local_times.push(piece_start + len * i as f64 / n as f64);
        }
        piece_start += len;
    }

    let mut plan = TrajectoryPlan::default();
    for k in 0..params.cycles {
        let side = if k % 2 == 0 { 1.0 } else { -1.0 };
        let t0 = k as f64 * cycle;
        plan.cycle_marks.push(plan.waypoints.len());
        plan.waggle_runs.push([t0, t0 + t_run]);
        for &tau in &local_times {
            let q = rotate(local_point(params, side, tau), params.orientation);
            plan.waypoints.push(Waypoint { t: t0 + tau, x: params.origin[0] + q[0], y: params.origin[1] + q[1] });
        }
    }
    plan.cycle_marks.push(plan.waypoints.len());
    plan.waypoints.push(Waypoint { t: params.cycles as f64 * cycle, x: params.origin[0], y: params.origin[1] });
    Ok(plan)
}

/// Rotates a plan by `heading_deg` (clockwise) about `centre`.
pub fn rotate_plan(plan: &TrajectoryPlan, heading_deg: f64, centre: [f64; 2]) -> TrajectoryPlan {
    let mut out = plan.clone();
    for w in &mut out.waypoints {
        let q = rotate([w.x - centre[0], w.y - centre[1]], heading_deg);
        w.x = centre[0] + q[0];
        w.y = centre[1] + q[1];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_segment(plan: &TrajectoryPlan, k: usize) -> Vec<Waypoint> {
        let [a, b] = plan.waggle_runs[k];
        plan.waypoints.iter().copied().filter(|w| w.t >= a - 1e-12 && w.t <= b + 1e-12).collect()
    }

    #[test]
    fn single_cycle_geometry() {
        let plan = generate(&DanceParams::default()).unwrap();
        assert_eq!(plan.cycles(), 1);
        assert!(plan.waypoints.len() > SAMPLES_PER_CYCLE);
        let first = plan.waypoints[0];
        assert_eq!((first.x, first.y), (0.0, 0.0));
        let run = run_segment(&plan, 0);
        // run end: sampled at the start of the first turn
        let end = plan.position_at(plan.waggle_runs[0][1]).unwrap();
        assert!(end[0].abs() < 1e-12 && (end[1] - 20.0).abs() < 1e-12);
        assert!(run.iter().all(|w| w.x.abs() < 1e-12));
        // loop lies on the right (+x)
        let loop_pts: Vec<_> = plan.waypoints.iter().filter(|w| w.t > plan.waggle_runs[0][1]).collect();
        assert!(loop_pts.iter().all(|w| w.x >= -1e-12));
        assert!(loop_pts.iter().any(|w| w.x > 9.9));
        let last = plan.waypoints.last().unwrap();
        assert!(last.x.hypot(last.y) <= 1e-6);
    }

    #[test]
    fn cycles_alternate_sides() {
        let plan = generate(&DanceParams { cycles: 2, ..DanceParams::default() }).unwrap();
        assert_eq!(plan.cycles(), 2);
        let c0 = plan.cycle_waypoints(0).unwrap();
        let c1 = plan.cycle_waypoints(1).unwrap();
        assert!(c0.iter().map(|w| w.x).fold(f64::MIN, f64::max) > 9.0);
        assert!(c1.iter().map(|w| w.x).fold(f64::MAX, f64::min) < -9.0);
        for k in 0..2 {
            let c = plan.cycle_waypoints(k).unwrap();
            let (a, b) = (c[0], c[c.len() - 1]);
            assert!((a.x - b.x).hypot(a.y - b.y) <= 1e-6);
        }
    }

    #[test]
    fn lateral_oscillation_count_and_amplitude() {
        let params = DanceParams {
            run_length: 20.0,
            lateral_amplitude: 2.0,
            lateral_freq: 13.0,
            run_speed: 10.0,
            ..DanceParams::default()
        };
        let plan = generate(&params).unwrap();
        let run = run_segment(&plan, 0);
        let xs: Vec<f64> = run.iter().map(|w| w.x).collect();
        let max = xs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(max <= 2.0 + 1e-12 && max > 2.0 - 1e-9, "max={max}");
        // independent count: positive-going zero crossings, one per period
        let periods = xs.windows(2).filter(|w| w[0] <= 1e-9 && w[1] > 1e-9).count();
        assert_eq!(periods, 26);
    }

    #[test]
    fn run_timestamps_follow_run_speed() {
        let plan = generate(&DanceParams::default()).unwrap();
        for w in run_segment(&plan, 0) {
            assert!((w.y - 10.0 * w.t).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_loop_rejected() {
        let err =
            generate(&DanceParams { lateral_amplitude: 3.0, loop_radius: 2.0, ..DanceParams::default() }).unwrap_err();
        assert_eq!(err.name(), "DegenerateGeometry");
        assert!(generate(&DanceParams { cycles: 0, ..DanceParams::default() }).is_err());
    }

    #[test]
    fn csv_round_trip_keeps_waypoints() {
        let plan = generate(&DanceParams::default()).unwrap();
        let mut buf = Vec::new();
        plan.write_csv(&mut buf).unwrap();
        let back = TrajectoryPlan::read_csv(&buf[..]).unwrap();
        assert_eq!(back.waypoints, plan.waypoints);
        assert_eq!(back.cycles(), 1);
    }

    #[test]
    fn csv_rejects_unsorted_times() {
        let text = "t_s,x_mm,y_mm\n0,0,0\n0,1,1\n";
        assert!(TrajectoryPlan::read_csv(text.as_bytes()).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rotation_equivariance(theta in -360.0f64..360.0, cycles in 1usize..4, amp in 0.0f64..3.0) {
                let base = DanceParams { cycles, lateral_amplitude: amp, ..DanceParams::default() };
                let a = generate(&DanceParams { orientation: theta, ..base }).unwrap();
                let b = rotate_plan(&generate(&base).unwrap(), theta, [0.0, 0.0]);
                prop_assert_eq!(a.waypoints.len(), b.waypoints.len());
                for (p, q) in a.waypoints.iter().zip(&b.waypoints) {
                    prop_assert!((p.x - q.x).abs() <= 1e-9 && (p.y - q.y).abs() <= 1e-9);
                    prop_assert_eq!(p.t, q.t);
                }
                prop_assert!((a.arc_length() - b.arc_length()).abs() <= 1e-9);
                let c = generate(&base).unwrap();
                prop_assert!((a.arc_length() - c.arc_length()).abs() <= 1e-9 * c.arc_length());
            }

            #[test]
            fn every_cycle_closes(len in 5.0f64..40.0, rho in 1.0f64..15.0, cycles in 1usize..6, theta in 0.0f64..360.0) {
                let plan = generate(&DanceParams { run_length: len, loop_radius: rho, cycles, orientation: theta, ..DanceParams::default() }).unwrap();
                for k in 0..plan.cycles() {
                    let c = plan.cycle_waypoints(k).unwrap();
                    let (a, b) = (c[0], c[c.len() - 1]);
                    prop_assert!((a.x - b.x).hypot(a.y - b.y) <= 1e-6);
                }
                prop_assert!(plan.waypoints.windows(2).all(|w| w[1].t > w[0].t));
            }
        }
    }
}
