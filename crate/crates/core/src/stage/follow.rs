//! Path following by moving-average smoothing.
//!
//! A timed waypoint list describes a piecewise-linear path with
//! piecewise-constant velocity. Averaging that path over a sliding window of
//! width `w` bounds acceleration by `|dv| / w` while passing through every
//! straight stretch unchanged. A single rest-to-rest segment smoothed this way
//! is exactly the trapezoidal profile with `a = v / w`.
//!
//! The window is centred, so execution starts `w / 2` before the first plan
//! timestamp. That offset is the *lead*: executed time = plan time + lead.

use serde::{Deserialize, Serialize};

use super::{AxisConfig, StageError};

/// Why a segment of the requested timing was changed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingLimit {
    Speed,
    Accel,
}

/// A segment whose requested timing exceeded the kinematic limits and was
/// re-timed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingWarning {
    pub segment: usize,
    pub limit: TimingLimit,
    pub demanded: f64,
    pub allowed: f64,
}

const MAX_ACCEL_PASSES: usize = 32;

#[derive(Debug, Clone)]
pub struct SmoothedPath {
    times: Vec<f64>,
    points: Vec<[f64; 2]>,
    /// Running integral of the raw path at each waypoint time.
    integral: Vec<[f64; 2]>,
    width: f64,
}

impl SmoothedPath {
    /// Builds the smoothed path for `points` at `times` (strictly increasing).
    pub fn build(
        times: &[f64],
        points: &[[f64; 2]],
        limits: [&AxisConfig; 2],
    ) -> Result<(Self, Vec<TimingWarning>), StageError> {
        if times.len() != points.len() || times.is_empty() {
            return Err(StageError::InvalidPlan("waypoint list is empty or ragged".into()));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(StageError::InvalidPlan(format!("timestamps not strictly increasing at t={}", w[1])));
            }
        }
        let mut durations: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
        let mut warnings = Vec::new();

        for (i, dur) in durations.iter_mut().enumerate() {
            let mut needed = *dur;
            let mut demanded: f64 = 0.0;
            for axis in 0..2 {
                let d = (points[i + 1][axis] - points[i][axis]).abs();
                demanded = demanded.max(d / *dur);
                needed = needed.max(d / limits[axis].v_max);
            }
            if needed > *dur {
                let allowed = limits[0].v_max.min(limits[1].v_max);
                warnings.push(TimingWarning { segment: i, limit: TimingLimit::Speed, demanded, allowed });
                *dur = needed;
            }
        }

        let mut flagged = vec![false; durations.len()];
        for _ in 0..MAX_ACCEL_PASSES {
            let mut changed = false;
            for j in 1..durations.len() {
                let mean_dt = 0.5 * (durations[j - 1] + durations[j]);
                let mut ratio: f64 = 0.0;
                let mut demanded: f64 = 0.0;
                for axis in 0..2 {
                    let v_prev = (points[j][axis] - points[j - 1][axis]) / durations[j - 1];
                    let v_next = (points[j + 1][axis] - points[j][axis]) / durations[j];
                    let a = (v_next - v_prev).abs() / mean_dt;
                    demanded = demanded.max(a);
                    ratio = ratio.max(a / limits[axis].a_max);
                }
                if ratio > 1.0 + 1e-9 {
                    let k = ratio.sqrt() * (1.0 + 1e-9);
                    durations[j - 1] *= k;
                    durations[j] *= k;
                    if !flagged[j] {
                        flagged[j] = true;
                        warnings.push(TimingWarning {
                            segment: j,
                            limit: TimingLimit::Accel,
                            demanded,
                            allowed: limits[0].a_max.min(limits[1].a_max),
                        });
                    }
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }

        let mut retimed = Vec::with_capacity(times.len());
        retimed.push(0.0);
        let mut acc = 0.0;
        for d in &durations {
            acc += d;
            retimed.push(acc);
        }

        let mut integral = Vec::with_capacity(points.len());
        integral.push([0.0, 0.0]);
        for i in 1..points.len() {
            let dt = retimed[i] - retimed[i - 1];
            let prev: [f64; 2] = integral[i - 1];
            integral.push([
                prev[0] + 0.5 * (points[i - 1][0] + points[i][0]) * dt,
                prev[1] + 0.5 * (points[i - 1][1] + points[i][1]) * dt,
            ]);
        }

        let mut path = SmoothedPath { times: retimed, points: points.to_vec(), integral, width: 0.0 };
        path.width = path.smoothing_width(limits);
        Ok((path, warnings))
    }

    /// Smoothing window in seconds.
    pub fn width(&self) -> f64 {
        self.width
    }

    /// Executed time by which the plan's first waypoint is reached.
    pub fn lead(&self) -> f64 {
        0.5 * self.width
    }

    /// Re-timed plan duration, excluding the lead-in and lead-out.
    pub fn plan_duration(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Total executed duration.
    pub fn duration(&self) -> f64 {
        self.plan_duration() + self.width
    }

    /// Re-timed waypoint times, relative to the first waypoint.
    pub fn retimed(&self) -> &[f64] {
        &self.times
    }

    pub fn end_point(&self) -> [f64; 2] {
        *self.points.last().unwrap()
    }

    /// Smoothed position at executed time `tau`.
    pub fn position(&self, tau: f64) -> [f64; 2] {
        let s = tau - self.lead();
        if self.width <= 0.0 {
            return self.raw_position(s);
        }
        let hi = self.raw_integral(s + 0.5 * self.width);
        let lo = self.raw_integral(s - 0.5 * self.width);
        [(hi[0] - lo[0]) / self.width, (hi[1] - lo[1]) / self.width]
    }

    fn segment_at(&self, s: f64) -> usize {
        // index i with times[i] <= s < times[i + 1]
        let idx = self.times.partition_point(|&t| t <= s);
        idx.saturating_sub(1).min(self.times.len().saturating_sub(2))
    }

    fn raw_position(&self, s: f64) -> [f64; 2] {
        let n = self.points.len();
        if n == 1 || s <= 0.0 {
            return self.points[0];
        }
        if s >= self.plan_duration() {
            return self.points[n - 1];
        }
        let i = self.segment_at(s);
        let f = (s - self.times[i]) / (self.times[i + 1] - self.times[i]);
        let (a, b) = (self.points[i], self.points[i + 1]);
        [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]
    }

    fn raw_integral(&self, u: f64) -> [f64; 2] {
        let n = self.points.len();
        if u <= 0.0 {
            let p = self.points[0];
            return [p[0] * u, p[1] * u];
        }
        let end = self.plan_duration();
        if n == 1 || u >= end {
            let p = self.points[n - 1];
            let base = self.integral[n - 1];
            let h = u - end;
            return [base[0] + p[0] * h, base[1] + p[1] * h];
        }
        let i = self.segment_at(u);
        let h = u - self.times[i];
        let dt = self.times[i + 1] - self.times[i];
        let (a, b) = (self.points[i], self.points[i + 1]);
        let base = self.integral[i];
        [base[0] + a[0] * h + 0.5 * (b[0] - a[0]) / dt * h * h, base[1] + a[1] * h + 0.5 * (b[1] - a[1]) / dt * h * h]
    }

    fn raw_velocity(&self, s: f64, axis: usize) -> f64 {
        if self.points.len() < 2 || s < 0.0 || s >= self.plan_duration() {
            return 0.0;
        }
        let i = self.segment_at(s);
        (self.points[i + 1][axis] - self.points[i][axis]) / (self.times[i + 1] - self.times[i])
    }

    /// Largest `|v(s + w/2) - v(s - w/2)| / (w * a_max)` over all s and axes.
    fn accel_ratio(&self, w: f64, limits: [&AxisConfig; 2]) -> f64 {
        let half = 0.5 * w;
        let mut cuts: Vec<f64> = self.times.iter().flat_map(|&t| [t - half, t + half]).collect();
        cuts.sort_by(|a, b| a.total_cmp(b));
        let mut worst: f64 = 0.0;
        for pair in cuts.windows(2) {
            if pair[1] - pair[0] <= 0.0 {
                continue;
            }
            let s = 0.5 * (pair[0] + pair[1]);
            for (axis, lim) in limits.iter().enumerate() {
                let dv = self.raw_velocity(s + half, axis) - self.raw_velocity(s - half, axis);
                worst = worst.max(dv.abs() / (w * lim.a_max));
            }
        }
        worst
    }

    fn smoothing_width(&self, limits: [&AxisConfig; 2]) -> f64 {
        let mut w: f64 = 0.0;
        // lower bound from the largest single velocity jump (including start/stop)
        let n = self.points.len();
        for j in 0..n {
            for (axis, lim) in limits.iter().enumerate() {
                let before = if j == 0 {
                    0.0
                } else {
                    (self.points[j][axis] - self.points[j - 1][axis]) / (self.times[j] - self.times[j - 1])
                };
                let after = if j + 1 >= n {
                    0.0
                } else {
                    (self.points[j + 1][axis] - self.points[j][axis]) / (self.times[j + 1] - self.times[j])
                };
                w = w.max((after - before).abs() / lim.a_max);
            }
        }
        if w == 0.0 {
            return 0.0;
        }
        loop {
            let ratio = self.accel_ratio(w, limits);
            if ratio <= 1.0 {
                return w;
            }
            w = (w * 1.01).max(w * ratio);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stage::profile::min_move_duration;

    fn limits() -> AxisConfig {
        AxisConfig::default()
    }

    #[test]
    fn single_segment_is_trapezoid() {
        let cfg = limits();
        // 100 mm requested in 0.2 s: ten times the speed limit
        let (path, warnings) = SmoothedPath::build(&[0.0, 0.2], &[[0.0, 0.0], [100.0, 0.0]], [&cfg, &cfg]).unwrap();
        assert_eq!(warnings.len(), 1);
        assert_eq!(warnings[0].limit, TimingLimit::Speed);
        assert!((warnings[0].demanded - 500.0).abs() < 1e-9);
        let expected = min_move_duration(100.0, cfg.v_max, cfg.a_max);
        assert!((path.duration() - expected).abs() < 1e-12);
        assert_eq!(path.position(0.0)[0], 0.0);
        assert!((path.position(path.duration())[0] - 100.0).abs() < 1e-9);
    }

    #[test]
    fn feasible_segment_keeps_requested_timing() {
        let cfg = limits();
        let (path, warnings) = SmoothedPath::build(&[0.0, 4.0], &[[0.0, 0.0], [40.0, 0.0]], [&cfg, &cfg]).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(path.plan_duration(), 4.0);
        assert!((path.width() - 10.0 / cfg.a_max).abs() < 1e-12);
        // mid-plan the smoothed path sits exactly on the straight line
        let p = path.position(path.lead() + 2.0);
        assert!((p[0] - 20.0).abs() < 1e-9);
    }

    #[test]
    fn smoothed_accel_within_limit() {
        let cfg = limits();
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 0.05).collect();
        let points: Vec<[f64; 2]> = times.iter().map(|&t| [10.0 * (3.0 * t).cos(), 10.0 * (3.0 * t).sin()]).collect();
        let (path, _) = SmoothedPath::build(&times, &points, [&cfg, &cfg]).unwrap();
        let dt = 1e-3;
        let n = (path.duration() / dt) as usize;
        let xs: Vec<[f64; 2]> = (0..=n).map(|k| path.position(k as f64 * dt)).collect();
        for k in 1..n {
            #[allow(clippy::needless_range_loop)]
            for axis in 0..2 {
                let acc = (xs[k + 1][axis] - 2.0 * xs[k][axis] + xs[k - 1][axis]) / (dt * dt);
                assert!(acc.abs() <= cfg.a_max * (1.0 + 1e-6) + 1e-6, "tick {k} axis {axis}: {acc}");
                let v = (xs[k + 1][axis] - xs[k][axis]) / dt;
                assert!(v.abs() <= cfg.v_max + 1e-9);
            }
        }
    }

    #[test]
    fn sharp_corner_is_retimed_for_accel() {
        let cfg = limits();
        let (_, warnings) =
            SmoothedPath::build(&[0.0, 0.1, 0.2], &[[0.0, 0.0], [4.0, 0.0], [4.0, 4.0]], [&cfg, &cfg]).unwrap();
        assert!(warnings.iter().any(|w| w.limit == TimingLimit::Accel));
    }

    #[test]
    fn rejects_non_monotone_time() {
        let cfg = limits();
        assert!(SmoothedPath::build(&[0.0, 0.0], &[[0.0, 0.0], [1.0, 0.0]], [&cfg, &cfg]).is_err());
    }
}
