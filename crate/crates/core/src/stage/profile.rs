use serde::{Deserialize, Serialize};

use super::{Axis, AxisConfig, StageError};

/// Minimum time to travel `distance` from rest to rest under the given limits.
pub fn min_move_duration(distance: f64, v_max: f64, a_max: f64) -> f64 {
    let d = distance.abs();
    if d == 0.0 {
        return 0.0;
    }
    let ramp_distance = v_max * v_max / a_max;
    if d >= ramp_distance {
        2.0 * v_max / a_max + (d - ramp_distance) / v_max
    } else {
        2.0 * (d / a_max).sqrt()
    }
}

/// Single-axis trapezoidal (or triangular) rest-to-rest velocity profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionProfile {
    pub start: f64,
    /// Signed displacement.
    pub distance: f64,
    pub accel: f64,
    /// Peak speed reached; equals the cruise speed for trapezoids.
    pub peak_speed: f64,
    pub t_accel: f64,
    pub t_cruise: f64,
    pub duration: f64,
}

impl MotionProfile {
    /// Time-optimal profile.
    pub fn fastest(start: f64, end: f64, v_max: f64, a_max: f64) -> Self {
        let duration = min_move_duration(end - start, v_max, a_max);
        Self::with_duration(start, end, v_max, a_max, duration)
    }

    /// Profile using full acceleration but a reduced cruise speed so the move
    /// takes exactly `duration`. Durations shorter than the minimum are
    /// raised to it.
    pub fn with_duration(start: f64, end: f64, v_max: f64, a_max: f64, duration: f64) -> Self {
        let distance = end - start;
        let d = distance.abs();
        let min = min_move_duration(d, v_max, a_max);
        let duration = duration.max(min);
        if d == 0.0 {
            return MotionProfile {
                start,
                distance,
                accel: a_max,
                peak_speed: 0.0,
                t_accel: 0.0,
                t_cruise: duration,
                duration,
            };
        }
        // d = v (T - v / a)  =>  v^2 - a T v + a d = 0, smaller root.
        let disc = (a_max * duration).powi(2) - 4.0 * a_max * d;
        let peak_speed = if duration == min && d >= v_max * v_max / a_max {
            v_max
        } else {
            ((a_max * duration - disc.max(0.0).sqrt()) / 2.0).min(v_max)
        };
        let t_accel = peak_speed / a_max;
        let t_cruise = (duration - 2.0 * t_accel).max(0.0);
        MotionProfile { start, distance, accel: a_max, peak_speed, t_accel, t_cruise, duration }
    }

    pub fn end(&self) -> f64 {
        self.start + self.distance
    }

    pub fn position(&self, t: f64) -> f64 {
        let sign = self.distance.signum();
        let d = self.distance.abs();
        let travelled = if t <= 0.0 {
            0.0
        } else if t < self.t_accel {
            0.5 * self.accel * t * t
        } else if t < self.t_accel + self.t_cruise {
            0.5 * self.accel * self.t_accel * self.t_accel + self.peak_speed * (t - self.t_accel)
        } else if t < self.duration {
            let rem = self.duration - t;
            d - 0.5 * self.accel * rem * rem
        } else {
            d
        };
        self.start + sign * travelled.min(d)
    }

    pub fn velocity(&self, t: f64) -> f64 {
        let sign = self.distance.signum();
        let speed = if t <= 0.0 || t >= self.duration {
            0.0
        } else if t < self.t_accel {
            self.accel * t
        } else if t < self.t_accel + self.t_cruise {
            self.peak_speed
        } else {
            self.accel * (self.duration - t)
        };
        sign * speed
    }
}

/// Plan a checked single-axis move.
pub fn plan_move(from: f64, to: f64, cfg: &AxisConfig, axis: Axis) -> Result<MotionProfile, StageError> {
    cfg.check_travel(axis, from)?;
    cfg.check_travel(axis, to)?;
    Ok(MotionProfile::fastest(from, to, cfg.v_max, cfg.a_max))
}
