//! Intelligent Driver Model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longitudinal (IDM) and lane-change (MOBIL) parameters of one driver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverParams {
    /// Desired speed, m/s.
    pub desired_speed: f64,
    /// Safety time gap, s.
    pub time_gap: f64,
    /// Minimum bumper-to-bumper distance, m.
    pub min_gap: f64,
    /// Comfortable maximum acceleration, m/s^2.
    pub max_accel: f64,
    /// Comfortable deceleration, m/s^2.
    pub comfort_decel: f64,
    /// MOBIL politeness in [0, 1].
    pub politeness: f64,
    /// MOBIL minimum acceleration gain, m/s^2.
    pub min_accel_gain: f64,
    /// MOBIL safe deceleration limit imposed on the new follower, m/s^2.
    pub safe_decel: f64,
}

impl DriverParams {
    pub fn conservative() -> Self {
        DriverParams {
            desired_speed: 25.0,
            time_gap: 1.5,
            min_gap: 5.0,
            max_accel: 3.0,
            comfort_decel: 6.0,
            politeness: 0.5,
            min_accel_gain: 0.2,
            safe_decel: 3.0,
        }
    }

    pub fn aggressive() -> Self {
        DriverParams {
            desired_speed: 40.0,
            time_gap: 1.2,
            min_gap: 2.5,
            max_accel: 6.0,
            comfort_decel: 9.0,
            politeness: 0.0,
            min_accel_gain: 0.0,
            safe_decel: 9.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("desired_speed", self.desired_speed),
            ("time_gap", self.time_gap),
            ("min_gap", self.min_gap),
            ("max_accel", self.max_accel),
            ("comfort_decel", self.comfort_decel),
            ("safe_decel", self.safe_decel),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("driver parameter `{name}` must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.politeness) {
            return Err(Error::Validation(format!("politeness must lie in [0, 1], got {}", self.politeness)));
        }
        if !(self.min_accel_gain >= 0.0) {
            return Err(Error::Validation("min_accel_gain must be non-negative".into()));
        }
        Ok(())
    }
}

/// The vehicle ahead as seen by the ego: bumper gap and speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderGap {
    pub gap: f64,
    pub speed: f64,
}

/// Raised when the bumper gap to the leader is not positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Collision {
    pub gap: f64,
}

/// Desired dynamic gap `s* = s0 + max(0, v T + v dv / (2 sqrt(a b)))`.
///
/// The dynamic part is floored at zero so that a fast-receding leader never
/// produces a braking term.
pub fn desired_gap(p: &DriverParams, speed: f64, approach_rate: f64) -> f64 {
    let dynamic = speed * p.time_gap + speed * approach_rate / (2.0 * (p.max_accel * p.comfort_decel).sqrt());
    p.min_gap + dynamic.max(0.0)
}

/// Free-road acceleration `a [1 - (v / v0)^4]`.
pub fn free_road_acceleration(p: &DriverParams, speed: f64) -> f64 {
    p.max_accel * (1.0 - (speed / p.desired_speed).powi(4))
}

/// IDM acceleration, m/s^2. Without a leader only the free-road term acts.
pub fn idm_acceleration(p: &DriverParams, speed: f64, leader: Option<LeaderGap>) -> std::result::Result<f64, Collision> {
    let free = free_road_acceleration(p, speed);
    match leader {
        None => Ok(free),
        Some(l) if l.gap <= 0.0 => Err(Collision { gap: l.gap }),
        Some(l) => {
            let s_star = desired_gap(p, speed, speed - l.speed);
            Ok(free - p.max_accel * (s_star / l.gap).powi(2))
        }
    }
}
