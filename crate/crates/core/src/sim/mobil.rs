//! MOBIL lane-change decisions.

use super::idm::{idm_acceleration, DriverParams, LeaderGap};

/// Longitudinal snapshot of a vehicle for decision making.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub position: f64,
    pub speed: f64,
    pub params: DriverParams,
}

/// The ego and its four relevant neighbours for a move into one target lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneScene {
    pub ego: VehicleState,
    pub current_leader: Option<VehicleState>,
    pub current_follower: Option<VehicleState>,
    pub target_leader: Option<VehicleState>,
    pub target_follower: Option<VehicleState>,
    pub vehicle_length: f64,
}

/// Acceleration of each party before and after the hypothetical change.
/// Absent parties contribute zero on both sides.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AccelerationGains {
    pub ego_before: f64,
    pub ego_after: f64,
    pub new_follower_before: f64,
    pub new_follower_after: f64,
    pub old_follower_before: f64,
    pub old_follower_after: f64,
}

impl AccelerationGains {
    /// `(a~_ego - a_ego) + p (a~_n - a_n + a~_o - a_o)`.
    pub fn incentive(&self, politeness: f64) -> f64 {
        let ego = self.ego_after - self.ego_before;
        let others = (self.new_follower_after - self.new_follower_before)
            + (self.old_follower_after - self.old_follower_before);
        ego + politeness * others
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilDecision {
    pub approved: bool,
    pub safe: bool,
    pub incentive: f64,
    /// Acceleration the new follower would experience; `None` when the
    /// target lane has no follower.
    pub new_follower_accel: Option<f64>,
    pub gains: AccelerationGains,
}

impl MobilDecision {
    fn rejected() -> Self {
        MobilDecision {
            approved: false,
            safe: false,
            incentive: f64::NEG_INFINITY,
            new_follower_accel: None,
            gains: AccelerationGains::default(),
        }
    }
}

fn gap(follower: &VehicleState, leader: &VehicleState, length: f64) -> LeaderGap {
    LeaderGap { gap: leader.position - follower.position - length, speed: leader.speed }
}

/// Acceleration of `follower` behind an optional `leader`; `None` on
/// overlap.
fn accel(follower: &VehicleState, leader: Option<&VehicleState>, length: f64) -> Option<f64> {
    idm_acceleration(&follower.params, follower.speed, leader.map(|l| gap(follower, l, length))).ok()
}

/// Applies the safety criterion `a~_n >= -b_safe` (ego's `b_safe`) and the
/// incentive criterion `incentive > delta_a_th` (ego's threshold). Any
/// hypothetical overlap is unsafe.
pub fn mobil_decision(scene: &LaneScene) -> MobilDecision {
    let len = scene.vehicle_length;
    let ego = &scene.ego;
    let p = &ego.params;

    let Some(ego_after) = accel(ego, scene.target_leader.as_ref(), len) else {
        return MobilDecision::rejected();
    };
    // Current-lane accelerations; an existing overlap is treated as an
    // emergency stop rather than blocking the decision.
    let ego_before = accel(ego, scene.current_leader.as_ref(), len).unwrap_or(-p.comfort_decel);

    let mut gains = AccelerationGains { ego_before, ego_after, ..Default::default() };
    let mut new_follower_accel = None;

    if let Some(nf) = &scene.target_follower {
        let Some(after) = accel(nf, Some(ego), len) else {
            return MobilDecision::rejected();
        };
        gains.new_follower_before = accel(nf, scene.target_leader.as_ref(), len).unwrap_or(-nf.params.comfort_decel);
        gains.new_follower_after = after;
        new_follower_accel = Some(after);
    }
    if let Some(of) = &scene.current_follower {
        gains.old_follower_before = accel(of, Some(ego), len).unwrap_or(-of.params.comfort_decel);
        gains.old_follower_after = accel(of, scene.current_leader.as_ref(), len).unwrap_or(-of.params.comfort_decel);
    }

    let safe = new_follower_accel.is_none_or(|a| a >= -p.safe_decel);
    let incentive = gains.incentive(p.politeness);
    MobilDecision { approved: safe && incentive > p.min_accel_gain, safe, incentive, new_follower_accel, gains }
}
