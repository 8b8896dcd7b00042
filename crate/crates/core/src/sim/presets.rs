//! Seeded scenario builders used by the acceptance suite, calibration and
//! the command line.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::idm::{desired_gap, DriverParams};
use super::scenario::{AgentSpawn, DriverClass, ScenarioConfig, ScriptedManeuver};
use crate::evaluation::ManeuverStyle;

/// Speed of scripted background traffic, m/s.
pub const BACKGROUND_SPEED: f64 = 15.0;
/// Bumper-to-bumper spacing of background platoons; above the conservative
/// equilibrium gap at [`BACKGROUND_SPEED`] so platoons stay steady.
pub const BACKGROUND_SPACING: f64 = 34.0;
pub const EGO: &str = "ego";
pub const AGGRESSOR: &str = "aggressor";

fn background(lane: usize, position: f64) -> AgentSpawn {
    AgentSpawn {
        id: None,
        class: DriverClass::Conservative,
        lane,
        position,
        speed: BACKGROUND_SPEED,
        desired_speed: Some(BACKGROUND_SPEED),
        lane_changes: false,
    }
}

fn ego(lane: usize, position: f64) -> AgentSpawn {
    AgentSpawn {
        id: Some(EGO.into()),
        class: DriverClass::Aggressive,
        lane,
        position,
        speed: BACKGROUND_SPEED,
        desired_speed: Some(BACKGROUND_SPEED),
        lane_changes: false,
    }
}

/// Desired speed at which an IDM follower at `speed` is in equilibrium with
/// an equally fast leader `gap` metres ahead.
pub fn following_desired_speed(params: &DriverParams, speed: f64, gap: f64) -> f64 {
    let ratio = desired_gap(params, speed, 0.0) / gap;
    speed / (1.0 - ratio * ratio).powf(0.25)
}

fn base(duration: f64, seed: u64, lanes: usize) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(duration, seed);
    cfg.lanes = lanes;
    cfg
}

fn maneuver(style: ManeuverStyle, start: u64, end: u64) -> ScriptedManeuver {
    ScriptedManeuver {
        agent: EGO.into(),
        style,
        start_frame: start,
        end_frame: end,
        target_lane: None,
        target_speed: None,
        changes: None,
    }
}

/// Ego in lane 1 of four speeds past platoons in lanes 0, 2 and 3.
pub fn overspeeding(seed: u64) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = base(30.0, seed, 4);
    cfg.agents.push(ego(1, 0.0));
    let phase = rng.random_range(0.0..BACKGROUND_SPACING);
    for (k, lane) in [0usize, 2, 3].into_iter().enumerate() {
        let offset = phase + k as f64 * BACKGROUND_SPACING / 3.0;
        for j in 0..14 {
            cfg.agents.push(background(lane, offset - 80.0 + j as f64 * BACKGROUND_SPACING));
        }
    }
    let start = rng.random_range(80..120);
    let mut m = maneuver(ManeuverStyle::Overspeeding, start, start + 60);
    m.target_speed = Some(35.0);
    cfg.maneuvers.push(m);
    cfg
}

/// Ego behind a slower leader pulls out, passes and returns. The leader is
/// placed so that the ego draws level with it at the maneuver midpoint.
pub fn overtaking(seed: u64) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = base(30.0, seed, 3);
    let (start, len, peak) = (rng.random_range(60..100), 85, 30.0);
    // Relative travel up to the midpoint under the triangular speed profile.
    let half_s = len as f64 / 2.0 * cfg.timestep;
    let level_at = (peak - BACKGROUND_SPEED) * half_s / 2.0;
    let mut e = ego(1, 0.0);
    // Hold the ego in IDM equilibrium behind the leader until it pulls out.
    e.desired_speed = Some(following_desired_speed(&DriverParams::aggressive(), BACKGROUND_SPEED, level_at - cfg.vehicle_length));
    cfg.agents.push(e);
    cfg.agents.push(background(1, level_at));
    let mut m = maneuver(ManeuverStyle::Overtaking, start, start + len);
    m.target_lane = Some(if rng.random_bool(0.5) { 0 } else { 2 });
    m.target_speed = Some(peak);
    cfg.maneuvers.push(m);
    cfg
}

/// Ego leaves a neighbour alongside with a single lane change.
pub fn sudden_lane_change(seed: u64) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = base(25.0, seed, 3);
    let toward_left = rng.random_bool(0.5);
    let (neighbour, target) = if toward_left { (2, 0) } else { (0, 2) };
    cfg.agents.push(ego(1, 0.0));
    cfg.agents.push(background(neighbour, rng.random_range(-2.0..2.0)));
    let start = rng.random_range(60..120);
    let mut m = maneuver(ManeuverStyle::SuddenLaneChange, start, start + 30);
    m.target_lane = Some(target);
    cfg.maneuvers.push(m);
    cfg
}

/// Ego weaves between lanes 1 and a neighbour lane next to a platoon.
pub fn weaving(seed: u64) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = base(30.0, seed, 3);
    cfg.agents.push(ego(1, 0.0));
    cfg.agents.push(background(0, rng.random_range(-2.0..2.0)));
    let start = rng.random_range(60..110);
    let mut m = maneuver(ManeuverStyle::Weaving, start, start + 60);
    m.target_lane = Some(2);
    m.changes = Some(2);
    cfg.maneuvers.push(m);
    cfg
}

/// One aggressive agent (desired speed 40) in lane 1 behind nine conservative
/// agents: four rows of two flanking lane 1 and a lone car ahead in lane 1.
pub fn mixed(seed: u64) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = base(60.0, seed, 3);
    let conservative = |lane, position, lane_changes| AgentSpawn {
        id: None,
        class: DriverClass::Conservative,
        lane,
        position,
        speed: 25.0,
        desired_speed: None,
        lane_changes,
    };
    for row in 0..4 {
        let at = 60.0 + row as f64 * 45.0 + rng.random_range(-5.0..5.0);
        cfg.agents.push(conservative(0, at + rng.random_range(-2.0..2.0), false));
        cfg.agents.push(conservative(2, at + rng.random_range(-2.0..2.0), false));
    }
    cfg.agents.push(conservative(1, 260.0 + rng.random_range(0.0..20.0), true));
    cfg.agents.push(AgentSpawn {
        id: Some(AGGRESSOR.into()),
        class: DriverClass::Aggressive,
        lane: 1,
        position: 0.0,
        speed: 30.0,
        desired_speed: None,
        lane_changes: true,
    });
    cfg
}

/// Ten conservative agents with randomised desired speeds.
pub fn all_conservative(seed: u64) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = base(60.0, seed, 3);
    for k in 0..10 {
        cfg.agents.push(AgentSpawn {
            id: None,
            class: DriverClass::Conservative,
            lane: k % 3,
            position: (k / 3) as f64 * 70.0 + rng.random_range(0.0..20.0),
            speed: 22.0,
            desired_speed: None,
            lane_changes: true,
        });
    }
    cfg
}

/// The twenty scripted scenarios, five per style, with their names.
pub fn acceptance_suite() -> Vec<(String, ScenarioConfig)> {
    let mut out = Vec::new();
    for seed in 0..5u64 {
        out.push((format!("os-{seed}"), overspeeding(seed)));
        out.push((format!("ot-{seed}"), overtaking(seed)));
        out.push((format!("slc-{seed}"), sudden_lane_change(seed)));
        out.push((format!("w-{seed}"), weaving(seed)));
    }
    out
}

/// Mixed-traffic runs whose conservative agents set the thresholds.
pub fn calibration_set() -> Vec<(String, ScenarioConfig)> {
    (100..108u64).map(|seed| (format!("mixed-{seed}"), mixed(seed))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn following_speed_is_idm_equilibrium() {
        use crate::sim::idm::{idm_acceleration, LeaderGap};
        let p = DriverParams::aggressive();
        let mut q = p;
        q.desired_speed = following_desired_speed(&p, 15.0, 27.0);
        let a = idm_acceleration(&q, 15.0, Some(LeaderGap { gap: 27.0, speed: 15.0 })).unwrap();
        assert!(a.abs() < 1e-12, "{a}");
    }

    #[test]
    fn presets_validate() {
        for (name, cfg) in acceptance_suite().into_iter().chain(calibration_set()) {
            cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        all_conservative(1).validate().unwrap();
    }

    #[test]
    fn suite_has_five_per_style() {
        let suite = acceptance_suite();
        for style in ManeuverStyle::ALL {
            let n = suite.iter().filter(|(_, c)| c.maneuvers.iter().any(|m| m.style == style)).count();
            assert_eq!(n, 5, "{style}");
        }
    }
}
