//! Scenario scripts and ground-truth labels.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::idm::DriverParams;
use crate::error::{Error, Result};
use crate::evaluation::{AnnotationSet, Interval, ManeuverKey, ManeuverStyle};
use crate::ingest::AgentId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverClass {
    Conservative,
    Aggressive,
}

impl DriverClass {
    pub fn params(self) -> DriverParams {
        match self {
            DriverClass::Conservative => DriverParams::conservative(),
            DriverClass::Aggressive => DriverParams::aggressive(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpawn {
    pub id: Option<String>,
    pub class: DriverClass,
    pub lane: usize,
    /// Longitudinal position, m.
    pub position: f64,
    /// Initial speed, m/s.
    pub speed: f64,
    /// Overrides the class desired speed (and its random spread).
    #[serde(default)]
    pub desired_speed: Option<f64>,
    /// Whether MOBIL may change this agent's lane on its own.
    #[serde(default = "default_true")]
    pub lane_changes: bool,
}

fn default_true() -> bool {
    true
}

/// A scripted maneuver. Its frames are echoed verbatim as the ground-truth
/// label.
///
/// * `OS`: speed follows a triangular profile from the initial speed up to
///   `target_speed` at the midpoint of `[start, end]` and back down by `end`.
/// * `SLC`: one lane change to `target_lane` starting at `start_frame`.
/// * `OT`: pull out to `target_lane` at `start_frame` under the `OS` speed
///   profile, pull back so the return completes at `end_frame`.
/// * `W`: `changes` alternating lane changes between the current lane and
///   `target_lane`, spread evenly so the last one completes at `end_frame`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedManeuver {
    pub agent: String,
    pub style: ManeuverStyle,
    pub start_frame: u64,
    pub end_frame: u64,
    #[serde(default)]
    pub target_lane: Option<usize>,
    #[serde(default)]
    pub target_speed: Option<f64>,
    #[serde(default)]
    pub changes: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "defaults::lanes")]
    pub lanes: usize,
    #[serde(default = "defaults::lane_width")]
    pub lane_width: f64,
    #[serde(default = "defaults::road_length")]
    pub road_length: f64,
    #[serde(default = "defaults::timestep")]
    pub timestep: f64,
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::vehicle_length")]
    pub vehicle_length: f64,
    #[serde(default = "defaults::mobil_period")]
    pub mobil_period: f64,
    #[serde(default = "defaults::lane_change_duration")]
    pub lane_change_duration: f64,
    /// Relative spread of conservative desired speeds.
    #[serde(default = "defaults::speed_spread")]
    pub speed_spread: f64,
    #[serde(default)]
    pub agents: Vec<AgentSpawn>,
    #[serde(default)]
    pub maneuvers: Vec<ScriptedManeuver>,
}

pub mod defaults {
    pub fn lanes() -> usize {
        3
    }
    pub fn lane_width() -> f64 {
        4.0
    }
    pub fn road_length() -> f64 {
        100_000.0
    }
    pub fn timestep() -> f64 {
        0.1
    }
    pub fn vehicle_length() -> f64 {
        5.0
    }
    pub fn mobil_period() -> f64 {
        1.0
    }
    pub fn lane_change_duration() -> f64 {
        3.0
    }
    pub fn speed_spread() -> f64 {
        0.1
    }
}

impl ScenarioConfig {
    pub fn new(duration: f64, seed: u64) -> Self {
        ScenarioConfig {
            lanes: defaults::lanes(),
            lane_width: defaults::lane_width(),
            road_length: defaults::road_length(),
            timestep: defaults::timestep(),
            duration,
            seed,
            vehicle_length: defaults::vehicle_length(),
            mobil_period: defaults::mobil_period(),
            lane_change_duration: defaults::lane_change_duration(),
            speed_spread: defaults::speed_spread(),
            agents: Vec::new(),
            maneuvers: Vec::new(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Validation(format!("cannot read scenario `{}`: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serialises")
    }

    pub fn frame_rate_hz(&self) -> f64 {
        1.0 / self.timestep
    }

    /// Number of emitted frames; frame `k` is the state at `k * timestep`.
    pub fn frame_count(&self) -> u64 {
        (self.duration / self.timestep).round() as u64
    }

    pub fn lane_change_frames(&self) -> u64 {
        (self.lane_change_duration / self.timestep).round() as u64
    }

    pub fn agent_id(&self, index: usize) -> AgentId {
        match &self.agents[index].id {
            Some(id) => AgentId(id.clone()),
            None => AgentId(format!("v{index}")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if !(self.timestep > 0.0 && self.timestep.is_finite()) {
            return bad(format!("timestep must be positive, got {}", self.timestep));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be non-negative, got {}", self.duration));
        }
        if self.lanes == 0 {
            return bad("at least one lane is required".into());
        }
        for (name, v) in [
            ("lane_width", self.lane_width),
            ("road_length", self.road_length),
            ("vehicle_length", self.vehicle_length),
            ("mobil_period", self.mobil_period),
            ("lane_change_duration", self.lane_change_duration),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("`{name}` must be positive, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.speed_spread) {
            return bad(format!("speed_spread must lie in [0, 1), got {}", self.speed_spread));
        }
        let mut ids = HashSet::new();
        for (k, a) in self.agents.iter().enumerate() {
            let id = self.agent_id(k);
            if !ids.insert(id.clone()) {
                return bad(format!("duplicate agent id `{id}`"));
            }
            if a.lane >= self.lanes {
                return bad(format!("agent `{id}` lane {} outside road of {} lanes", a.lane, self.lanes));
            }
            if !(a.speed >= 0.0 && a.speed.is_finite()) || !a.position.is_finite() {
                return bad(format!("agent `{id}` has invalid initial state"));
            }
            if let Some(v) = a.desired_speed {
                if !(v > 0.0 && v.is_finite()) {
                    return bad(format!("agent `{id}` desired speed must be positive"));
                }
            }
        }
        let frames = self.frame_count();
        let lc = self.lane_change_frames();
        for m in &self.maneuvers {
            if !ids.contains(&AgentId(m.agent.clone())) {
                return bad(format!("maneuver refers to unknown agent `{}`", m.agent));
            }
            if m.start_frame > m.end_frame || m.end_frame >= frames {
                return bad(format!(
                    "maneuver frames [{}, {}] for `{}` outside scenario of {frames} frames",
                    m.start_frame, m.end_frame, m.agent
                ));
            }
            if let Some(v) = m.target_speed {
                if !(v > 0.0 && v.is_finite()) {
                    return bad("maneuver target speed must be positive".into());
                }
            }
            let span = m.end_frame - m.start_frame;
            match m.style {
                ManeuverStyle::Overspeeding => {}
                ManeuverStyle::SuddenLaneChange | ManeuverStyle::Overtaking | ManeuverStyle::Weaving => {
                    let Some(target) = m.target_lane else {
                        return bad(format!("{} maneuver for `{}` needs a target_lane", m.style, m.agent));
                    };
                    if target >= self.lanes {
                        return bad(format!("target lane {target} outside road"));
                    }
                    let changes = match m.style {
                        ManeuverStyle::SuddenLaneChange => 1,
                        ManeuverStyle::Overtaking => 2,
                        _ => m.changes.unwrap_or(2),
                    };
                    if changes == 0 {
                        return bad("weaving needs at least one lane change".into());
                    }
                    if span + 1 < changes as u64 * lc {
                        return bad(format!(
                            "{} maneuver for `{}` spans {span} frames, too short for {changes} lane change(s) of {lc} frames",
                            m.style, m.agent
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Ground truth echoed from a scripted maneuver.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthLabel {
    pub agent_id: AgentId,
    pub style: ManeuverStyle,
    pub start_frame: u64,
    pub end_frame: u64,
}

/// Labels of one run as an annotation set with a single annotator.
pub fn labels_to_annotations(labels: &[GroundTruthLabel], video_id: &str) -> Result<AnnotationSet> {
    let mut set = AnnotationSet::default();
    for l in labels {
        let key = ManeuverKey { video_id: video_id.into(), agent_id: l.agent_id.clone(), style: l.style };
        set.insert(key, Interval { start: l.start_frame, end: l.end_frame })?;
    }
    Ok(set)
}

/// Writes labels as `agent_id,style,start_frame,end_frame`.
pub fn write_labels<W: Write>(labels: &[GroundTruthLabel], out: W) -> Result<()> {
    let mut w = std::io::BufWriter::new(out);
    writeln!(w, "agent_id,style,start_frame,end_frame")?;
    for l in labels {
        writeln!(w, "{},{},{},{}", l.agent_id, l.style, l.start_frame, l.end_frame)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
duration = 20.0
seed = 3

[[agents]]
id = "ego"
class = "aggressive"
lane = 1
position = 0.0
speed = 25.0

[[agents]]
class = "conservative"
lane = 0
position = 40.0
speed = 25.0

[[maneuvers]]
agent = "ego"
style = "SLC"
start_frame = 50
end_frame = 80
target_lane = 0
"#;

    #[test]
    fn parses_and_defaults() {
        let cfg = ScenarioConfig::from_toml_str(SAMPLE).unwrap();
        assert_eq!(cfg.lanes, 3);
        assert_eq!(cfg.timestep, 0.1);
        assert_eq!(cfg.frame_count(), 200);
        assert_eq!(cfg.agent_id(1), AgentId::from("v1"));
        assert!(cfg.agents[0].lane_changes);
    }

    #[test]
    fn rejects_out_of_range_maneuver() {
        let text = SAMPLE.replace("end_frame = 80", "end_frame = 200");
        assert!(matches!(ScenarioConfig::from_toml_str(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn rejects_unknown_agent() {
        let text = SAMPLE.replace("agent = \"ego\"", "agent = \"nobody\"");
        assert!(ScenarioConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn rejects_short_overtake() {
        let text = SAMPLE.replace("style = \"SLC\"", "style = \"OT\"");
        assert!(ScenarioConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ScenarioConfig::from_toml_str(SAMPLE).unwrap();
        let again = ScenarioConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, again);
    }
}
