//! IDM/MOBIL highway simulator producing labelled trajectories.

pub mod idm;
pub mod mobil;
pub mod presets;
pub mod scenario;
pub mod world;

pub use idm::{idm_acceleration, DriverParams, LeaderGap};
pub use mobil::{mobil_decision, LaneScene, MobilDecision, VehicleState};
pub use scenario::{write_labels, AgentSpawn, DriverClass, GroundTruthLabel, ScenarioConfig, ScriptedManeuver};
pub use world::{run_scenario, SimAgent, SimEvent, SimOutput, World};
