//! Deterministic highway world: IDM car following, MOBIL lane changes and
//! scripted maneuvers.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::idm::{idm_acceleration, DriverParams, LeaderGap};
use super::mobil::{mobil_decision, LaneScene, MobilDecision, VehicleState};
use super::scenario::{DriverClass, GroundTruthLabel, ScenarioConfig};
use crate::error::{Error, Result};
use crate::evaluation::ManeuverStyle;
use crate::ingest::{AgentFrame, AgentId, AgentType, TrajectoryTable, Vec2};

/// Peak speed of a scripted speed bump relative to the initial speed when
/// the maneuver gives none.
pub const SPEED_BUMP_FACTOR: f64 = 1.6;

/// Fraction of `a_max` a tracked speed profile may demand.
const TRACKING_HEADROOM: f64 = 0.9;

/// Schedules a triangular speed reference over `[start, end]` peaking at the
/// midpoint, then restores the desired speed.
fn speed_bump(at: &mut impl FnMut(u64, Action), start: u64, end: u64, base: f64, peak: f64) {
    let half = (end - start) as f64 / 2.0;
    for f in start..end {
        let u = 1.0 - ((f + 1 - start) as f64 - half).abs() / half.max(1.0);
        at(f, Action::TrackSpeed(base + (peak - base) * u.max(0.0)));
    }
    at(end, Action::RestoreSpeed);
}

/// An in-progress lateral transition. `progress` runs from 0 to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneChange {
    pub from: usize,
    pub to: usize,
    pub progress: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimAgent {
    pub id: AgentId,
    pub class: DriverClass,
    /// Occupied lane; during a change this is already the target lane.
    pub lane: usize,
    pub position: f64,
    pub speed: f64,
    pub params: DriverParams,
    pub lane_change: Option<LaneChange>,
    pub mobil_enabled: bool,
    /// Desired speed outside scripted speed bursts.
    pub base_desired_speed: f64,
}

impl SimAgent {
    fn state(&self) -> VehicleState {
        VehicleState { position: self.position, speed: self.speed, params: self.params }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SimEvent {
    /// Onset of a non-positive bumper gap; the follower brakes at `b_comf`.
    Collision { frame: u64, agent: AgentId, leader: AgentId, gap: f64 },
    LaneChange { frame: u64, agent: AgentId, from: usize, to: usize, scripted: bool },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Action {
    /// Sets the desired speed so that free-road IDM reaches this speed on
    /// the next step, within the comfort limits.
    TrackSpeed(f64),
    RestoreSpeed,
    ChangeLane(usize),
}

#[derive(Debug, Clone)]
struct PendingOvertake {
    start_frame: u64,
    passed: AgentId,
}

/// Mutable simulation state. Frame `k` holds the state at `k * timestep`.
#[derive(Debug, Clone)]
pub struct World {
    cfg: ScenarioConfig,
    agents: Vec<SimAgent>,
    frame: u64,
    mobil_every: u64,
    lc_step: f64,
    script: BTreeMap<u64, Vec<(usize, Action)>>,
    scripted: BTreeSet<usize>,
    events: Vec<SimEvent>,
    colliding: BTreeSet<(usize, usize)>,
    pending: BTreeMap<usize, PendingOvertake>,
    labels: Vec<GroundTruthLabel>,
}

impl World {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut agents = Vec::with_capacity(cfg.agents.len());
        for (k, spawn) in cfg.agents.iter().enumerate() {
            let mut params = spawn.class.params();
            params.desired_speed = match (spawn.desired_speed, spawn.class) {
                (Some(v), _) => v,
                (None, DriverClass::Conservative) => {
                    let u: f64 = rng.random_range(-1.0..=1.0);
                    params.desired_speed * (1.0 + cfg.speed_spread * u)
                }
                (None, DriverClass::Aggressive) => params.desired_speed,
            };
            params.validate()?;
            agents.push(SimAgent {
                id: cfg.agent_id(k),
                class: spawn.class,
                lane: spawn.lane,
                position: spawn.position,
                speed: spawn.speed,
                params,
                lane_change: None,
                mobil_enabled: spawn.lane_changes,
                base_desired_speed: params.desired_speed,
            });
        }

        let lc_frames = cfg.lane_change_frames().max(1);
        let mut script: BTreeMap<u64, Vec<(usize, Action)>> = BTreeMap::new();
        let mut scripted = BTreeSet::new();
        let mut labels = Vec::new();
        for m in &cfg.maneuvers {
            let idx = agents.iter().position(|a| a.id.0 == m.agent).expect("validated agent");
            scripted.insert(idx);
            let origin = cfg.agents[idx].lane;
            let mut at = |frame: u64, action: Action| script.entry(frame).or_default().push((idx, action));
            match m.style {
                ManeuverStyle::Overspeeding => {
                    let base = cfg.agents[idx].speed;
                    let peak = m.target_speed.unwrap_or(base * SPEED_BUMP_FACTOR);
                    speed_bump(&mut at, m.start_frame, m.end_frame, base, peak);
                }
                ManeuverStyle::SuddenLaneChange => {
                    at(m.start_frame, Action::ChangeLane(m.target_lane.expect("validated")));
                }
                ManeuverStyle::Overtaking => {
                    let base = cfg.agents[idx].speed;
                    let peak = m.target_speed.unwrap_or(base * SPEED_BUMP_FACTOR);
                    speed_bump(&mut at, m.start_frame, m.end_frame, base, peak);
                    at(m.start_frame, Action::ChangeLane(m.target_lane.expect("validated")));
                    at(m.end_frame - lc_frames, Action::ChangeLane(origin));
                }
                ManeuverStyle::Weaving => {
                    let target = m.target_lane.expect("validated");
                    let n = m.changes.unwrap_or(2) as u64;
                    let last_start = m.end_frame - lc_frames;
                    for j in 0..n {
                        let start = if n == 1 {
                            m.start_frame
                        } else {
                            m.start_frame + j * (last_start - m.start_frame) / (n - 1)
                        };
                        let lane = if j % 2 == 0 { target } else { origin };
                        at(start, Action::ChangeLane(lane));
                    }
                }
            }
            labels.push(GroundTruthLabel {
                agent_id: agents[idx].id.clone(),
                style: m.style,
                start_frame: m.start_frame,
                end_frame: m.end_frame,
            });
        }

        Ok(World {
            mobil_every: (cfg.mobil_period / cfg.timestep).round().max(1.0) as u64,
            lc_step: 1.0 / lc_frames as f64,
            cfg: cfg.clone(),
            agents,
            frame: 0,
            script,
            scripted,
            events: Vec::new(),
            colliding: BTreeSet::new(),
            pending: BTreeMap::new(),
            labels,
        })
    }

    pub fn frame(&self) -> u64 {
        self.frame
    }

    pub fn agents(&self) -> &[SimAgent] {
        &self.agents
    }

    pub fn events(&self) -> &[SimEvent] {
        &self.events
    }

    fn lane_center(&self, lane: usize) -> f64 {
        (lane as f64 + 0.5) * self.cfg.lane_width
    }

    /// Lateral position and rate of an agent.
    pub fn lateral(&self, a: &SimAgent) -> (f64, f64) {
        match a.lane_change {
            None => (self.lane_center(a.lane), 0.0),
            Some(lc) => {
                let (y0, y1) = (self.lane_center(lc.from), self.lane_center(lc.to));
                let s = 0.5 * (1.0 - (PI * lc.progress).cos());
                let ds = 0.5 * PI * (PI * lc.progress).sin() * self.lc_step / self.cfg.timestep;
                (y0 + (y1 - y0) * s, (y1 - y0) * ds)
            }
        }
    }

    /// Snapshot of the current frame in the trajectory format.
    pub fn snapshot(&self) -> Vec<AgentFrame> {
        let t = self.frame as f64 * self.cfg.timestep;
        self.agents
            .iter()
            .map(|a| {
                let (y, vy) = self.lateral(a);
                AgentFrame {
                    timestamp: t,
                    agent_id: a.id.clone(),
                    agent_type: AgentType::Car,
                    position: Vec2::new(a.position, y),
                    velocity: Vec2::new(a.speed, vy),
                }
            })
            .collect()
    }

    /// Nearest vehicle ahead of `position` in `lane`, skipping `skip`.
    fn leader_in(&self, lane: usize, position: f64, skip: usize) -> Option<usize> {
        self.agents
            .iter()
            .enumerate()
            .filter(|&(k, a)| k != skip && a.lane == lane && a.position >= position)
            .min_by(|(i, a), (j, b)| a.position.total_cmp(&b.position).then(i.cmp(j)))
            .map(|(k, _)| k)
    }

    fn follower_in(&self, lane: usize, position: f64, skip: usize) -> Option<usize> {
        self.agents
            .iter()
            .enumerate()
            .filter(|&(k, a)| k != skip && a.lane == lane && a.position < position)
            .max_by(|(i, a), (j, b)| a.position.total_cmp(&b.position).then(j.cmp(i)))
            .map(|(k, _)| k)
    }

    fn apply_script(&mut self) {
        let Some(actions) = self.script.remove(&self.frame) else {
            return;
        };
        let dt = self.cfg.timestep;
        for (idx, action) in actions {
            let a = &mut self.agents[idx];
            match action {
                Action::TrackSpeed(v_ref) => {
                    let p = &mut a.params;
                    let a_ref = ((v_ref - a.speed) / dt).clamp(-p.comfort_decel, TRACKING_HEADROOM * p.max_accel);
                    // Inverts a [1 - (v / v0)^4] = a_ref for v0.
                    p.desired_speed = if a.speed > 0.0 {
                        a.speed / (1.0 - a_ref / p.max_accel).powf(0.25)
                    } else {
                        v_ref.max(a.base_desired_speed)
                    };
                }
                Action::RestoreSpeed => a.params.desired_speed = a.base_desired_speed,
                Action::ChangeLane(to) => {
                    if to != a.lane {
                        let from = a.lane;
                        a.lane_change = Some(LaneChange { from, to, progress: 0.0 });
                        a.lane = to;
                        self.events.push(SimEvent::LaneChange {
                            frame: self.frame,
                            agent: a.id.clone(),
                            from,
                            to,
                            scripted: true,
                        });
                    }
                }
            }
        }
    }

    fn scene(&self, idx: usize, target: usize) -> LaneScene {
        let ego = &self.agents[idx];
        let state = |k: Option<usize>| k.map(|k| self.agents[k].state());
        LaneScene {
            ego: ego.state(),
            current_leader: state(self.leader_in(ego.lane, ego.position, idx)),
            current_follower: state(self.follower_in(ego.lane, ego.position, idx)),
            target_leader: state(self.leader_in(target, ego.position, idx)),
            target_follower: state(self.follower_in(target, ego.position, idx)),
            vehicle_length: self.cfg.vehicle_length,
        }
    }

    /// Evaluates MOBIL for every eligible agent, applying approved changes in
    /// agent order against the state left by earlier changes.
    fn apply_mobil(&mut self) -> Result<()> {
        if self.frame % self.mobil_every != 0 {
            return Ok(());
        }
        for idx in 0..self.agents.len() {
            let a = &self.agents[idx];
            if !a.mobil_enabled || a.lane_change.is_some() || self.scripted.contains(&idx) {
                continue;
            }
            let lane = a.lane;
            let mut best: Option<(usize, MobilDecision)> = None;
            for target in [lane.checked_sub(1), Some(lane + 1)].into_iter().flatten() {
                if target >= self.cfg.lanes {
                    continue;
                }
                let d = mobil_decision(&self.scene(idx, target));
                if d.approved && best.as_ref().is_none_or(|(_, b)| d.incentive > b.incentive) {
                    best = Some((target, d));
                }
            }
            let Some((to, d)) = best else { continue };
            let p = &self.agents[idx].params;
            let safe = d.new_follower_accel.is_none_or(|n| n >= -p.safe_decel);
            if !(d.safe && safe && d.incentive > p.min_accel_gain) {
                return Err(Error::Invariant(format!(
                    "approved lane change of `{}` violates MOBIL criteria: {d:?}",
                    self.agents[idx].id
                )));
            }
            if let Some(leader) = self.leader_in(lane, self.agents[idx].position, idx) {
                self.pending.entry(idx).or_insert(PendingOvertake {
                    start_frame: self.frame,
                    passed: self.agents[leader].id.clone(),
                });
            }
            let a = &mut self.agents[idx];
            a.lane_change = Some(LaneChange { from: lane, to, progress: 0.0 });
            a.lane = to;
            self.events.push(SimEvent::LaneChange { frame: self.frame, agent: a.id.clone(), from: lane, to, scripted: false });
        }
        Ok(())
    }

    fn accelerations(&mut self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.agents.len());
        let mut colliding = BTreeSet::new();
        for idx in 0..self.agents.len() {
            let a = &self.agents[idx];
            let leader = self.leader_in(a.lane, a.position, idx);
            let gap = leader.map(|k| {
                let l = &self.agents[k];
                LeaderGap { gap: l.position - a.position - self.cfg.vehicle_length, speed: l.speed }
            });
            match idm_acceleration(&a.params, a.speed, gap) {
                Ok(acc) => out.push(acc),
                Err(c) => {
                    let k = leader.expect("collision implies a leader");
                    if !self.colliding.contains(&(idx, k)) {
                        log::warn!("frame {}: `{}` collided with `{}` (gap {:.2} m)", self.frame, a.id, self.agents[k].id, c.gap);
                        self.events.push(SimEvent::Collision {
                            frame: self.frame,
                            agent: a.id.clone(),
                            leader: self.agents[k].id.clone(),
                            gap: c.gap,
                        });
                    }
                    colliding.insert((idx, k));
                    out.push(-a.params.comfort_decel);
                }
            }
        }
        self.colliding = colliding;
        out
    }

    fn track_overtakes(&mut self) {
        let len = self.cfg.vehicle_length;
        let mut done = Vec::new();
        for (&idx, p) in &self.pending {
            let ego = &self.agents[idx];
            match self.agents.iter().find(|a| a.id == p.passed) {
                None => done.push((idx, None)),
                Some(l) if ego.position - l.position > len => done.push((idx, Some(p.start_frame))),
                Some(_) => {}
            }
        }
        for (idx, start) in done {
            self.pending.remove(&idx);
            if let Some(start_frame) = start {
                self.labels.push(GroundTruthLabel {
                    agent_id: self.agents[idx].id.clone(),
                    style: ManeuverStyle::Overtaking,
                    start_frame,
                    end_frame: self.frame,
                });
            }
        }
    }

    /// Advances the world by one timestep.
    pub fn step(&mut self) -> Result<()> {
        self.apply_script();
        self.apply_mobil()?;
        let acc = self.accelerations();
        let dt = self.cfg.timestep;
        let lc_step = self.lc_step;
        for (a, acc) in self.agents.iter_mut().zip(acc) {
            a.speed = (a.speed + acc * dt).max(0.0);
            a.position += a.speed * dt;
            if let Some(lc) = &mut a.lane_change {
                lc.progress += lc_step;
                if lc.progress >= 1.0 - 1e-9 {
                    a.lane_change = None;
                }
            }
        }
        self.frame += 1;
        let road = self.cfg.road_length;
        if self.agents.iter().any(|a| a.position > road) {
            let removed: BTreeSet<usize> =
                self.agents.iter().enumerate().filter(|(_, a)| a.position > road).map(|(k, _)| k).collect();
            self.remove_agents(&removed);
        }
        self.track_overtakes();
        Ok(())
    }

    fn remove_agents(&mut self, removed: &BTreeSet<usize>) {
        let remap = |k: usize| k - removed.range(..k).count();
        let mut keep = 0;
        self.agents.retain(|_| {
            keep += 1;
            !removed.contains(&(keep - 1))
        });
        self.scripted = self.scripted.iter().filter(|k| !removed.contains(k)).map(|&k| remap(k)).collect();
        self.pending = std::mem::take(&mut self.pending)
            .into_iter()
            .filter(|(k, _)| !removed.contains(k))
            .map(|(k, p)| (remap(k), p))
            .collect();
        self.colliding = self
            .colliding
            .iter()
            .filter(|(a, b)| !removed.contains(a) && !removed.contains(b))
            .map(|&(a, b)| (remap(a), remap(b)))
            .collect();
        for actions in self.script.values_mut() {
            actions.retain(|(k, _)| !removed.contains(k));
            for (k, _) in actions.iter_mut() {
                *k = remap(*k);
            }
        }
    }
}

/// Everything a scenario run produces.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub table: TrajectoryTable,
    pub labels: Vec<GroundTruthLabel>,
    pub events: Vec<SimEvent>,
    pub classes: BTreeMap<AgentId, DriverClass>,
    pub desired_speeds: BTreeMap<AgentId, f64>,
}

/// Runs a scenario to completion.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<SimOutput> {
    let mut world = World::new(cfg)?;
    let classes = world.agents.iter().map(|a| (a.id.clone(), a.class)).collect();
    let desired_speeds = world.agents.iter().map(|a| (a.id.clone(), a.base_desired_speed)).collect();
    let n = cfg.frame_count();
    let mut frames = BTreeMap::new();
    for k in 0..n {
        let snap = world.snapshot();
        if !snap.is_empty() {
            frames.insert(k, snap);
        }
        if k + 1 < n {
            world.step()?;
        }
    }
    let table = TrajectoryTable::from_frames(frames, cfg.frame_rate_hz())?;
    let mut labels = world.labels;
    labels.sort_by(|a, b| (a.start_frame, &a.agent_id, a.style).cmp(&(b.start_frame, &b.agent_id, b.style)));
    Ok(SimOutput { table, labels, events: world.events, classes, desired_speeds })
}
