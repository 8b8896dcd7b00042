//! Trajectory ingestion.
//!
//! Input is UTF-8 CSV with header `timestamp,agent_id,agent_type,x,y[,vx,vy]`.
//! Lines starting with `#` are comments and unknown columns are ignored.
//! Rows are bucketed into frames by `floor(timestamp * frame_rate_hz)`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absorbs representation error in `timestamp * rate` so that e.g. a
/// timestamp written as `0.3` at 10 Hz lands in frame 3, not 2.
const FRAME_INDEX_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub String);

impl AgentId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        AgentId(s.to_owned())
    }
}

impl From<String> for AgentId {
    fn from(s: String) -> Self {
        AgentId(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentType {
    Car,
    Bus,
    Truck,
    TwoWheeler,
    ThreeWheeler,
    Pedestrian,
    Other,
}

impl AgentType {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentType::Car => "car",
            AgentType::Bus => "bus",
            AgentType::Truck => "truck",
            AgentType::TwoWheeler => "two_wheeler",
            AgentType::ThreeWheeler => "three_wheeler",
            AgentType::Pedestrian => "pedestrian",
            AgentType::Other => "other",
        }
    }

    /// Unrecognised labels map to `Other`.
    pub fn parse(s: &str) -> Self {
        match s.trim().to_ascii_lowercase().as_str() {
            "car" => AgentType::Car,
            "bus" => AgentType::Bus,
            "truck" => AgentType::Truck,
            "two_wheeler" | "motorcycle" | "bicycle" => AgentType::TwoWheeler,
            "three_wheeler" | "rickshaw" => AgentType::ThreeWheeler,
            "pedestrian" => AgentType::Pedestrian,
            _ => AgentType::Other,
        }
    }
}

/// Planar vector in meters (or m/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn norm_squared(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

/// One agent observed at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentFrame {
    pub timestamp: f64,
    pub agent_id: AgentId,
    pub agent_type: AgentType,
    pub position: Vec2,
    pub velocity: Vec2,
}

impl AgentFrame {
    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }
}

/// Canonical trajectory table: frames keyed by discrete index, agents within
/// a frame sorted by id. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    frames: BTreeMap<u64, Vec<AgentFrame>>,
    frame_rate_hz: f64,
    agent_count_max: usize,
}

impl TrajectoryTable {
    /// Empty table, as produced by a zero-length simulation.
    pub fn empty(frame_rate_hz: f64) -> Result<Self> {
        check_rate(frame_rate_hz)?;
        Ok(TrajectoryTable { frames: BTreeMap::new(), frame_rate_hz, agent_count_max: 0 })
    }

    /// Builds a table from already-indexed frames, enforcing the same
    /// invariants as [`parse_trajectories`].
    pub fn from_frames(frames: BTreeMap<u64, Vec<AgentFrame>>, frame_rate_hz: f64) -> Result<Self> {
        check_rate(frame_rate_hz)?;
        let mut frames = frames;
        frames.retain(|_, v| !v.is_empty());
        for agents in frames.values_mut() {
            agents.sort_by(|a, b| a.agent_id.cmp(&b.agent_id));
            for pair in agents.windows(2) {
                if pair[0].agent_id == pair[1].agent_id {
                    return Err(Error::Validation(format!(
                        "agent `{}` appears twice in one frame",
                        pair[0].agent_id
                    )));
                }
            }
        }
        let mut runs: HashMap<&AgentId, (u64, f64)> = HashMap::new();
        for (&t, agents) in &frames {
            for a in agents {
                if !a.position.is_finite() || !a.velocity.is_finite() {
                    return Err(Error::Validation(format!(
                        "non-finite state for agent `{}` at frame {t}",
                        a.agent_id
                    )));
                }
                if let Some(&(last, ts)) = runs.get(&a.agent_id) {
                    if t != last + 1 {
                        return Err(Error::Validation(format!(
                            "agent `{}` reappears at frame {t} after leaving at frame {last}",
                            a.agent_id
                        )));
                    }
                    if a.timestamp <= ts {
                        return Err(Error::Validation(format!(
                            "timestamps for agent `{}` are not strictly increasing",
                            a.agent_id
                        )));
                    }
                }
                runs.insert(&a.agent_id, (t, a.timestamp));
            }
        }
        let agent_count_max = runs.len();
        Ok(TrajectoryTable { frames, frame_rate_hz, agent_count_max })
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    /// Number of distinct agents in the table.
    pub fn agent_count_max(&self) -> usize {
        self.agent_count_max
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &BTreeMap<u64, Vec<AgentFrame>> {
        &self.frames
    }

    pub fn frame(&self, t: u64) -> Option<&[AgentFrame]> {
        self.frames.get(&t).map(Vec::as_slice)
    }

    /// Inclusive range of populated frame indices.
    pub fn frame_range(&self) -> Option<(u64, u64)> {
        let first = *self.frames.keys().next()?;
        let last = *self.frames.keys().next_back()?;
        Some((first, last))
    }

    /// Frame time in seconds.
    pub fn time_of(&self, t: u64) -> f64 {
        t as f64 / self.frame_rate_hz
    }

    /// Inclusive frame span of every agent, sorted by agent id.
    pub fn agent_spans(&self) -> BTreeMap<AgentId, (u64, u64)> {
        let mut spans: BTreeMap<AgentId, (u64, u64)> = BTreeMap::new();
        for (&t, agents) in &self.frames {
            for a in agents {
                spans
                    .entry(a.agent_id.clone())
                    .and_modify(|s| s.1 = t)
                    .or_insert((t, t));
            }
        }
        spans
    }

    /// Writes the table in the ingest format, always including velocity.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = std::io::BufWriter::new(out);
        writeln!(w, "timestamp,agent_id,agent_type,x,y,vx,vy")?;
        for agents in self.frames.values() {
            for a in agents {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    a.timestamp,
                    a.agent_id,
                    a.agent_type.as_str(),
                    a.position.x,
                    a.position.y,
                    a.velocity.x,
                    a.velocity.y
                )?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

fn check_rate(frame_rate_hz: f64) -> Result<()> {
    if frame_rate_hz.is_finite() && frame_rate_hz > 0.0 {
        Ok(())
    } else {
        Err(Error::Validation(format!("frame rate must be positive, got {frame_rate_hz}")))
    }
}

struct Columns {
    timestamp: usize,
    agent_id: usize,
    agent_type: usize,
    x: usize,
    y: usize,
    velocity: Option<(usize, usize)>,
}

impl Columns {
    fn from_header(header: &csv::StringRecord) -> Result<Self> {
        let find = |name: &str| header.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
        let require = |name: &str| {
            find(name).ok_or_else(|| Error::Parse { line: 1, message: format!("missing column `{name}`") })
        };
        let velocity = match (find("vx"), find("vy")) {
            (Some(vx), Some(vy)) => Some((vx, vy)),
            (None, None) => None,
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: "`vx` and `vy` must be given together".into(),
                })
            }
        };
        Ok(Columns {
            timestamp: require("timestamp")?,
            agent_id: require("agent_id")?,
            agent_type: require("agent_type")?,
            x: require("x")?,
            y: require("y")?,
            velocity,
        })
    }
}

struct RawRow {
    line: u64,
    timestamp: f64,
    agent_id: AgentId,
    agent_type: AgentType,
    position: Vec2,
    velocity: Option<Vec2>,
}

fn field<'r>(rec: &'r csv::StringRecord, idx: usize, line: u64, name: &str) -> Result<&'r str> {
    rec.get(idx)
        .map(str::trim)
        .ok_or_else(|| Error::Parse { line, message: format!("missing field `{name}`") })
}

fn number(rec: &csv::StringRecord, idx: usize, line: u64, name: &str) -> Result<f64> {
    let raw = field(rec, idx, line, name)?;
    let v: f64 = raw
        .parse()
        .map_err(|_| Error::Parse { line, message: format!("`{name}` is not a number: `{raw}`") })?;
    if !v.is_finite() {
        return Err(Error::Parse { line, message: format!("`{name}` is not finite") });
    }
    Ok(v)
}

/// Parses a trajectory stream into a [`TrajectoryTable`].
///
/// Rows lacking velocity get a forward finite difference over the agent's
/// own samples (backward difference on its last sample). An agent seen only
/// once without velocity is assigned zero velocity.
pub fn parse_trajectories<R: Read>(source: R, frame_rate_hz: f64) -> Result<TrajectoryTable> {
    check_rate(frame_rate_hz)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .clone();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(Error::Validation("empty trajectory stream".into()));
    }
    let cols = Columns::from_header(&header)?;

    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let timestamp = number(&rec, cols.timestamp, line, "timestamp")?;
        if timestamp < 0.0 {
            return Err(Error::Parse { line, message: "negative timestamp".into() });
        }
        let agent_id = field(&rec, cols.agent_id, line, "agent_id")?;
        if agent_id.is_empty() {
            return Err(Error::Parse { line, message: "empty agent_id".into() });
        }
        let agent_type = AgentType::parse(field(&rec, cols.agent_type, line, "agent_type")?);
        let position = Vec2::new(number(&rec, cols.x, line, "x")?, number(&rec, cols.y, line, "y")?);
        let velocity = match cols.velocity {
            Some((ix, iy)) => {
                let present = |i| rec.get(i).map(|s| !s.trim().is_empty()).unwrap_or(false);
                match (present(ix), present(iy)) {
                    (true, true) => Some(Vec2::new(number(&rec, ix, line, "vx")?, number(&rec, iy, line, "vy")?)),
                    (false, false) => None,
                    _ => return Err(Error::Parse { line, message: "only one of vx/vy given".into() }),
                }
            }
            None => None,
        };
        rows.push(RawRow { line, timestamp, agent_id: AgentId::from(agent_id), agent_type, position, velocity });
    }
    if rows.is_empty() {
        return Err(Error::Validation("empty trajectory stream".into()));
    }

    // Group per agent, preserving file order, to validate and difference.
    let mut per_agent: BTreeMap<AgentId, Vec<RawRow>> = BTreeMap::new();
    for row in rows {
        per_agent.entry(row.agent_id.clone()).or_default().push(row);
    }

    let mut frames: BTreeMap<u64, Vec<AgentFrame>> = BTreeMap::new();
    for (id, samples) in per_agent {
        for pair in samples.windows(2) {
            if pair[1].timestamp == pair[0].timestamp {
                return Err(Error::Validation(format!(
                    "agent `{id}` has two rows at timestamp {} (line {})",
                    pair[1].timestamp, pair[1].line
                )));
            }
            if pair[1].timestamp < pair[0].timestamp {
                return Err(Error::Validation(format!(
                    "timestamps for agent `{id}` decrease at line {}",
                    pair[1].line
                )));
            }
        }
        let n = samples.len();
        for k in 0..n {
            let s = &samples[k];
            let velocity = match s.velocity {
                Some(v) => v,
                None if n == 1 => Vec2::ZERO,
                None => {
                    let (a, b) = if k + 1 < n { (&samples[k], &samples[k + 1]) } else { (&samples[k - 1], &samples[k]) };
                    (b.position - a.position) * (1.0 / (b.timestamp - a.timestamp))
                }
            };
            let index = (s.timestamp * frame_rate_hz + FRAME_INDEX_SLACK).floor() as u64;
            let bucket = frames.entry(index).or_default();
            if bucket.iter().any(|f| f.agent_id == id) {
                return Err(Error::Validation(format!(
                    "agent `{id}` maps to frame {index} twice (line {})",
                    s.line
                )));
            }
            bucket.push(AgentFrame {
                timestamp: s.timestamp,
                agent_id: id.clone(),
                agent_type: s.agent_type,
                position: s.position,
                velocity,
            });
        }
    }
    TrajectoryTable::from_frames(frames, frame_rate_hz)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str, rate: f64) -> Result<TrajectoryTable> {
        parse_trajectories(s.as_bytes(), rate)
    }

    #[test]
    fn derives_velocity_by_finite_difference() {
        let t = parse("timestamp,agent_id,agent_type,x,y\n0.0,a,car,0,0\n0.5,a,car,5,0\n", 2.0).unwrap();
        assert_eq!(t.frames().keys().copied().collect::<Vec<_>>(), vec![0, 1]);
        for f in [0, 1] {
            let a = &t.frame(f).unwrap()[0];
            assert_eq!(a.velocity, Vec2::new(10.0, 0.0));
        }
    }

    #[test]
    fn passes_through_given_velocity() {
        let t = parse("timestamp,agent_id,agent_type,x,y,vx,vy\n1.0,a,bus,3,4,1.5,-2\n", 10.0).unwrap();
        assert_eq!(t.frames().len(), 1);
        let a = &t.frame(10).unwrap()[0];
        assert_eq!(a.velocity, Vec2::new(1.5, -2.0));
        assert_eq!(a.agent_type, AgentType::Bus);
    }

    #[test]
    fn duplicate_timestamp_is_rejected() {
        let err = parse("timestamp,agent_id,agent_type,x,y\n0.0,a,car,0,0\n0.0,a,car,1,0\n", 2.0).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn decreasing_timestamps_are_rejected() {
        let err = parse("timestamp,agent_id,agent_type,x,y\n1.0,a,car,0,0\n0.5,a,car,1,0\n", 2.0).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = parse("timestamp,agent_id,agent_type,x,y\n# note\n0.0,a,car,0,0\n0.5,a,car,zz,0\n", 2.0).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn empty_stream_is_rejected() {
        assert!(matches!(parse("", 2.0), Err(Error::Validation(_))));
        assert!(matches!(parse("timestamp,agent_id,agent_type,x,y\n", 2.0), Err(Error::Validation(_))));
    }

    #[test]
    fn reappearance_after_gap_is_rejected() {
        let src = "timestamp,agent_id,agent_type,x,y\n0,a,car,0,0\n1,a,car,1,0\n3,a,car,3,0\n";
        assert!(matches!(parse(src, 1.0), Err(Error::Validation(_))));
    }

    #[test]
    fn extra_columns_are_ignored() {
        let src = "timestamp,agent_id,agent_type,x,y,location\n0,a,car,0,0,pittsburgh\n";
        let t = parse(src, 1.0).unwrap();
        assert_eq!(t.agent_count_max(), 1);
    }

    #[test]
    fn interior_speed_matches_displacement_rate() {
        let rate = 10.0;
        let mut src = String::from("timestamp,agent_id,agent_type,x,y\n");
        for k in 0..20 {
            let t = k as f64 / rate;
            src.push_str(&format!("{t},a,car,{},{}\n", 1.0 + 3.0 * t, -2.0 + 4.0 * t));
        }
        let table = parse(&src, rate).unwrap();
        for k in 1..19u64 {
            let cur = &table.frame(k).unwrap()[0];
            let next = &table.frame(k + 1).unwrap()[0];
            let expected = (next.position - cur.position).norm() * rate;
            assert!((cur.speed() - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_rate_is_rejected() {
        assert!(parse("timestamp,agent_id,agent_type,x,y\n0,a,car,0,0\n", 0.0).is_err());
    }
}
