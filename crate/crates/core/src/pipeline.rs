//! End-to-end analysis: trajectories to per-agent style reports, plus
//! threshold calibration.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::centrality::{compute_series, AgentSeries, CentralitySeries, FrameWindow};
use crate::config::{AnalysisConfig, ThresholdsFile};
use crate::error::{Error, Result};
use crate::evaluation::{ManeuverKey, ManeuverStyle, Predictions};
use crate::ingest::{AgentId, TrajectoryTable};
use crate::sim::{run_scenario, DriverClass, ScenarioConfig};
use crate::regression::{fit, CentralityPolynomial, MIN_SAMPLES};
use crate::style::{classify, detect_weaving, exceeds, CriticalPoint, DetectedStyle, GlobalLabel, StyleThresholds, WindowStyles};

pub const REPORT_SCHEMA_VERSION: &str = "1.0";

/// Fits and styles of one analysis window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub start_frame: u64,
    pub end_frame: u64,
    pub degree_fit: CentralityPolynomial,
    pub closeness_fit: CentralityPolynomial,
    pub styles: WindowStyles,
}

/// Whole-run maximum of one style's SLE over all windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleSummary {
    pub sle_max: f64,
    pub t_sle: f64,
    /// `t_sle` as a (possibly fractional) frame index.
    pub frame: f64,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentReport {
    pub agent_id: AgentId,
    pub first_frame: u64,
    pub last_frame: u64,
    pub windows: Vec<WindowReport>,
    pub overspeeding: Option<StyleSummary>,
    pub overtaking_or_sudden_lane_change: Option<StyleSummary>,
    /// Critical points of every window, merged across overlapping windows.
    pub weaving_points: Vec<CriticalPoint>,
    /// `sle_max` is the number of merged points sharper than the weaving
    /// threshold, `t_sle` the sharpness-weighted mean time of all of them.
    pub weaving: Option<StyleSummary>,
    /// Largest sharpness of any critical point, thresholded or not.
    pub max_sharpness: f64,
    pub detected: Vec<DetectedStyle>,
    pub global_label: GlobalLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: String,
    pub video_id: String,
    pub frame_rate_hz: f64,
    pub config: AnalysisConfig,
    pub agents: Vec<AgentReport>,
}

impl RunReport {
    pub fn agent(&self, id: &AgentId) -> Option<&AgentReport> {
        self.agents.iter().find(|a| &a.agent_id == id)
    }

    /// Predicted frame per (video, agent, style). Overtaking and sudden lane
    /// change share the closeness prediction.
    pub fn predictions(&self) -> Predictions {
        let mut out = Predictions::new();
        for a in &self.agents {
            let key = |style| ManeuverKey { video_id: self.video_id.clone(), agent_id: a.agent_id.clone(), style };
            if let Some(s) = a.overspeeding {
                out.insert(key(ManeuverStyle::Overspeeding), s.frame);
            }
            if let Some(s) = a.overtaking_or_sudden_lane_change {
                out.insert(key(ManeuverStyle::Overtaking), s.frame);
                out.insert(key(ManeuverStyle::SuddenLaneChange), s.frame);
            }
            if let Some(s) = a.weaving {
                out.insert(key(ManeuverStyle::Weaving), s.frame);
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: RunReport = serde_json::from_str(s)?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Validation(format!(
                "report schema {} does not match expected {REPORT_SCHEMA_VERSION}",
                r.schema_version
            )));
        }
        Ok(r)
    }
}

/// Sliding windows over `[first, last]`: `len` frames every `stride` frames,
/// with a final window flush against `last`. A span no longer than one
/// window yields that span.
pub fn sliding_windows(first: u64, last: u64, len: u64, stride: u64) -> Vec<FrameWindow> {
    if last < first {
        return Vec::new();
    }
    if last - first < len {
        return vec![FrameWindow::new(first, last)];
    }
    let mut out = Vec::new();
    let mut start = first;
    while start + len - 1 <= last {
        out.push(FrameWindow::new(start, start + len - 1));
        start += stride;
    }
    if out.last().is_some_and(|w| w.end < last) {
        out.push(FrameWindow::new(last + 1 - len, last));
    }
    out
}

fn whole_run_max(windows: &[WindowReport], pick: impl Fn(&WindowStyles) -> (f64, f64), rate: f64) -> Option<StyleSummary> {
    let mut best: Option<StyleSummary> = None;
    for (k, w) in windows.iter().enumerate() {
        let (sle_max, t_sle) = pick(&w.styles);
        if best.is_none_or(|b| sle_max > b.sle_max) {
            best = Some(StyleSummary { sle_max, t_sle, frame: t_sle * rate, window: k });
        }
    }
    best
}

/// Merges critical points closer than `epsilon`, keeping the sharpest.
fn merge_points(mut points: Vec<CriticalPoint>, epsilon: f64) -> Vec<CriticalPoint> {
    points.sort_by(|a, b| a.t_c.total_cmp(&b.t_c));
    let mut out: Vec<CriticalPoint> = Vec::new();
    for p in points {
        match out.last_mut() {
            Some(q) if p.t_c - q.t_c < epsilon => {
                if p.sharpness > q.sharpness {
                    *q = p;
                }
            }
            _ => out.push(p),
        }
    }
    out
}

/// Sharpness-weighted mean time of critical points.
fn weighted_time(points: &[CriticalPoint]) -> Option<f64> {
    let total: f64 = points.iter().map(|p| p.sharpness).sum();
    (total > 0.0).then(|| points.iter().map(|p| p.sharpness * p.t_c).sum::<f64>() / total)
}

fn analyze_agent(series: &AgentSeries, cfg: &AnalysisConfig, rate: f64) -> Result<Option<AgentReport>> {
    let frames = &series.degree.values;
    let (Some(&(first, _)), Some(&(last, _))) = (frames.first(), frames.last()) else {
        return Ok(None);
    };
    if frames.len() < MIN_SAMPLES {
        return Ok(None);
    }
    let (len, stride) = cfg.window_frames(rate);
    let mut windows = Vec::new();
    let mut raw_points = Vec::new();
    for w in sliding_windows(first, last, len, stride) {
        let deg: CentralitySeries = series.degree.slice(w);
        let clo: CentralitySeries = series.closeness.slice(w);
        if deg.values.len() < MIN_SAMPLES {
            continue;
        }
        let degree_fit = fit(&deg, rate, cfg.alpha)?;
        let closeness_fit = fit(&clo, rate, cfg.alpha)?;
        let times: Vec<f64> = deg.values.iter().map(|&(t, _)| t as f64 / rate).collect();
        let span = (times[0], times[times.len() - 1]);
        let points = detect_weaving(&closeness_fit, span, cfg.epsilon)?;
        let styles = classify(&degree_fit, &closeness_fit, &points, &times, &cfg.thresholds)?;
        raw_points.extend(points);
        windows.push(WindowReport { start_frame: w.start, end_frame: w.end, degree_fit, closeness_fit, styles });
    }
    if windows.is_empty() {
        return Ok(None);
    }

    let overspeeding = whole_run_max(&windows, |s| (s.overspeeding.sle_max, s.overspeeding.t_sle), rate);
    let lateral = whole_run_max(
        &windows,
        |s| (s.overtaking_or_sudden_lane_change.sle_max, s.overtaking_or_sudden_lane_change.t_sle),
        rate,
    );
    let max_sharpness = raw_points.iter().map(|p| p.sharpness).fold(0.0, f64::max);
    let tau_w = cfg.thresholds.weaving_sharpness;
    let weaving_points = merge_points(raw_points, cfg.epsilon);
    let weaving = weighted_time(&weaving_points).map(|t| StyleSummary {
        sle_max: weaving_points.iter().filter(|p| exceeds(p.sharpness, tau_w)).count() as f64,
        t_sle: t,
        frame: t * rate,
        window: 0,
    });

    let mut detected: Vec<DetectedStyle> = windows.iter().flat_map(|w| w.styles.detected.iter().copied()).collect();
    detected.sort();
    detected.dedup();
    let global_label = if windows.iter().any(|w| w.styles.label == GlobalLabel::Aggressive) {
        GlobalLabel::Aggressive
    } else {
        GlobalLabel::Conservative
    };
    if global_label == GlobalLabel::Aggressive {
        detected.retain(|d| *d != DetectedStyle::Conservative);
    }

    Ok(Some(AgentReport {
        agent_id: series.degree.agent_id.clone(),
        first_frame: first,
        last_frame: last,
        windows,
        overspeeding,
        overtaking_or_sudden_lane_change: lateral,
        weaving_points,
        weaving,
        max_sharpness,
        detected,
        global_label,
    }))
}

/// Full pipeline over a trajectory table. Agents observed in fewer than
/// three frames are omitted from the report.
pub fn analyze(table: &TrajectoryTable, cfg: &AnalysisConfig, video_id: &str) -> Result<(RunReport, BTreeMap<AgentId, AgentSeries>)> {
    cfg.validate()?;
    let rate = table.frame_rate_hz();
    let Some((first, last)) = table.frame_range() else {
        let report = RunReport {
            schema_version: REPORT_SCHEMA_VERSION.into(),
            video_id: video_id.into(),
            frame_rate_hz: rate,
            config: *cfg,
            agents: Vec::new(),
        };
        return Ok((report, BTreeMap::new()));
    };
    let series = compute_series(table, cfg.mu, FrameWindow::new(first, last), cfg.capacity)?;
    let agents: Vec<AgentReport> = series
        .par_iter()
        .map(|(_, s)| analyze_agent(s, cfg, rate))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION.into(),
        video_id: video_id.into(),
        frame_rate_hz: rate,
        config: *cfg,
        agents,
    };
    Ok((report, series))
}

pub const CALIBRATION_PERCENTILE: f64 = 90.0;

/// Smallest threshold calibration will emit; keeps thresholds strictly
/// positive when conservative agents show no activity at all.
pub const THRESHOLD_FLOOR: f64 = 1e-9;

/// Linear-interpolation percentile of `values`, `q` in [0, 100].
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=100.0).contains(&q) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// Per-agent activity used for calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentActivity {
    pub degree_sle_max: f64,
    pub closeness_sle_max: f64,
    pub max_sharpness: f64,
}

impl AgentActivity {
    pub fn of(report: &AgentReport) -> Self {
        AgentActivity {
            degree_sle_max: report.overspeeding.map_or(0.0, |s| s.sle_max),
            closeness_sle_max: report.overtaking_or_sudden_lane_change.map_or(0.0, |s| s.sle_max),
            max_sharpness: report.max_sharpness,
        }
    }
}

/// Thresholds at the given percentile of conservative agents' activity.
pub fn calibrate_thresholds(activity: &[AgentActivity], q: f64) -> Result<StyleThresholds> {
    if activity.is_empty() {
        return Err(Error::Validation("calibration set has no conservative agents".into()));
    }
    let pick = |f: fn(&AgentActivity) -> f64| -> f64 {
        let v: Vec<f64> = activity.iter().map(f).collect();
        percentile(&v, q).expect("non-empty").max(THRESHOLD_FLOOR)
    };
    Ok(StyleThresholds {
        degree: pick(|a| a.degree_sle_max),
        closeness: pick(|a| a.closeness_sle_max),
        weaving_sharpness: pick(|a| a.max_sharpness),
    })
}

/// Simulates each scenario, analyses it with `cfg` and takes thresholds at
/// the calibration percentile of its conservative-class agents.
pub fn calibrate(scenarios: &[ScenarioConfig], cfg: &AnalysisConfig) -> Result<ThresholdsFile> {
    if scenarios.is_empty() {
        return Err(Error::Validation("calibration scenario set is empty".into()));
    }
    let per_run: Vec<Vec<AgentActivity>> = scenarios
        .par_iter()
        .enumerate()
        .map(|(k, sc)| {
            let out = run_scenario(sc)?;
            let (report, _) = analyze(&out.table, cfg, &format!("calibration-{k}"))?;
            Ok(report
                .agents
                .iter()
                .filter(|a| out.classes.get(&a.agent_id) == Some(&DriverClass::Conservative))
                .map(AgentActivity::of)
                .collect())
        })
        .collect::<Result<_>>()?;
    let activity: Vec<AgentActivity> = per_run.into_iter().flatten().collect();
    let thresholds = calibrate_thresholds(&activity, CALIBRATION_PERCENTILE)?;
    log::info!("calibrated on {} conservative agents from {} runs", activity.len(), scenarios.len());
    Ok(ThresholdsFile { thresholds, conservative_agents: activity.len(), percentile: CALIBRATION_PERCENTILE })
}
