//! Annotation aggregation and Time Deviation Error.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::AgentId;

/// Maneuver styles that carry ground-truth timing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ManeuverStyle {
    #[serde(rename = "OS")]
    Overspeeding,
    #[serde(rename = "OT")]
    Overtaking,
    #[serde(rename = "SLC")]
    SuddenLaneChange,
    #[serde(rename = "W")]
    Weaving,
}

impl ManeuverStyle {
    pub const ALL: [ManeuverStyle; 4] = [
        ManeuverStyle::Overspeeding,
        ManeuverStyle::Overtaking,
        ManeuverStyle::SuddenLaneChange,
        ManeuverStyle::Weaving,
    ];

    pub fn code(self) -> &'static str {
        match self {
            ManeuverStyle::Overspeeding => "OS",
            ManeuverStyle::Overtaking => "OT",
            ManeuverStyle::SuddenLaneChange => "SLC",
            ManeuverStyle::Weaving => "W",
        }
    }
}

impl fmt::Display for ManeuverStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ManeuverStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "os" | "overspeeding" => Ok(ManeuverStyle::Overspeeding),
            "ot" | "overtaking" => Ok(ManeuverStyle::Overtaking),
            "slc" | "sudden_lane_change" => Ok(ManeuverStyle::SuddenLaneChange),
            "w" | "weaving" => Ok(ManeuverStyle::Weaving),
            other => Err(Error::Validation(format!("unknown maneuver style `{other}`"))),
        }
    }
}

/// Key of one annotated maneuver.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ManeuverKey {
    pub video_id: String,
    pub agent_id: AgentId,
    pub style: ManeuverStyle,
}

/// Inclusive frame interval marked by one annotator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub start: u64,
    pub end: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationSet {
    pub entries: BTreeMap<ManeuverKey, Vec<Interval>>,
}

impl AnnotationSet {
    pub fn insert(&mut self, key: ManeuverKey, interval: Interval) -> Result<()> {
        if interval.start > interval.end {
            return Err(Error::Validation(format!(
                "annotation for agent `{}` starts at {} after it ends at {}",
                key.agent_id, interval.start, interval.end
            )));
        }
        self.entries.entry(key).or_default().push(interval);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Reads `video_id,agent_id,style,annotator_id,start_frame,end_frame`, or
    /// the four-column ground-truth form `agent_id,style,start_frame,end_frame`
    /// in which case every row belongs to `default_video`.
    pub fn read_csv<R: Read>(source: R, default_video: &str) -> Result<AnnotationSet> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(source);
        let header = reader.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?.clone();
        let col = |name: &str| header.iter().position(|h| h.eq_ignore_ascii_case(name));
        let need = |name: &str| col(name).ok_or_else(|| Error::Parse { line: 1, message: format!("missing column `{name}`") });
        let (agent, style, start, end) = (need("agent_id")?, need("style")?, need("start_frame")?, need("end_frame")?);
        let video = col("video_id");

        let mut set = AnnotationSet::default();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::Parse {
                line: e.position().map(|p| p.line()).unwrap_or(0),
                message: e.to_string(),
            })?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let get = |i: usize| rec.get(i).ok_or_else(|| Error::Parse { line, message: "short row".into() });
            let frame = |i: usize| -> Result<u64> {
                let raw = get(i)?;
                raw.parse().map_err(|_| Error::Parse { line, message: format!("bad frame `{raw}`") })
            };
            let key = ManeuverKey {
                video_id: match video {
                    Some(v) => get(v)?.to_owned(),
                    None => default_video.to_owned(),
                },
                agent_id: AgentId::from(get(agent)?),
                style: get(style)?.parse().map_err(|e: Error| Error::Parse { line, message: e.to_string() })?,
            };
            set.insert(key, Interval { start: frame(start)?, end: frame(end)? })?;
        }
        Ok(set)
    }
}

/// Per-frame annotator counts over `[s*, e*]` and their expectation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalDistribution {
    pub support: (u64, u64),
    pub counts: Vec<u32>,
    pub probabilities: Vec<f64>,
    /// Expected frame (fractional).
    pub expectation: f64,
}

/// Aggregates annotator intervals into a frame distribution. Counts are
/// normalised to a probability mass function before taking the expectation.
pub fn expected_frame(intervals: &[Interval]) -> Result<TemporalDistribution> {
    if intervals.is_empty() {
        return Err(Error::Validation("no annotations to aggregate".into()));
    }
    if let Some(bad) = intervals.iter().find(|i| i.start > i.end) {
        return Err(Error::Validation(format!("interval [{}, {}] is reversed", bad.start, bad.end)));
    }
    let s_star = intervals.iter().map(|i| i.start).min().expect("non-empty");
    let e_star = intervals.iter().map(|i| i.end).max().expect("non-empty");
    let counts: Vec<u32> = (s_star..=e_star)
        .map(|t| intervals.iter().filter(|i| i.start <= t && t <= i.end).count() as u32)
        .collect();
    let total: f64 = counts.iter().map(|&c| c as f64).sum();
    let probabilities: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
    let expectation = probabilities
        .iter()
        .enumerate()
        .map(|(k, p)| (s_star + k as u64) as f64 * p)
        .sum();
    Ok(TemporalDistribution { support: (s_star, e_star), counts, probabilities, expectation })
}

/// `|t_sle - E[T]| / f`, in seconds.
pub fn tde(t_sle: f64, expected: f64, frame_rate_hz: f64) -> f64 {
    ((t_sle - expected) / frame_rate_hz).abs()
}

/// Predicted maneuver frame per (video, agent, style).
pub type Predictions = BTreeMap<ManeuverKey, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdeRow {
    pub style: ManeuverStyle,
    /// Mean TDE in seconds over matched maneuvers; `None` when none matched.
    pub mean_tde: Option<f64>,
    pub count: usize,
    pub missing: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TdeTable {
    pub rows: Vec<TdeRow>,
    /// Individual (label, TDE seconds) pairs behind the means.
    #[serde(default)]
    pub details: Vec<TdeDetail>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdeDetail {
    pub video_id: String,
    pub agent_id: AgentId,
    pub style: ManeuverStyle,
    pub expected_frame: f64,
    pub predicted_frame: Option<f64>,
    pub tde: Option<f64>,
}

impl TdeTable {
    pub fn row(&self, style: ManeuverStyle) -> Option<&TdeRow> {
        self.rows.iter().find(|r| r.style == style)
    }

    pub fn missing_total(&self) -> usize {
        self.rows.iter().map(|r| r.missing).sum()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = std::io::BufWriter::new(out);
        writeln!(w, "style,mean_tde_s,count,missing")?;
        for r in &self.rows {
            let mean = r.mean_tde.map(|m| format!("{m:.4}")).unwrap_or_default();
            writeln!(w, "{},{mean},{},{}", r.style, r.count, r.missing)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean TDE per style. Labels whose (video, agent, style) has no prediction
/// are counted as missing and excluded from the mean.
pub fn evaluate_run(predictions: &Predictions, labels: &AnnotationSet, frame_rate_hz: f64) -> Result<TdeTable> {
    if !(frame_rate_hz > 0.0) {
        return Err(Error::Validation(format!("frame rate must be positive, got {frame_rate_hz}")));
    }
    let mut sums: BTreeMap<ManeuverStyle, (f64, usize, usize)> = BTreeMap::new();
    let mut details = Vec::new();
    for (key, intervals) in &labels.entries {
        let dist = expected_frame(intervals)?;
        let slot = sums.entry(key.style).or_insert((0.0, 0, 0));
        let predicted = predictions.get(key).copied();
        let err = predicted.map(|p| tde(p, dist.expectation, frame_rate_hz));
        match err {
            Some(e) => {
                slot.0 += e;
                slot.1 += 1;
            }
            None => slot.2 += 1,
        }
        details.push(TdeDetail {
            video_id: key.video_id.clone(),
            agent_id: key.agent_id.clone(),
            style: key.style,
            expected_frame: dist.expectation,
            predicted_frame: predicted,
            tde: err,
        });
    }
    let rows = sums
        .into_iter()
        .map(|(style, (sum, count, missing))| TdeRow {
            style,
            mean_tde: (count > 0).then(|| sum / count as f64),
            count,
            missing,
        })
        .collect();
    Ok(TdeTable { rows, details })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(s: u64, e: u64) -> Interval {
        Interval { start: s, end: e }
    }

    #[test]
    fn single_annotator_uniform() {
        let d = expected_frame(&[iv(10, 12)]).unwrap();
        assert_eq!(d.counts, vec![1, 1, 1]);
        assert!((d.expectation - 11.0).abs() < 1e-12);
    }

    #[test]
    fn two_annotators_overlapping() {
        let d = expected_frame(&[iv(10, 12), iv(12, 14)]).unwrap();
        assert_eq!(d.support, (10, 14));
        assert_eq!(d.counts, vec![1, 1, 2, 1, 1]);
        assert!((d.expectation - 12.0).abs() < 1e-12);
        assert!((d.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn point_annotation() {
        let d = expected_frame(&[iv(42, 42)]).unwrap();
        assert_eq!(d.expectation, 42.0);
    }

    #[test]
    fn empty_annotations_rejected() {
        assert!(matches!(expected_frame(&[]), Err(Error::Validation(_))));
    }

    #[test]
    fn tde_examples() {
        assert!((tde(7.0, 5.0, 30.0) - 2.0 / 30.0).abs() < 1e-12);
        assert_eq!(tde(9.0, 9.0, 10.0), 0.0);
        assert_eq!(tde(20.0, 10.0, 2.0), 5.0);
    }

    #[test]
    fn missing_prediction_is_counted_not_averaged() {
        let mut labels = AnnotationSet::default();
        let os = ManeuverKey { video_id: "v".into(), agent_id: "a".into(), style: ManeuverStyle::Overspeeding };
        let w = ManeuverKey { video_id: "v".into(), agent_id: "a".into(), style: ManeuverStyle::Weaving };
        labels.insert(os.clone(), iv(10, 20)).unwrap();
        labels.insert(w, iv(30, 40)).unwrap();
        let mut preds = Predictions::new();
        preds.insert(os, 17.0);
        let table = evaluate_run(&preds, &labels, 10.0).unwrap();
        assert_eq!(table.rows.len(), 2);
        let os_row = table.row(ManeuverStyle::Overspeeding).unwrap();
        assert!((os_row.mean_tde.unwrap() - 0.2).abs() < 1e-12);
        let w_row = table.row(ManeuverStyle::Weaving).unwrap();
        assert_eq!(w_row.mean_tde, None);
        assert_eq!(w_row.missing, 1);
    }

    #[test]
    fn empty_labels_give_empty_table() {
        let t = evaluate_run(&Predictions::new(), &AnnotationSet::default(), 10.0).unwrap();
        assert!(t.rows.is_empty());
    }

    #[test]
    fn reads_both_label_layouts() {
        let full = "video_id,agent_id,style,annotator_id,start_frame,end_frame\nv1,a,OT,p1,10,12\nv1,a,OT,p2,12,14\n";
        let set = AnnotationSet::read_csv(full.as_bytes(), "ignored").unwrap();
        assert_eq!(set.len(), 1);
        let (k, v) = set.entries.iter().next().unwrap();
        assert_eq!(k.video_id, "v1");
        assert_eq!(v.len(), 2);

        let gt = "agent_id,style,start_frame,end_frame\na,weaving,5,9\n";
        let set = AnnotationSet::read_csv(gt.as_bytes(), "run").unwrap();
        let (k, _) = set.entries.iter().next().unwrap();
        assert_eq!(k.video_id, "run");
        assert_eq!(k.style, ManeuverStyle::Weaving);
    }

    #[test]
    fn reversed_interval_rejected() {
        let gt = "agent_id,style,start_frame,end_frame\na,OS,9,5\n";
        assert!(AnnotationSet::read_csv(gt.as_bytes(), "run").is_err());
    }
}
