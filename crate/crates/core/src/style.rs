//! Style likelihood (SLE) and intensity (SIE) estimates and classification.
//!
//! | style                         | centrality | SLE                 | SIE                  |
//! |-------------------------------|------------|---------------------|----------------------|
//! | overspeeding                  | degree     | `|d zeta_d / dt|`   | `|d2 zeta_d / dt2|`  |
//! | overtaking / sudden lane change | closeness | `|d zeta_c / dt|`  | `|d2 zeta_c / dt2|`  |
//! | weaving                       | closeness  | number of sharp critical points | their sharpness |
//! | conservative                  | both       | all of the above near zero |               |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regression::{CentralityPolynomial, DerivativeOrder};

/// Sharpness at or below this is treated as zero (a flat region).
pub const SHARPNESS_EPS: f64 = 1e-12;
pub const DEFAULT_EPSILON: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectedStyle {
    Overspeeding,
    OvertakingOrSuddenLaneChange,
    Weaving,
    Conservative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalLabel {
    Aggressive,
    Conservative,
}

/// Classification thresholds. `degree` and `closeness` bound the respective
/// SLE maxima; `weaving_sharpness` is the sharpness a critical point must
/// exceed to count as a weave.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleThresholds {
    pub degree: f64,
    pub closeness: f64,
    pub weaving_sharpness: f64,
}

impl StyleThresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("degree", self.degree), ("closeness", self.closeness), ("weaving_sharpness", self.weaving_sharpness)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("threshold `{name}` must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// Relative margin a value must clear above a threshold. Fitted slopes of
/// equal step patterns differ by rounding only, and such ties must not flip a
/// classification.
pub const THRESHOLD_RTOL: f64 = 1e-9;

/// True when `value` exceeds `threshold` by more than [`THRESHOLD_RTOL`].
pub fn exceeds(value: f64, threshold: f64) -> bool {
    value > threshold * (1.0 + THRESHOLD_RTOL)
}

/// SLE and SIE sampled at a set of times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SleSie {
    pub sle_curve: Vec<f64>,
    pub sie_curve: Vec<f64>,
    pub sle_max: f64,
    /// Time (seconds) of the first sample attaining `sle_max`.
    pub t_sle: f64,
    /// Index into the sample times of `t_sle`.
    pub argmax: usize,
}

/// Samples `|p'(t)|` and `|p''(t)|` at `times`; the maximum is taken over
/// the samples, earliest sample winning ties.
pub fn sle_sie(poly: &CentralityPolynomial, times: &[f64]) -> SleSie {
    let d1 = poly.derivative(DerivativeOrder::First);
    let d2 = poly.derivative(DerivativeOrder::Second);
    let sle_curve: Vec<f64> = times.iter().map(|&t| d1.evaluate(t).abs()).collect();
    let sie_curve: Vec<f64> = times.iter().map(|&t| d2.evaluate(t).abs()).collect();
    let mut argmax = 0;
    for (k, v) in sle_curve.iter().enumerate() {
        if *v > sle_curve[argmax] {
            argmax = k;
        }
    }
    SleSie {
        sle_max: sle_curve.get(argmax).copied().unwrap_or(0.0),
        t_sle: times.get(argmax).copied().unwrap_or(f64::NAN),
        argmax,
        sle_curve,
        sie_curve,
    }
}

/// A zero of the closeness derivative together with its epsilon-sharpness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub t_c: f64,
    pub sharpness: f64,
}

/// Critical points of `poly` strictly inside `(t_start, t_end)` whose
/// epsilon-sharpness, the largest `|p'|` over `[t_c - eps, t_c + eps]`,
/// differs from `|p'(t_c)| = 0`. Flat polynomials yield nothing.
pub fn detect_weaving(poly: &CentralityPolynomial, window: (f64, f64), epsilon: f64) -> Result<Vec<CriticalPoint>> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Validation(format!("epsilon must be positive, got {epsilon}")));
    }
    let [_, b1, b2] = poly.coefficients;
    if b2 == 0.0 {
        // Linear derivative with no zero, or identically zero (flat).
        return Ok(Vec::new());
    }
    let t_c = -b1 / (2.0 * b2);
    if !(t_c > window.0 && t_c < window.1) {
        return Ok(Vec::new());
    }
    let d1 = poly.derivative(DerivativeOrder::First);
    let at_center = d1.evaluate(t_c).abs();
    let sharpness = d1.evaluate(t_c - epsilon).abs().max(d1.evaluate(t_c + epsilon).abs());
    if (sharpness - at_center).abs() <= SHARPNESS_EPS {
        return Ok(Vec::new());
    }
    Ok(vec![CriticalPoint { t_c, sharpness }])
}

/// Per-style evidence for one analysis window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStyles {
    pub overspeeding: SleSie,
    pub overtaking_or_sudden_lane_change: SleSie,
    pub weaving: WeavingEvidence,
    /// Degree and closeness SLE/SIE divided by their thresholds, pointwise
    /// max; below 1 everywhere means neither longitudinal nor lateral
    /// activity.
    pub conservative: SleSie,
    pub detected: Vec<DetectedStyle>,
    pub label: GlobalLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeavingEvidence {
    pub critical_points: Vec<CriticalPoint>,
    /// Critical points sharper than the weaving threshold; the weaving SLE.
    pub count: usize,
}

/// Classifies one window from its two fitted polynomials.
pub fn classify(
    degree: &CentralityPolynomial,
    closeness: &CentralityPolynomial,
    weaving: &[CriticalPoint],
    times: &[f64],
    thresholds: &StyleThresholds,
) -> Result<WindowStyles> {
    thresholds.validate()?;
    let overspeeding = sle_sie(degree, times);
    let lateral = sle_sie(closeness, times);
    let count = weaving.iter().filter(|c| exceeds(c.sharpness, thresholds.weaving_sharpness)).count();

    let normalise = |a: &[f64], ta: f64, b: &[f64], tb: f64| -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| (x / ta).max(y / tb)).collect()
    };
    let cons_sle = normalise(&overspeeding.sle_curve, thresholds.degree, &lateral.sle_curve, thresholds.closeness);
    let cons_sie = normalise(&overspeeding.sie_curve, thresholds.degree, &lateral.sie_curve, thresholds.closeness);
    let mut argmax = 0;
    for (k, v) in cons_sle.iter().enumerate() {
        if *v > cons_sle[argmax] {
            argmax = k;
        }
    }
    let conservative = SleSie {
        sle_max: cons_sle.get(argmax).copied().unwrap_or(0.0),
        t_sle: times.get(argmax).copied().unwrap_or(f64::NAN),
        argmax,
        sle_curve: cons_sle,
        sie_curve: cons_sie,
    };

    let mut detected = Vec::new();
    if exceeds(overspeeding.sle_max, thresholds.degree) {
        detected.push(DetectedStyle::Overspeeding);
    }
    if exceeds(lateral.sle_max, thresholds.closeness) {
        detected.push(DetectedStyle::OvertakingOrSuddenLaneChange);
    }
    if count >= 1 {
        detected.push(DetectedStyle::Weaving);
    }
    let label = if detected.is_empty() { GlobalLabel::Conservative } else { GlobalLabel::Aggressive };
    if detected.is_empty() {
        detected.push(DetectedStyle::Conservative);
    }

    Ok(WindowStyles {
        overspeeding,
        overtaking_or_sudden_lane_change: lateral,
        weaving: WeavingEvidence { critical_points: weaving.to_vec(), count },
        conservative,
        detected,
        label,
    })
}
