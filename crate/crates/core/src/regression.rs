//! Quadratic least-squares fits of centrality series.
//!
//! A series `zeta[t]` is fit by `b0 + b1 t + b2 t^2`, minimising
//! `||zeta - M b||^2 + alpha^2 ||b||^2` with `M` the Vandermonde matrix of the
//! sample times. The solve goes through a Householder QR of the stacked
//! system `[M; alpha I]`, never through an explicit inverse of `M^T M`.
//!
//! Sample times are centred before the solve and the coefficients mapped back
//! to absolute time. With `alpha > 0` the ridge penalty therefore acts on the
//! centred coefficients.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};

use crate::centrality::CentralitySeries;
use crate::error::{Error, Result};

/// Polynomial degree of every centrality fit.
pub const POLY_DEGREE: usize = 2;
pub const MIN_SAMPLES: usize = POLY_DEGREE + 1;

/// Grid searched by [`AlphaPolicy::Grid`], in increasing order.
pub const ALPHA_GRID: [f64; 8] = [0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0];
pub const DEFAULT_KAPPA_CAP: f64 = 1e6;

/// Relative size of the smallest R diagonal below which an unregularised
/// system is treated as rank deficient.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum AlphaPolicy {
    /// Always use this regularisation magnitude.
    Fixed { alpha: f64 },
    /// Smallest grid value whose regularised condition number is within the cap.
    Grid { kappa_cap: f64 },
}

impl Default for AlphaPolicy {
    fn default() -> Self {
        AlphaPolicy::Grid { kappa_cap: DEFAULT_KAPPA_CAP }
    }
}

impl AlphaPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AlphaPolicy::Fixed { alpha } if !(alpha >= 0.0 && alpha.is_finite()) => {
                Err(Error::Validation(format!("alpha must be finite and non-negative, got {alpha}")))
            }
            AlphaPolicy::Grid { kappa_cap } if !(kappa_cap >= 1.0) => {
                Err(Error::Validation(format!("kappa cap must be at least 1, got {kappa_cap}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeOrder {
    First,
    Second,
}

/// Quadratic in absolute time (seconds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentralityPolynomial {
    pub coefficients: [f64; 3],
    pub domain: (f64, f64),
    pub alpha: f64,
    pub condition_number: f64,
}

impl CentralityPolynomial {
    pub fn new(coefficients: [f64; 3], domain: (f64, f64)) -> Self {
        CentralityPolynomial { coefficients, domain, alpha: 0.0, condition_number: 1.0 }
    }

    pub fn evaluate(&self, t: f64) -> f64 {
        let [b0, b1, b2] = self.coefficients;
        b0 + b1 * t + b2 * t * t
    }

    pub fn derivative(&self, order: DerivativeOrder) -> CentralityPolynomial {
        let [_, b1, b2] = self.coefficients;
        let coefficients = match order {
            DerivativeOrder::First => [b1, 2.0 * b2, 0.0],
            DerivativeOrder::Second => [2.0 * b2, 0.0, 0.0],
        };
        CentralityPolynomial { coefficients, ..*self }
    }
}

/// Free-function form of [`CentralityPolynomial::derivative`].
pub fn derivative(poly: &CentralityPolynomial, order: DerivativeOrder) -> CentralityPolynomial {
    poly.derivative(order)
}

fn gram(times: &[f64]) -> Matrix3<f64> {
    let mut s = [0.0f64; 5];
    for &t in times {
        let mut p = 1.0;
        for v in s.iter_mut() {
            *v += p;
            p *= t;
        }
    }
    Matrix3::new(s[0], s[1], s[2], s[1], s[2], s[3], s[2], s[3], s[4])
}

/// Condition number `sigma_max / sigma_min` of `M^T M + alpha^2 I` for the
/// given sample times.
pub fn gram_condition_number(times: &[f64], alpha: f64) -> f64 {
    let g = gram(times) + Matrix3::identity() * (alpha * alpha);
    let sv = g.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Raw and regularised condition numbers for `T` samples at `t = 0..T-1`.
pub fn condition_diagnostics(sample_count: usize, alpha: f64) -> (f64, f64) {
    let times: Vec<f64> = (0..sample_count).map(|t| t as f64).collect();
    (gram_condition_number(&times, 0.0), gram_condition_number(&times, alpha))
}

fn alpha_cache() -> &'static Mutex<HashMap<(usize, u64, u64), f64>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, u64, u64), f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn grid_alpha(times: &[f64], kappa_cap: f64) -> f64 {
    ALPHA_GRID
        .iter()
        .copied()
        .find(|&a| gram_condition_number(times, a) <= kappa_cap)
        .unwrap_or(ALPHA_GRID[ALPHA_GRID.len() - 1])
}

/// Uniform sample spacing, if the (centred) times are evenly spaced.
fn uniform_step(times: &[f64]) -> Option<f64> {
    if times.len() < 2 {
        return None;
    }
    let step = times[1] - times[0];
    let ok = times.windows(2).all(|w| ((w[1] - w[0]) - step).abs() <= 1e-9 * step.abs().max(1.0));
    ok.then_some(step)
}

/// Resolves the regularisation for a set of centred sample times. Uniformly
/// spaced designs are cached per (length, spacing) since the design matrix,
/// and therefore the choice, depends on nothing else.
pub fn select_alpha(centered_times: &[f64], policy: AlphaPolicy) -> f64 {
    match policy {
        AlphaPolicy::Fixed { alpha } => alpha,
        AlphaPolicy::Grid { kappa_cap } => match uniform_step(centered_times) {
            Some(step) => {
                let key = (centered_times.len(), step.to_bits(), kappa_cap.to_bits());
                if let Some(&a) = alpha_cache().lock().expect("alpha cache poisoned").get(&key) {
                    return a;
                }
                let a = grid_alpha(centered_times, kappa_cap);
                alpha_cache().lock().expect("alpha cache poisoned").insert(key, a);
                a
            }
            None => grid_alpha(centered_times, kappa_cap),
        },
    }
}

/// Fits a quadratic to `(times[k], values[k])`.
pub fn fit_samples(times: &[f64], values: &[f64], policy: AlphaPolicy) -> Result<CentralityPolynomial> {
    if times.len() != values.len() {
        return Err(Error::Validation("times and values differ in length".into()));
    }
    let n = times.len();
    if n < MIN_SAMPLES {
        return Err(Error::InsufficientData { needed: MIN_SAMPLES, got: n });
    }
    if times.iter().chain(values).any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite sample".into()));
    }
    policy.validate()?;

    let center = times.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = times.iter().map(|t| t - center).collect();
    let alpha = select_alpha(&centered, policy);

    let rows = if alpha > 0.0 { n + 3 } else { n };
    let mut a = DMatrix::<f64>::zeros(rows, 3);
    let mut b = DVector::<f64>::zeros(rows);
    for (k, (&t, &z)) in centered.iter().zip(values).enumerate() {
        a[(k, 0)] = 1.0;
        a[(k, 1)] = t;
        a[(k, 2)] = t * t;
        b[k] = z;
    }
    if alpha > 0.0 {
        for j in 0..3 {
            a[(n + j, j)] = alpha;
        }
    }

    let qr = a.qr();
    let r = qr.r();
    let diag_max = (0..3).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    let diag_min = (0..3).map(|j| r[(j, j)].abs()).fold(f64::INFINITY, f64::min);
    if !(diag_min > RANK_TOL * diag_max) {
        return Err(Error::Conditioning(
            "design matrix is rank deficient; use a positive regularisation alpha".into(),
        ));
    }
    let qtb = qr.q().transpose() * b;
    let beta_c = r
        .solve_upper_triangular(&qtb.rows(0, 3).into_owned())
        .ok_or_else(|| Error::Conditioning("triangular solve failed".into()))?;

    let (c0, c1, c2) = (beta_c[0], beta_c[1], beta_c[2]);
    let coefficients = [c0 - c1 * center + c2 * center * center, c1 - 2.0 * c2 * center, c2];
    if coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::Conditioning("non-finite coefficients".into()));
    }
    let (lo, hi) = times.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| (lo.min(t), hi.max(t)));
    Ok(CentralityPolynomial {
        coefficients,
        domain: (lo, hi),
        alpha,
        condition_number: gram_condition_number(&centered, alpha),
    })
}

/// Fits a centrality series, converting frame indices to seconds.
pub fn fit(series: &CentralitySeries, frame_rate_hz: f64, policy: AlphaPolicy) -> Result<CentralityPolynomial> {
    let times: Vec<f64> = series.values.iter().map(|&(t, _)| t as f64 / frame_rate_hz).collect();
    let values: Vec<f64> = series.values.iter().map(|&(_, v)| v).collect();
    fit_samples(&times, &values, policy)
}
