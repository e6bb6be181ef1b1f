//! Local objectives, the weighted-Lp preference index and the online weight rule.
//!
//! Every agent holds `K` scalar objectives `f_i^k`. Their compromise is scored by
//!
//! ```text
//! u_i(x) = ( Σ_k ω_k (f_k(x) − f_k^ideal)^p )^(1/p)
//! ```
//!
//! where `f_k^ideal` is the minimum of `f_k` over the agent's interval and the
//! weights come from [`update_weights`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::projection::Interval;

/// Gap deficits down to this size are rounding noise and clamp to zero.
pub const GAP_TOL: f64 = 1e-9;

/// Below this value of `u` the gradient of the preference index is taken as 0.
pub const U_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("objective {k} is {gap:e} below its ideal value")]
    NegativeGap { k: usize, gap: f64 },
    #[error("every objective value is zero; weights are undefined")]
    AllZeroObjectives,
    #[error("Lp exponent must satisfy 1 <= p < inf, got {0}")]
    InvalidExponent(f64),
    #[error("preference index has {weights} weights, {ideals} ideal values and {objectives} objectives")]
    LengthMismatch { weights: usize, ideals: usize, objectives: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TechnicalForm {
    /// `a (P² − P_opt)²`
    SquareOfSquare,
    /// `a (P − P_opt)²`
    SquaredDeviation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectiveFn {
    Quadratic { a: f64, b: f64, c: f64 },
    ScaledQuadratic { r_t: f64, a: f64, b: f64, c: f64 },
    Technical { a_tec: f64, p_opt: f64, form: TechnicalForm },
}

impl ObjectiveFn {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            ObjectiveFn::Quadratic { a, b, c } => (a * x + b) * x + c,
            ObjectiveFn::ScaledQuadratic { r_t, a, b, c } => r_t * ((a * x + b) * x + c),
            ObjectiveFn::Technical { a_tec, p_opt, form } => {
                let d = match form {
                    TechnicalForm::SquareOfSquare => x * x - p_opt,
                    TechnicalForm::SquaredDeviation => x - p_opt,
                };
                a_tec * d * d
            }
        }
    }

    pub fn gradient(&self, x: f64) -> f64 {
        match *self {
            ObjectiveFn::Quadratic { a, b, .. } => 2.0 * a * x + b,
            ObjectiveFn::ScaledQuadratic { r_t, a, b, .. } => r_t * (2.0 * a * x + b),
            ObjectiveFn::Technical { a_tec, p_opt, form } => match form {
                TechnicalForm::SquareOfSquare => 4.0 * a_tec * x * (x * x - p_opt),
                TechnicalForm::SquaredDeviation => 2.0 * a_tec * (x - p_opt),
            },
        }
    }

    pub fn curvature(&self, x: f64) -> f64 {
        match *self {
            ObjectiveFn::Quadratic { a, .. } => 2.0 * a,
            ObjectiveFn::ScaledQuadratic { r_t, a, .. } => 2.0 * r_t * a,
            ObjectiveFn::Technical { a_tec, p_opt, form } => match form {
                TechnicalForm::SquareOfSquare => a_tec * (12.0 * x * x - 4.0 * p_opt),
                TechnicalForm::SquaredDeviation => 2.0 * a_tec,
            },
        }
    }

    /// Strong-convexity modulus on `set`: exact for the quadratics, the
    /// smallest sampled curvature for the quartic technical form.
    pub fn modulus_on(&self, set: &Interval) -> f64 {
        match *self {
            ObjectiveFn::Technical { form: TechnicalForm::SquareOfSquare, .. } => {
                const GRID: usize = 1000;
                (0..=GRID)
                    .map(|s| self.curvature(set.lower + set.width() * s as f64 / GRID as f64))
                    .fold(f64::INFINITY, f64::min)
            }
            _ => self.curvature(set.midpoint()),
        }
    }
}

/// Weighted-Lp preference index of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceIndex {
    pub p: f64,
    pub weights: Vec<f64>,
    pub ideal_values: Vec<f64>,
    pub objectives: Vec<ObjectiveFn>,
}

impl PreferenceIndex {
    pub fn new(
        p: f64,
        weights: Vec<f64>,
        ideal_values: Vec<f64>,
        objectives: Vec<ObjectiveFn>,
    ) -> Result<Self, ObjectiveError> {
        if !(p >= 1.0) || !p.is_finite() {
            return Err(ObjectiveError::InvalidExponent(p));
        }
        if weights.len() != objectives.len() || ideal_values.len() != objectives.len() {
            return Err(ObjectiveError::LengthMismatch {
                weights: weights.len(),
                ideals: ideal_values.len(),
                objectives: objectives.len(),
            });
        }
        Ok(PreferenceIndex { p, weights, ideal_values, objectives })
    }

    fn gaps(&self, x: f64) -> Result<Vec<f64>, ObjectiveError> {
        self.objectives
            .iter()
            .zip(&self.ideal_values)
            .enumerate()
            .map(|(k, (f, ideal))| {
                let gap = f.value(x) - ideal;
                if gap < -GAP_TOL {
                    Err(ObjectiveError::NegativeGap { k, gap })
                } else {
                    Ok(gap.max(0.0))
                }
            })
            .collect()
    }

    pub fn value(&self, x: f64) -> Result<f64, ObjectiveError> {
        Ok(lp_value(self.p, &self.weights, &self.gaps(x)?))
    }

    pub fn gradient(&self, x: f64) -> Result<f64, ObjectiveError> {
        let gaps = self.gaps(x)?;
        let grads: Vec<f64> = self.objectives.iter().map(|f| f.gradient(x)).collect();
        Ok(lp_gradient(self.p, &self.weights, &gaps, &grads))
    }

    /// Smallest secant slope of `∇u` over a uniform grid on `set`.
    pub fn estimate_modulus(&self, set: &Interval, grid: usize) -> Result<f64, ObjectiveError> {
        let xs: Vec<f64> =
            (0..=grid).map(|s| set.lower + set.width() * s as f64 / grid as f64).collect();
        let gs = xs.iter().map(|&x| self.gradient(x)).collect::<Result<Vec<_>, _>>()?;
        Ok(xs
            .windows(2)
            .zip(gs.windows(2))
            .map(|(x, g)| (g[1] - g[0]) / (x[1] - x[0]))
            .fold(f64::INFINITY, f64::min))
    }
}

/// `(Σ ω_k g_k^p)^(1/p)` for nonnegative gaps.
pub fn lp_value(p: f64, weights: &[f64], gaps: &[f64]) -> f64 {
    if p == 1.0 {
        return weights.iter().zip(gaps).map(|(w, g)| w * g).sum();
    }
    let s: f64 = weights.iter().zip(gaps).map(|(w, g)| w * powp(*g, p)).sum();
    if p == 2.0 {
        s.sqrt()
    } else {
        s.powf(1.0 / p)
    }
}

/// Chain rule for `∇u`: `u^(1−p) Σ ω_k g_k^(p−1) ∇f_k`, or `Σ ω_k ∇f_k` at `p = 1`.
pub fn lp_gradient(p: f64, weights: &[f64], gaps: &[f64], grads: &[f64]) -> f64 {
    if p == 1.0 {
        return weights.iter().zip(grads).map(|(w, g)| w * g).sum();
    }
    let u = lp_value(p, weights, gaps);
    if u < U_FLOOR {
        return 0.0;
    }
    let inner: f64 = weights
        .iter()
        .zip(gaps)
        .zip(grads)
        .map(|((w, gap), df)| w * powp(*gap, p - 1.0) * df)
        .sum();
    if p == 2.0 {
        inner / u
    } else {
        inner * u.powf(1.0 - p)
    }
}

#[inline]
fn powp(x: f64, p: f64) -> f64 {
    if p == 1.0 {
        x
    } else if p == 2.0 {
        x * x
    } else {
        x.powf(p)
    }
}

/// `ω_k = |f_k| / Σ_j |f_j|`.
pub fn update_weights(values: &[f64]) -> Result<Vec<f64>, ObjectiveError> {
    let mut out = vec![0.0; values.len()];
    if write_weights(values, &mut out) {
        Ok(out)
    } else {
        Err(ObjectiveError::AllZeroObjectives)
    }
}

/// [`update_weights`] that falls back to uniform weights on an all-zero input.
pub fn weights_or_uniform(values: &[f64]) -> Vec<f64> {
    update_weights(values).unwrap_or_else(|_| {
        log::warn!("all objective values are zero; using uniform weights");
        vec![1.0 / values.len() as f64; values.len()]
    })
}

/// In-place weight rule; returns `false` (and writes uniform weights) when
/// every value is zero.
pub(crate) fn write_weights(values: &[f64], out: &mut [f64]) -> bool {
    let total: f64 = values.iter().map(|v| v.abs()).sum();
    if !(total > 0.0) {
        let k = values.len() as f64;
        out.iter_mut().for_each(|w| *w = 1.0 / k);
        return false;
    }
    for (w, v) in out.iter_mut().zip(values) {
        *w = v.abs() / total;
    }
    true
}
