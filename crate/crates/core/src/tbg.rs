//! Time-based generators.
//!
//! A generator is a nonnegative time-varying gain `T(t, t_pre) = dγ/dt`
//! that scales a flow so that it settles (approximately) by `t_pre`
//! regardless of the initial condition. Three concrete generators are
//! provided; all of them return exactly `1` once `t ≥ t_pre`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_EPSILON_REG: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TbgError {
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("reversed interval [{from}, {to}]")]
    ReversedInterval { from: f64, to: f64 },
    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("rate must be positive, got {0}")]
    NonPositiveRate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TbgKind {
    /// `γ = 12t²` before `t_pre`, gain `24t`.
    Quadratic,
    /// `γ = 30t` before `t_pre`, gain `30`.
    ConstantBoost,
    /// `1 + ḃ/(1 − b + ε)` with the degree-6 blending polynomial `b`.
    PolynomialBlowup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TbgSpec {
    pub kind: TbgKind,
    pub t_pre: f64,
    #[serde(default = "default_epsilon_reg")]
    pub epsilon_reg: f64,
    /// Gauge parameter. None of the built-in kinds depend on it.
    #[serde(default)]
    pub sigma: f64,
}

fn default_epsilon_reg() -> f64 {
    DEFAULT_EPSILON_REG
}

impl TbgSpec {
    pub fn new(kind: TbgKind, t_pre: f64) -> Self {
        TbgSpec { kind, t_pre, epsilon_reg: DEFAULT_EPSILON_REG, sigma: 0.0 }
    }

    pub fn with_epsilon_reg(mut self, epsilon_reg: f64) -> Self {
        self.epsilon_reg = epsilon_reg;
        self
    }

    /// `T(t, t_pre)`.
    pub fn gain(&self, t: f64) -> Result<f64, TbgError> {
        if t < 0.0 {
            return Err(TbgError::NegativeTime(t));
        }
        Ok(self.gain_on_segment(t, t < self.t_pre))
    }

    /// Gain evaluated on a known side of the `t_pre` breakpoint.
    ///
    /// With `before_settling = true` the pre-settling formula is used even at
    /// `t = t_pre`, which is the left limit an integration step ending exactly
    /// on the breakpoint needs.
    pub fn gain_on_segment(&self, t: f64, before_settling: bool) -> f64 {
        if !before_settling {
            return 1.0;
        }
        match self.kind {
            TbgKind::Quadratic => 24.0 * t,
            TbgKind::ConstantBoost => 30.0,
            TbgKind::PolynomialBlowup => {
                let (b, db) = self.blend(t);
                1.0 + db / (1.0 - b + self.epsilon_reg)
            }
        }
    }

    /// Largest gain over `[t0, t1]` (sampled), used to size integration substeps.
    pub fn max_gain_on(&self, t0: f64, t1: f64, before_settling: bool) -> f64 {
        const SAMPLES: usize = 16;
        (0..=SAMPLES)
            .map(|s| {
                let t = t0 + (t1 - t0) * s as f64 / SAMPLES as f64;
                self.gain_on_segment(t, before_settling)
            })
            .fold(0.0, f64::max)
    }

    /// `b(t)` and `ḃ(t)` for the blow-up generator; `(1, 0)` past `t_pre`.
    fn blend(&self, t: f64) -> (f64, f64) {
        let tp = self.t_pre;
        if t >= tp {
            return (1.0, 0.0);
        }
        let s = t / tp;
        let b = s.powi(4) * (10.0 * s * s - 24.0 * s + 15.0);
        let db = 60.0 * s.powi(3) * (1.0 - s).powi(2) / tp;
        (b, db)
    }

    /// Cumulative gauge `∫₀ᵗ T(s) ds`.
    pub fn gauge(&self, t: f64) -> Result<f64, TbgError> {
        if t < 0.0 {
            return Err(TbgError::NegativeTime(t));
        }
        let tp = self.t_pre;
        let before = |tt: f64| match self.kind {
            TbgKind::Quadratic => 12.0 * tt * tt,
            TbgKind::ConstantBoost => 30.0 * tt,
            TbgKind::PolynomialBlowup => {
                let (b, _) = self.blend(tt);
                let eps = self.epsilon_reg;
                tt + ((1.0 + eps) / (1.0 - b + eps)).ln()
            }
        };
        if t < tp {
            Ok(before(t))
        } else {
            let at_pre = match self.kind {
                TbgKind::PolynomialBlowup => {
                    let eps = self.epsilon_reg;
                    tp + ((1.0 + eps) / eps).ln()
                }
                _ => before(tp),
            };
            Ok(at_pre + (t - tp))
        }
    }

    /// `∫ T dt` over `[t_from, t_to]`.
    pub fn gauge_increment(&self, t_from: f64, t_to: f64) -> Result<f64, TbgError> {
        if t_from < 0.0 {
            return Err(TbgError::NegativeTime(t_from));
        }
        if t_to < t_from {
            return Err(TbgError::ReversedInterval { from: t_from, to: t_to });
        }
        Ok(self.gauge(t_to)? - self.gauge(t_from)?)
    }
}

/// Error radius `sqrt(exp(−rate·Δγ)·V(0)/scale)` reached at the prescribed time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceBound {
    pub gamma_at_tpre: f64,
    pub rate: f64,
    pub v0: f64,
    pub scale: f64,
    pub epsilon_bound: f64,
}

impl ConvergenceBound {
    pub fn new(rate: f64, v0: f64, scale: f64, gamma_at_tpre: f64) -> Result<Self, TbgError> {
        if !(rate > 0.0) {
            return Err(TbgError::NonPositiveRate(rate));
        }
        let epsilon_bound = error_bound(rate, v0, scale, gamma_at_tpre)?;
        Ok(ConvergenceBound { gamma_at_tpre, rate, v0, scale, epsilon_bound })
    }
}

pub fn error_bound(rate: f64, v0: f64, scale: f64, gamma_inc: f64) -> Result<f64, TbgError> {
    if !(scale > 0.0) {
        return Err(TbgError::NonPositiveScale(scale));
    }
    Ok(((-rate * gamma_inc).exp() * v0 / scale).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: TbgKind, t_pre: f64) -> TbgSpec {
        TbgSpec::new(kind, t_pre)
    }

    #[test]
    fn gain_examples() {
        assert_eq!(spec(TbgKind::Quadratic, 3.0).gain(1.0).unwrap(), 24.0);
        assert_eq!(spec(TbgKind::ConstantBoost, 3.0).gain(5.0).unwrap(), 1.0);
        assert_eq!(spec(TbgKind::PolynomialBlowup, 2.0).gain(0.0).unwrap(), 1.0);
        assert_eq!(spec(TbgKind::PolynomialBlowup, 2.0).gain(2.0).unwrap(), 1.0);
        // left limit at the breakpoint: b = 1, ḃ = 0
        let g = spec(TbgKind::PolynomialBlowup, 2.0).gain_on_segment(2.0, true);
        assert!((g - 1.0).abs() < 1e-9);
    }

    #[test]
    fn negative_time_rejected() {
        assert_eq!(
            spec(TbgKind::Quadratic, 3.0).gain(-0.1),
            Err(TbgError::NegativeTime(-0.1))
        );
    }

    #[test]
    fn gauge_examples() {
        let q = spec(TbgKind::Quadratic, 3.0);
        assert!((q.gauge_increment(0.0, 3.0).unwrap() - 108.0).abs() < 1e-12);
        let c = spec(TbgKind::ConstantBoost, 3.0);
        assert!((c.gauge_increment(0.0, 2.0).unwrap() - 60.0).abs() < 1e-12);
        assert!(matches!(
            q.gauge_increment(2.0, 1.0),
            Err(TbgError::ReversedInterval { .. })
        ));
    }

    #[test]
    fn unit_gain_after_settling() {
        for kind in [TbgKind::Quadratic, TbgKind::ConstantBoost, TbgKind::PolynomialBlowup] {
            let s = spec(kind, 2.5);
            for t in [2.5, 2.500001, 3.0, 10.0, 1e4] {
                assert_eq!(s.gain(t).unwrap(), 1.0);
            }
        }
    }

    #[test]
    fn error_bound_examples() {
        assert_eq!(error_bound(1.0, 1.0, 1.0, 0.0).unwrap(), 1.0);
        assert_eq!(error_bound(1.0, 0.0, 1.0, 5.0).unwrap(), 0.0);
        let e = error_bound(2.0, 4.0, 1.0, 4f64.ln()).unwrap();
        assert!((e - 0.5).abs() < 1e-15);
        assert_eq!(error_bound(1.0, 1.0, 0.0, 1.0), Err(TbgError::NonPositiveScale(0.0)));
    }

    #[test]
    fn blowup_gain_stays_finite() {
        let s = spec(TbgKind::PolynomialBlowup, 3.0);
        let peak = s.max_gain_on(2.9, 3.0, true);
        assert!(peak.is_finite() && peak > 100.0);
    }
}
