//! Event-triggered broadcast rules.
//!
//! Each agent holds the value it last broadcast and compares it with its live
//! state. With `c_i = 1/(2ς) + l_ii`, measurement error `e` and local
//! disagreement `q̄ = ½ Σ_j a_ij (ȳ_i − ȳ_j)²`:
//!
//! | kind            | fires when                         | `η̇ / T`                               |
//! |-----------------|------------------------------------|---------------------------------------|
//! | `DynamicPaper`  | `α (c e² − β q̄ / 2) ≥ η`           | `−φ η − δ (c e² − β q̄ / 2)`           |
//! | `DynamicPrior`  | `α c e² ≥ η`                       | `−φ η − δ c e²`                       |
//! | `Static`        | `c e² − β q̄ / 2 ≥ 0`               | none (η is frozen)                    |

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EtmError {
    #[error("trigger variable must be positive, got {0}")]
    NonPositiveEta(f64),
    #[error("invalid trigger parameter {name} = {value}: {requirement}")]
    InvalidParameter { name: &'static str, value: f64, requirement: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtmKind {
    /// Dynamic threshold with the network-disagreement term.
    #[serde(alias = "dynamic")]
    DynamicPaper,
    Static,
    /// Dynamic threshold without the disagreement term.
    DynamicPrior,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtmParams {
    pub alpha: f64,
    pub phi: f64,
    pub delta: f64,
    pub beta: f64,
    pub varsigma: f64,
    pub eta0: f64,
}

impl EtmParams {
    pub fn validate(&self) -> Result<(), EtmError> {
        let bad = |name, value, requirement| Err(EtmError::InvalidParameter { name, value, requirement });
        if !(self.phi > 0.0) {
            return bad("phi", self.phi, "phi > 0");
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return bad("delta", self.delta, "0 < delta <= 1");
        }
        if !(self.alpha > (1.0 - self.delta) / self.phi) {
            return bad("alpha", self.alpha, "alpha > (1 - delta) / phi");
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad("beta", self.beta, "0 < beta < 1");
        }
        if !(self.varsigma > 0.0) {
            return bad("varsigma", self.varsigma, "varsigma > 0");
        }
        if !(self.eta0 > 0.0) {
            return bad("eta0", self.eta0, "eta0 > 0");
        }
        Ok(())
    }

    /// `1/(2ς) + l_ii`.
    pub fn error_weight(&self, l_ii: f64) -> f64 {
        1.0 / (2.0 * self.varsigma) + l_ii
    }

    /// Decay exponent of the positivity envelope `η0·exp(−(φ + δ/α)·γ(t))`.
    pub fn envelope_rate(&self) -> f64 {
        self.phi + self.delta / self.alpha
    }
}

/// Error/disagreement combination shared by predicates and `η̇`.
fn drive(params: &EtmParams, kind: EtmKind, e: f64, qbar: f64, l_ii: f64) -> f64 {
    let local = params.error_weight(l_ii) * e * e;
    match kind {
        EtmKind::DynamicPrior => local,
        EtmKind::DynamicPaper | EtmKind::Static => local - 0.5 * params.beta * qbar,
    }
}

pub fn trigger_fired(
    params: &EtmParams,
    kind: EtmKind,
    e: f64,
    qbar: f64,
    l_ii: f64,
    eta: f64,
) -> Result<bool, EtmError> {
    let d = drive(params, kind, e, qbar, l_ii);
    match kind {
        EtmKind::Static => Ok(d >= 0.0),
        EtmKind::DynamicPaper | EtmKind::DynamicPrior => {
            if !(eta > 0.0) {
                return Err(EtmError::NonPositiveEta(eta));
            }
            Ok(params.alpha * d >= eta)
        }
    }
}

/// `η̇`; zero for the static rule.
pub fn eta_derivative(
    params: &EtmParams,
    kind: EtmKind,
    gain: f64,
    e: f64,
    qbar: f64,
    l_ii: f64,
    eta: f64,
) -> f64 {
    match kind {
        EtmKind::Static => 0.0,
        _ => gain * (-params.phi * eta - params.delta * drive(params, kind, e, qbar, l_ii)),
    }
}

/// [`eta_derivative`] with the drive capped at the firing threshold `η/α`.
///
/// Between events the cap is inactive, so this is the exact rate there. A
/// discrete step can carry the drive past the threshold before the rule is
/// evaluated; the cap keeps `η̇ ≥ −gain·(φ + δ/α)·η` in that case too.
#[allow(clippy::too_many_arguments)]
pub fn eta_derivative_capped(
    params: &EtmParams,
    kind: EtmKind,
    gain: f64,
    e: f64,
    qbar: f64,
    l_ii: f64,
    eta: f64,
) -> f64 {
    match kind {
        EtmKind::Static => 0.0,
        _ => {
            let d = drive(params, kind, e, qbar, l_ii).min(eta.max(0.0) / params.alpha);
            gain * (-params.phi * eta - params.delta * d)
        }
    }
}

/// `½ Σ_j a_ij (ȳ_i − ȳ_j)²`.
pub fn local_disagreement(own: f64, neighbors: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    0.5 * neighbors.into_iter().map(|(a, v)| a * (own - v) * (own - v)).sum::<f64>()
}

/// Per-broadcaster trigger bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EtmState {
    pub eta: f64,
    pub last_broadcast: f64,
    pub last_trigger_time: f64,
    pub trigger_count: u64,
    pub min_inter_event: f64,
}

impl EtmState {
    /// State right after the initial broadcast at `t0`.
    pub fn new(eta0: f64, value: f64, t0: f64) -> Self {
        EtmState {
            eta: eta0,
            last_broadcast: value,
            last_trigger_time: t0,
            trigger_count: 1,
            min_inter_event: f64::INFINITY,
        }
    }

    pub fn broadcast(&mut self, value: f64, t: f64) {
        self.min_inter_event = self.min_inter_event.min(t - self.last_trigger_time);
        self.last_broadcast = value;
        self.last_trigger_time = t;
        self.trigger_count += 1;
    }

    /// `ȳ − y`.
    pub fn measurement_error(&self, live: f64) -> f64 {
        self.last_broadcast - live
    }
}

/// One evaluated trigger sample recorded along a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TriggerSample {
    pub e: f64,
    pub qbar: f64,
    pub l_ii: f64,
    pub eta: f64,
}

/// Fire decisions of all three rules on the same sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReplayCounts {
    pub dynamic_paper: u64,
    pub dynamic_prior: u64,
    pub static_rule: u64,
    /// Samples where the dynamic rule fired but the prior rule did not.
    pub ordering_violations: u64,
}

/// Replays recorded samples open-loop through every predicate.
pub fn replay_threshold_ordering(params: &EtmParams, samples: &[TriggerSample]) -> ReplayCounts {
    let mut out = ReplayCounts::default();
    for s in samples {
        let fire = |kind| trigger_fired(params, kind, s.e, s.qbar, s.l_ii, s.eta).unwrap_or(false);
        let dynamic = fire(EtmKind::DynamicPaper);
        let prior = fire(EtmKind::DynamicPrior);
        out.dynamic_paper += dynamic as u64;
        out.dynamic_prior += prior as u64;
        out.static_rule += fire(EtmKind::Static) as u64;
        out.ordering_violations += (dynamic && !prior) as u64;
    }
    out
}
