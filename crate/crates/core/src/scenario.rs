//! Scenario files.
//!
//! A scenario is a TOML document. Top-level keys set the Lp exponent `p`,
//! the environmental scale `r_t`, the technical-objective form and the
//! topology (`topology = "ring"` or an explicit `adjacency` matrix). Each
//! `[[agents]]` table lists demand, reserve, bounds, the initial output and
//! an `objectives` array of tagged objective rows. The `[tbg]`, `[etm]` and
//! `[integrator]` tables configure the generators, trigger rules and the
//! time grid. See `scenarios/table1.toml` for a complete example.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::SimConfig;
use crate::etm::{EtmKind, EtmParams};
use crate::graph::{build_network, ring_adjacency, Network};
use crate::objectives::{ObjectiveFn, TechnicalForm};
use crate::problem::{AgentSpec, Problem};
use crate::projection::Interval;
use crate::tbg::TbgSpec;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario field `{field}`: {message}")]
    Validation { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Ring,
}

/// One objective row as written in a scenario file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ObjectiveSpec {
    Quadratic {
        a: f64,
        b: f64,
        c: f64,
    },
    /// `r_t (a x² + b x + c)`; `r_t` defaults to the scenario-wide value.
    ScaledQuadratic {
        a: f64,
        b: f64,
        c: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        r_t: Option<f64>,
    },
    Technical {
        a: f64,
        p_opt: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        form: Option<TechnicalForm>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentRow {
    pub p_demand: f64,
    /// Reserve factor `ϱ`; the local demand is `(1 + ϱ) P_d`.
    #[serde(default)]
    pub reserve: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub initial: f64,
    #[serde(default)]
    pub y0: f64,
    #[serde(default)]
    pub nu0: f64,
    pub objectives: Vec<ObjectiveSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TbgSection {
    pub subproblem: TbgSpec,
    pub ideal: TbgSpec,
    pub compromise: TbgSpec,
}

/// Trigger parameters of the subproblem layers; `varsigma` has one entry
/// per objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubproblemEtm {
    pub alpha: f64,
    pub phi: f64,
    pub delta: f64,
    pub beta: f64,
    pub eta0: f64,
    pub varsigma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtmSection {
    pub kind: EtmKind,
    pub subproblem: SubproblemEtm,
    pub compromise: EtmParams,
}

fn default_step() -> f64 {
    1e-3
}
fn default_t_end() -> f64 {
    15.0
}
fn default_window() -> f64 {
    5.0
}
fn default_stride() -> usize {
    10
}
fn default_max_gain_step() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_window")]
    pub window: f64,
    #[serde(default = "default_stride")]
    pub output_stride: usize,
    #[serde(default = "default_max_gain_step")]
    pub max_gain_step: f64,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        IntegratorSection {
            step: default_step(),
            t_end: default_t_end(),
            window: default_window(),
            output_stride: default_stride(),
            max_gain_step: default_max_gain_step(),
        }
    }
}

fn default_p() -> f64 {
    2.0
}
fn default_r_t() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub label: String,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_r_t")]
    pub r_t: f64,
    #[serde(default = "TechnicalForm::default_form")]
    pub technical_form: TechnicalForm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<Topology>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjacency: Option<Vec<Vec<f64>>>,
    /// Only consumed by randomized tests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub agents: Vec<AgentRow>,
    pub tbg: TbgSection,
    pub etm: EtmSection,
    #[serde(default)]
    pub integrator: IntegratorSection,
}

impl TechnicalForm {
    fn default_form() -> Self {
        TechnicalForm::SquaredDeviation
    }
}

impl Scenario {
    /// Parses without validating.
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Reads, parses and validates.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let s = Self::load_unvalidated(path)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load_unvalidated(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn n_objectives(&self) -> usize {
        self.agents.first().map_or(0, |a| a.objectives.len())
    }

    pub fn total_demand(&self) -> f64 {
        self.agents.iter().map(|a| (1.0 + a.reserve) * a.p_demand).sum()
    }

    pub fn adjacency_matrix(&self) -> Result<Vec<Vec<f64>>, ScenarioError> {
        match (&self.adjacency, self.topology) {
            (Some(a), None) => Ok(a.clone()),
            (None, Some(Topology::Ring)) => Ok(ring_adjacency(self.agents.len())),
            (None, None) => Err(invalid("topology", "give either `topology` or `adjacency`")),
            (Some(_), Some(_)) => Err(invalid("topology", "`topology` and `adjacency` are mutually exclusive")),
        }
    }

    pub fn network(&self) -> Result<Network, ScenarioError> {
        build_network(self.adjacency_matrix()?).map_err(|e| invalid("adjacency", e.to_string()))
    }

    pub fn problem(&self) -> Problem {
        let agents = self
            .agents
            .iter()
            .map(|a| AgentSpec {
                bounds: Interval { lower: a.p_min, upper: a.p_max },
                demand: (1.0 + a.reserve) * a.p_demand,
                objectives: a.objectives.iter().map(|o| self.resolve(o)).collect(),
                initial: a.initial,
                y0: a.y0,
                nu0: a.nu0,
            })
            .collect();
        Problem { agents, p: self.p }
    }

    fn resolve(&self, o: &ObjectiveSpec) -> ObjectiveFn {
        match *o {
            ObjectiveSpec::Quadratic { a, b, c } => ObjectiveFn::Quadratic { a, b, c },
            ObjectiveSpec::ScaledQuadratic { a, b, c, r_t } => {
                ObjectiveFn::ScaledQuadratic { r_t: r_t.unwrap_or(self.r_t), a, b, c }
            }
            ObjectiveSpec::Technical { a, p_opt, form } => {
                ObjectiveFn::Technical { a_tec: a, p_opt, form: form.unwrap_or(self.technical_form) }
            }
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        let e = &self.etm;
        let s = &e.subproblem;
        SimConfig {
            tbg_subproblem: self.tbg.subproblem,
            tbg_ideal: self.tbg.ideal,
            tbg_compromise: self.tbg.compromise,
            etm_kind: e.kind,
            etm_subproblem: s
                .varsigma
                .iter()
                .map(|&varsigma| EtmParams {
                    alpha: s.alpha,
                    phi: s.phi,
                    delta: s.delta,
                    beta: s.beta,
                    varsigma,
                    eta0: s.eta0,
                })
                .collect(),
            etm_compromise: e.compromise,
            step: self.integrator.step,
            t_end: self.integrator.t_end,
            window: self.integrator.window,
            output_stride: self.integrator.output_stride,
            max_gain_step: self.integrator.max_gain_step,
            record_trajectory: true,
            record_trigger_samples: false,
        }
    }

    /// Checks every scenario invariant; the error names the failing field.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.agents.is_empty() {
            return Err(invalid("agents", "at least one agent is required"));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(invalid("p", format!("Lp exponent must be >= 1, got {}", self.p)));
        }
        let k = self.n_objectives();
        if k == 0 {
            return Err(invalid("agents[0].objectives", "at least one objective is required"));
        }
        for (i, a) in self.agents.iter().enumerate() {
            let f = |name: &str| format!("agents[{i}].{name}");
            if a.objectives.len() != k {
                return Err(invalid(f("objectives"), format!("expected {k} objectives, got {}", a.objectives.len())));
            }
            if !(a.p_min <= a.p_max) {
                return Err(invalid(f("p_max"), format!("p_min {} exceeds p_max {}", a.p_min, a.p_max)));
            }
            if !(a.initial >= a.p_min && a.initial <= a.p_max) {
                return Err(invalid(f("initial"), format!("{} is outside [{}, {}]", a.initial, a.p_min, a.p_max)));
            }
            if !(a.reserve > -1.0) {
                return Err(invalid(f("reserve"), "reserve factor must exceed -1"));
            }
            let b = Interval { lower: a.p_min, upper: a.p_max };
            for (kk, o) in a.objectives.iter().enumerate() {
                if !(self.resolve(o).modulus_on(&b) > 0.0) {
                    return Err(invalid(
                        format!("agents[{i}].objectives[{kk}]"),
                        "objective must be strongly convex on the agent's interval",
                    ));
                }
            }
        }
        let demand = self.total_demand();
        let lo: f64 = self.agents.iter().map(|a| a.p_min).sum();
        let hi: f64 = self.agents.iter().map(|a| a.p_max).sum();
        if !(demand >= lo && demand <= hi) {
            return Err(invalid(
                "agents",
                format!("total demand {demand} is outside the feasible range [{lo}, {hi}]"),
            ));
        }
        self.network()?;

        let (t1, t2, t3) = (self.tbg.subproblem.t_pre, self.tbg.ideal.t_pre, self.tbg.compromise.t_pre);
        for (name, t) in [("tbg.subproblem.t_pre", t1), ("tbg.ideal.t_pre", t2), ("tbg.compromise.t_pre", t3)] {
            if !(t > 0.0) {
                return Err(invalid(name, "prescribed time must be positive"));
            }
        }
        if !(t3 > t1.max(t2)) {
            return Err(invalid(
                "tbg.compromise.t_pre",
                format!("must exceed max(t_pre1, t_pre2) = {}, got {t3}", t1.max(t2)),
            ));
        }

        if self.etm.subproblem.varsigma.len() != k {
            return Err(invalid(
                "etm.subproblem.varsigma",
                format!("expected {k} entries, got {}", self.etm.subproblem.varsigma.len()),
            ));
        }
        for (kk, p) in self.sim_config().etm_subproblem.iter().enumerate() {
            p.validate().map_err(|e| invalid(format!("etm.subproblem (objective {kk})"), e.to_string()))?;
        }
        self.etm.compromise.validate().map_err(|e| invalid("etm.compromise", e.to_string()))?;

        let g = &self.integrator;
        for (name, v) in [
            ("integrator.step", g.step),
            ("integrator.t_end", g.t_end),
            ("integrator.window", g.window),
            ("integrator.max_gain_step", g.max_gain_step),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be positive, got {v}")));
            }
        }
        if g.output_stride == 0 {
            return Err(invalid("integrator.output_stride", "must be at least 1"));
        }
        Ok(())
    }

    /// Rewrites generator and trigger choices for one of the named cases.
    pub fn apply_case(&mut self, case: &str) -> Result<(), ScenarioError> {
        use crate::tbg::TbgKind;
        let (tbg, eps, kind) = match case {
            "case1" => (TbgKind::Quadratic, None, EtmKind::DynamicPaper),
            "case2" => (TbgKind::ConstantBoost, None, EtmKind::DynamicPaper),
            "case3" => (TbgKind::PolynomialBlowup, Some(1e-7), EtmKind::DynamicPaper),
            "case4" => (TbgKind::PolynomialBlowup, Some(1e-9), EtmKind::DynamicPaper),
            "case5" => (TbgKind::Quadratic, None, EtmKind::Static),
            "case6" => (TbgKind::Quadratic, None, EtmKind::DynamicPrior),
            other => return Err(invalid("case", format!("unknown case `{other}` (expected case1..case6)"))),
        };
        for spec in [&mut self.tbg.subproblem, &mut self.tbg.ideal, &mut self.tbg.compromise] {
            spec.kind = tbg;
            if let Some(e) = eps {
                spec.epsilon_reg = e;
            }
        }
        self.etm.kind = kind;
        self.label = format!("{}-{case}", self.label);
        Ok(())
    }
}

/// The labels accepted by [`Scenario::apply_case`].
pub const CASES: [&str; 6] = ["case1", "case2", "case3", "case4", "case5", "case6"];
