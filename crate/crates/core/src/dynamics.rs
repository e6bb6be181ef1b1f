//! Event-triggered prescribed-time dynamics.
//!
//! Three layers run concurrently on one clock starting at `t = 0`:
//!
//! * subproblem flows, one per objective `k`, whose states `(x̄, y, z)` find
//!   the single-objective dispatch and drive the live weights `ω_i^k`;
//! * ideal-point flows `x̂_i^k`, purely local;
//! * the compromise flow `(x, ν, μ)` on the weighted-Lp preference index,
//!   fed by the live weights and live ideal values.
//!
//! Consensus terms only ever see the values each agent last broadcast. The
//! state is integrated with fixed-step RK4 on a grid that contains every
//! prescribed time, the count window and the horizon. Steps whose generator
//! gain is large are split into substeps. Trigger rules are evaluated after
//! every (sub)step and all firing agents broadcast together.

use log::debug;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{self, LayerBound};
use crate::etm::{self, EtmError, EtmKind, EtmParams, EtmState, TriggerSample};
use crate::graph::Network;
use crate::integrator::Rk4;
use crate::objectives::{lp_gradient, write_weights, ObjectiveError, ObjectiveFn, PreferenceIndex};
use crate::oracle::{self, OracleReport};
use crate::problem::Problem;
use crate::projection::{ConvexSet, Interval, ProjectionError};
use crate::tbg::TbgSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Etm(#[from] EtmError),
    #[error("non-finite state at t = {t}: {what}")]
    NonFiniteState { t: f64, what: String },
    #[error("invariant violated at t = {t}: {what}")]
    InvariantViolation { t: f64, what: String },
    #[error("prescribed times must satisfy t_pre3 > max(t_pre1, t_pre2), got ({t_pre1}, {t_pre2}, {t_pre3})")]
    InvalidPrescribedTimes { t_pre1: f64, t_pre2: f64, t_pre3: f64 },
    #[error("invalid simulation setup: {0}")]
    InvalidSetup(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Subproblem,
    Ideal,
    Compromise,
}

impl Layer {
    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Subproblem => "subproblem",
            Layer::Ideal => "ideal",
            Layer::Compromise => "compromise",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub tbg_subproblem: TbgSpec,
    pub tbg_ideal: TbgSpec,
    pub tbg_compromise: TbgSpec,
    pub etm_kind: EtmKind,
    /// One parameter set per objective.
    pub etm_subproblem: Vec<EtmParams>,
    pub etm_compromise: EtmParams,
    pub step: f64,
    pub t_end: f64,
    /// Events at or before this time are counted.
    pub window: f64,
    pub output_stride: usize,
    /// Upper bound on `gain × substep`; larger gains split a step into substeps.
    pub max_gain_step: f64,
    pub record_trajectory: bool,
    pub record_trigger_samples: bool,
}

impl SimConfig {
    fn tbgs(&self) -> [&TbgSpec; 3] {
        [&self.tbg_subproblem, &self.tbg_ideal, &self.tbg_compromise]
    }
}

/// Index map of the flat state vector.
///
/// Per objective `k`: `x̄, y, z, η` (each `N` long); then `x̂` (`K·N`);
/// then `x, ν, μ, η` of the compromise layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Layout {
    pub n: usize,
    pub k: usize,
}

impl Layout {
    pub fn len(&self) -> usize {
        5 * self.k * self.n + 4 * self.n
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn xbar(&self, k: usize, i: usize) -> usize {
        4 * k * self.n + i
    }
    pub fn y(&self, k: usize, i: usize) -> usize {
        4 * k * self.n + self.n + i
    }
    pub fn z(&self, k: usize, i: usize) -> usize {
        4 * k * self.n + 2 * self.n + i
    }
    pub fn eta_sub(&self, k: usize, i: usize) -> usize {
        4 * k * self.n + 3 * self.n + i
    }
    pub fn xhat(&self, k: usize, i: usize) -> usize {
        4 * self.k * self.n + k * self.n + i
    }
    fn comp(&self) -> usize {
        5 * self.k * self.n
    }
    pub fn x(&self, i: usize) -> usize {
        self.comp() + i
    }
    pub fn nu(&self, i: usize) -> usize {
        self.comp() + self.n + i
    }
    pub fn mu(&self, i: usize) -> usize {
        self.comp() + 2 * self.n + i
    }
    pub fn eta_comp(&self, i: usize) -> usize {
        self.comp() + 3 * self.n + i
    }
}

/// Initial values of every layer (indices `[k][i]` or `[i]`).
#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    pub xbar: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub xhat: Vec<Vec<f64>>,
    pub x: Vec<f64>,
    pub nu: Vec<f64>,
    pub mu: Vec<f64>,
}

impl InitialState {
    /// `x̄ = x̂ = x = initial`, `y = y0`, `ν = ν0`, `z = μ = 0`.
    pub fn from_problem(problem: &Problem) -> Self {
        let k = problem.n_objectives();
        let col = |f: &dyn Fn(&crate::problem::AgentSpec) -> f64| -> Vec<f64> {
            problem.agents.iter().map(f).collect()
        };
        let x0 = col(&|a| a.initial);
        InitialState {
            xbar: vec![x0.clone(); k],
            y: vec![col(&|a| a.y0); k],
            z: vec![vec![0.0; problem.n_agents()]; k],
            xhat: vec![x0.clone(); k],
            x: x0,
            nu: col(&|a| a.nu0),
            mu: vec![0.0; problem.n_agents()],
        }
    }

    /// The equilibrium the oracle predicts for every layer.
    pub fn equilibrium(problem: &Problem, report: &OracleReport) -> Self {
        let n = problem.n_agents();
        let d: Vec<f64> = problem.agents.iter().map(|a| a.demand).collect();
        let sub = &report.subproblems;
        InitialState {
            xbar: sub.iter().map(|s| s.x_star.clone()).collect(),
            y: sub.iter().map(|s| vec![s.multiplier; n]).collect(),
            z: sub.iter().map(|s| d.iter().zip(&s.x_star).map(|(di, xi)| di - xi).collect()).collect(),
            xhat: (0..problem.n_objectives())
                .map(|k| (0..n).map(|i| report.ideal_points[i][k]).collect())
                .collect(),
            x: report.compromise.x_star.clone(),
            nu: vec![report.compromise.multiplier; n],
            mu: d.iter().zip(&report.compromise.x_star).map(|(di, xi)| di - xi).collect(),
        }
    }
}

/// `(ẋ, dual̇, auẋ)` of the projected primal–dual flow shared by the
/// subproblem and compromise layers.
#[allow(clippy::too_many_arguments)]
fn primal_dual(
    set: &Interval,
    grad: f64,
    gain: f64,
    x: f64,
    dual: f64,
    aux: f64,
    demand: f64,
    consensus: f64,
) -> Result<(f64, f64, f64), ProjectionError> {
    let dx = set.project_tangent(x, gain * (dual - grad))?;
    Ok((dx, gain * (-consensus - aux + demand - x), gain * consensus))
}

/// `(x̄̇, ẏ, ż)` of one agent for one objective; `consensus` is
/// `Σ_j a_ij (ȳ_i − ȳ_j)` over held broadcasts.
#[allow(clippy::too_many_arguments)]
pub fn subproblem_rhs(
    set: &Interval,
    f: &ObjectiveFn,
    gain: f64,
    xbar: f64,
    y: f64,
    z: f64,
    demand: f64,
    consensus: f64,
) -> Result<(f64, f64, f64), DynamicsError> {
    Ok(primal_dual(set, f.gradient(xbar), gain, xbar, y, z, demand, consensus)?)
}

pub fn ideal_rhs(set: &Interval, f: &ObjectiveFn, gain: f64, xhat: f64) -> Result<f64, DynamicsError> {
    Ok(set.project_tangent(xhat, -gain * f.gradient(xhat))?)
}

/// `(ẋ, ν̇, μ̇)` of one agent; `consensus` is `Σ_j a_ij (ν̄_i − ν̄_j)`.
#[allow(clippy::too_many_arguments)]
pub fn compromise_rhs(
    set: &Interval,
    preference: &PreferenceIndex,
    gain: f64,
    x: f64,
    nu: f64,
    mu: f64,
    demand: f64,
    consensus: f64,
) -> Result<(f64, f64, f64), DynamicsError> {
    let grad = preference.gradient(x)?;
    Ok(primal_dual(set, grad, gain, x, nu, mu, demand, consensus)?)
}

/// One broadcast.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRecord {
    pub t: f64,
    pub layer: Layer,
    pub agent: usize,
    pub objective: Option<usize>,
    pub broadcast_value: f64,
}

/// Full state plus live weights (`[i·K + k]`) at one output time.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: Vec<f64>,
    pub weights: Vec<f64>,
}

/// A trigger evaluation, kept for open-loop replay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TriggerRecord {
    pub layer: Layer,
    pub objective: Option<usize>,
    pub sample: TriggerSample,
}

/// Layer states at a prescribed time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub name: String,
    pub t: f64,
    /// `[k][i]`
    pub xbar: Vec<Vec<f64>>,
    /// `[k][i]`
    pub xhat: Vec<Vec<f64>>,
    pub x: Vec<f64>,
    /// `[i][k]`
    pub weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsBundle {
    pub label: String,
    pub t_final: f64,
    pub steps: u64,
    /// `Σ d_i − Σ x_i` at the compromise prescribed time.
    pub convergence_error: Option<f64>,
    pub final_imbalance: f64,
    pub window: f64,
    /// Events within the window, `[k][i]`; the `t = 0` broadcast counts.
    pub counts_subproblem: Vec<Vec<u64>>,
    pub counts_compromise: Vec<u64>,
    pub per_agent_total: Vec<u64>,
    pub total: u64,
    pub total_all_time: u64,
    pub min_inter_event: f64,
    pub min_inter_event_subproblem: f64,
    pub min_inter_event_compromise: f64,
    /// Smallest interval between two trigger evaluations.
    pub min_evaluation_step: f64,
    pub max_abs_sum_z: f64,
    pub max_abs_sum_mu: f64,
    pub max_weight_sum_error: f64,
    pub min_eta: f64,
    /// `min η(t) / (η0·exp(−(φ + δ/α)·γ(t)))`; absent for the static rule.
    pub min_envelope_ratio: Option<f64>,
    /// Largest bound excursion of an RK4 update before re-clamping.
    pub max_preclamp_overshoot: f64,
    /// Largest bound excursion of a stored state.
    pub max_bound_violation: f64,
    pub final_x: Vec<f64>,
    /// `‖x(t_end) − x*‖∞`.
    pub distance_to_oracle: Option<f64>,
    /// `‖x(t_pre3) − x*‖∞`.
    pub distance_at_tpre3: Option<f64>,
    pub bounds: Vec<LayerBound>,
    pub snapshots: Vec<Snapshot>,
    /// `(t, Σ d − Σ x)` at every output sample.
    pub imbalance_trajectory: Vec<(f64, f64)>,
    /// `(t, ‖x − x*‖∞)` at every output sample.
    pub distance_trajectory: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRun {
    pub layout: Layout,
    pub config: SimConfig,
    pub samples: Vec<Sample>,
    pub events: Vec<EventRecord>,
    pub trigger_records: Vec<TriggerRecord>,
    pub final_state: Vec<f64>,
    pub oracle: Option<OracleReport>,
    pub metrics: MetricsBundle,
}

impl SimulationRun {
    pub fn final_x(&self) -> Vec<f64> {
        (0..self.layout.n).map(|i| self.final_state[self.layout.x(i)]).collect()
    }
    pub fn final_nu(&self) -> Vec<f64> {
        (0..self.layout.n).map(|i| self.final_state[self.layout.nu(i)]).collect()
    }
    pub fn final_xbar(&self, k: usize) -> Vec<f64> {
        (0..self.layout.n).map(|i| self.final_state[self.layout.xbar(k, i)]).collect()
    }
    pub fn final_xhat(&self, k: usize) -> Vec<f64> {
        (0..self.layout.n).map(|i| self.final_state[self.layout.xhat(k, i)]).collect()
    }
}

/// Step-invariant inputs of the right-hand side.
struct Frozen<'a> {
    problem: &'a Problem,
    config: &'a SimConfig,
    layout: Layout,
    degree: &'a [f64],
    held_sub: &'a [Vec<f64>],
    consensus_sub: &'a [Vec<f64>],
    qbar_sub: &'a [Vec<f64>],
    held_comp: &'a [f64],
    consensus_comp: &'a [f64],
    qbar_comp: &'a [f64],
}

struct Scratch {
    values: Vec<f64>,
    weights: Vec<f64>,
    gaps: Vec<f64>,
    grads: Vec<f64>,
}

impl Scratch {
    fn new(k: usize) -> Self {
        Scratch { values: vec![0.0; k], weights: vec![0.0; k], gaps: vec![0.0; k], grads: vec![0.0; k] }
    }
}

/// Gradient of the live preference index of agent `i` at `x`; gaps below
/// the live ideal are clamped to zero.
fn live_preference_gradient(
    problem: &Problem,
    layout: Layout,
    state: &[f64],
    i: usize,
    x: f64,
    s: &mut Scratch,
) -> f64 {
    let agent = &problem.agents[i];
    for (k, f) in agent.objectives.iter().enumerate() {
        let b = &agent.bounds;
        s.values[k] = f.value(b.project_point(state[layout.xbar(k, i)]));
        let ideal = f.value(b.project_point(state[layout.xhat(k, i)]));
        s.gaps[k] = (f.value(x) - ideal).max(0.0);
        s.grads[k] = f.gradient(x);
    }
    write_weights(&s.values, &mut s.weights);
    lp_gradient(problem.p, &s.weights, &s.gaps, &s.grads)
}

fn rhs(ctx: &Frozen, gains: [f64; 3], x: &[f64], dx: &mut [f64], s: &mut Scratch) {
    let Frozen { problem, config, layout: l, .. } = *ctx;
    let [g_sub, g_ideal, g_comp] = gains;
    for (i, agent) in problem.agents.iter().enumerate() {
        let b = &agent.bounds;
        for (k, f) in agent.objectives.iter().enumerate() {
            let xb = b.project_point(x[l.xbar(k, i)]);
            let (y, z) = (x[l.y(k, i)], x[l.z(k, i)]);
            let cons = ctx.consensus_sub[k][i];
            dx[l.xbar(k, i)] = b.tangent_of_clamped(xb, g_sub * (y - f.gradient(xb)));
            dx[l.y(k, i)] = g_sub * (-cons - z + agent.demand - xb);
            dx[l.z(k, i)] = g_sub * cons;
            let e = ctx.held_sub[k][i] - y;
            dx[l.eta_sub(k, i)] = etm::eta_derivative_capped(
                &config.etm_subproblem[k],
                config.etm_kind,
                g_sub,
                e,
                ctx.qbar_sub[k][i],
                ctx.degree[i],
                x[l.eta_sub(k, i)],
            );

            let xh = b.project_point(x[l.xhat(k, i)]);
            dx[l.xhat(k, i)] = b.tangent_of_clamped(xh, -g_ideal * f.gradient(xh));
        }

        let xi = b.project_point(x[l.x(i)]);
        let grad = live_preference_gradient(problem, l, x, i, xi, s);
        let (nu, mu) = (x[l.nu(i)], x[l.mu(i)]);
        let cons = ctx.consensus_comp[i];
        dx[l.x(i)] = b.tangent_of_clamped(xi, g_comp * (nu - grad));
        dx[l.nu(i)] = g_comp * (-cons - mu + agent.demand - xi);
        dx[l.mu(i)] = g_comp * cons;
        dx[l.eta_comp(i)] = etm::eta_derivative_capped(
            &config.etm_compromise,
            config.etm_kind,
            g_comp,
            ctx.held_comp[i] - nu,
            ctx.qbar_comp[i],
            ctx.degree[i],
            x[l.eta_comp(i)],
        );
    }
}

/// Grid with `≈ h` spacing that hits every breakpoint exactly.
fn build_grid(h: f64, t_end: f64, breakpoints: &[f64]) -> Vec<f64> {
    let mut marks: Vec<f64> = breakpoints.iter().copied().filter(|&b| b > 0.0 && b < t_end).collect();
    marks.push(t_end);
    marks.sort_by(f64::total_cmp);
    marks.dedup();
    let mut grid = vec![0.0];
    let mut start = 0.0;
    for end in marks {
        let n = ((end - start) / h - 1e-9).ceil().max(1.0) as usize;
        let dt = (end - start) / n as f64;
        for s in 1..n {
            grid.push(start + dt * s as f64);
        }
        grid.push(end);
        start = end;
    }
    grid
}

#[derive(Debug, Clone)]
struct Accumulators {
    window_sub: Vec<Vec<u64>>,
    window_comp: Vec<u64>,
    total_all_time: u64,
    max_sum_z: f64,
    max_sum_mu: f64,
    max_weight_err: f64,
    min_eta: f64,
    min_log_envelope: f64,
    max_overshoot: f64,
    max_violation: f64,
    min_eval_step: f64,
    ce: Option<f64>,
    distance_tpre3: Option<f64>,
    imbalance: Vec<(f64, f64)>,
    distance: Vec<(f64, f64)>,
    snapshots: Vec<Snapshot>,
}

/// A run in progress.
pub struct Simulation {
    label: String,
    problem: Problem,
    network: Network,
    config: SimConfig,
    layout: Layout,
    degree: Vec<f64>,
    grid: Vec<f64>,
    cursor: usize,
    state: Vec<f64>,
    sub_etm: Vec<Vec<EtmState>>,
    comp_etm: Vec<EtmState>,
    rk: Rk4,
    scratch: Scratch,
    oracle: Option<OracleReport>,
    bounds: Vec<LayerBound>,
    samples: Vec<Sample>,
    events: Vec<EventRecord>,
    trigger_records: Vec<TriggerRecord>,
    acc: Accumulators,
}

impl Simulation {
    /// Starts from [`InitialState::from_problem`].
    pub fn new(label: &str, problem: Problem, network: Network, config: SimConfig) -> Result<Self, DynamicsError> {
        let init = InitialState::from_problem(&problem);
        Self::with_state(label, problem, network, config, init)
    }

    /// Starts from an explicit state; does not check prescribed-time ordering.
    pub fn with_state(
        label: &str,
        problem: Problem,
        network: Network,
        config: SimConfig,
        init: InitialState,
    ) -> Result<Self, DynamicsError> {
        let n = problem.n_agents();
        let k = problem.n_objectives();
        check_setup(&problem, &network, &config, &init)?;
        let layout = Layout { n, k };
        let mut state = vec![0.0; layout.len()];
        for i in 0..n {
            for kk in 0..k {
                state[layout.xbar(kk, i)] = init.xbar[kk][i];
                state[layout.y(kk, i)] = init.y[kk][i];
                state[layout.z(kk, i)] = init.z[kk][i];
                state[layout.eta_sub(kk, i)] = config.etm_subproblem[kk].eta0;
                state[layout.xhat(kk, i)] = init.xhat[kk][i];
            }
            state[layout.x(i)] = init.x[i];
            state[layout.nu(i)] = init.nu[i];
            state[layout.mu(i)] = init.mu[i];
            state[layout.eta_comp(i)] = config.etm_compromise.eta0;
        }

        let sub_etm = (0..k)
            .map(|kk| (0..n).map(|i| EtmState::new(config.etm_subproblem[kk].eta0, init.y[kk][i], 0.0)).collect())
            .collect();
        let comp_etm = (0..n).map(|i| EtmState::new(config.etm_compromise.eta0, init.nu[i], 0.0)).collect();

        let oracle = match oracle::solve_problem(&problem) {
            Ok(r) => Some(r),
            Err(e) => {
                log::warn!("oracle unavailable for {label}: {e}");
                None
            }
        };
        let bounds = match &oracle {
            Some(r) => diagnostics::layer_bounds(&problem, &network, &config, &init, r),
            None => Vec::new(),
        };

        let breakpoints: Vec<f64> = config.tbgs().iter().map(|t| t.t_pre).chain([config.window]).collect();
        let grid = build_grid(config.step, config.t_end, &breakpoints);
        let degree = (0..n).map(|i| network.degree(i)).collect();

        let mut events = Vec::with_capacity(4096);
        for kk in 0..k {
            for i in 0..n {
                events.push(EventRecord {
                    t: 0.0,
                    layer: Layer::Subproblem,
                    agent: i,
                    objective: Some(kk),
                    broadcast_value: init.y[kk][i],
                });
            }
        }
        for i in 0..n {
            events.push(EventRecord { t: 0.0, layer: Layer::Compromise, agent: i, objective: None, broadcast_value: init.nu[i] });
        }

        let acc = Accumulators {
            window_sub: vec![vec![1; n]; k],
            window_comp: vec![1; n],
            total_all_time: (k * n + n) as u64,
            max_sum_z: 0.0,
            max_sum_mu: 0.0,
            max_weight_err: 0.0,
            min_eta: f64::INFINITY,
            min_log_envelope: f64::INFINITY,
            max_overshoot: 0.0,
            max_violation: 0.0,
            min_eval_step: f64::INFINITY,
            ce: None,
            distance_tpre3: None,
            imbalance: Vec::new(),
            distance: Vec::new(),
            snapshots: Vec::new(),
        };

        let mut sim = Simulation {
            label: label.to_string(),
            rk: Rk4::new(layout.len()),
            scratch: Scratch::new(k),
            problem,
            network,
            config,
            layout,
            degree,
            grid,
            cursor: 0,
            state,
            sub_etm,
            comp_etm,
            oracle,
            bounds,
            samples: Vec::new(),
            events,
            trigger_records: Vec::new(),
            acc,
        };
        sim.observe(0.0)?;
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.grid[self.cursor]
    }

    pub fn is_finished(&self) -> bool {
        self.cursor + 1 >= self.grid.len()
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    /// Advances to the next grid point.
    ///
    /// When the generator gains force substeps, trigger rules are evaluated
    /// after every substep; otherwise once at the grid point.
    pub fn step(&mut self) -> Result<(), DynamicsError> {
        if self.is_finished() {
            return Ok(());
        }
        let (t0, t1) = (self.grid[self.cursor], self.grid[self.cursor + 1]);
        let before = self.config.tbgs().map(|g| t0 < g.t_pre);
        let max_gain = self
            .config
            .tbgs()
            .iter()
            .zip(before)
            .map(|(g, b)| g.max_gain_on(t0, t1, b))
            .fold(0.0, f64::max);
        let h = t1 - t0;
        let substeps = ((h * max_gain / self.config.max_gain_step).ceil() as usize).max(1);
        let tbgs = self.config.tbgs().map(|g| *g);
        let gain_at = move |t: f64| -> [f64; 3] {
            [
                tbgs[0].gain_on_segment(t, before[0]),
                tbgs[1].gain_on_segment(t, before[1]),
                tbgs[2].gain_on_segment(t, before[2]),
            ]
        };
        for s in 0..substeps {
            let ta = t0 + h * s as f64 / substeps as f64;
            let tb = if s + 1 == substeps { t1 } else { t0 + h * (s + 1) as f64 / substeps as f64 };
            self.integrate(ta, tb, gain_at)?;
            self.acc.min_eval_step = self.acc.min_eval_step.min(tb - ta);
            self.update_triggers(tb)?;
        }
        self.cursor += 1;
        self.observe(t1)
    }

    /// Integrates `[t, t + h]` with fixed gains and no trigger evaluation.
    pub fn advance_with_gains(&mut self, h: f64, gains: [f64; 3]) -> Result<(), DynamicsError> {
        let t = self.time();
        self.integrate(t, t + h, move |_| gains)
    }

    fn integrate<G: Fn(f64) -> [f64; 3]>(&mut self, t0: f64, t1: f64, gain_at: G) -> Result<(), DynamicsError> {
        let (n, k, l) = (self.layout.n, self.layout.k, self.layout);
        let held_sub: Vec<Vec<f64>> =
            self.sub_etm.iter().map(|row| row.iter().map(|s| s.last_broadcast).collect()).collect();
        let held_comp: Vec<f64> = self.comp_etm.iter().map(|s| s.last_broadcast).collect();
        let consensus_sub: Vec<Vec<f64>> = held_sub.iter().map(|v| self.network.laplacian_apply(v)).collect();
        let consensus_comp = self.network.laplacian_apply(&held_comp);
        let qbar = |v: &[f64], i: usize| {
            etm::local_disagreement(v[i], self.network.neighbors(i).iter().map(|&(j, a)| (a, v[j])))
        };
        let qbar_sub: Vec<Vec<f64>> = held_sub.iter().map(|v| (0..n).map(|i| qbar(v, i)).collect()).collect();
        let qbar_comp: Vec<f64> = (0..n).map(|i| qbar(&held_comp, i)).collect();

        let ctx = Frozen {
            problem: &self.problem,
            config: &self.config,
            layout: l,
            degree: &self.degree,
            held_sub: &held_sub,
            consensus_sub: &consensus_sub,
            qbar_sub: &qbar_sub,
            held_comp: &held_comp,
            consensus_comp: &consensus_comp,
            qbar_comp: &qbar_comp,
        };
        let scratch = &mut self.scratch;
        self.rk.step(|t, x, dx| rhs(&ctx, gain_at(t), x, dx, scratch), t0, t1 - t0, &mut self.state);
        for (i, agent) in self.problem.agents.iter().enumerate() {
            let b = &agent.bounds;
            let mut clamp = |idx: usize| {
                let v = self.state[idx];
                let over = (b.lower - v).max(v - b.upper).max(0.0);
                self.acc.max_overshoot = self.acc.max_overshoot.max(over);
                self.state[idx] = b.project_point(v);
            };
            for kk in 0..k {
                clamp(l.xbar(kk, i));
                clamp(l.xhat(kk, i));
            }
            clamp(l.x(i));
        }
        if let Some(idx) = self.state.iter().position(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFiniteState { t: t1, what: format!("state component {idx}") });
        }
        Ok(())
    }

    /// Evaluates every trigger rule at `t`; all firing agents broadcast together.
    fn update_triggers(&mut self, t: f64) -> Result<(), DynamicsError> {
        let (n, k, l) = (self.layout.n, self.layout.k, self.layout);
        let kind = self.config.etm_kind;
        let dynamic = kind != EtmKind::Static;
        for kk in 0..k {
            for i in 0..n {
                self.sub_etm[kk][i].eta = self.state[l.eta_sub(kk, i)];
            }
        }
        for i in 0..n {
            self.comp_etm[i].eta = self.state[l.eta_comp(i)];
        }

        // trigger decisions use the pre-broadcast values of every agent
        let mut fired_sub = vec![vec![false; n]; k];
        let mut fired_comp = vec![false; n];
        for kk in 0..k {
            let held: Vec<f64> = self.sub_etm[kk].iter().map(|s| s.last_broadcast).collect();
            let params = &self.config.etm_subproblem[kk];
            for i in 0..n {
                let st = &self.sub_etm[kk][i];
                let e = st.measurement_error(self.state[l.y(kk, i)]);
                let q = etm::local_disagreement(held[i], self.network.neighbors(i).iter().map(|&(j, a)| (a, held[j])));
                fired_sub[kk][i] = etm::trigger_fired(params, kind, e, q, self.degree[i], st.eta)?;
                if self.config.record_trigger_samples {
                    self.trigger_records.push(TriggerRecord {
                        layer: Layer::Subproblem,
                        objective: Some(kk),
                        sample: TriggerSample { e, qbar: q, l_ii: self.degree[i], eta: st.eta },
                    });
                }
            }
        }
        let held: Vec<f64> = self.comp_etm.iter().map(|s| s.last_broadcast).collect();
        for i in 0..n {
            let st = &self.comp_etm[i];
            let e = st.measurement_error(self.state[l.nu(i)]);
            let q = etm::local_disagreement(held[i], self.network.neighbors(i).iter().map(|&(j, a)| (a, held[j])));
            fired_comp[i] = etm::trigger_fired(&self.config.etm_compromise, kind, e, q, self.degree[i], st.eta)?;
            if self.config.record_trigger_samples {
                self.trigger_records.push(TriggerRecord {
                    layer: Layer::Compromise,
                    objective: None,
                    sample: TriggerSample { e, qbar: q, l_ii: self.degree[i], eta: st.eta },
                });
            }
        }

        let in_window = t <= self.config.window + 1e-9;
        for kk in 0..k {
            for i in 0..n {
                if fired_sub[kk][i] {
                    let v = self.state[l.y(kk, i)];
                    self.sub_etm[kk][i].broadcast(v, t);
                    self.events.push(EventRecord { t, layer: Layer::Subproblem, agent: i, objective: Some(kk), broadcast_value: v });
                    self.acc.total_all_time += 1;
                    if in_window {
                        self.acc.window_sub[kk][i] += 1;
                    }
                }
            }
        }
        for i in 0..n {
            if fired_comp[i] {
                let v = self.state[l.nu(i)];
                self.comp_etm[i].broadcast(v, t);
                self.events.push(EventRecord { t, layer: Layer::Compromise, agent: i, objective: None, broadcast_value: v });
                self.acc.total_all_time += 1;
                if in_window {
                    self.acc.window_comp[i] += 1;
                }
            }
        }

        if dynamic {
            let etas = self.sub_etm.iter().flatten().chain(&self.comp_etm).map(|s| s.eta);
            if let Some(eta) = etas.clone().find(|e| !(*e > 0.0)) {
                return Err(DynamicsError::InvariantViolation { t, what: format!("trigger variable {eta} <= 0") });
            }
        }
        Ok(())
    }

    /// Metric bookkeeping at a grid point.
    fn observe(&mut self, t: f64) -> Result<(), DynamicsError> {
        let (n, k, l) = (self.layout.n, self.layout.k, self.layout);
        let kind = self.config.etm_kind;

        for kk in 0..k {
            let s: f64 = (0..n).map(|i| self.state[l.z(kk, i)]).sum();
            self.acc.max_sum_z = self.acc.max_sum_z.max(s.abs());
        }
        let s: f64 = (0..n).map(|i| self.state[l.mu(i)]).sum();
        self.acc.max_sum_mu = self.acc.max_sum_mu.max(s.abs());

        let weights = self.live_weights();
        for i in 0..n {
            let sum: f64 = weights[i * k..(i + 1) * k].iter().sum();
            self.acc.max_weight_err = self.acc.max_weight_err.max((sum - 1.0).abs());
        }

        for (i, agent) in self.problem.agents.iter().enumerate() {
            let b = &agent.bounds;
            let idx = (0..k).flat_map(|kk| [l.xbar(kk, i), l.xhat(kk, i)]).chain([l.x(i)]);
            for j in idx {
                let v = self.state[j];
                self.acc.max_violation = self.acc.max_violation.max((b.lower - v).max(v - b.upper).max(0.0));
            }
        }

        let gamma_sub = self.config.tbg_subproblem.gauge(t).unwrap_or(0.0);
        let gamma_comp = self.config.tbg_compromise.gauge(t).unwrap_or(0.0);
        for kk in 0..k {
            let p = &self.config.etm_subproblem[kk];
            for i in 0..n {
                let eta = self.state[l.eta_sub(kk, i)];
                self.acc.min_eta = self.acc.min_eta.min(eta);
                if kind != EtmKind::Static {
                    let log_ratio = eta.ln() - (p.eta0.ln() - p.envelope_rate() * gamma_sub);
                    self.acc.min_log_envelope = self.acc.min_log_envelope.min(log_ratio);
                }
            }
        }
        let p = &self.config.etm_compromise;
        for i in 0..n {
            let eta = self.state[l.eta_comp(i)];
            self.acc.min_eta = self.acc.min_eta.min(eta);
            if kind != EtmKind::Static {
                let log_ratio = eta.ln() - (p.eta0.ln() - p.envelope_rate() * gamma_comp);
                self.acc.min_log_envelope = self.acc.min_log_envelope.min(log_ratio);
            }
        }

        let x: Vec<f64> = (0..n).map(|i| self.state[l.x(i)]).collect();
        let imbalance = self.problem.total_demand() - x.iter().sum::<f64>();
        let distance = self.oracle.as_ref().map(|r| linf(&x, &r.compromise.x_star));

        let at = |tp: f64| (t - tp).abs() <= 1e-12 * tp.max(1.0);
        let names = [
            ("t_pre1", self.config.tbg_subproblem.t_pre),
            ("t_pre2", self.config.tbg_ideal.t_pre),
            ("t_pre3", self.config.tbg_compromise.t_pre),
        ];
        for (name, tp) in names {
            if at(tp) && tp > 0.0 {
                self.acc.snapshots.push(self.snapshot(name, t, &weights));
            }
        }
        if at(self.config.tbg_compromise.t_pre) {
            self.acc.ce = Some(imbalance);
            self.acc.distance_tpre3 = distance;
        }
        if t > 0.0 {
            self.record_bound_measurements(t);
        }

        let step_index = self.cursor;
        let last = self.is_finished();
        if step_index.is_multiple_of(self.config.output_stride.max(1)) || last {
            self.acc.imbalance.push((t, imbalance));
            if let Some(d) = distance {
                self.acc.distance.push((t, d));
            }
            if self.config.record_trajectory {
                self.samples.push(Sample { t, state: self.state.clone(), weights });
            }
        }
        debug!("t = {t:.4} imbalance = {imbalance:.6}");
        Ok(())
    }

    fn record_bound_measurements(&mut self, t: f64) {
        let l = self.layout;
        let n = l.n;
        for b in &mut self.bounds {
            if (t - b.t_pre).abs() > 1e-12 * b.t_pre.max(1.0) {
                continue;
            }
            let (current, target): (Vec<f64>, Vec<f64>) = match (b.layer, b.objective, &self.oracle) {
                (Layer::Compromise, _, Some(r)) => {
                    ((0..n).map(|i| self.state[l.x(i)]).collect(), r.compromise.x_star.clone())
                }
                (Layer::Subproblem, Some(k), Some(r)) => {
                    ((0..n).map(|i| self.state[l.xbar(k, i)]).collect(), r.subproblems[k].x_star.clone())
                }
                (Layer::Ideal, Some(k), Some(r)) => (
                    (0..n).map(|i| self.state[l.xhat(k, i)]).collect(),
                    (0..n).map(|i| r.ideal_points[i][k]).collect(),
                ),
                _ => continue,
            };
            b.measured = Some(l2(&current, &target));
            b.measured_inf = Some(linf(&current, &target));
        }
    }

    /// Live `ω_i^k` as `[i·K + k]`.
    pub fn live_weights(&self) -> Vec<f64> {
        let (n, k, l) = (self.layout.n, self.layout.k, self.layout);
        let mut out = vec![0.0; n * k];
        let mut values = vec![0.0; k];
        for (i, agent) in self.problem.agents.iter().enumerate() {
            for (kk, f) in agent.objectives.iter().enumerate() {
                values[kk] = f.value(self.state[l.xbar(kk, i)]);
            }
            write_weights(&values, &mut out[i * k..(i + 1) * k]);
        }
        out
    }

    fn snapshot(&self, name: &str, t: f64, weights: &[f64]) -> Snapshot {
        let (n, k, l) = (self.layout.n, self.layout.k, self.layout);
        Snapshot {
            name: name.to_string(),
            t,
            xbar: (0..k).map(|kk| (0..n).map(|i| self.state[l.xbar(kk, i)]).collect()).collect(),
            xhat: (0..k).map(|kk| (0..n).map(|i| self.state[l.xhat(kk, i)]).collect()).collect(),
            x: (0..n).map(|i| self.state[l.x(i)]).collect(),
            weights: (0..n).map(|i| weights[i * k..(i + 1) * k].to_vec()).collect(),
        }
    }

    pub fn run_to_end(mut self) -> Result<SimulationRun, DynamicsError> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> SimulationRun {
        let (n, k) = (self.layout.n, self.layout.k);
        let counts_sub = self.acc.window_sub.clone();
        let counts_comp = self.acc.window_comp.clone();
        let per_agent_total: Vec<u64> =
            (0..n).map(|i| counts_comp[i] + (0..k).map(|kk| counts_sub[kk][i]).sum::<u64>()).collect();
        let min_sub = self.sub_etm.iter().flatten().map(|s| s.min_inter_event).fold(f64::INFINITY, f64::min);
        let min_comp = self.comp_etm.iter().map(|s| s.min_inter_event).fold(f64::INFINITY, f64::min);
        let x: Vec<f64> = (0..n).map(|i| self.state[self.layout.x(i)]).collect();
        let metrics = MetricsBundle {
            label: self.label.clone(),
            t_final: self.time(),
            steps: self.cursor as u64,
            convergence_error: self.acc.ce,
            final_imbalance: self.problem.total_demand() - x.iter().sum::<f64>(),
            window: self.config.window,
            total: per_agent_total.iter().sum(),
            per_agent_total,
            counts_subproblem: counts_sub,
            counts_compromise: counts_comp,
            total_all_time: self.acc.total_all_time,
            min_inter_event: min_sub.min(min_comp),
            min_inter_event_subproblem: min_sub,
            min_inter_event_compromise: min_comp,
            min_evaluation_step: self.acc.min_eval_step,
            max_abs_sum_z: self.acc.max_sum_z,
            max_abs_sum_mu: self.acc.max_sum_mu,
            max_weight_sum_error: self.acc.max_weight_err,
            min_eta: self.acc.min_eta,
            min_envelope_ratio: (self.config.etm_kind != EtmKind::Static).then(|| self.acc.min_log_envelope.exp()),
            max_preclamp_overshoot: self.acc.max_overshoot,
            max_bound_violation: self.acc.max_violation,
            distance_to_oracle: self.oracle.as_ref().map(|r| linf(&x, &r.compromise.x_star)),
            distance_at_tpre3: self.acc.distance_tpre3,
            final_x: x,
            bounds: self.bounds,
            snapshots: self.acc.snapshots,
            imbalance_trajectory: self.acc.imbalance,
            distance_trajectory: self.acc.distance,
        };
        SimulationRun {
            layout: self.layout,
            config: self.config,
            samples: self.samples,
            events: self.events,
            trigger_records: self.trigger_records,
            final_state: self.state,
            oracle: self.oracle,
            metrics,
        }
    }
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_setup(
    problem: &Problem,
    network: &Network,
    config: &SimConfig,
    init: &InitialState,
) -> Result<(), DynamicsError> {
    let bad = |m: String| Err(DynamicsError::InvalidSetup(m));
    let (n, k) = (problem.n_agents(), problem.n_objectives());
    if n == 0 || k == 0 {
        return bad("need at least one agent and one objective".into());
    }
    if network.n_agents() != n {
        return bad(format!("network has {} agents, problem has {n}", network.n_agents()));
    }
    if problem.agents.iter().any(|a| a.objectives.len() != k) {
        return bad("agents disagree on the number of objectives".into());
    }
    if config.etm_subproblem.len() != k {
        return bad(format!("{} subproblem trigger parameter sets for {k} objectives", config.etm_subproblem.len()));
    }
    for p in config.etm_subproblem.iter().chain([&config.etm_compromise]) {
        p.validate()?;
    }
    if !(config.step > 0.0 && config.t_end > 0.0 && config.max_gain_step > 0.0 && config.window > 0.0) {
        return bad("step, t_end, window and max_gain_step must be positive".into());
    }
    if config.tbgs().iter().any(|g| !(g.t_pre > 0.0)) {
        return bad("prescribed times must be positive".into());
    }
    for (i, agent) in problem.agents.iter().enumerate() {
        let b = &agent.bounds;
        let mut feasible = b.contains(init.x[i], 0.0);
        for kk in 0..k {
            feasible &= b.contains(init.xbar[kk][i], 0.0) && b.contains(init.xhat[kk][i], 0.0);
        }
        if !feasible {
            return bad(format!("initial decision of agent {i} is outside [{}, {}]", b.lower, b.upper));
        }
    }
    Ok(())
}

/// Checks `t_pre3 > max(t_pre1, t_pre2)`, then runs every layer to `t_end`.
pub fn run_algorithm1(
    label: &str,
    problem: Problem,
    network: Network,
    config: SimConfig,
) -> Result<SimulationRun, DynamicsError> {
    check_prescribed_times(&config)?;
    Simulation::new(label, problem, network, config)?.run_to_end()
}

pub fn check_prescribed_times(config: &SimConfig) -> Result<(), DynamicsError> {
    let (t1, t2, t3) = (config.tbg_subproblem.t_pre, config.tbg_ideal.t_pre, config.tbg_compromise.t_pre);
    if !(t3 > t1.max(t2)) {
        return Err(DynamicsError::InvalidPrescribedTimes { t_pre1: t1, t_pre2: t2, t_pre3: t3 });
    }
    Ok(())
}
