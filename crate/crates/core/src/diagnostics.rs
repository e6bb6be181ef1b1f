//! Prescribed-time error bounds per layer, evaluated from the initial state.
//!
//! These are diagnostic numbers only; nothing in the dynamics reads them.

use serde::Serialize;

use crate::dynamics::{InitialState, Layer, SimConfig};
use crate::etm::{EtmKind, EtmParams};
use crate::graph::Network;
use crate::oracle::OracleReport;
use crate::problem::Problem;
use crate::tbg::{error_bound, TbgSpec};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerBound {
    pub layer: Layer,
    pub objective: Option<usize>,
    pub t_pre: f64,
    /// Initial Lyapunov value.
    pub v0: f64,
    /// Decay rate in gauge units; `None` when the design constants give no
    /// positive rate.
    pub rate: Option<f64>,
    pub scale: f64,
    pub gamma_increment: f64,
    pub epsilon: Option<f64>,
    /// Euclidean distance to the layer's equilibrium at `t_pre`.
    pub measured: Option<f64>,
    pub measured_inf: Option<f64>,
}

/// Constants of the primal–dual layers' bound.
struct PrimalDualConstants {
    kappa: f64,
    theta: f64,
}

fn primal_dual_constants(modulus: f64, p: &EtmParams, network: &Network) -> PrimalDualConstants {
    let (l2, ln) = (network.lambda2(), network.lambda_n());
    let min_deg = (0..network.n_agents()).map(|i| network.degree(i)).fold(f64::INFINITY, f64::min);
    let c_min = 1.0 / (2.0 * p.varsigma) + min_deg;
    let psi_d = p.phi - (1.0 - p.delta) / p.alpha;
    let psi = (2.0 + ln / c_min).max(2.0 * ln * (1.0 - p.beta) / (psi_d * p.alpha * c_min));
    let kappa = (modulus - 3.0 * p.varsigma)
        .min(l2 * (1.0 - p.beta) / (2.0 * psi) - 3.0 * p.varsigma)
        .min(p.varsigma / 2.0)
        .min(psi_d / 2.0);
    let theta = 1f64.max(0.5 + 4.0 * p.varsigma).max(1.0 / (2.0 * l2) + 4.0 * p.varsigma);
    PrimalDualConstants { kappa, theta }
}

/// `½(|x̃|² + |d̃|² + ãᵀL⁺ã) + 2ς|d̃ + ã|² + Σ η0`.
#[allow(clippy::too_many_arguments)]
fn primal_dual_v0(
    x0: &[f64],
    x_star: &[f64],
    dual0: &[f64],
    multiplier: f64,
    aux0: &[f64],
    aux_star: &[f64],
    p: &EtmParams,
    kind: EtmKind,
    network: &Network,
) -> f64 {
    let xt: Vec<f64> = x0.iter().zip(x_star).map(|(a, b)| a - b).collect();
    let dt: Vec<f64> = dual0.iter().map(|a| a - multiplier).collect();
    let at: Vec<f64> = aux0.iter().zip(aux_star).map(|(a, b)| a - b).collect();
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let sum_da: Vec<f64> = dt.iter().zip(&at).map(|(a, b)| a + b).collect();
    let eta_total = if kind == EtmKind::Static { 0.0 } else { p.eta0 * x0.len() as f64 };
    0.5 * (sq(&xt) + sq(&dt) + network.pseudo_inverse_form(&at)) + 2.0 * p.varsigma * sq(&sum_da) + eta_total
}

fn gamma_at(tbg: &TbgSpec) -> f64 {
    tbg.gauge_increment(0.0, tbg.t_pre).unwrap_or(0.0)
}

fn finish(
    layer: Layer,
    objective: Option<usize>,
    tbg: &TbgSpec,
    v0: f64,
    rate: f64,
    scale: f64,
) -> LayerBound {
    let gamma_increment = gamma_at(tbg);
    let (rate, epsilon) = if rate > 0.0 && rate.is_finite() {
        (Some(rate), error_bound(rate, v0, scale, gamma_increment).ok())
    } else {
        log::warn!(
            "{} layer{}: design constants give no positive decay rate; bound not applicable",
            layer.as_str(),
            objective.map(|k| format!(" objective {k}")).unwrap_or_default()
        );
        (None, None)
    };
    LayerBound {
        layer,
        objective,
        t_pre: tbg.t_pre,
        v0,
        rate,
        scale,
        gamma_increment,
        epsilon,
        measured: None,
        measured_inf: None,
    }
}

/// Bounds for every subproblem, every ideal-point flow and the compromise.
pub fn layer_bounds(
    problem: &Problem,
    network: &Network,
    config: &SimConfig,
    init: &InitialState,
    report: &OracleReport,
) -> Vec<LayerBound> {
    let n = problem.n_agents();
    let bounds = problem.bounds();
    let demand: Vec<f64> = problem.agents.iter().map(|a| a.demand).collect();
    let connected = n > 1 && network.lambda2() > 0.0;
    let mut out = Vec::new();

    for k in 0..problem.n_objectives() {
        let column = problem.objective_column(k);
        let m_min = column.iter().zip(&bounds).map(|(f, b)| f.modulus_on(b)).fold(f64::INFINITY, f64::min);

        if connected {
            let p = &config.etm_subproblem[k];
            let sol = &report.subproblems[k];
            let z_star: Vec<f64> = demand.iter().zip(&sol.x_star).map(|(d, x)| d - x).collect();
            let v0 = primal_dual_v0(
                &init.xbar[k], &sol.x_star, &init.y[k], sol.multiplier, &init.z[k], &z_star, p,
                config.etm_kind, network,
            );
            let c = primal_dual_constants(m_min, p, network);
            out.push(finish(Layer::Subproblem, Some(k), &config.tbg_subproblem, v0, c.kappa / c.theta, c.theta));
        }

        let xhat_star: Vec<f64> = (0..n).map(|i| report.ideal_points[i][k]).collect();
        let v0 = 0.5 * init.xhat[k].iter().zip(&xhat_star).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        out.push(finish(Layer::Ideal, Some(k), &config.tbg_ideal, v0, 2.0 * m_min, 0.5));
    }

    if connected {
        let prefs = report.preferences(problem);
        let modulus = prefs
            .iter()
            .zip(&bounds)
            .map(|(u, b)| u.estimate_modulus(b, 1000).unwrap_or(0.0))
            .fold(f64::INFINITY, f64::min);
        let p = &config.etm_compromise;
        let sol = &report.compromise;
        let mu_star: Vec<f64> = demand.iter().zip(&sol.x_star).map(|(d, x)| d - x).collect();
        let v0 = primal_dual_v0(
            &init.x, &sol.x_star, &init.nu, sol.multiplier, &init.mu, &mu_star, p, config.etm_kind, network,
        );
        let c = primal_dual_constants(modulus, p, network);
        out.push(finish(Layer::Compromise, None, &config.tbg_compromise, v0, c.kappa / c.theta, c.theta));
    }
    out
}
