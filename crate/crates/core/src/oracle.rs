//! Centralized reference solvers.
//!
//! [`solve_dispatch`] is the equal-marginal (water-filling) solve of
//! `min Σ f_i(x_i)  s.t.  Σ x_i = D, x_i ∈ [lo_i, hi_i]`: bisection on the
//! shared multiplier `λ`, with each `x_i(λ)` the clamped inverse of `∇f_i`.
//! [`projected_gradient_dispatch`] solves the same problem by a different
//! route and only exists to cross-check the first.

use serde::Serialize;
use thiserror::Error;

use crate::objectives::{
    lp_gradient, lp_value, weights_or_uniform, ObjectiveFn, PreferenceIndex,
};
use crate::problem::Problem;
use crate::projection::{ConvexSet, Interval};

const INVERSE_TOL: f64 = 1e-12;
const BALANCE_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("demand {demand} outside the feasible range [{min}, {max}]")]
    InfeasibleDemand { demand: f64, min: f64, max: f64 },
    #[error("gradient of agent {agent} is not strictly increasing on its interval")]
    NonMonotoneGradient { agent: usize },
    #[error("only {points} feasible grid points; refine the grid")]
    GridTooCoarse { points: usize },
    #[error("{costs} cost functions for {bounds} intervals")]
    LengthMismatch { costs: usize, bounds: usize },
    #[error("projected gradient did not converge in {0} iterations")]
    NoConvergence(usize),
}

/// A scalar convex cost with an analytic derivative.
pub trait ScalarCost {
    fn value(&self, x: f64) -> f64;
    fn gradient(&self, x: f64) -> f64;
}

impl ScalarCost for ObjectiveFn {
    fn value(&self, x: f64) -> f64 {
        ObjectiveFn::value(self, x)
    }
    fn gradient(&self, x: f64) -> f64 {
        ObjectiveFn::gradient(self, x)
    }
}

/// Gaps below the ideal value are clamped to zero.
impl ScalarCost for PreferenceIndex {
    fn value(&self, x: f64) -> f64 {
        let gaps = clamped_gaps(self, x);
        lp_value(self.p, &self.weights, &gaps)
    }
    fn gradient(&self, x: f64) -> f64 {
        let gaps = clamped_gaps(self, x);
        let grads: Vec<f64> = self.objectives.iter().map(|f| f.gradient(x)).collect();
        lp_gradient(self.p, &self.weights, &gaps, &grads)
    }
}

fn clamped_gaps(u: &PreferenceIndex, x: f64) -> Vec<f64> {
    u.objectives.iter().zip(&u.ideal_values).map(|(f, i)| (f.value(x) - i).max(0.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ActiveBound {
    Lower,
    Upper,
    Interior,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispatchSolution {
    pub x_star: Vec<f64>,
    pub multiplier: f64,
    pub active_bounds: Vec<ActiveBound>,
    pub objective_value: f64,
}

fn check_lengths(costs: usize, bounds: usize) -> Result<(), OracleError> {
    if costs != bounds {
        return Err(OracleError::LengthMismatch { costs, bounds });
    }
    Ok(())
}

fn check_feasible(bounds: &[Interval], demand: f64) -> Result<(), OracleError> {
    let min: f64 = bounds.iter().map(|b| b.lower).sum();
    let max: f64 = bounds.iter().map(|b| b.upper).sum();
    if !(demand >= min - BALANCE_TOL && demand <= max + BALANCE_TOL) {
        return Err(OracleError::InfeasibleDemand { demand, min, max });
    }
    Ok(())
}

fn check_monotone<C: ScalarCost>(agent: usize, f: &C, b: &Interval) -> Result<(), OracleError> {
    const SAMPLES: usize = 256;
    if b.width() == 0.0 {
        return Ok(());
    }
    let g: Vec<f64> = (0..=SAMPLES)
        .map(|s| f.gradient(b.lower + b.width() * s as f64 / SAMPLES as f64))
        .collect();
    let scale = g.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let decreasing = g.windows(2).any(|w| w[1] < w[0] - 1e-12 * scale);
    if decreasing || !(g[SAMPLES] > g[0]) {
        return Err(OracleError::NonMonotoneGradient { agent });
    }
    Ok(())
}

/// `x(λ) = clamp(∇f⁻¹(λ))` by bisection on the interval.
fn inverse_gradient<C: ScalarCost>(f: &C, b: &Interval, lambda: f64) -> f64 {
    if f.gradient(b.lower) >= lambda {
        return b.lower;
    }
    if f.gradient(b.upper) <= lambda {
        return b.upper;
    }
    let (mut lo, mut hi) = (b.lower, b.upper);
    while hi - lo > INVERSE_TOL * hi.abs().max(lo.abs()).max(1.0) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f.gradient(mid) < lambda {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn classify(x: f64, b: &Interval) -> ActiveBound {
    if (x - b.lower).abs() <= 1e-9 {
        ActiveBound::Lower
    } else if (x - b.upper).abs() <= 1e-9 {
        ActiveBound::Upper
    } else {
        ActiveBound::Interior
    }
}

pub fn solve_dispatch<C: ScalarCost>(
    costs: &[C],
    bounds: &[Interval],
    demand: f64,
) -> Result<DispatchSolution, OracleError> {
    check_lengths(costs.len(), bounds.len())?;
    check_feasible(bounds, demand)?;
    for (i, (f, b)) in costs.iter().zip(bounds).enumerate() {
        check_monotone(i, f, b)?;
    }

    let allocate = |lambda: f64| -> Vec<f64> {
        costs.iter().zip(bounds).map(|(f, b)| inverse_gradient(f, b, lambda)).collect()
    };
    let mut lo = costs.iter().zip(bounds).map(|(f, b)| f.gradient(b.lower)).fold(f64::INFINITY, f64::min);
    let mut hi = costs.iter().zip(bounds).map(|(f, b)| f.gradient(b.upper)).fold(f64::NEG_INFINITY, f64::max);

    let mut lambda = 0.5 * (lo + hi);
    let mut x = allocate(lambda);
    for endpoint in [lo, hi] {
        let at_end = allocate(endpoint);
        if (at_end.iter().sum::<f64>() - demand).abs() < BALANCE_TOL {
            lambda = endpoint;
            x = at_end;
        }
    }
    for _ in 0..400 {
        let excess: f64 = x.iter().sum::<f64>() - demand;
        if excess.abs() < BALANCE_TOL {
            break;
        }
        if excess > 0.0 {
            hi = lambda;
        } else {
            lo = lambda;
        }
        let next = 0.5 * (lo + hi);
        if next == lambda {
            break;
        }
        lambda = next;
        x = allocate(lambda);
    }

    let active_bounds = x.iter().zip(bounds).map(|(xi, b)| classify(*xi, b)).collect();
    let objective_value = costs.iter().zip(&x).map(|(f, xi)| f.value(*xi)).sum();
    Ok(DispatchSolution { x_star: x, multiplier: lambda, active_bounds, objective_value })
}

/// Projection onto `{Σ x = D} ∩ box` via bisection on a uniform shift.
fn project_balanced(v: &[f64], bounds: &[Interval], demand: f64) -> Vec<f64> {
    let shifted = |tau: f64| -> Vec<f64> {
        v.iter().zip(bounds).map(|(vi, b)| b.project_point(vi - tau)).collect()
    };
    let spread = v.iter().zip(bounds).map(|(vi, b)| (vi - b.lower).abs().max((vi - b.upper).abs())).fold(0.0, f64::max);
    let (mut lo, mut hi) = (-spread - 1.0, spread + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if shifted(mid).iter().sum::<f64>() > demand {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    shifted(0.5 * (lo + hi))
}

/// Reference solver: projected gradient descent with step `1/L`.
pub fn projected_gradient_dispatch<C: ScalarCost>(
    costs: &[C],
    bounds: &[Interval],
    demand: f64,
    tol: f64,
) -> Result<Vec<f64>, OracleError> {
    check_lengths(costs.len(), bounds.len())?;
    check_feasible(bounds, demand)?;
    const GRID: usize = 64;
    let lipschitz = costs
        .iter()
        .zip(bounds)
        .map(|(f, b)| {
            let h = b.width().max(1e-12) / GRID as f64;
            (0..GRID)
                .map(|s| {
                    let x0 = b.lower + h * s as f64;
                    ((f.gradient(x0 + h) - f.gradient(x0)) / h).abs()
                })
                .fold(0.0, f64::max)
        })
        .fold(1e-12, f64::max);
    let step = 1.0 / lipschitz;

    let start: Vec<f64> = bounds.iter().map(|b| b.midpoint()).collect();
    let mut x = project_balanced(&start, bounds, demand);
    const MAX_ITER: usize = 2_000_000;
    for _ in 0..MAX_ITER {
        let v: Vec<f64> = x.iter().zip(costs).map(|(xi, f)| xi - step * f.gradient(*xi)).collect();
        let next = project_balanced(&v, bounds, demand);
        let moved = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = next;
        if moved < tol {
            return Ok(x);
        }
    }
    Err(OracleError::NoConvergence(MAX_ITER))
}

/// Constrained minimizer of a single objective and its value.
pub fn ideal_point(f: &ObjectiveFn, bounds: &Interval) -> (f64, f64) {
    if f.gradient(bounds.lower) >= 0.0 {
        return (bounds.lower, f.value(bounds.lower));
    }
    if f.gradient(bounds.upper) <= 0.0 {
        return (bounds.upper, f.value(bounds.upper));
    }
    // golden-section bracket, then bisection on the derivative sign
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (bounds.lower, bounds.upper);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    while b - a > 1e-6 * bounds.width().max(1.0) {
        if f.value(c) < f.value(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - ratio * (b - a);
        d = a + ratio * (b - a);
    }
    if !(f.gradient(a) < 0.0 && f.gradient(b) > 0.0) {
        a = bounds.lower;
        b = bounds.upper;
    }
    while b - a > INVERSE_TOL * b.abs().max(1.0) {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if f.gradient(mid) < 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let x = 0.5 * (a + b);
    (x, f.value(x))
}

/// Residuals of the equilibrium conditions: agreeing multipliers, supply
/// balance and projected stationarity `P_T(ν_i − ∇f_i(x_i)) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktReport {
    pub consensus_residual: f64,
    /// Signed `Σ x_i − D`.
    pub balance_residual: f64,
    pub stationarity_residual: f64,
    pub feasibility_residual: f64,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.consensus_residual
            .max(self.balance_residual.abs())
            .max(self.stationarity_residual)
            .max(self.feasibility_residual)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_residual() < tol
    }
}

pub fn verify_kkt<C: ScalarCost>(
    allocation: &[f64],
    multipliers: &[f64],
    costs: &[C],
    bounds: &[Interval],
    demand: f64,
) -> KktReport {
    let mean = multipliers.iter().sum::<f64>() / multipliers.len().max(1) as f64;
    let consensus_residual = multipliers.iter().map(|m| (m - mean).abs()).fold(0.0, f64::max);
    let balance_residual = allocation.iter().sum::<f64>() - demand;
    let mut stationarity_residual: f64 = 0.0;
    let mut feasibility_residual: f64 = 0.0;
    for (((x, nu), f), b) in allocation.iter().zip(multipliers).zip(costs).zip(bounds) {
        feasibility_residual = feasibility_residual.max((b.lower - x).max(x - b.upper).max(0.0));
        let xc = b.project_point(*x);
        let r = b.tangent_of_clamped(xc, nu - f.gradient(xc));
        stationarity_residual = stationarity_residual.max(r.abs());
    }
    KktReport { consensus_residual, balance_residual, stationarity_residual, feasibility_residual }
}

impl DispatchSolution {
    pub fn verify_kkt<C: ScalarCost>(&self, costs: &[C], bounds: &[Interval], demand: f64) -> KktReport {
        let multipliers = vec![self.multiplier; self.x_star.len()];
        verify_kkt(&self.x_star, &multipliers, costs, bounds, demand)
    }
}

/// Grid-enumeration Pareto test on `{Σ x = D} ∩ box`.
///
/// Returns `false` iff some grid point weakly improves every network
/// objective `F^k = Σ_i ω_i^k f_i^k` and strictly improves at least one.
pub fn pareto_check(
    candidate: &[f64],
    objectives: &[Vec<ObjectiveFn>],
    weights: &[Vec<f64>],
    bounds: &[Interval],
    demand: f64,
    step: f64,
) -> Result<bool, OracleError> {
    check_lengths(objectives.len(), bounds.len())?;
    let n = bounds.len();
    let k_count = objectives.first().map_or(0, |o| o.len());
    let network = |x: &[f64]| -> Vec<f64> {
        (0..k_count)
            .map(|k| (0..n).map(|i| weights[i][k] * objectives[i][k].value(x[i])).sum())
            .collect()
    };
    let reference = network(candidate);
    let tol: Vec<f64> = reference.iter().map(|f| 1e-9 * (1.0 + f.abs())).collect();

    let mut point = vec![0.0; n];
    let mut feasible = 0usize;
    let mut dominated = false;
    enumerate(0, 0.0, &mut point, bounds, demand, step, &mut |x| {
        feasible += 1;
        if dominated {
            return;
        }
        let f = network(x);
        let weakly = f.iter().zip(&reference).zip(&tol).all(|((a, b), t)| *a <= b + t);
        let strictly = f.iter().zip(&reference).zip(&tol).any(|((a, b), t)| *a < b - t);
        dominated = weakly && strictly;
    });
    if feasible < 100 {
        return Err(OracleError::GridTooCoarse { points: feasible });
    }
    Ok(!dominated)
}

fn enumerate(
    i: usize,
    partial: f64,
    point: &mut Vec<f64>,
    bounds: &[Interval],
    demand: f64,
    step: f64,
    visit: &mut dyn FnMut(&[f64]),
) {
    let n = bounds.len();
    if i == n - 1 {
        let last = demand - partial;
        if bounds[i].contains(last, 1e-9) {
            point[i] = bounds[i].project_point(last);
            visit(point);
        }
        return;
    }
    let rest_min: f64 = bounds[i + 1..].iter().map(|b| b.lower).sum();
    let rest_max: f64 = bounds[i + 1..].iter().map(|b| b.upper).sum();
    let count = (bounds[i].width() / step + 1e-9).floor() as usize;
    for s in 0..=count {
        let v = bounds[i].lower + step * s as f64;
        let remaining = demand - partial - v;
        if remaining < rest_min - 1e-9 || remaining > rest_max + 1e-9 {
            continue;
        }
        point[i] = v;
        enumerate(i + 1, partial + v, point, bounds, demand, step, visit);
    }
}

/// Every centralized quantity the distributed run should converge to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    /// Per-objective dispatch `x̄^{k*}` (index `[k]`).
    pub subproblems: Vec<DispatchSolution>,
    /// Weights from the subproblem optima (index `[i][k]`).
    pub weights: Vec<Vec<f64>>,
    /// Ideal decisions `x̂_i^{k*}` (index `[i][k]`).
    pub ideal_points: Vec<Vec<f64>>,
    /// Ideal values `f_i^k(x̂_i^{k*})` (index `[i][k]`).
    pub ideal_values: Vec<Vec<f64>>,
    pub compromise: DispatchSolution,
}

impl OracleReport {
    pub fn preferences(&self, problem: &Problem) -> Vec<PreferenceIndex> {
        problem
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| PreferenceIndex {
                p: problem.p,
                weights: self.weights[i].clone(),
                ideal_values: self.ideal_values[i].clone(),
                objectives: a.objectives.clone(),
            })
            .collect()
    }
}

/// Weights, ideal points and the compromise allocation of `problem`.
pub fn solve_problem(problem: &Problem) -> Result<OracleReport, OracleError> {
    let bounds = problem.bounds();
    let demand = problem.total_demand();
    let subproblems = (0..problem.n_objectives())
        .map(|k| solve_dispatch(&problem.objective_column(k), &bounds, demand))
        .collect::<Result<Vec<_>, _>>()?;

    let mut weights = Vec::with_capacity(problem.n_agents());
    let mut ideal_points = Vec::with_capacity(problem.n_agents());
    let mut ideal_values = Vec::with_capacity(problem.n_agents());
    for (i, agent) in problem.agents.iter().enumerate() {
        let values: Vec<f64> = agent
            .objectives
            .iter()
            .zip(&subproblems)
            .map(|(f, sol)| f.value(sol.x_star[i]))
            .collect();
        weights.push(weights_or_uniform(&values));
        let (xs, vs): (Vec<f64>, Vec<f64>) =
            agent.objectives.iter().map(|f| ideal_point(f, &agent.bounds)).unzip();
        ideal_points.push(xs);
        ideal_values.push(vs);
    }

    let mut report = OracleReport {
        subproblems,
        weights,
        ideal_points,
        ideal_values,
        compromise: DispatchSolution {
            x_star: vec![],
            multiplier: 0.0,
            active_bounds: vec![],
            objective_value: 0.0,
        },
    };
    let prefs = report.preferences(problem);
    report.compromise = solve_dispatch(&prefs, &bounds, demand)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(a: f64, b: f64) -> ObjectiveFn {
        ObjectiveFn::Quadratic { a, b, c: 0.0 }
    }

    #[test]
    fn symmetric_split() {
        let b = Interval::new(0.0, 10.0).unwrap();
        let sol = solve_dispatch(&[quad(1.0, 2.0), quad(1.0, 2.0)], &[b, b], 7.0).unwrap();
        assert!((sol.x_star[0] - 3.5).abs() < 1e-9 && (sol.x_star[1] - 3.5).abs() < 1e-9);
        assert!((sol.multiplier - 9.0).abs() < 1e-7);
        assert_eq!(sol.active_bounds, vec![ActiveBound::Interior; 2]);
    }

    #[test]
    fn demand_at_lower_sum() {
        let b = [Interval::new(1.0, 4.0).unwrap(), Interval::new(2.0, 5.0).unwrap()];
        let sol = solve_dispatch(&[quad(1.0, 0.0), quad(0.5, 1.0)], &b, 3.0).unwrap();
        assert_eq!(sol.x_star, vec![1.0, 2.0]);
        assert_eq!(sol.active_bounds, vec![ActiveBound::Lower; 2]);
    }

    #[test]
    fn infeasible_and_nonmonotone() {
        let b = Interval::new(0.0, 1.0).unwrap();
        assert!(matches!(
            solve_dispatch(&[quad(1.0, 0.0)], &[b], 2.0),
            Err(OracleError::InfeasibleDemand { .. })
        ));
        assert!(matches!(
            solve_dispatch(&[quad(-1.0, 0.0), quad(1.0, 0.0)], &[b, b], 1.0),
            Err(OracleError::NonMonotoneGradient { agent: 0 })
        ));
    }

    #[test]
    fn ideal_points() {
        let b = Interval::new(-10.0, 10.0).unwrap();
        let (x, v) = ideal_point(&quad(1.0, 0.0), &b);
        assert!(x.abs() < 1e-9 && v.abs() < 1e-15);
        let mg1 = ObjectiveFn::Quadratic { a: 0.086, b: 3.482, c: 3.481 };
        assert_eq!(ideal_point(&mg1, &Interval::new(100.0, 140.0).unwrap()).0, 100.0);
        let tec = ObjectiveFn::Technical {
            a_tec: 1.336,
            p_opt: 135.0,
            form: crate::objectives::TechnicalForm::SquaredDeviation,
        };
        let (x, v) = ideal_point(&tec, &Interval::new(110.0, 165.0).unwrap());
        assert!((x - 135.0).abs() < 1e-9 && v < 1e-15);
    }

    #[test]
    fn kkt_flags_imbalance() {
        let b = Interval::new(0.0, 10.0).unwrap();
        let costs = [quad(1.0, 0.0), quad(2.0, 1.0), quad(0.5, 0.0)];
        let sol = solve_dispatch(&costs, &[b; 3], 12.0).unwrap();
        let ok = sol.verify_kkt(&costs, &[b; 3], 12.0);
        assert!(ok.passes(1e-7), "{ok:?}");
        let mut bumped = sol.clone();
        bumped.x_star[1] += 1.0;
        let bad = bumped.verify_kkt(&costs, &[b; 3], 12.0);
        assert!((bad.balance_residual - 1.0).abs() < 1e-9);
        assert!(!bad.passes(1e-7));
    }

    #[test]
    fn coarse_grid_rejected() {
        let b = Interval::new(0.0, 1.0).unwrap();
        let objs = vec![vec![quad(1.0, 0.0)], vec![quad(1.0, 0.0)]];
        let w = vec![vec![1.0], vec![1.0]];
        assert!(matches!(
            pareto_check(&[0.5, 0.5], &objs, &w, &[b, b], 1.0, 0.1),
            Err(OracleError::GridTooCoarse { .. })
        ));
    }

    #[test]
    fn single_objective_pareto_is_optimality() {
        let b = Interval::new(0.0, 10.0).unwrap();
        let objs = vec![vec![quad(1.0, 0.0)], vec![quad(2.0, 3.0)]];
        let w = vec![vec![1.0], vec![1.0]];
        let sol = solve_dispatch(&[objs[0][0], objs[1][0]], &[b, b], 9.0).unwrap();
        assert!(pareto_check(&sol.x_star, &objs, &w, &[b, b], 9.0, 0.01).unwrap());
        assert!(!pareto_check(&[2.0, 7.0], &objs, &w, &[b, b], 9.0, 0.01).unwrap());
    }
}
