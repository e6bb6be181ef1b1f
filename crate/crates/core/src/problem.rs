//! Resolved allocation problem: per-agent box, local demand and objectives.

use crate::objectives::ObjectiveFn;
use crate::projection::Interval;

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub bounds: Interval,
    /// Local demand `d_i`, reserve already applied.
    pub demand: f64,
    pub objectives: Vec<ObjectiveFn>,
    /// Initial decision shared by every layer.
    pub initial: f64,
    /// Initial `y_i^k` (every objective) and `ν_i`.
    pub y0: f64,
    pub nu0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub agents: Vec<AgentSpec>,
    /// Lp exponent of the preference index.
    pub p: f64,
}

impl Problem {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn n_objectives(&self) -> usize {
        self.agents.first().map_or(0, |a| a.objectives.len())
    }

    pub fn total_demand(&self) -> f64 {
        self.agents.iter().map(|a| a.demand).sum()
    }

    pub fn bounds(&self) -> Vec<Interval> {
        self.agents.iter().map(|a| a.bounds).collect()
    }

    /// Objective `k` of every agent.
    pub fn objective_column(&self, k: usize) -> Vec<ObjectiveFn> {
        self.agents.iter().map(|a| a.objectives[k]).collect()
    }
}
