//! Euclidean projection onto local constraint sets and the differentiated
//! projection operator `P_{T_Ω(x)}(v)` onto the tangent cone.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// States within this distance of a bound are treated as sitting on it.
pub const BOUNDARY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectionError {
    #[error("state {x} lies outside [{lower}, {upper}]")]
    InfeasibleState { x: f64, lower: f64, upper: f64 },
    #[error("empty interval [{lower}, {upper}]")]
    EmptyInterval { lower: f64, upper: f64 },
}

/// A closed convex set of scalar decisions.
pub trait ConvexSet {
    /// `argmin_{y ∈ Ω} |y − x|`.
    fn project_point(&self, x: f64) -> f64;

    /// Directional derivative of the projection at a feasible `x` along `v`.
    fn project_tangent(&self, x: f64, v: f64) -> Result<f64, ProjectionError>;

    fn contains(&self, x: f64, tol: f64) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Result<Self, ProjectionError> {
        if !(lower <= upper) {
            return Err(ProjectionError::EmptyInterval { lower, upper });
        }
        Ok(Interval { lower, upper })
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    /// Tangent-cone projection for an `x` already clamped into the set.
    /// Never fails; callers that cannot guarantee feasibility use
    /// [`ConvexSet::project_tangent`].
    pub fn tangent_of_clamped(&self, x: f64, v: f64) -> f64 {
        if (x - self.upper).abs() <= BOUNDARY_TOL && v >= 0.0 {
            return if v > 0.0 { 0.0 } else { v };
        }
        if (x - self.lower).abs() <= BOUNDARY_TOL && v <= 0.0 {
            return if v < 0.0 { 0.0 } else { v };
        }
        v
    }
}

impl ConvexSet for Interval {
    fn project_point(&self, x: f64) -> f64 {
        x.clamp(self.lower, self.upper)
    }

    fn project_tangent(&self, x: f64, v: f64) -> Result<f64, ProjectionError> {
        if !self.contains(x, BOUNDARY_TOL) {
            return Err(ProjectionError::InfeasibleState { x, lower: self.lower, upper: self.upper });
        }
        Ok(self.tangent_of_clamped(x, v))
    }

    fn contains(&self, x: f64, tol: f64) -> bool {
        x >= self.lower - tol && x <= self.upper + tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv() -> Interval {
        Interval::new(100.0, 140.0).unwrap()
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(iv().project_point(150.0), 140.0);
        assert_eq!(iv().project_point(120.0), 120.0);
        assert_eq!(iv().project_point(90.0), 100.0);
    }

    #[test]
    fn tangent_examples() {
        assert_eq!(iv().project_tangent(140.0, 5.0).unwrap(), 0.0);
        assert_eq!(iv().project_tangent(140.0, -5.0).unwrap(), -5.0);
        assert_eq!(iv().project_tangent(120.0, 7.0).unwrap(), 7.0);
        assert_eq!(iv().project_tangent(100.0, -3.0).unwrap(), 0.0);
        assert_eq!(iv().project_tangent(100.0, 3.0).unwrap(), 3.0);
        assert_eq!(iv().project_tangent(140.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn infeasible_state_rejected() {
        assert!(matches!(
            iv().project_tangent(140.1, 1.0),
            Err(ProjectionError::InfeasibleState { .. })
        ));
        // within tolerance is accepted
        assert_eq!(iv().project_tangent(140.0 + 5e-10, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn empty_interval_rejected() {
        assert!(Interval::new(2.0, 1.0).is_err());
        assert!(Interval::new(1.0, 1.0).is_ok());
    }
}
