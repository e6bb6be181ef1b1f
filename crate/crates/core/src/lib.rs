//! Event-triggered, prescribed-time distributed multiobjective resource
//! allocation: graph and generator primitives, the three-layer dynamics, a
//! centralized oracle and scenario handling.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod diagnostics;
pub mod dynamics;
pub mod etm;
pub mod graph;
pub mod integrator;
pub mod objectives;
pub mod oracle;
pub mod problem;
pub mod projection;
pub mod scenario;
pub mod tbg;
