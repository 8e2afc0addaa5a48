//! Time and energy allocation for TDMA uplinks that feed several learning
//! tasks at a network edge.
//!
//! The objective is the worst predicted generalization error across tasks,
//! where each task follows an inverse power-law learning curve in the number
//! of samples it receives. Three solvers are provided:
//!
//! * [`ranking`] solves the energy-unconstrained regime exactly by bisection on
//!   the error level and a closed-form greedy fill over rate-ranked users.
//! * [`dcp`] solves the general problem by successive linearization of the
//!   dataset-size constraints, each step being a convex program handled by a
//!   built-in log-barrier engine.
//! * [`baseline`] gives the time-fair and throughput-fair reference schemes.
//!
//! [`fitcurve`] estimates learning-curve parameters from measurements and
//! [`sim`] runs seeded Monte-Carlo sweeps over random channels.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod config;
pub mod dcp;
pub mod error;
pub mod fitcurve;
pub mod lp;
pub mod model;
pub mod ranking;
pub mod sim;

mod kkt;

pub use error::{Error, Result, Violation};
pub use model::{
    evaluate_allocation, evaluate_allocation_truncated, samples_for_task, samples_for_task_floor,
    theta, theta_gradient, Allocation, Budgets, LearningErrorModel, RadioParams, Scenario, UserId,
    UserLink, FEASIBILITY_TOL, T_FLOOR,
};
