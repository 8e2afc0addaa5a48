use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A single constraint that an allocation breaks by more than the
/// validation tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    TimeBudget {
        used: f64,
        limit: f64,
    },
    EnergyBudget {
        used: f64,
        limit: f64,
    },
    PeakPower {
        user: u32,
        energy: f64,
        limit: f64,
    },
    DatasetCap {
        user: u32,
        samples: f64,
        limit: f64,
    },
    Undelivered {
        user: u32,
        bits: f64,
        link_bits: f64,
    },
    Negative {
        user: u32,
    },
    MissingUser {
        user: u32,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TimeBudget { used, limit } => {
                write!(f, "total time {used} s exceeds T_max {limit} s")
            }
            Violation::EnergyBudget { used, limit } => {
                write!(f, "total energy {used} J exceeds E_max {limit} J")
            }
            Violation::PeakPower {
                user,
                energy,
                limit,
            } => {
                write!(
                    f,
                    "user {user}: energy {energy} J exceeds P_max * t = {limit} J"
                )
            }
            Violation::DatasetCap {
                user,
                samples,
                limit,
            } => {
                write!(
                    f,
                    "user {user}: {samples} samples exceed dataset size {limit}"
                )
            }
            Violation::Undelivered {
                user,
                bits,
                link_bits,
            } => {
                write!(
                    f,
                    "user {user}: {bits} bits reported but link carries {link_bits}"
                )
            }
            Violation::Negative { user } => write!(f, "user {user}: negative time or energy"),
            Violation::MissingUser { user } => write!(f, "user {user}: missing from allocation"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("allocation violates {} constraint(s): {}", .0.len(), join(.0))]
    Validation(Vec<Violation>),

    #[error("scenario is not ranking-eligible (E_max {e_max} < T_max * P_max = {required}); use the dcp solver")]
    Ineligible { e_max: f64, required: f64 },

    #[error("task {task}: demand of {demand} samples exceeds group capacity {capacity}")]
    Capacity {
        task: String,
        demand: f64,
        capacity: f64,
    },

    #[error("infeasible: task {task} cannot reach error level {level} within the budgets")]
    Infeasible { task: String, level: f64 },

    #[error("unsupported problem structure: {0}")]
    Unsupported(String),

    #[error("degenerate scenario: {0}")]
    Degenerate(String),

    #[error("{what} did not converge after {iterations} iterations (best residual {residual:e})")]
    Convergence {
        what: String,
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },
}

fn join(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
