//! The JSON record written by `--out`.

use edgealloc::dcp::{DcpOptions, DcpTrace};
use edgealloc::fitcurve::{ErrorCurvePoint, FitConfig, FitResult};
use edgealloc::ranking::BisectionTrace;
use edgealloc::sim::{MonteCarloSummary, SweepConfig, VehicularReport};
use edgealloc::{Allocation, Scenario};
use serde::{Deserialize, Serialize};

use crate::Method;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    /// The command line as invoked.
    pub command: Vec<String>,
    pub seed: Option<u64>,
    pub config: ResolvedConfig,
    pub result: RunResult,
    pub timings: Timings,
}

/// Everything the result depends on, after defaults, overrides and channel
/// draws have been applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolvedConfig {
    Fit {
        source: String,
        points: Vec<ErrorCurvePoint>,
        fit: FitConfig,
    },
    Solve {
        scenario: Scenario,
        method: Method,
        epsilon: f64,
        dcp: DcpOptions,
    },
    Sweep(SweepConfig),
    Scenario(Scenario),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunResult {
    Fit(FitResult),
    Solve {
        allocation: Allocation,
        trace: SolverTrace,
    },
    Sweep(MonteCarloSummary),
    Vehicular(VehicularReport),
    Table {
        ranking: Allocation,
        time_fair: Allocation,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverTrace {
    Ranking(BisectionTrace),
    Dcp(DcpTrace),
    /// The baselines are closed-form.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub wall_s: f64,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report types always serialize")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}
