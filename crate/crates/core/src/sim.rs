//! Seeded Monte-Carlo sweeps over random channels.
//!
//! Channels for run `r` come from a ChaCha stream keyed by `(seed, r)` and
//! are drawn once for every user of the template, so all sweep points and
//! all user subsets of a run see the same channels. Perturbed learning-curve
//! parameters for the imperfect scheme use a separate stream keyed by
//! `(seed, sweep index, run)`. Cells run in parallel and are collected in
//! index order, so results do not depend on scheduling.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{throughput_fairness, time_fairness};
use crate::config::ScenarioConfig;
use crate::dcp::{solve_dcp, DcpOptions};
use crate::error::{Error, Result};
use crate::fitcurve::perturb_parameters;
use crate::model::{evaluate_allocation, Allocation, Budgets, Scenario, UserId};
use crate::ranking::solve_ranking;

pub const FIG2A: &str = include_str!("../data/fig2a.json");
pub const FIG2B: &str = include_str!("../data/fig2b.json");
pub const K4_VS_K6: &str = include_str!("../data/k4_vs_k6.json");
pub const VEHICULAR: &str = include_str!("../data/vehicular.json");
pub const TABLE1: &str = include_str!("../data/table1.json");
pub const CNN_POINTS: &str = include_str!("../data/cnn_points.csv");
pub const SVM_POINTS: &str = include_str!("../data/svm_points.csv");

/// Names accepted by [`builtin_sweep`].
pub const BUILTIN_SWEEPS: [&str; 3] = ["fig2a", "fig2b", "k4_vs_k6"];

const PERTURB_STREAM: u64 = 1 << 63;

/// `|h|²` for `h ~ CN(0, pathloss)`: exponential with mean `pathloss`.
pub fn draw_channel<R: Rng + ?Sized>(rng: &mut R, pathloss: f64) -> f64 {
    assert!(
        pathloss > 0.0 && pathloss.is_finite(),
        "path loss must be positive, got {pathloss}"
    );
    let normal = Normal::new(0.0, (pathloss / 2.0).sqrt()).expect("finite positive deviation");
    let re: f64 = normal.sample(rng);
    let im: f64 = normal.sample(rng);
    re * re + im * im
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Dcp,
    Ranking,
    TimeFair,
    ThroughputFair,
    /// Joint solver run on learning curves with perturbed `(a, b)`, scored
    /// on the true ones.
    DcpImperfect,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Dcp => "dcp",
            Scheme::Ranking => "ranking",
            Scheme::TimeFair => "time_fair",
            Scheme::ThroughputFair => "throughput_fair",
            Scheme::DcpImperfect => "dcp_imperfect",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    EMax,
    TMax,
    /// Keep the first `K` users of the template.
    KUsers,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::EMax => "e_max",
            SweepParameter::TMax => "t_max",
            SweepParameter::KUsers => "k_users",
        }
    }
}

fn default_perturbation() -> f64 {
    0.1
}

fn default_epsilon() -> f64 {
    1e-10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub name: String,
    pub template: ScenarioConfig,
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    /// Peak power to use at each sweep value instead of the template's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paired_p_max: Option<Vec<f64>>,
    pub runs: usize,
    pub seed: u64,
    pub schemes: Vec<Scheme>,
    /// Relative half-width of the uniform error on `(a, b)` for `dcp_imperfect`.
    #[serde(default = "default_perturbation")]
    pub perturbation: f64,
    /// Bisection tolerance of the ranking solver.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub dcp: DcpOptions,
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SweepConfig = serde_json::from_str(text)
            .map_err(|e| Error::InvalidInput(format!("sweep JSON: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.values.is_empty() || self.values.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("sweep values must be non-empty and strictly increasing".into());
        }
        if self.schemes.is_empty() {
            return bad("at least one scheme is required".into());
        }
        if let Some(p) = &self.paired_p_max {
            if p.len() != self.values.len() {
                return bad(format!(
                    "{} paired_p_max values for {} sweep values",
                    p.len(),
                    self.values.len()
                ));
            }
        }
        if !(0.0..1.0).contains(&self.perturbation) {
            return bad(format!(
                "perturbation must lie in [0, 1), got {}",
                self.perturbation
            ));
        }
        if self.parameter == SweepParameter::KUsers {
            for &v in &self.values {
                if v.fract() != 0.0 || v < 1.0 || v > self.template.users.len() as f64 {
                    return bad(format!(
                        "k_users value {v} is not a user count of the template"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Loads one of [`BUILTIN_SWEEPS`].
pub fn builtin_sweep(name: &str) -> Result<SweepConfig> {
    let text = match name {
        "fig2a" => FIG2A,
        "fig2b" => FIG2B,
        "k4_vs_k6" => K4_VS_K6,
        _ => {
            return Err(Error::InvalidInput(format!(
                "unknown sweep {name:?}; built-in sweeps are {}",
                BUILTIN_SWEEPS.join(", ")
            )))
        }
    };
    SweepConfig::from_json(text)
}

/// Result of one scheme on one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum RunOutcome {
    Solved {
        objective: f64,
        samples_floor: BTreeMap<String, u64>,
    },
    /// The scheme does not apply to this point (ranking without ample energy).
    Skipped {
        reason: String,
    },
    Failed {
        error: String,
    },
}

impl RunOutcome {
    pub fn objective(&self) -> Option<f64> {
        match self {
            RunOutcome::Solved { objective, .. } => Some(*objective),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub value: f64,
    pub p_max: f64,
    pub scheme: Scheme,
    /// One entry per run, in run order.
    pub runs: Vec<RunOutcome>,
    /// Over solved runs; NaN-free, zero when nothing was solved.
    pub mean_objective: f64,
    /// Sample standard deviation over solved runs.
    pub std_objective: f64,
    /// Mean over solved runs of the floored per-task sample counts.
    pub mean_samples: BTreeMap<String, f64>,
    pub solved: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub name: String,
    pub parameter: SweepParameter,
    pub seed: u64,
    pub task_ids: Vec<String>,
    /// Ordered by sweep value, then by the config's scheme order.
    pub rows: Vec<SummaryRow>,
}

impl MonteCarloSummary {
    pub fn row(&self, value: f64, scheme: Scheme) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.value == value && r.scheme == scheme)
    }

    /// One line per (value, scheme) with a fixed column order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| Error::InvalidInput(format!("writing CSV: {e}"));
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            "sweep".to_string(),
            self.parameter.name().to_string(),
            "p_max".into(),
            "scheme".into(),
            "runs_solved".into(),
            "mean_error".into(),
            "std_error".into(),
        ];
        header.extend(self.task_ids.iter().map(|t| format!("samples_{t}")));
        w.write_record(&header).map_err(io)?;
        for r in &self.rows {
            let mut rec = vec![
                self.name.clone(),
                r.value.to_string(),
                r.p_max.to_string(),
                r.scheme.name().to_string(),
                r.solved.to_string(),
                r.mean_objective.to_string(),
                r.std_objective.to_string(),
            ];
            rec.extend(self.task_ids.iter().map(|t| {
                r.mean_samples
                    .get(t)
                    .map_or(String::new(), |v| v.to_string())
            }));
            w.write_record(&rec).map_err(io)?;
        }
        w.flush()
            .map_err(|e| Error::InvalidInput(format!("writing CSV: {e}")))
    }
}

/// Channels of run `run`, drawn for every template user.
pub fn channel_rng(seed: u64, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run as u64);
    rng
}

fn perturb_rng(seed: u64, sweep_index: usize, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(PERTURB_STREAM | ((sweep_index as u64) << 32) | run as u64);
    rng
}

/// The scenario at sweep point `index` derived from a resolved template.
pub fn sweep_point(config: &SweepConfig, full: &Scenario, index: usize) -> Result<Scenario> {
    let value = config.values[index];
    let b = *full.budgets();
    let p_max = config.paired_p_max.as_ref().map_or(b.p_max, |p| p[index]);
    match config.parameter {
        SweepParameter::EMax => full.with_budgets(Budgets::new(b.t_max, value, p_max)?),
        SweepParameter::TMax => full.with_budgets(Budgets::new(value, b.e_max, p_max)?),
        SweepParameter::KUsers => {
            let users = full.users()[..value as usize].to_vec();
            let kept: Vec<UserId> = users.iter().map(|u| u.user_id).collect();
            let tasks = full
                .tasks()
                .iter()
                .map(|t| {
                    let mut t = t.clone();
                    t.users.retain(|u| kept.contains(u));
                    t
                })
                .collect();
            let budgets = Budgets::new(b.t_max, b.e_max, p_max)?;
            if full.allows_overlap() {
                Scenario::with_overlap(tasks, users, *full.radio(), budgets)
            } else {
                Scenario::new(tasks, users, *full.radio(), budgets)
            }
        }
    }
}

fn solved(a: &Allocation) -> RunOutcome {
    RunOutcome::Solved {
        objective: a.objective,
        samples_floor: a.samples_floor.clone(),
    }
}

/// Runs one scheme on one scenario.
pub fn run_scheme<R: Rng + ?Sized>(
    scheme: Scheme,
    scenario: &Scenario,
    config: &SweepConfig,
    perturb: &mut R,
) -> RunOutcome {
    let result = match scheme {
        Scheme::Ranking => {
            if !scenario.is_ranking_eligible() {
                return RunOutcome::Skipped {
                    reason: "energy budget below t_max * p_max".into(),
                };
            }
            solve_ranking(scenario, config.epsilon).map(|(a, _)| a)
        }
        Scheme::Dcp => solve_dcp(scenario, &config.dcp).map(|(a, _)| a),
        Scheme::TimeFair => time_fairness(scenario),
        Scheme::ThroughputFair => throughput_fairness(scenario),
        Scheme::DcpImperfect => {
            let tasks = scenario
                .tasks()
                .iter()
                .map(|t| perturb_parameters(t, config.perturbation, perturb))
                .collect();
            scenario
                .with_tasks(tasks)
                .and_then(|guess| solve_dcp(&guess, &config.dcp))
                .and_then(|(a, _)| {
                    evaluate_allocation(scenario, &a.time_vec(scenario), &a.energy_vec(scenario))
                })
        }
    };
    match result {
        Ok(a) => solved(&a),
        Err(e) => RunOutcome::Failed {
            error: e.to_string(),
        },
    }
}

/// Runs every (sweep value, run) cell and aggregates per scheme.
pub fn run_sweep(config: &SweepConfig) -> Result<MonteCarloSummary> {
    config.validate()?;
    let templates = (0..config.runs)
        .map(|run| config.template.resolve(&mut channel_rng(config.seed, run)))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(usize, usize)> = (0..config.values.len())
        .flat_map(|i| (0..config.runs).map(move |r| (i, r)))
        .collect();
    let outcomes: Vec<Vec<RunOutcome>> = cells
        .par_iter()
        .map(|&(i, run)| {
            let scenario = match sweep_point(config, &templates[run], i) {
                Ok(s) => s,
                Err(e) => {
                    let error = e.to_string();
                    return config
                        .schemes
                        .iter()
                        .map(|_| RunOutcome::Failed {
                            error: error.clone(),
                        })
                        .collect();
                }
            };
            let mut perturb = perturb_rng(config.seed, i, run);
            config
                .schemes
                .iter()
                .map(|&s| run_scheme(s, &scenario, config, &mut perturb))
                .collect()
        })
        .collect();

    let task_ids: Vec<String> = config.template.tasks.iter().map(|t| t.id.clone()).collect();
    let mut rows = Vec::new();
    for (i, &value) in config.values.iter().enumerate() {
        let p_max = config
            .paired_p_max
            .as_ref()
            .map_or(config.template.budgets.p_max_w, |p| p[i]);
        for (j, &scheme) in config.schemes.iter().enumerate() {
            let runs: Vec<RunOutcome> = (0..config.runs)
                .map(|r| outcomes[i * config.runs + r][j].clone())
                .collect();
            rows.push(aggregate(value, p_max, scheme, runs, &task_ids));
        }
    }
    Ok(MonteCarloSummary {
        name: config.name.clone(),
        parameter: config.parameter,
        seed: config.seed,
        task_ids,
        rows,
    })
}

fn aggregate(
    value: f64,
    p_max: f64,
    scheme: Scheme,
    runs: Vec<RunOutcome>,
    task_ids: &[String],
) -> SummaryRow {
    let objectives: Vec<f64> = runs.iter().filter_map(RunOutcome::objective).collect();
    let n = objectives.len();
    let mean = if n > 0 {
        objectives.iter().sum::<f64>() / n as f64
    } else {
        0.0
    };
    let std = if n > 1 {
        (objectives.iter().map(|o| (o - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut mean_samples = BTreeMap::new();
    if n > 0 {
        for t in task_ids {
            let total: u64 = runs
                .iter()
                .filter_map(|r| match r {
                    RunOutcome::Solved { samples_floor, .. } => samples_floor.get(t).copied(),
                    _ => None,
                })
                .sum();
            mean_samples.insert(t.clone(), total as f64 / n as f64);
        }
    }
    SummaryRow {
        value,
        p_max,
        scheme,
        runs,
        mean_objective: mean,
        std_objective: std,
        mean_samples,
        solved: n,
    }
}

/// Sample counts of the vehicular scenario under the ranking solver and
/// equal time shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicularReport {
    pub task_ids: Vec<String>,
    pub ranking_samples: Vec<u64>,
    pub ranking_time: Vec<f64>,
    pub time_fair_samples: Vec<u64>,
    pub ranking_error: f64,
    pub time_fair_error: f64,
}

pub fn reproduce_vehicular() -> Result<VehicularReport> {
    let scenario = builtin_scenario("vehicular")?;
    let (ranked, _) = solve_ranking(&scenario, 1e-12)?;
    let fair = time_fairness(&scenario)?;
    let task_ids: Vec<String> = scenario.tasks().iter().map(|t| t.task_id.clone()).collect();
    let counts = |a: &Allocation| task_ids.iter().map(|t| a.samples_floor[t]).collect();
    Ok(VehicularReport {
        ranking_samples: counts(&ranked),
        ranking_time: ranked.time_vec(&scenario),
        time_fair_samples: counts(&fair),
        ranking_error: ranked.objective,
        time_fair_error: fair.objective,
        task_ids,
    })
}

/// Fixed-channel scenarios shipped with the crate: `vehicular` and `table1`.
pub fn builtin_scenario(name: &str) -> Result<Scenario> {
    let text = match name {
        "vehicular" => VEHICULAR,
        "table1" => TABLE1,
        _ => {
            return Err(Error::InvalidInput(format!(
                "unknown scenario {name:?}; built-in scenarios are vehicular, table1"
            )))
        }
    };
    // neither file has random channels, so the generator is never used
    ScenarioConfig::from_json(text)?.resolve(&mut ChaCha8Rng::seed_from_u64(0))
}
