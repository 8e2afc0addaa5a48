//! Joint time/energy allocation by successive convex approximation.
//!
//! The dataset cap `Θ_k(t, E) ≤ |𝒟_k|·D_k` is the only non-convex
//! constraint (Θ is concave). Each outer iteration replaces Θ_k in it by its
//! tangent plane at the current point, which overestimates Θ_k, so the
//! convexified feasible set is contained in the true one and every iterate
//! stays feasible. The convex subproblem is solved by bisection on the error
//! level with a phase-I barrier feasibility test per level ([`barrier`]).

mod barrier;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kkt::{self, CapModel};
use crate::model::{evaluate_allocation, Allocation, Link, Scenario, UserId, T_FLOOR};
use barrier::{Engine, Feasibility};

/// Relative width at which the error-level bisection stops.
const LEVEL_TOL: f64 = 1e-12;
const MAX_BISECTION: usize = 200;

/// Tangent-plane overestimate of Θ for one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConstraint {
    pub user_id: UserId,
    /// `(t, E)` where the plane touches Θ.
    pub anchor: (f64, f64),
    pub value_at_anchor: f64,
    /// `(∂Θ/∂t, ∂Θ/∂E)` at the anchor, bits/s and bits/J.
    pub gradient: (f64, f64),
    /// Dataset size in bits.
    pub cap: f64,
}

impl SurrogateConstraint {
    pub fn value_at(&self, t: f64, e: f64) -> f64 {
        self.value_at_anchor
            + self.gradient.0 * (t - self.anchor.0)
            + self.gradient.1 * (e - self.anchor.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcpOptions {
    /// Stop once the relative objective change drops below this...
    pub outer_tol: f64,
    pub max_outer: usize,
    /// ...and, if set, the KKT residual of the current point is at most this.
    /// With a binding dataset cap the outer loop can creep along the cap
    /// boundary by less than `outer_tol` per step while still far from
    /// stationary; this guard keeps it going. Off by default.
    pub kkt_tol: Option<f64>,
}

impl Default for DcpOptions {
    fn default() -> Self {
        DcpOptions {
            outer_tol: 1e-6,
            max_outer: 100,
            kkt_tol: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    /// No starting point with a finite objective exists (zero time budget
    /// and a task without historical samples).
    InfeasibleStart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerStats {
    pub bisection_steps: usize,
    pub newton_steps: usize,
    /// Largest normalized constraint violation of the raw barrier point.
    pub max_violation: f64,
    /// Epigraph KKT residual of the convexified problem at the returned point.
    #[serde(with = "crate::model::finite_or_null")]
    pub stationarity: f64,
    /// False when the subproblem did not beat its anchor and the anchor was kept.
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcpIterate {
    pub time: Vec<f64>,
    pub energy: Vec<f64>,
    #[serde(with = "crate::model::finite_or_null")]
    pub objective: f64,
}

/// Outer-loop history. Index 0 of `objectives` and `iterates` is the
/// starting point; `inner_stats[i]` produced iterate `i + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcpTrace {
    #[serde(with = "crate::model::finite_or_null::vec")]
    pub objectives: Vec<f64>,
    pub inner_stats: Vec<InnerStats>,
    pub iterates: Vec<DcpIterate>,
    pub termination: Termination,
    /// KKT residual of the original problem at the returned allocation.
    #[serde(with = "crate::model::finite_or_null")]
    pub kkt_residual: f64,
}

/// Equal time shares at the largest admissible equal energy, shrunk
/// uniformly until every dataset cap holds.
pub fn initial_feasible_point(scenario: &Scenario) -> (Vec<f64>, Vec<f64>) {
    let b = scenario.budgets();
    let k_users = scenario.users().len();
    let share = b.t_max / k_users as f64;
    let mut time = vec![share; k_users];
    let mut energy = vec![(b.p_max * share).min(b.e_max / k_users as f64); k_users];
    let links = scenario.links();
    let factor = scenario
        .users()
        .iter()
        .zip(&links)
        .map(|(u, l)| {
            let bits = l.theta(share, energy[0]);
            if bits > u.cap_bits() {
                u.cap_bits() / bits
            } else {
                1.0
            }
        })
        .fold(1.0, f64::min);
    if factor < 1.0 {
        // Θ is homogeneous of degree one, so scaling both shrinks bits by the same factor
        let factor = factor * (1.0 - 1e-12);
        time.iter_mut().for_each(|t| *t *= factor);
        energy.iter_mut().for_each(|e| *e *= factor);
    }
    (time, energy)
}

/// Tangent planes of every user's Θ at `(time, energy)`.
pub fn build_surrogate(
    scenario: &Scenario,
    time: &[f64],
    energy: &[f64],
) -> Result<Vec<SurrogateConstraint>> {
    let links = scenario.links();
    if time.len() != links.len() || energy.len() != links.len() {
        return Err(Error::InvalidInput("anchor must cover every user".into()));
    }
    scenario
        .users()
        .iter()
        .zip(&links)
        .enumerate()
        .map(|(k, (u, link))| {
            let (t, e) = (time[k], energy[k]);
            if !(t >= 0.0 && e >= 0.0) {
                return Err(Error::Domain(format!(
                    "anchor for user {} is negative",
                    u.user_id
                )));
            }
            if e > 0.0 && t < T_FLOOR {
                return Err(Error::Domain(format!(
                    "anchor for user {} has energy {e} J in {t} s, below the time floor",
                    u.user_id
                )));
            }
            Ok(SurrogateConstraint {
                user_id: u.user_id,
                anchor: (t, e),
                value_at_anchor: link.theta(t, e),
                gradient: link.gradient(t.max(T_FLOOR), e),
                cap: u.cap_bits(),
            })
        })
        .collect()
}

/// Result of one convexified solve, in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSolution {
    pub time: Vec<f64>,
    pub energy: Vec<f64>,
    pub objective: f64,
    pub stats: InnerStats,
}

/// Minimizes the worst predicted error subject to the budgets, the power
/// limit and the linearized dataset caps. The anchor of `surrogates` is
/// feasible for this problem and is returned unchanged if nothing better is
/// found.
pub fn solve_convex_subproblem(
    scenario: &Scenario,
    surrogates: &[SurrogateConstraint],
) -> Result<SubproblemSolution> {
    let k_users = scenario.users().len();
    if surrogates.len() != k_users {
        return Err(Error::InvalidInput(
            "one surrogate per user is required".into(),
        ));
    }
    let anchor_t: Vec<f64> = surrogates.iter().map(|s| s.anchor.0).collect();
    let anchor_e: Vec<f64> = surrogates.iter().map(|s| s.anchor.1).collect();
    let links = scenario.links();
    let anchor_obj = objective(scenario, &links, &anchor_t, &anchor_e);
    let anchor_x = flatten(scenario, &anchor_t, &anchor_e);
    if !anchor_obj.is_finite() || scenario.budgets().t_max <= 0.0 {
        return Err(Error::Convergence {
            what: "convex subproblem (anchor has no finite objective)".into(),
            iterations: 0,
            residual: f64::INFINITY,
            best: anchor_x,
        });
    }

    let mut engine = Engine::new(scenario, surrogates);
    let mut lo = scenario.error_lower_bound();
    let mut hi = anchor_obj;
    let mut best = anchor_x.clone();
    let mut steps = 0;
    while hi - lo > LEVEL_TOL * hi && steps < MAX_BISECTION {
        steps += 1;
        let mid = 0.5 * (lo + hi);
        match engine.phase_one(mid, &best, false) {
            Feasibility::Feasible(x) => {
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Convergence {
                        what: "convex subproblem (non-finite barrier iterate)".into(),
                        iterations: steps,
                        residual: f64::INFINITY,
                        best,
                    });
                }
                best = x;
                hi = mid;
            }
            Feasibility::Infeasible => lo = mid,
        }
    }
    if let Feasibility::Feasible(x) = engine.phase_one(hi, &best, true) {
        best = x;
    }

    let demands = engine.demands(hi);
    let max_violation = engine
        .constraint_values(&best, &demands)
        .into_iter()
        .fold(0.0, f64::max);
    let (time, energy) = unflatten(&engine, &best);
    let (time, energy) = repair(scenario, &links, surrogates, time, energy);
    let obj = objective(scenario, &links, &time, &energy);
    let improved = obj <= anchor_obj;
    let (time, energy, obj) = if improved {
        (time, energy, obj)
    } else {
        (anchor_t, anchor_e, anchor_obj)
    };
    let stationarity = kkt::residual(scenario, &time, &energy, CapModel::Surrogate(surrogates));
    Ok(SubproblemSolution {
        time,
        energy,
        objective: obj,
        stats: InnerStats {
            bisection_steps: steps,
            newton_steps: engine.newton_steps,
            max_violation,
            stationarity,
            improved,
        },
    })
}

/// Runs the successive convex approximation from [`initial_feasible_point`].
pub fn solve_dcp(scenario: &Scenario, options: &DcpOptions) -> Result<(Allocation, DcpTrace)> {
    if !(options.outer_tol > 0.0)
        || options.max_outer == 0
        || options.kkt_tol.is_some_and(|t| !(t > 0.0))
    {
        return Err(Error::InvalidInput(
            "outer_tol and kkt_tol must be positive and max_outer at least 1".into(),
        ));
    }
    let (mut time, mut energy) = initial_feasible_point(scenario);
    let links = scenario.links();
    let mut obj = objective(scenario, &links, &time, &energy);
    let mut trace = DcpTrace {
        objectives: vec![obj],
        inner_stats: Vec::new(),
        iterates: vec![DcpIterate {
            time: time.clone(),
            energy: energy.clone(),
            objective: obj,
        }],
        termination: Termination::MaxIterations,
        kkt_residual: 0.0,
    };
    if scenario.budgets().t_max <= 0.0 || !obj.is_finite() {
        trace.termination = if obj.is_finite() {
            Termination::Converged
        } else {
            Termination::InfeasibleStart
        };
        return Ok((evaluate_allocation(scenario, &time, &energy)?, trace));
    }

    for _ in 0..options.max_outer {
        let surrogates = build_surrogate(scenario, &time, &energy)?;
        let sol = solve_convex_subproblem(scenario, &surrogates)?;
        let change = (obj - sol.objective).abs() / obj.max(f64::MIN_POSITIVE);
        time = sol.time;
        energy = sol.energy;
        obj = sol.objective;
        trace.objectives.push(obj);
        trace.inner_stats.push(sol.stats);
        trace.iterates.push(DcpIterate {
            time: time.clone(),
            energy: energy.clone(),
            objective: obj,
        });
        if change < options.outer_tol {
            trace.kkt_residual = kkt::residual(scenario, &time, &energy, CapModel::Exact);
            if options.kkt_tol.is_none_or(|tol| trace.kkt_residual <= tol) {
                trace.termination = Termination::Converged;
                break;
            }
        }
    }
    let allocation = evaluate_allocation(scenario, &time, &energy)?;
    trace.kkt_residual = kkt::residual(scenario, &time, &energy, CapModel::Exact);
    Ok((allocation, trace))
}

fn objective(scenario: &Scenario, links: &[Link], time: &[f64], energy: &[f64]) -> f64 {
    let bits: Vec<f64> = links
        .iter()
        .enumerate()
        .map(|(k, l)| l.theta(time[k], energy[k]))
        .collect();
    scenario.worst_error(&scenario.samples(&bits))
}

fn flatten(scenario: &Scenario, time: &[f64], energy: &[f64]) -> Vec<f64> {
    let b = scenario.budgets();
    let es = kkt::energy_scale(scenario);
    time.iter()
        .map(|t| t / b.t_max)
        .chain(energy.iter().map(|e| e / es))
        .collect()
}

fn unflatten(engine: &Engine<'_>, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let k = x.len() / 2;
    (
        x[..k].iter().map(|v| v.max(0.0) * engine.t_scale).collect(),
        x[k..].iter().map(|v| v.max(0.0) * engine.e_scale).collect(),
    )
}

/// Removes the barrier's residual violations: snaps negligible times to
/// zero, enforces the power limit, then scales the whole plan down until
/// budgets, surrogate caps and true caps all hold.
fn repair(
    scenario: &Scenario,
    links: &[Link],
    surrogates: &[SurrogateConstraint],
    mut time: Vec<f64>,
    mut energy: Vec<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let b = scenario.budgets();
    for k in 0..time.len() {
        if time[k] < 10.0 * T_FLOOR {
            time[k] = 0.0;
            energy[k] = 0.0;
        }
        energy[k] = energy[k].min(b.p_max * time[k]);
    }
    let mut factor = 1.0_f64;
    let used_t: f64 = time.iter().sum();
    let used_e: f64 = energy.iter().sum();
    if used_t > b.t_max {
        factor = factor.min(b.t_max / used_t);
    }
    if used_e > b.e_max {
        factor = factor.min(b.e_max / used_e);
    }
    for (k, s) in surrogates.iter().enumerate() {
        let value = s
            .value_at(time[k], energy[k])
            .max(links[k].theta(time[k], energy[k]));
        if value > s.cap {
            factor = factor.min(s.cap / value);
        }
    }
    if factor < 1.0 {
        time.iter_mut().for_each(|t| *t *= factor);
        energy.iter_mut().for_each(|e| *e *= factor);
    }
    (time, energy)
}
