//! Exact solver for the regime where energy never binds (`E_max ≥ T_max·P_max`).
//!
//! Every user then transmits at peak power with a fixed rate `R_k`, and the
//! min-max problem reduces to a bisection on the error level `u`. For a trial
//! level each task needs `(u/a)^(-1/b) - c` new samples; the cheapest way to
//! collect them is to drain the task's users in order of decreasing
//! samples-per-second `R_k/D_k`, each up to its dataset size. The level is
//! feasible when the resulting total time fits in `T_max`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{self, LpOutcome};
use crate::model::{Allocation, Budgets, Link, RadioParams, Scenario, UserId, UserLink};

/// One user of a ranked group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub user_id: UserId,
    /// Position in the scenario's user list.
    pub user_index: usize,
    /// Samples per second at peak power.
    pub rate: f64,
    /// Samples available at the user.
    pub capacity: f64,
}

/// A task's users sorted by decreasing sample rate, ties by ascending id.
/// Users with a dead channel are left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedGroup {
    pub task_id: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedGroup {
    pub fn new(task_id: impl Into<String>, mut entries: Vec<RankedEntry>) -> Self {
        entries.retain(|e| e.rate > 0.0);
        entries.sort_by(|x, y| y.rate.total_cmp(&x.rate).then(x.user_id.cmp(&y.user_id)));
        RankedGroup {
            task_id: task_id.into(),
            entries,
        }
    }

    /// Samples the group can deliver if every user sends its whole dataset.
    pub fn capacity(&self) -> f64 {
        self.entries.iter().map(|e| e.capacity).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BisectionStep {
    pub u_lo: f64,
    pub u_hi: f64,
    pub u_trial: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BisectionTrace {
    /// Upper bounds tried while widening the initial bracket.
    pub widenings: Vec<f64>,
    pub history: Vec<BisectionStep>,
    pub final_u: f64,
    pub epsilon: f64,
}

/// Result of the minimum-time problem at a fixed error level.
#[derive(Debug, Clone, PartialEq)]
pub enum TimePlan {
    Feasible {
        total: f64,
        times: Vec<f64>,
    },
    /// Some task's demand exceeds what its whole group holds.
    Infeasible {
        task: String,
        demand: f64,
        capacity: f64,
    },
}

fn check_eligible(budgets: &Budgets) -> Result<()> {
    let required = budgets.t_max * budgets.p_max;
    if budgets.e_max < required {
        return Err(Error::Ineligible {
            e_max: budgets.e_max,
            required,
        });
    }
    Ok(())
}

/// Peak-power rate `α·B·log2(1 + P_max|h|²/σ²)` in bits/s (or the fixed
/// rate scaled by α).
pub fn max_power_rate(link: &UserLink, radio: &RadioParams, budgets: &Budgets) -> Result<f64> {
    check_eligible(budgets)?;
    Ok(Link::new(link, radio).rate_at_power(budgets.p_max))
}

/// Ranked group of task `m` of an eligible scenario.
pub fn rank_group(scenario: &Scenario, m: usize) -> Result<RankedGroup> {
    check_eligible(scenario.budgets())?;
    Ok(rank_group_unchecked(scenario, m))
}

fn rank_group_unchecked(scenario: &Scenario, m: usize) -> RankedGroup {
    let p = scenario.budgets().p_max;
    let links = scenario.links();
    let entries = scenario.groups()[m]
        .iter()
        .map(|&k| {
            let u = &scenario.users()[k];
            RankedEntry {
                user_id: u.user_id,
                user_index: k,
                rate: links[k].rate_at_power(p) / u.bits_per_sample,
                capacity: u.dataset_size,
            }
        })
        .collect();
    RankedGroup::new(scenario.tasks()[m].task_id.clone(), entries)
}

/// Greedy optimal times for one task: each ranked entry, best first, sends
/// `min(V_i, remaining demand)` samples. Returns times aligned with
/// `group.entries`.
pub fn solve_p3_task(group: &RankedGroup, demand: f64) -> Result<Vec<f64>> {
    let mut z = vec![0.0; group.entries.len()];
    if demand <= 0.0 {
        return Ok(z);
    }
    let capacity = group.capacity();
    if demand > capacity {
        return Err(Error::Capacity {
            task: group.task_id.clone(),
            demand,
            capacity,
        });
    }
    let mut remaining = demand;
    for (zi, e) in z.iter_mut().zip(&group.entries) {
        if remaining <= 0.0 {
            break;
        }
        let take = e.capacity.min(remaining);
        *zi = take / e.rate;
        remaining -= take;
    }
    Ok(z)
}

/// Minimum total time of one task's subproblem solved as a generic linear
/// program. Used to cross-check [`solve_p3_task`].
pub fn lp_oracle_p3_task(group: &RankedGroup, demand: f64) -> Result<f64> {
    let n = group.entries.len();
    if n > 20 {
        return Err(Error::InvalidInput(format!(
            "LP oracle is limited to 20 users, got {n}"
        )));
    }
    if demand <= 0.0 {
        return Ok(0.0);
    }
    let c = vec![1.0; n];
    let mut a = Vec::with_capacity(n + 1);
    let mut b = Vec::with_capacity(n + 1);
    a.push(group.entries.iter().map(|e| -e.rate).collect());
    b.push(-demand);
    for (i, e) in group.entries.iter().enumerate() {
        let mut row = vec![0.0; n];
        row[i] = e.rate;
        a.push(row);
        b.push(e.capacity);
    }
    match lp::solve(&c, &a, &b) {
        LpOutcome::Optimal { objective, .. } => Ok(objective),
        LpOutcome::Infeasible => Err(Error::Capacity {
            task: group.task_id.clone(),
            demand,
            capacity: group.capacity(),
        }),
        LpOutcome::Unbounded => unreachable!("objective is bounded below by zero"),
    }
}

/// Ranked groups of a scenario, built once and reused across trial levels.
struct Ranker<'a> {
    scenario: &'a Scenario,
    groups: Vec<RankedGroup>,
}

impl<'a> Ranker<'a> {
    fn new(scenario: &'a Scenario) -> Result<Self> {
        if scenario.has_overlap() {
            return Err(Error::Unsupported(
                "per-task decomposition needs disjoint user groups".into(),
            ));
        }
        let groups = (0..scenario.tasks().len())
            .map(|m| rank_group_unchecked(scenario, m))
            .collect();
        Ok(Ranker { scenario, groups })
    }

    fn plan(&self, u: f64) -> Result<TimePlan> {
        if !(u > 0.0) {
            return Err(Error::Domain(format!("error level must be > 0, got {u}")));
        }
        let mut times = vec![0.0; self.scenario.users().len()];
        for (task, group) in self.scenario.tasks().iter().zip(&self.groups) {
            let demand = task.required_samples(u)?;
            let z = match solve_p3_task(group, demand) {
                Ok(z) => z,
                Err(Error::Capacity {
                    task,
                    demand,
                    capacity,
                }) => {
                    return Ok(TimePlan::Infeasible {
                        task,
                        demand,
                        capacity,
                    });
                }
                Err(e) => return Err(e),
            };
            for (e, zi) in group.entries.iter().zip(z) {
                times[e.user_index] = zi;
            }
        }
        Ok(TimePlan::Feasible {
            total: times.iter().sum(),
            times,
        })
    }

    fn feasible(&self, u: f64) -> Result<bool> {
        Ok(match self.plan(u)? {
            TimePlan::Feasible { total, .. } => total <= self.scenario.budgets().t_max,
            TimePlan::Infeasible { .. } => false,
        })
    }

    /// Names the task responsible for infeasibility at level `u`.
    fn binding_task(&self, u: f64) -> Result<String> {
        match self.plan(u)? {
            TimePlan::Infeasible { task, .. } => Ok(task),
            TimePlan::Feasible { times, .. } => {
                let per_task = self
                    .scenario
                    .groups()
                    .iter()
                    .map(|g| g.iter().map(|&k| times[k]).sum::<f64>());
                let worst = per_task
                    .enumerate()
                    .max_by(|x, y| x.1.total_cmp(&y.1))
                    .map(|(m, _)| m)
                    .unwrap_or(0);
                Ok(self.scenario.tasks()[worst].task_id.clone())
            }
        }
    }
}

/// Minimum total transmission time reaching error level `u` on every task,
/// ignoring the time budget.
pub fn min_total_time(scenario: &Scenario, u: f64) -> Result<TimePlan> {
    Ranker::new(scenario)?.plan(u)
}

/// Bisection on the error level over `[0, 1]`, widening the upper end when
/// no level in the bracket is attainable. Users transmit at peak power.
pub fn solve_ranking(scenario: &Scenario, epsilon: f64) -> Result<(Allocation, BisectionTrace)> {
    check_eligible(scenario.budgets())?;
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput(format!(
            "epsilon must be > 0, got {epsilon}"
        )));
    }
    let ranker = Ranker::new(scenario)?;
    let ceiling = scenario
        .tasks()
        .iter()
        .map(|t| t.a * t.c.max(1.0).powf(-t.b))
        .fold(0.0, f64::max);

    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut widenings = Vec::new();
    while !ranker.feasible(hi)? {
        if hi >= ceiling {
            let task = ranker.binding_task(hi)?;
            return Err(Error::Infeasible { task, level: hi });
        }
        lo = hi;
        hi = (2.0 * hi).min(ceiling);
        widenings.push(hi);
    }

    let mut history = Vec::new();
    while hi - lo > epsilon {
        let trial = 0.5 * (lo + hi);
        let feasible = ranker.feasible(trial)?;
        history.push(BisectionStep {
            u_lo: lo,
            u_hi: hi,
            u_trial: trial,
            feasible,
        });
        if feasible {
            hi = trial;
        } else {
            lo = trial;
        }
    }

    let TimePlan::Feasible { times, .. } = ranker.plan(hi)? else {
        unreachable!("upper end of the bracket is always feasible");
    };
    let p_max = scenario.budgets().p_max;
    let links = scenario.links();
    let energy: Vec<f64> = times.iter().map(|t| p_max * t).collect();
    let bits: Vec<f64> = times
        .iter()
        .zip(&links)
        .map(|(t, l)| t * l.rate_at_power(p_max))
        .collect();
    let alloc = scenario.allocation(&times, &energy, &bits);
    let violations = alloc.check(scenario);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    Ok((
        alloc,
        BisectionTrace {
            widenings,
            history,
            final_u: hi,
            epsilon,
        },
    ))
}
