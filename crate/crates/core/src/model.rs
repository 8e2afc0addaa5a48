//! Domain types and the closed-form rate/learning equations.
//!
//! A user `k` that transmits for `t` seconds with energy `E` delivers
//!
//! ```text
//! Θ(t, E) = α · t · B · log2(1 + E·|h|² / (t·σ²))      bits
//! ```
//!
//! which is the perspective of the Shannon rate and therefore jointly
//! concave and positively homogeneous of degree one. Task `m` trained on `v`
//! samples is predicted to reach generalization error `a·v^(-b)`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::f64::consts::LN_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};

/// Lower bound on transmission time used wherever Θ must be differentiated.
pub const T_FLOOR: f64 = 1e-9;

/// Relative slack allowed when validating an allocation against the budgets.
pub const FEASIBILITY_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub u32);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Inverse power-law learning curve of one task together with the users
/// that feed it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningErrorModel {
    pub task_id: String,
    pub a: f64,
    pub b: f64,
    /// Samples already held at the edge for this task.
    pub c: f64,
    pub users: Vec<UserId>,
}

impl LearningErrorModel {
    pub fn new(
        task_id: impl Into<String>,
        a: f64,
        b: f64,
        c: f64,
        users: Vec<UserId>,
    ) -> Result<Self> {
        let task = LearningErrorModel {
            task_id: task_id.into(),
            a,
            b,
            c,
            users,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.task_id;
        if !(self.a > 0.0 && self.a.is_finite()) || !(self.b > 0.0 && self.b.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "task {id}: curve parameters must be positive (a = {}, b = {})",
                self.a, self.b
            )));
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "task {id}: historical samples c = {} must be >= 0",
                self.c
            )));
        }
        if self.users.is_empty() {
            return Err(Error::InvalidInput(format!(
                "task {id}: user group is empty"
            )));
        }
        let distinct: HashSet<_> = self.users.iter().collect();
        if distinct.len() != self.users.len() {
            return Err(Error::InvalidInput(format!(
                "task {id}: user group lists a user twice"
            )));
        }
        Ok(())
    }

    /// `a · v^(-b)`.
    pub fn predicted_error(&self, v: f64) -> Result<f64> {
        if !(v > 0.0) {
            return Err(Error::Domain(format!(
                "predicted error needs v > 0, got {v}"
            )));
        }
        Ok(self.a * v.powf(-self.b))
    }

    /// Newly transmitted samples needed to bring the error down to `u`,
    /// i.e. `max(0, (u/a)^(-1/b) - c)`.
    pub fn required_samples(&self, u: f64) -> Result<f64> {
        if !(u > 0.0) {
            return Err(Error::Domain(format!(
                "required samples needs u > 0, got {u}"
            )));
        }
        Ok((self.total_samples_for(u) - self.c).max(0.0))
    }

    /// Total sample count (historical included) at which the curve hits `u`.
    pub(crate) fn total_samples_for(&self, u: f64) -> f64 {
        (u / self.a).powf(-1.0 / self.b)
    }

    /// Error predicted from the historical samples alone; infinite when
    /// there are none.
    pub fn historical_error(&self) -> f64 {
        self.error_or_inf(self.c)
    }

    pub(crate) fn error_or_inf(&self, v: f64) -> f64 {
        if v > 0.0 {
            self.a * v.powf(-self.b)
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserLink {
    pub user_id: UserId,
    /// Linear power gain |h|².
    pub channel_gain: f64,
    /// Bits per training sample.
    pub bits_per_sample: f64,
    /// Samples held locally by the user.
    pub dataset_size: f64,
    /// Fixed link rate in bits/s; replaces the Shannon rate when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_rate: Option<f64>,
}

impl UserLink {
    pub fn new(user_id: u32, channel_gain: f64, bits_per_sample: f64, dataset_size: f64) -> Self {
        UserLink {
            user_id: UserId(user_id),
            channel_gain,
            bits_per_sample,
            dataset_size,
            fixed_rate: None,
        }
    }

    pub fn with_fixed_rate(mut self, bits_per_second: f64) -> Self {
        self.fixed_rate = Some(bits_per_second);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let id = self.user_id;
        if !(self.channel_gain >= 0.0 && self.channel_gain.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "user {id}: channel gain must be >= 0"
            )));
        }
        if !(self.bits_per_sample > 0.0 && self.bits_per_sample.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "user {id}: bits per sample must be > 0"
            )));
        }
        if !(self.dataset_size > 0.0 && self.dataset_size.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "user {id}: dataset size must be > 0"
            )));
        }
        if let Some(r) = self.fixed_rate {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "user {id}: fixed rate must be > 0"
                )));
            }
        }
        Ok(())
    }

    /// Dataset cap in bits.
    pub fn cap_bits(&self) -> f64 {
        self.dataset_size * self.bits_per_sample
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioParams {
    /// Hz.
    pub bandwidth: f64,
    /// Noise power over the whole band, W.
    pub noise_power: f64,
    /// Efficiency factor in (0, 1] applied to every rate.
    pub alpha: f64,
}

impl RadioParams {
    pub fn new(bandwidth: f64, noise_power: f64, alpha: f64) -> Result<Self> {
        let radio = RadioParams {
            bandwidth,
            noise_power,
            alpha,
        };
        radio.validate()?;
        Ok(radio)
    }

    /// Integrates a noise power spectral density given in dBm/Hz over the band.
    pub fn from_noise_psd(bandwidth: f64, noise_psd_dbm_hz: f64, alpha: f64) -> Result<Self> {
        Self::new(bandwidth, dbm_to_watts(noise_psd_dbm_hz) * bandwidth, alpha)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::InvalidInput("bandwidth must be > 0".into()));
        }
        if !(self.noise_power > 0.0 && self.noise_power.is_finite()) {
            return Err(Error::InvalidInput("noise power must be > 0".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budgets {
    /// s
    pub t_max: f64,
    /// J
    pub e_max: f64,
    /// W
    pub p_max: f64,
}

impl Budgets {
    pub fn new(t_max: f64, e_max: f64, p_max: f64) -> Result<Self> {
        let b = Budgets {
            t_max,
            e_max,
            p_max,
        };
        b.validate()?;
        Ok(b)
    }

    /// A zero time budget is accepted (nothing can be sent); energy and
    /// power must be strictly positive.
    pub fn validate(&self) -> Result<()> {
        if !(self.t_max >= 0.0 && self.t_max.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "t_max must be >= 0, got {}",
                self.t_max
            )));
        }
        if !(self.e_max > 0.0 && self.e_max.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "e_max must be > 0, got {}",
                self.e_max
            )));
        }
        if !(self.p_max > 0.0 && self.p_max.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "p_max must be > 0, got {}",
                self.p_max
            )));
        }
        Ok(())
    }
}

/// Per-user constants of Θ, precomputed once per scenario.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Link {
    /// α·B / ln 2
    scale: f64,
    /// |h|² / σ²
    snr: f64,
    /// α·R for fixed-rate links
    fixed: Option<f64>,
}

impl Link {
    pub(crate) fn new(link: &UserLink, radio: &RadioParams) -> Self {
        Link {
            scale: radio.alpha * radio.bandwidth / LN_2,
            snr: link.channel_gain / radio.noise_power,
            fixed: link.fixed_rate.map(|r| radio.alpha * r),
        }
    }

    pub(crate) fn theta(&self, t: f64, e: f64) -> f64 {
        if let Some(r) = self.fixed {
            return r * t;
        }
        if t <= 0.0 {
            return 0.0;
        }
        self.scale * t * (self.snr * e / t).ln_1p()
    }

    /// Valid for `t > 0`, and for any `t` when `e == 0`.
    pub(crate) fn gradient(&self, t: f64, e: f64) -> (f64, f64) {
        if let Some(r) = self.fixed {
            return (r, 0.0);
        }
        if e <= 0.0 {
            return (0.0, self.scale * self.snr);
        }
        let x = self.snr * e / t;
        (
            self.scale * (x.ln_1p() - x / (1.0 + x)),
            self.scale * self.snr / (1.0 + x),
        )
    }

    /// `(∂²/∂t², ∂²/∂t∂E, ∂²/∂E²)`; requires `t > 0`.
    pub(crate) fn hessian(&self, t: f64, e: f64) -> (f64, f64, f64) {
        if self.fixed.is_some() {
            return (0.0, 0.0, 0.0);
        }
        let x = self.snr * e / t;
        let f = -self.scale / (t * (1.0 + x) * (1.0 + x));
        (f * x * x, -f * x * self.snr, f * self.snr * self.snr)
    }

    /// Rate in bits/s when transmitting at constant power `p`.
    pub(crate) fn rate_at_power(&self, p: f64) -> f64 {
        match self.fixed {
            Some(r) => r,
            None => self.scale * (self.snr * p).ln_1p(),
        }
    }
}

/// Bits delivered by a user transmitting for `t` seconds with energy `e`.
pub fn theta(t: f64, e: f64, link: &UserLink, radio: &RadioParams) -> Result<f64> {
    if !(t >= 0.0) || !(e >= 0.0) {
        return Err(Error::Domain(format!(
            "theta needs t >= 0 and e >= 0, got ({t}, {e})"
        )));
    }
    Ok(Link::new(link, radio).theta(t, e))
}

/// `(∂Θ/∂t, ∂Θ/∂E)` in bits/s and bits/J.
pub fn theta_gradient(t: f64, e: f64, link: &UserLink, radio: &RadioParams) -> Result<(f64, f64)> {
    if !(t > 0.0) || !(e >= 0.0) {
        return Err(Error::Domain(format!(
            "theta gradient needs t > 0 and e >= 0, got ({t}, {e})"
        )));
    }
    Ok(Link::new(link, radio).gradient(t, e))
}

/// Continuous sample count of a task: `Σ d_k/D_k + c` over `(bits, bits_per_sample)`
/// contributions of the task's users.
pub fn samples_for_task(task: &LearningErrorModel, contributions: &[(f64, f64)]) -> f64 {
    contributions
        .iter()
        .map(|&(d, big_d)| d / big_d)
        .sum::<f64>()
        + task.c
}

/// Integer view of [`samples_for_task`]: each user's contribution is floored
/// before summing.
pub fn samples_for_task_floor(task: &LearningErrorModel, contributions: &[(f64, f64)]) -> u64 {
    contributions
        .iter()
        .map(|&(d, big_d)| floor_samples(d / big_d))
        .sum::<u64>()
        + floor_samples(task.c)
}

/// Floor that tolerates values a few ulps below an integer.
pub(crate) fn floor_samples(x: f64) -> u64 {
    (x * (1.0 + 1e-12) + 1e-9).floor().max(0.0) as u64
}

/// A fully specified allocation instance: tasks, users, budgets and radio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioParts", into = "ScenarioParts")]
pub struct Scenario {
    tasks: Vec<LearningErrorModel>,
    users: Vec<UserLink>,
    radio: RadioParams,
    budgets: Budgets,
    allow_overlap: bool,
    groups: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScenarioParts {
    tasks: Vec<LearningErrorModel>,
    users: Vec<UserLink>,
    radio: RadioParams,
    budgets: Budgets,
    #[serde(default)]
    allow_overlap: bool,
}

impl TryFrom<ScenarioParts> for Scenario {
    type Error = Error;

    fn try_from(p: ScenarioParts) -> Result<Self> {
        Scenario::build(p.tasks, p.users, p.radio, p.budgets, p.allow_overlap)
    }
}

impl From<Scenario> for ScenarioParts {
    fn from(s: Scenario) -> Self {
        ScenarioParts {
            tasks: s.tasks,
            users: s.users,
            radio: s.radio,
            budgets: s.budgets,
            allow_overlap: s.allow_overlap,
        }
    }
}

impl Scenario {
    /// Builds a scenario whose task groups must be disjoint.
    pub fn new(
        tasks: Vec<LearningErrorModel>,
        users: Vec<UserLink>,
        radio: RadioParams,
        budgets: Budgets,
    ) -> Result<Self> {
        Self::build(tasks, users, radio, budgets, false)
    }

    /// Like [`Scenario::new`] but lets a user feed several tasks.
    pub fn with_overlap(
        tasks: Vec<LearningErrorModel>,
        users: Vec<UserLink>,
        radio: RadioParams,
        budgets: Budgets,
    ) -> Result<Self> {
        Self::build(tasks, users, radio, budgets, true)
    }

    fn build(
        tasks: Vec<LearningErrorModel>,
        users: Vec<UserLink>,
        radio: RadioParams,
        budgets: Budgets,
        allow_overlap: bool,
    ) -> Result<Self> {
        radio.validate()?;
        budgets.validate()?;
        if tasks.is_empty() {
            return Err(Error::InvalidInput("scenario has no tasks".into()));
        }
        if users.is_empty() {
            return Err(Error::InvalidInput("scenario has no users".into()));
        }
        let mut index = HashMap::new();
        for (k, u) in users.iter().enumerate() {
            u.validate()?;
            if index.insert(u.user_id, k).is_some() {
                return Err(Error::InvalidInput(format!(
                    "duplicate user id {}",
                    u.user_id
                )));
            }
        }
        let mut task_ids = HashSet::new();
        let mut membership = vec![0usize; users.len()];
        let mut groups = Vec::with_capacity(tasks.len());
        for task in &tasks {
            task.validate()?;
            if !task_ids.insert(task.task_id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate task id {}",
                    task.task_id
                )));
            }
            let mut group = Vec::with_capacity(task.users.len());
            for uid in &task.users {
                let k = *index.get(uid).ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "task {} references unknown user {uid}",
                        task.task_id
                    ))
                })?;
                membership[k] += 1;
                group.push(k);
            }
            groups.push(group);
        }
        for (k, &n) in membership.iter().enumerate() {
            if n == 0 {
                return Err(Error::InvalidInput(format!(
                    "user {} belongs to no task",
                    users[k].user_id
                )));
            }
            if n > 1 && !allow_overlap {
                return Err(Error::InvalidInput(format!(
                    "user {} feeds {n} tasks; overlapping groups need an explicit opt-in",
                    users[k].user_id
                )));
            }
        }
        Ok(Scenario {
            tasks,
            users,
            radio,
            budgets,
            allow_overlap,
            groups,
        })
    }

    pub fn tasks(&self) -> &[LearningErrorModel] {
        &self.tasks
    }

    pub fn users(&self) -> &[UserLink] {
        &self.users
    }

    pub fn radio(&self) -> &RadioParams {
        &self.radio
    }

    pub fn budgets(&self) -> &Budgets {
        &self.budgets
    }

    /// User indices (into [`Scenario::users`]) of each task, in task order.
    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn allows_overlap(&self) -> bool {
        self.allow_overlap
    }

    pub fn has_overlap(&self) -> bool {
        let total: usize = self.groups.iter().map(Vec::len).sum();
        total > self.users.len()
    }

    pub fn user_index(&self, id: UserId) -> Option<usize> {
        self.users.iter().position(|u| u.user_id == id)
    }

    /// True when energy can never bind: `E_max >= T_max · P_max`.
    pub fn is_ranking_eligible(&self) -> bool {
        self.budgets.e_max >= self.budgets.t_max * self.budgets.p_max
    }

    pub fn with_budgets(&self, budgets: Budgets) -> Result<Self> {
        budgets.validate()?;
        let mut s = self.clone();
        s.budgets = budgets;
        Ok(s)
    }

    /// Same users and budgets with replacement task curves.
    pub fn with_tasks(&self, tasks: Vec<LearningErrorModel>) -> Result<Self> {
        Self::build(
            tasks,
            self.users.clone(),
            self.radio,
            self.budgets,
            self.allow_overlap,
        )
    }

    pub(crate) fn links(&self) -> Vec<Link> {
        self.users
            .iter()
            .map(|u| Link::new(u, &self.radio))
            .collect()
    }

    /// Continuous samples per task for per-user delivered bits.
    pub fn samples(&self, bits: &[f64]) -> Vec<f64> {
        self.tasks
            .iter()
            .zip(&self.groups)
            .map(|(task, g)| {
                g.iter()
                    .map(|&k| bits[k] / self.users[k].bits_per_sample)
                    .sum::<f64>()
                    + task.c
            })
            .collect()
    }

    pub fn samples_floor(&self, bits: &[f64]) -> Vec<u64> {
        self.tasks
            .iter()
            .zip(&self.groups)
            .map(|(task, g)| {
                let parts: Vec<_> = g
                    .iter()
                    .map(|&k| (bits[k], self.users[k].bits_per_sample))
                    .collect();
                samples_for_task_floor(task, &parts)
            })
            .collect()
    }

    /// Worst predicted error over tasks for per-task sample counts.
    pub fn worst_error(&self, samples: &[f64]) -> f64 {
        self.tasks
            .iter()
            .zip(samples)
            .map(|(task, &v)| task.error_or_inf(v))
            .fold(0.0, f64::max)
    }

    /// Error level below which no allocation can go: every dataset sent in full.
    pub fn error_lower_bound(&self) -> f64 {
        let full: Vec<f64> = self.users.iter().map(UserLink::cap_bits).collect();
        self.worst_error(&self.samples(&full))
    }

    /// Assembles an allocation from per-user vectors without validating it.
    pub(crate) fn allocation(&self, time: &[f64], energy: &[f64], bits: &[f64]) -> Allocation {
        let samples = self.samples(bits);
        let floors = self.samples_floor(bits);
        let ids = self.users.iter().map(|u| u.user_id);
        Allocation {
            time: ids.clone().zip(time.iter().copied()).collect(),
            energy: ids.clone().zip(energy.iter().copied()).collect(),
            bits: ids.zip(bits.iter().copied()).collect(),
            samples_per_task: self
                .tasks
                .iter()
                .map(|t| t.task_id.clone())
                .zip(samples.iter().copied())
                .collect(),
            samples_floor: self
                .tasks
                .iter()
                .map(|t| t.task_id.clone())
                .zip(floors)
                .collect(),
            objective: self.worst_error(&samples),
        }
    }

    /// Budget and power violations of a time/energy plan (dataset caps are
    /// checked separately because baselines truncate instead).
    fn budget_violations(&self, time: &[f64], energy: &[f64]) -> Vec<Violation> {
        let mut out = Vec::new();
        let b = &self.budgets;
        for (k, u) in self.users.iter().enumerate() {
            if !(time[k] >= 0.0) || !(energy[k] >= 0.0) {
                out.push(Violation::Negative { user: u.user_id.0 });
            } else if energy[k] > b.p_max * time[k] * (1.0 + FEASIBILITY_TOL) + 1e-300 {
                out.push(Violation::PeakPower {
                    user: u.user_id.0,
                    energy: energy[k],
                    limit: b.p_max * time[k],
                });
            }
        }
        let used_t: f64 = time.iter().sum();
        if used_t > b.t_max * (1.0 + FEASIBILITY_TOL) + 1e-12 {
            out.push(Violation::TimeBudget {
                used: used_t,
                limit: b.t_max,
            });
        }
        let used_e: f64 = energy.iter().sum();
        if used_e > b.e_max * (1.0 + FEASIBILITY_TOL) {
            out.push(Violation::EnergyBudget {
                used: used_e,
                limit: b.e_max,
            });
        }
        out
    }

    fn cap_violation(&self, k: usize, bits: f64) -> Option<Violation> {
        let u = &self.users[k];
        let samples = bits / u.bits_per_sample;
        (samples > u.dataset_size * (1.0 + FEASIBILITY_TOL)).then_some(Violation::DatasetCap {
            user: u.user_id.0,
            samples,
            limit: u.dataset_size,
        })
    }
}

/// Per-user time/energy plan with derived bits, samples and objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub time: BTreeMap<UserId, f64>,
    pub energy: BTreeMap<UserId, f64>,
    pub bits: BTreeMap<UserId, f64>,
    pub samples_per_task: BTreeMap<String, f64>,
    /// Per-user floored samples summed per task.
    pub samples_floor: BTreeMap<String, u64>,
    /// Worst predicted error; infinite if some task has no samples at all.
    #[serde(with = "finite_or_null")]
    pub objective: f64,
}

impl Allocation {
    fn column(map: &BTreeMap<UserId, f64>, scenario: &Scenario) -> Vec<f64> {
        scenario
            .users()
            .iter()
            .map(|u| map.get(&u.user_id).copied().unwrap_or(f64::NAN))
            .collect()
    }

    /// Times in the scenario's user order.
    pub fn time_vec(&self, scenario: &Scenario) -> Vec<f64> {
        Self::column(&self.time, scenario)
    }

    pub fn energy_vec(&self, scenario: &Scenario) -> Vec<f64> {
        Self::column(&self.energy, scenario)
    }

    pub fn bits_vec(&self, scenario: &Scenario) -> Vec<f64> {
        Self::column(&self.bits, scenario)
    }

    /// Checks every P1 constraint plus internal consistency: reported bits
    /// may not exceed what the link carries for the allotted time/energy,
    /// and the objective must match the reported samples.
    pub fn check(&self, scenario: &Scenario) -> Vec<Violation> {
        let mut out = Vec::new();
        for u in scenario.users() {
            if !self.time.contains_key(&u.user_id)
                || !self.energy.contains_key(&u.user_id)
                || !self.bits.contains_key(&u.user_id)
            {
                out.push(Violation::MissingUser { user: u.user_id.0 });
            }
        }
        if !out.is_empty() {
            return out;
        }
        let time = self.time_vec(scenario);
        let energy = self.energy_vec(scenario);
        let bits = self.bits_vec(scenario);
        out.extend(scenario.budget_violations(&time, &energy));
        for (k, link) in scenario.links().iter().enumerate() {
            if !(time[k] >= 0.0 && energy[k] >= 0.0) {
                continue;
            }
            let carried = link.theta(time[k], energy[k]);
            if bits[k] > carried * (1.0 + FEASIBILITY_TOL) + 1e-9 || bits[k] < 0.0 {
                out.push(Violation::Undelivered {
                    user: scenario.users()[k].user_id.0,
                    bits: bits[k],
                    link_bits: carried,
                });
            }
            out.extend(scenario.cap_violation(k, bits[k]));
        }
        out
    }

    /// Recomputes the objective from the stored bits.
    pub fn recomputed_objective(&self, scenario: &Scenario) -> f64 {
        scenario.worst_error(&scenario.samples(&self.bits_vec(scenario)))
    }
}

/// Evaluates a time/energy plan given in the scenario's user order. Any
/// constraint broken beyond [`FEASIBILITY_TOL`] is reported, never repaired.
pub fn evaluate_allocation(
    scenario: &Scenario,
    time: &[f64],
    energy: &[f64],
) -> Result<Allocation> {
    let k = scenario.users().len();
    if time.len() != k || energy.len() != k {
        return Err(Error::InvalidInput(format!(
            "allocation covers {} / {} users, scenario has {k}",
            time.len(),
            energy.len()
        )));
    }
    let mut violations = scenario.budget_violations(time, energy);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    let bits: Vec<f64> = scenario
        .links()
        .iter()
        .enumerate()
        .map(|(k, l)| l.theta(time[k], energy[k]))
        .collect();
    violations.extend(
        bits.iter()
            .enumerate()
            .filter_map(|(k, &d)| scenario.cap_violation(k, d)),
    );
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    Ok(scenario.allocation(time, energy, &bits))
}

/// Like [`evaluate_allocation`] but bits beyond a user's dataset are
/// discarded instead of rejected; the surplus time/energy is wasted.
pub fn evaluate_allocation_truncated(
    scenario: &Scenario,
    time: &[f64],
    energy: &[f64],
) -> Result<Allocation> {
    let violations = scenario.budget_violations(time, energy);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    let bits: Vec<f64> = scenario
        .links()
        .iter()
        .zip(scenario.users())
        .enumerate()
        .map(|(k, (l, u))| l.theta(time[k], energy[k]).min(u.cap_bits()))
        .collect();
    Ok(scenario.allocation(time, energy, &bits))
}

pub(crate) mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }

    pub mod vec {
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            s.collect_seq(v.iter().map(|x| x.is_finite().then_some(*x)))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            let raw = Vec::<Option<f64>>::deserialize(d)?;
            Ok(raw
                .into_iter()
                .map(|x| x.unwrap_or(f64::INFINITY))
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn radio() -> RadioParams {
        RadioParams::new(180_000.0, 1e-11, 1.0).unwrap()
    }

    /// A link whose SNR per joule-second is exactly 1/σ² · gain.
    fn link_with_snr(snr_per_j: f64) -> UserLink {
        UserLink::new(1, snr_per_j * 1e-11, 6276.0, 1000.0)
    }

    #[test]
    fn theta_is_zero_at_origin() {
        assert_eq!(theta(0.0, 0.0, &link_with_snr(1.0), &radio()).unwrap(), 0.0);
        assert_eq!(theta(0.0, 3.0, &link_with_snr(1.0), &radio()).unwrap(), 0.0);
    }

    #[test]
    fn theta_unit_snr_gives_bandwidth_bits() {
        let d = theta(1.0, 1.0, &link_with_snr(1.0), &radio()).unwrap();
        assert!((d - 180_000.0).abs() < 1e-6, "{d}");
    }

    #[test]
    fn theta_snr_three_over_two_seconds() {
        // e·|h|²/(t·σ²) = 3 with t = 2
        let d = theta(2.0, 6.0, &link_with_snr(1.0), &radio()).unwrap();
        assert!((d - 720_000.0).abs() < 1e-6, "{d}");
    }

    #[test]
    fn theta_rejects_negative_inputs() {
        assert!(matches!(
            theta(-1.0, 0.0, &link_with_snr(1.0), &radio()),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            theta(1.0, -1e-3, &link_with_snr(1.0), &radio()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn theta_fixed_rate_ignores_energy() {
        let l = link_with_snr(1.0).with_fixed_rate(62_760.0);
        let r = RadioParams::new(180_000.0, 1e-11, 0.5).unwrap();
        assert!((theta(2.0, 0.0, &l, &r).unwrap() - 62_760.0).abs() < 1e-9);
    }

    #[test]
    fn gradient_zero_energy_branch() {
        let (gt, ge) = theta_gradient(1.0, 0.0, &link_with_snr(2.0), &radio()).unwrap();
        assert_eq!(gt, 0.0);
        assert!((ge - 180_000.0 * 2.0 / LN_2).abs() < 1e-6);
    }

    #[test]
    fn gradient_unit_snr_symbolic() {
        let (gt, _) = theta_gradient(1.0, 1.0, &link_with_snr(1.0), &radio()).unwrap();
        let expected = 180_000.0 * (1.0 - 1.0 / (2.0 * LN_2));
        assert!(
            ((gt - expected) / expected).abs() < 1e-12,
            "{gt} vs {expected}"
        );
    }

    #[test]
    fn gradient_rejects_zero_time() {
        assert!(theta_gradient(0.0, 1.0, &link_with_snr(1.0), &radio()).is_err());
    }

    fn task(a: f64, b: f64, c: f64) -> LearningErrorModel {
        LearningErrorModel::new("t", a, b, c, vec![UserId(1)]).unwrap()
    }

    #[test]
    fn samples_continuous_and_floored() {
        let t = task(1.0, 1.0, 300.0);
        assert!((samples_for_task(&t, &[(627_600.0, 6276.0)]) - 400.0).abs() < 1e-12);
        let t = task(1.0, 1.0, 5.0);
        assert_eq!(samples_for_task(&t, &[(0.0, 6276.0)]), 5.0);
        let t = task(1.0, 1.0, 0.0);
        assert!((samples_for_task(&t, &[(324.0 * 10.5, 324.0)]) - 10.5).abs() < 1e-12);
        assert_eq!(samples_for_task_floor(&t, &[(324.0 * 10.5, 324.0)]), 10);
    }

    #[test]
    fn predicted_error_values() {
        assert!((task(1.0, 1.0, 0.0).predicted_error(10.0).unwrap() - 0.1).abs() < 1e-15);
        // 7.3 · 300^(-0.69) and 3.95 · 137^(-0.5), evaluated with mpmath
        assert!(
            (task(7.3, 0.69, 0.0).predicted_error(300.0).unwrap() - 0.142_596_607_820_711_6).abs()
                < 1e-12
        );
        assert!(
            (task(3.95, 0.5, 0.0).predicted_error(137.0).unwrap() - 0.337_471_274_798_120_6).abs()
                < 1e-12
        );
        assert!(task(1.0, 1.0, 0.0).predicted_error(0.0).is_err());
    }

    #[test]
    fn required_samples_values() {
        let t = task(1.0, 1.0, 2.0);
        assert!((t.required_samples(0.1).unwrap() - 8.0).abs() < 1e-12);
        // historical data already meets the target
        let t = task(1.0, 1.0, 20.0);
        assert_eq!(t.required_samples(0.1).unwrap(), 0.0);
        let t = task(3.95, 0.5, 0.0);
        let v = t.required_samples(0.3375).unwrap();
        assert!((v - 136.976_680_384_087_8).abs() < 1e-9, "{v}");
        assert!((t.predicted_error(v).unwrap() - 0.3375).abs() < 1e-12);
        assert!(t.required_samples(0.0).is_err());
    }

    fn two_user_scenario() -> Scenario {
        let users = vec![
            UserLink::new(1, 1e-9, 6276.0, 1000.0),
            UserLink::new(2, 2e-9, 324.0, 500.0),
        ];
        let tasks = vec![
            LearningErrorModel::new("cnn", 7.3, 0.69, 300.0, vec![UserId(1)]).unwrap(),
            LearningErrorModel::new("svm", 6.24, 0.72, 200.0, vec![UserId(2)]).unwrap(),
        ];
        Scenario::new(
            tasks,
            users,
            RadioParams::from_noise_psd(180e3, -130.0, 1.0).unwrap(),
            Budgets::new(50.0, 1.0, 0.06).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_allocation_objective_is_historical_error() {
        let s = two_user_scenario();
        let a = evaluate_allocation(&s, &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        let expected = (7.3 * 300f64.powf(-0.69)).max(6.24 * 200f64.powf(-0.72));
        assert!((a.objective - expected).abs() < 1e-15);
    }

    #[test]
    fn time_budget_violation_is_reported() {
        let s = two_user_scenario();
        match evaluate_allocation(&s, &[30.0, 30.0], &[0.0, 0.0]) {
            Err(Error::Validation(v)) => assert!(matches!(v[0], Violation::TimeBudget { .. })),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn power_and_cap_violations_are_reported() {
        let s = two_user_scenario();
        let err = evaluate_allocation(&s, &[1.0, 1.0], &[0.5, 0.0]).unwrap_err();
        assert!(
            matches!(err, Error::Validation(ref v) if matches!(v[0], Violation::PeakPower { user: 1, .. }))
        );
        // user 2 at full power for 40 s sends far more than 500 samples
        let err = evaluate_allocation(&s, &[0.0, 40.0], &[0.0, 0.99]).unwrap_err();
        assert!(
            matches!(err, Error::Validation(ref v) if matches!(v[0], Violation::DatasetCap { user: 2, .. }))
        );
        let a = evaluate_allocation_truncated(&s, &[0.0, 40.0], &[0.0, 0.99]).unwrap();
        assert!(a.check(&s).is_empty());
        assert!((a.samples_per_task["svm"] - 700.0).abs() < 1e-9);
    }

    #[test]
    fn overlapping_groups_need_opt_in() {
        let users = vec![UserLink::new(1, 1e-9, 100.0, 10.0)];
        let tasks = vec![
            LearningErrorModel::new("a", 1.0, 1.0, 1.0, vec![UserId(1)]).unwrap(),
            LearningErrorModel::new("b", 1.0, 1.0, 1.0, vec![UserId(1)]).unwrap(),
        ];
        let radio = RadioParams::new(1.0, 1.0, 1.0).unwrap();
        let budgets = Budgets::new(1.0, 1.0, 1.0).unwrap();
        assert!(Scenario::new(tasks.clone(), users.clone(), radio, budgets).is_err());
        let s = Scenario::with_overlap(tasks, users, radio, budgets).unwrap();
        assert!(s.has_overlap());
    }

    #[test]
    fn orphan_and_unknown_users_rejected() {
        let radio = RadioParams::new(1.0, 1.0, 1.0).unwrap();
        let budgets = Budgets::new(1.0, 1.0, 1.0).unwrap();
        let users = vec![
            UserLink::new(1, 1.0, 1.0, 1.0),
            UserLink::new(2, 1.0, 1.0, 1.0),
        ];
        let tasks = vec![LearningErrorModel::new("a", 1.0, 1.0, 1.0, vec![UserId(1)]).unwrap()];
        assert!(Scenario::new(tasks, users.clone(), radio, budgets).is_err());
        let tasks = vec![LearningErrorModel::new(
            "a",
            1.0,
            1.0,
            1.0,
            vec![UserId(1), UserId(2), UserId(3)],
        )
        .unwrap()];
        assert!(Scenario::new(tasks, users, radio, budgets).is_err());
    }

    #[test]
    fn noise_psd_integration() {
        let r = RadioParams::from_noise_psd(180e3, -130.0, 1.0).unwrap();
        assert!((r.noise_power - 1.8e-11).abs() < 1e-24);
    }

    #[test]
    fn scenario_serde_round_trip() {
        let s = two_user_scenario();
        let json = serde_json::to_string(&s).unwrap();
        let back: Scenario = serde_json::from_str(&json).unwrap();
        assert_eq!(s, back);
    }
}
