//! Reference schemes that ignore the learning curves.
//!
//! Both spread energy in proportion to time, `E_k = min(P_max, E_max/T_max)·t_k`
//! for the throughput-fair scheme and `min(P_max·t_k, E_max/K)` for the
//! time-fair one (identical when shares are equal). Bits beyond a user's
//! dataset are discarded rather than reallocated.

use crate::error::{Error, Result};
use crate::model::{evaluate_allocation_truncated, Allocation, Scenario};

/// Every user gets `T_max / K` seconds.
pub fn time_fairness(scenario: &Scenario) -> Result<Allocation> {
    let b = scenario.budgets();
    let k_users = scenario.users().len() as f64;
    let share = b.t_max / k_users;
    let time = vec![share; scenario.users().len()];
    let energy = vec![(b.p_max * share).min(b.e_max / k_users); scenario.users().len()];
    evaluate_allocation_truncated(scenario, &time, &energy)
}

/// Every user delivers the same number of bits: all transmit at the common
/// power `min(P_max, E_max/T_max)` and time is split in inverse proportion
/// to the resulting rates. Users with a zero rate get no time.
pub fn throughput_fairness(scenario: &Scenario) -> Result<Allocation> {
    let b = scenario.budgets();
    let power = b.p_max.min(if b.t_max > 0.0 {
        b.e_max / b.t_max
    } else {
        b.p_max
    });
    let rates: Vec<f64> = scenario
        .links()
        .iter()
        .map(|l| l.rate_at_power(power))
        .collect();
    let inverse_sum: f64 = rates.iter().filter(|&&r| r > 0.0).map(|r| 1.0 / r).sum();
    if inverse_sum == 0.0 {
        return Err(Error::Degenerate("no user has a positive rate".into()));
    }
    let time: Vec<f64> = rates
        .iter()
        .map(|&r| {
            if r > 0.0 {
                b.t_max / (r * inverse_sum)
            } else {
                0.0
            }
        })
        .collect();
    let energy: Vec<f64> = time.iter().map(|t| power * t).collect();
    evaluate_allocation_truncated(scenario, &time, &energy)
}
