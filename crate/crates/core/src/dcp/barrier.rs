//! Phase-I log-barrier feasibility test for the convexified problem at a
//! fixed error level.
//!
//! Variables are normalized: `τ_k = t_k / T_max`, `ε_k = E_k / E_scale` with
//! `E_scale = min(E_max, P_max·T_max)`. Every constraint is written as
//! `g_i(x) ≤ 0` in O(1) units and the engine minimizes the common slack `s`
//!
//! ```text
//! minimize  μ·s - Σ ln(s - g_i(x)) - Σ ln τ_k - Σ ln ε_k
//! ```
//!
//! with damped Newton steps for an increasing sequence of `μ`. The level is
//! feasible as soon as an iterate satisfies every `g_i < 0`, and infeasible
//! once the duality bound proves `min s > 0`.

use nalgebra::{DMatrix, DVector};

use super::SurrogateConstraint;
use crate::kkt::energy_scale;
use crate::model::{Link, Scenario};

/// Constraints may be violated by this much (normalized) when the barrier
/// cannot separate the level from the boundary.
pub(crate) const FEAS_TOL: f64 = 1e-9;
const MU_MAX: f64 = 1e13;
const MU_GROWTH: f64 = 10.0;
const NEWTON_TOL: f64 = 1e-10;
const MAX_NEWTON_PER_STAGE: usize = 80;

pub(crate) enum Feasibility {
    Feasible(Vec<f64>),
    Infeasible,
}

/// `coeffs · x ≤ rhs` over the 2K normalized variables.
struct LinearRow {
    coeffs: Vec<(usize, f64)>,
    rhs: f64,
}

pub(crate) struct Engine<'a> {
    scenario: &'a Scenario,
    links: Vec<Link>,
    pub(crate) t_scale: f64,
    pub(crate) e_scale: f64,
    rows: Vec<LinearRow>,
    pub(crate) newton_steps: usize,
}

impl<'a> Engine<'a> {
    pub(crate) fn new(scenario: &'a Scenario, surrogates: &[SurrogateConstraint]) -> Self {
        let k_users = scenario.users().len();
        let b = scenario.budgets();
        let (ts, es) = (b.t_max, energy_scale(scenario));
        let mut rows = vec![
            LinearRow {
                coeffs: (0..k_users).map(|k| (k, 1.0)).collect(),
                rhs: 1.0,
            },
            LinearRow {
                coeffs: (0..k_users).map(|k| (k_users + k, es / b.e_max)).collect(),
                rhs: 1.0,
            },
        ];
        let power = es / (b.p_max * ts);
        for k in 0..k_users {
            rows.push(LinearRow {
                coeffs: vec![(k_users + k, power), (k, -1.0)],
                rhs: 0.0,
            });
        }
        for (k, s) in surrogates.iter().enumerate() {
            // value + g·(x - anchor) ≤ cap, divided through by cap
            let cap = scenario.users()[k].cap_bits();
            let offset = s.value_at_anchor - s.gradient.0 * s.anchor.0 - s.gradient.1 * s.anchor.1;
            rows.push(LinearRow {
                coeffs: vec![
                    (k, s.gradient.0 * ts / cap),
                    (k_users + k, s.gradient.1 * es / cap),
                ],
                rhs: 1.0 - offset / cap,
            });
        }
        Engine {
            scenario,
            links: scenario.links(),
            t_scale: ts,
            e_scale: es,
            rows,
            newton_steps: 0,
        }
    }

    fn k(&self) -> usize {
        self.links.len()
    }

    /// Per-task sample demand beyond history at level `u` (only positive ones).
    pub(crate) fn demands(&self, u: f64) -> Vec<(usize, f64)> {
        self.scenario
            .tasks()
            .iter()
            .enumerate()
            .filter_map(|(m, t)| {
                let d = t.total_samples_for(u) - t.c;
                (d > 0.0).then_some((m, d))
            })
            .collect()
    }

    fn theta_scaled(&self, k: usize, x: &[f64]) -> f64 {
        let kk = self.k();
        self.links[k].theta(self.t_scale * x[k], self.e_scale * x[kk + k])
    }

    /// Values of all shifted constraints at `x`.
    pub(crate) fn constraint_values(&self, x: &[f64], demands: &[(usize, f64)]) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .rows
            .iter()
            .map(|r| r.coeffs.iter().map(|&(j, c)| c * x[j]).sum::<f64>() - r.rhs)
            .collect();
        for &(m, d) in demands {
            let got: f64 = self.scenario.groups()[m]
                .iter()
                .map(|&k| self.theta_scaled(k, x) / self.scenario.users()[k].bits_per_sample)
                .sum();
            out.push(1.0 - got / d);
        }
        out
    }

    /// A strictly interior reference point.
    pub(crate) fn center(&self) -> Vec<f64> {
        let kk = self.k();
        let b = self.scenario.budgets();
        let tau = 0.5 / kk as f64;
        let eps = 0.5
            * (b.p_max * self.t_scale * tau / self.e_scale)
                .min(b.e_max / (kk as f64 * self.e_scale));
        let mut x = vec![tau; kk];
        x.extend(std::iter::repeat_n(eps, kk));
        x
    }

    fn barrier(&self, y: &[f64], mu: f64, demands: &[(usize, f64)]) -> Option<f64> {
        let n = 2 * self.k();
        let (x, s) = (&y[..n], y[n]);
        if x.iter().any(|&v| v <= 0.0) {
            return None;
        }
        let mut f = mu * s - x.iter().map(|v| v.ln()).sum::<f64>();
        for g in self.constraint_values(x, demands) {
            let r = s - g;
            if !(r > 0.0) {
                return None;
            }
            f -= r.ln();
        }
        Some(f)
    }

    /// Gradient and Hessian of the barrier objective.
    fn derivatives(
        &self,
        y: &[f64],
        mu: f64,
        demands: &[(usize, f64)],
    ) -> (DVector<f64>, DMatrix<f64>) {
        let kk = self.k();
        let n = 2 * kk;
        let dim = n + 1;
        let (x, s) = (&y[..n], y[n]);
        let mut grad = DVector::zeros(dim);
        let mut hess = DMatrix::zeros(dim, dim);
        grad[n] = mu;
        for j in 0..n {
            grad[j] -= 1.0 / x[j];
            hess[(j, j)] += 1.0 / (x[j] * x[j]);
        }
        // ∇r = e_s - ∇g; -ln r contributes -∇r/r and ∇r∇rᵀ/r² + ∇²g/r
        let mut add_term = |dg: &[(usize, f64)],
                            r: f64,
                            curvature: &[(usize, usize, f64)],
                            hess: &mut DMatrix<f64>| {
            let mut dr: Vec<(usize, f64)> = dg.iter().map(|&(j, v)| (j, -v)).collect();
            dr.push((n, 1.0));
            for &(i, vi) in &dr {
                grad[i] -= vi / r;
                for &(j, vj) in &dr {
                    hess[(i, j)] += vi * vj / (r * r);
                }
            }
            for &(i, j, v) in curvature {
                hess[(i, j)] += v / r;
            }
        };
        for row in &self.rows {
            let g = row.coeffs.iter().map(|&(j, c)| c * x[j]).sum::<f64>() - row.rhs;
            add_term(&row.coeffs, s - g, &[], &mut hess);
        }
        let (ts, es) = (self.t_scale, self.e_scale);
        for &(m, d) in demands {
            let mut dg = Vec::new();
            let mut curv = Vec::new();
            let mut got = 0.0;
            for &k in &self.scenario.groups()[m] {
                let big_d = self.scenario.users()[k].bits_per_sample;
                let (t, e) = (ts * x[k], es * x[kk + k]);
                let link = &self.links[k];
                got += link.theta(t, e) / big_d;
                let (gt, ge) = link.gradient(t, e);
                let w = 1.0 / (big_d * d);
                dg.push((k, -gt * ts * w));
                dg.push((kk + k, -ge * es * w));
                let (htt, hte, hee) = link.hessian(t, e);
                // ∇²g = -∇²Θ (scaled), positive semidefinite
                curv.push((k, k, -htt * ts * ts * w));
                curv.push((k, kk + k, -hte * ts * es * w));
                curv.push((kk + k, k, -hte * ts * es * w));
                curv.push((kk + k, kk + k, -hee * es * es * w));
            }
            let g = 1.0 - got / d;
            add_term(&dg, s - g, &curv, &mut hess);
        }
        (grad, hess)
    }

    fn newton_direction(grad: &DVector<f64>, hess: DMatrix<f64>) -> DVector<f64> {
        let dim = grad.len();
        let mut h = hess;
        let mut ridge = 0.0;
        loop {
            if let Some(ch) = h.clone().cholesky() {
                return -ch.solve(grad);
            }
            ridge = if ridge == 0.0 {
                1e-12 * h.diagonal().amax().max(1.0)
            } else {
                ridge * 100.0
            };
            for i in 0..dim {
                h[(i, i)] += ridge;
            }
        }
    }

    /// Decides whether the convexified constraints can all be met at level
    /// `u`, starting the search from `start`. With `centering` the barrier
    /// path is followed to the end and the point minimizing the largest
    /// violation is returned; otherwise the first strictly feasible iterate.
    pub(crate) fn phase_one(&mut self, u: f64, start: &[f64], centering: bool) -> Feasibility {
        let demands = self.demands(u);
        let n = start.len();
        let center = self.center();
        let x0: Vec<f64> = start
            .iter()
            .zip(&center)
            .map(|(a, c)| 0.9 * a + 0.1 * c)
            .collect();
        let g0 = self.constraint_values(&x0, &demands);
        let max_g = g0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max_g < 0.0 && !centering {
            return Feasibility::Feasible(x0);
        }
        let m_terms = (g0.len() + n) as f64;
        let mut y = x0;
        y.push(max_g + 0.1);
        let mut mu = 1.0;
        loop {
            for _ in 0..MAX_NEWTON_PER_STAGE {
                let (grad, hess) = self.derivatives(&y, mu, &demands);
                let dir = Self::newton_direction(&grad, hess);
                let decrement = -grad.dot(&dir);
                if decrement / 2.0 <= NEWTON_TOL {
                    break;
                }
                let f0 = self
                    .barrier(&y, mu, &demands)
                    .expect("iterate stays in the barrier domain");
                let mut step = 1.0;
                let mut accepted = false;
                while step > 1e-14 {
                    let trial: Vec<f64> = y
                        .iter()
                        .zip(dir.iter())
                        .map(|(a, d)| a + step * d)
                        .collect();
                    if let Some(f1) = self.barrier(&trial, mu, &demands) {
                        if f1 <= f0 - 0.25 * step * decrement {
                            y = trial;
                            accepted = true;
                            break;
                        }
                    }
                    step *= 0.5;
                }
                self.newton_steps += 1;
                if !accepted {
                    break;
                }
                let x = &y[..n];
                if !centering && self.constraint_values(x, &demands).iter().all(|&g| g < 0.0) {
                    return Feasibility::Feasible(x.to_vec());
                }
            }
            let x = &y[..n];
            let worst = self
                .constraint_values(x, &demands)
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max);
            if worst < 0.0 && !centering {
                return Feasibility::Feasible(x.to_vec());
            }
            if y[n] - m_terms / mu > 0.0 {
                return Feasibility::Infeasible;
            }
            if mu >= MU_MAX {
                return if worst <= FEAS_TOL {
                    Feasibility::Feasible(x.to_vec())
                } else {
                    Feasibility::Infeasible
                };
            }
            mu *= MU_GROWTH;
        }
    }
}
