//! First-order optimality residual of the epigraph form of the allocation
//! problem, in normalized variables `τ = t/T_max`, `ε = E/E_scale`.
//!
//! With `w = ln u` the problem reads `min w s.t. ln h_m(x) ≤ w` plus the
//! budget, power, dataset and sign constraints. At a candidate point the
//! residual is `min_{λ,μ ≥ 0} ‖(1 - Σλ_m, Σλ_m ∇ln h_m + Σμ_j ∇g_j)‖_∞`
//! over the constraints that are active within a small tolerance.
//! Users without airtime are handled separately, see [`residual`].

use nalgebra::{DMatrix, DVector};

use crate::dcp::SurrogateConstraint;
use crate::model::{Scenario, T_FLOOR};

const ACTIVE_TOL: f64 = 1e-6;

pub(crate) enum CapModel<'a> {
    Exact,
    Surrogate(&'a [SurrogateConstraint]),
}

pub(crate) fn energy_scale(scenario: &Scenario) -> f64 {
    let b = scenario.budgets();
    b.e_max.min(b.p_max * b.t_max)
}

pub(crate) fn residual(
    scenario: &Scenario,
    time: &[f64],
    energy: &[f64],
    caps: CapModel<'_>,
) -> f64 {
    let b = *scenario.budgets();
    if b.t_max <= 0.0 {
        return 0.0;
    }
    let k_users = scenario.users().len();
    let (ts, es) = (b.t_max, energy_scale(scenario));
    let links = scenario.links();
    let tau: Vec<f64> = time.iter().map(|t| t / ts).collect();
    let eps: Vec<f64> = energy.iter().map(|e| e / es).collect();

    let bits: Vec<f64> = (0..k_users)
        .map(|k| links[k].theta(time[k], energy[k]))
        .collect();
    let samples = scenario.samples(&bits);
    let errors: Vec<f64> = scenario
        .tasks()
        .iter()
        .zip(&samples)
        .map(|(t, &v)| t.error_or_inf(v))
        .collect();
    let worst = errors.iter().copied().fold(0.0, f64::max);
    if !worst.is_finite() {
        return f64::INFINITY;
    }

    // Θ is not differentiable at the origin, so users with (numerically) no
    // time get no stationarity rows; they are checked afterwards against the
    // budget prices along every admissible transmit ratio.
    let idle: Vec<bool> = tau.iter().map(|&t| t <= ACTIVE_TOL).collect();
    let mut row_of = vec![usize::MAX; 2 * k_users];
    let mut n_rows = 1;
    for k in (0..k_users).filter(|&k| !idle[k]) {
        row_of[k] = n_rows;
        row_of[k_users + k] = n_rows + 1;
        n_rows += 2;
    }
    let grads: Vec<(f64, f64)> = (0..k_users)
        .map(|k| {
            if idle[k] {
                (0.0, 0.0)
            } else {
                links[k].gradient(time[k].max(T_FLOOR), energy[k])
            }
        })
        .collect();
    // ∂ ln h_m / ∂Θ_k = -b_m / (S_m D_k)
    let weight = |m: usize, k: usize| {
        scenario.tasks()[m].b / samples[m] / scenario.users()[k].bits_per_sample
    };

    let mut cols: Vec<DVector<f64>> = Vec::new();
    let column = |entries: &[(usize, f64)]| {
        let mut col = DVector::zeros(n_rows);
        for &(j, v) in entries {
            if row_of[j] != usize::MAX {
                col[row_of[j]] += v;
            }
        }
        col
    };
    let mut task_cols = Vec::new();
    for (m, &err) in errors.iter().enumerate() {
        if err < worst * (1.0 - ACTIVE_TOL) {
            continue;
        }
        let entries: Vec<(usize, f64)> = scenario.groups()[m]
            .iter()
            .flat_map(|&k| {
                [
                    (k, -weight(m, k) * grads[k].0 * ts),
                    (k_users + k, -weight(m, k) * grads[k].1 * es),
                ]
            })
            .collect();
        let mut col = column(&entries);
        col[0] = 1.0;
        task_cols.push((m, cols.len()));
        cols.push(col);
    }
    let mut time_col = None;
    if 1.0 - tau.iter().sum::<f64>() <= ACTIVE_TOL {
        time_col = Some(cols.len());
        cols.push(column(&(0..k_users).map(|k| (k, 1.0)).collect::<Vec<_>>()));
    }
    let energy_coef = es / b.e_max;
    let mut energy_col = None;
    if 1.0 - eps.iter().sum::<f64>() * energy_coef <= ACTIVE_TOL {
        energy_col = Some(cols.len());
        cols.push(column(
            &(0..k_users)
                .map(|k| (k_users + k, energy_coef))
                .collect::<Vec<_>>(),
        ));
    }
    let power = es / (b.p_max * ts);
    for k in (0..k_users).filter(|&k| !idle[k]) {
        if tau[k] - eps[k] * power <= ACTIVE_TOL {
            cols.push(column(&[(k, -1.0), (k_users + k, power)]));
        }
        if eps[k] <= ACTIVE_TOL {
            cols.push(column(&[(k_users + k, -1.0)]));
        }
        let (value, g) = match caps {
            CapModel::Exact => (bits[k], grads[k]),
            CapModel::Surrogate(s) => (s[k].value_at(time[k], energy[k]), s[k].gradient),
        };
        let cap = scenario.users()[k].cap_bits();
        if 1.0 - value / cap <= ACTIVE_TOL {
            cols.push(column(&[
                (k, g.0 * ts / cap),
                (k_users + k, g.1 * es / cap),
            ]));
        }
    }

    let a = DMatrix::from_columns(&cols);
    let mut target = DVector::zeros(n_rows);
    target[0] = 1.0;
    let w = if cols.is_empty() {
        DVector::zeros(0)
    } else {
        nnls(&a, &target)
    };
    let mut res = if cols.is_empty() {
        1.0
    } else {
        (&a * &w - target).amax()
    };

    let price_t = time_col.map_or(0.0, |j| w[j]);
    let price_e = energy_col.map_or(0.0, |j| w[j] * energy_coef);
    let max_ratio = 1.0 / power;
    for k in (0..k_users).filter(|&k| idle[k]) {
        let value: f64 = task_cols
            .iter()
            .filter(|(m, _)| scenario.groups()[*m].contains(&k))
            .map(|&(m, j)| w[j] * weight(m, k))
            .sum();
        // gain minus price along direction (1, r) in normalized units
        let excess =
            |r: f64| (value * links[k].theta(ts, es * r) - price_t - price_e * r) / r.max(1.0);
        res = res.max(maximize_on(excess, 0.0, max_ratio));
    }
    res
}

/// Maximum of a unimodal function on `[lo, hi]` by golden-section search,
/// including both end points.
fn maximize_on(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let ends = f(lo).max(f(hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut x1, mut x2) = (hi - g * (hi - lo), lo + g * (hi - lo));
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..100 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        }
    }
    ends.max(f1).max(f2)
}

/// Lawson-Hanson non-negative least squares: `min ‖A x - b‖₂, x ≥ 0`.
pub(crate) fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    if n == 0 {
        return x;
    }
    let mut passive = vec![false; n];
    let tol = 1e-12 * a.amax().max(1.0);
    for _ in 0..3 * n + 10 {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|&j| !passive[j])
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate.filter(|&j| w[j] > tol) else {
            break;
        };
        passive[j] = true;
        for _ in 0..3 * n + 10 {
            let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let sub = a.select_columns(&idx);
            let z_sub = least_squares(&sub, b);
            let mut z = DVector::zeros(n);
            for (p, &i) in idx.iter().enumerate() {
                z[i] = z_sub[p];
            }
            if idx.iter().all(|&i| z[i] > 0.0) {
                x = z;
                break;
            }
            let alpha = idx
                .iter()
                .filter(|&&i| z[i] <= 0.0)
                .map(|&i| x[i] / (x[i] - z[i]))
                .fold(f64::INFINITY, f64::min);
            x += (z - &x) * alpha;
            for &i in &idx {
                if x[i] <= tol {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
    }
    x
}

/// `min ‖A z - b‖₂` by Householder QR. Nearly dependent columns fall back to
/// ridge-regularized normal equations. (nalgebra's SVD can return a visibly
/// wrong factorization of small well-conditioned matrices, so it is avoided.)
fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let (m, n) = a.shape();
    if m >= n {
        let qr = a.clone().qr();
        let r = qr.r();
        let floor = 1e-10 * a.amax().max(1.0);
        if (0..n).all(|i| r[(i, i)].abs() > floor) {
            let qtb = qr.q().transpose() * b;
            if let Some(z) = r.solve_upper_triangular(&qtb) {
                return z;
            }
        }
    }
    let ata = a.transpose() * a;
    let ridge = 1e-12 * ata.diagonal().amax().max(1.0);
    let atb = a.transpose() * b;
    (ata + DMatrix::identity(n, n) * ridge)
        .cholesky()
        .map_or_else(|| DVector::zeros(n), |c| c.solve(&atb))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nnls_solves_square_positive_system_exactly() {
        // a stationarity system on which an SVD-based solve was off by 4e-3
        let a = DMatrix::from_row_slice(
            5,
            5,
            &[
                1.0,
                1.0,
                0.0,
                0.0,
                0.0,
                -0.1889372260605035,
                0.0,
                1.0,
                -1.0,
                0.0,
                -0.3128694703400349,
                0.0,
                0.0,
                1.0,
                0.0,
                0.0,
                -1.7191268661850228,
                1.0,
                0.0,
                -1.0,
                0.0,
                -17.162164358268186,
                0.0,
                0.0,
                1.0,
            ],
        );
        let b = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        let x = nnls(&a, &b);
        assert!((&a * &x - &b).amax() < 1e-12, "{x}");
        assert!(x.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn least_squares_handles_dependent_columns() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let b = DVector::from_vec(vec![3.0, 3.0, 3.0]);
        let z = least_squares(&a, &b);
        assert!((&a * &z - &b).amax() < 1e-6, "{z}");
    }

    #[test]
    fn nnls_matches_unconstrained_when_interior() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x = nnls(&a, &b);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn nnls_clamps_negative_directions() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let b = DVector::from_vec(vec![-1.0, 2.0]);
        let x = nnls(&a, &b);
        assert_eq!(x[0], 0.0);
        assert!((x[1] - 2.0).abs() < 1e-12);
    }
}
