//! Dense two-phase simplex for small linear programs in inequality form.
//!
//! ```text
//! minimize cᵀx  subject to  A x ≤ b,  x ≥ 0
//! ```
//!
//! Bland's rule is used throughout, so the method terminates on degenerate
//! problems. Intended for desk-scale instances (tens of variables) used as
//! independent reference solutions.

const EPS: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn pivot(&mut self, r: usize, col: usize) {
        let p = self.rows[r][col];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        self.rhs[r] /= p;
        let pivot_row = self.rows[r].clone();
        let pivot_rhs = self.rhs[r];
        for i in 0..self.rows.len() {
            if i == r {
                continue;
            }
            let f = self.rows[i][col];
            if f != 0.0 {
                for (v, pv) in self.rows[i].iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                self.rhs[i] -= f * pivot_rhs;
            }
        }
        self.basis[r] = col;
    }

    /// Runs simplex iterations for `cost` over columns `< allowed`.
    /// Returns false if the objective is unbounded below.
    fn optimize(&mut self, cost: &[f64], allowed: usize) -> bool {
        loop {
            let entering = (0..allowed).find(|&j| {
                if self.basis.contains(&j) {
                    return false;
                }
                let reduced = cost[j]
                    - self
                        .basis
                        .iter()
                        .zip(&self.rows)
                        .map(|(&bj, row)| cost[bj] * row[j])
                        .sum::<f64>();
                reduced < -EPS
            });
            let Some(col) = entering else {
                return true;
            };
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.rows.iter().enumerate() {
                if row[col] > EPS {
                    let ratio = self.rhs[i] / row[col];
                    let better = match leave {
                        None => true,
                        Some((li, lr)) => {
                            ratio < lr - EPS
                                || (ratio <= lr + EPS && self.basis[i] < self.basis[li])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            match leave {
                Some((r, _)) => self.pivot(r, col),
                None => return false,
            }
        }
    }

    fn objective(&self, cost: &[f64]) -> f64 {
        self.basis
            .iter()
            .zip(&self.rhs)
            .map(|(&j, &v)| cost[j] * v)
            .sum()
    }
}

/// Solves `min cᵀx s.t. A x ≤ b, x ≥ 0`; `a` is row-major with `c.len()` columns.
pub fn solve(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> LpOutcome {
    let n = c.len();
    let m = a.len();
    assert_eq!(b.len(), m, "one right-hand side per row");
    let needs_art: Vec<bool> = b.iter().map(|&bi| bi < 0.0).collect();
    let n_art = needs_art.iter().filter(|&&x| x).count();
    let width = n + m + n_art;

    let mut rows = Vec::with_capacity(m);
    let mut rhs = Vec::with_capacity(m);
    let mut basis = Vec::with_capacity(m);
    let mut next_art = n + m;
    for i in 0..m {
        assert_eq!(a[i].len(), n, "row {i} has the wrong width");
        let sign = if needs_art[i] { -1.0 } else { 1.0 };
        let mut row = vec![0.0; width];
        for j in 0..n {
            row[j] = sign * a[i][j];
        }
        row[n + i] = sign;
        if needs_art[i] {
            row[next_art] = 1.0;
            basis.push(next_art);
            next_art += 1;
        } else {
            basis.push(n + i);
        }
        rows.push(row);
        rhs.push(sign * b[i]);
    }
    let mut tab = Tableau { rows, rhs, basis };

    if n_art > 0 {
        let mut phase1 = vec![0.0; width];
        for v in phase1.iter_mut().skip(n + m) {
            *v = 1.0;
        }
        tab.optimize(&phase1, width);
        if tab.objective(&phase1) > 1e-9 * (1.0 + b.iter().map(|x| x.abs()).fold(0.0, f64::max)) {
            return LpOutcome::Infeasible;
        }
        // drive remaining artificials out of the basis
        for r in 0..m {
            if tab.basis[r] >= n + m {
                if let Some(col) =
                    (0..n + m).find(|&j| tab.rows[r][j].abs() > EPS && !tab.basis.contains(&j))
                {
                    tab.pivot(r, col);
                }
            }
        }
    }

    let mut cost = vec![0.0; width];
    cost[..n].copy_from_slice(c);
    if !tab.optimize(&cost, n + m) {
        return LpOutcome::Unbounded;
    }
    let mut x = vec![0.0; n];
    for (&j, &v) in tab.basis.iter().zip(&tab.rhs) {
        if j < n {
            x[j] = v;
        }
    }
    let objective = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    LpOutcome::Optimal { x, objective }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_maximization() {
        // max 3x + 5y s.t. x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 → (2, 6), 36
        let out = solve(
            &[-3.0, -5.0],
            &[vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 2.0]],
            &[4.0, 12.0, 18.0],
        );
        match out {
            LpOutcome::Optimal { x, objective } => {
                assert!((objective + 36.0).abs() < 1e-9);
                assert!((x[0] - 2.0).abs() < 1e-9 && (x[1] - 6.0).abs() < 1e-9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn covering_constraint_needs_phase_one() {
        // min x + y s.t. x + 2y ≥ 4, x ≤ 3, y ≤ 1 → x = 2, y = 1
        let out = solve(
            &[1.0, 1.0],
            &[vec![-1.0, -2.0], vec![1.0, 0.0], vec![0.0, 1.0]],
            &[-4.0, 3.0, 1.0],
        );
        match out {
            LpOutcome::Optimal { objective, .. } => assert!((objective - 3.0).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        assert_eq!(
            solve(&[1.0], &[vec![-1.0], vec![1.0]], &[-5.0, 2.0]),
            LpOutcome::Infeasible
        );
        assert_eq!(solve(&[-1.0], &[vec![-1.0]], &[0.0]), LpOutcome::Unbounded);
    }
}
