//! Least-squares fitting of `err ≈ a · v^(-b)` learning curves.
//!
//! The fit minimizes the squared error in error space, `Σ (a·vᵢ^(-b) - errᵢ)²`,
//! with a damped Gauss-Newton iteration. A regression of `ln err` on `ln v`
//! supplies the starting point only.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LearningErrorModel;

const PARAM_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurvePoint {
    /// Training-set size.
    pub v: f64,
    /// Measured test error in (0, 1).
    pub err: f64,
}

impl ErrorCurvePoint {
    pub fn new(v: f64, err: f64) -> Result<Self> {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "sample count must be > 0, got {v}"
            )));
        }
        if !(err > 0.0 && err < 1.0) {
            return Err(Error::InvalidInput(format!(
                "error must lie in (0, 1), got {err}"
            )));
        }
        Ok(ErrorCurvePoint { v, err })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub a: f64,
    pub b: f64,
    pub residual_sse: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Stop once the max-norm of the gradient of ½·SSE falls below this, or
    /// once the Gauss-Newton step no longer changes the parameters in
    /// floating point.
    pub grad_tol: f64,
    pub max_iterations: usize,
    /// Also try eight jittered exponents and keep the best fit.
    pub multi_start: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            grad_tol: 1e-10,
            max_iterations: 500,
            multi_start: false,
        }
    }
}

fn sse(points: &[ErrorCurvePoint], a: f64, b: f64) -> f64 {
    points
        .iter()
        .map(|p| (a * p.v.powf(-b) - p.err).powi(2))
        .sum()
}

/// Optimal scale for a fixed exponent; the residual is linear in `a`.
fn best_scale(points: &[ErrorCurvePoint], b: f64) -> f64 {
    let (num, den) = points.iter().fold((0.0, 0.0), |(n, d), p| {
        let w = p.v.powf(-b);
        (n + p.err * w, d + w * w)
    });
    (num / den).max(PARAM_FLOOR)
}

fn check_points(points: &[ErrorCurvePoint]) -> Result<()> {
    for p in points {
        ErrorCurvePoint::new(p.v, p.err)?;
    }
    let mut vs: Vec<f64> = points.iter().map(|p| p.v).collect();
    vs.sort_by(f64::total_cmp);
    vs.dedup();
    if vs.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "curve fit needs at least 2 points with distinct sample counts, got {}",
            vs.len()
        )));
    }
    Ok(())
}

/// Reads `v,err` rows (header required). Errors name the offending line.
pub fn read_points_csv<R: std::io::Read>(input: R) -> Result<Vec<ErrorCurvePoint>> {
    #[derive(Deserialize)]
    struct Row {
        v: f64,
        err: f64,
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| Error::InvalidInput(format!("line 1: {e}")))?
        .clone();
    let mut points = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e
                .position()
                .map_or(String::new(), |p| format!("line {}: ", p.line()));
            Error::InvalidInput(format!("{line}{e}"))
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: Row = record
            .deserialize(Some(&headers))
            .map_err(|e| Error::InvalidInput(format!("line {line}: {e}")))?;
        points.push(
            ErrorCurvePoint::new(row.v, row.err)
                .map_err(|e| Error::InvalidInput(format!("line {line}: {e}")))?,
        );
    }
    if points.is_empty() {
        return Err(Error::InvalidInput("no data points".into()));
    }
    Ok(points)
}

/// Starting point from the straight-line fit of `ln err` against `ln v`.
pub fn log_linear_guess(points: &[ErrorCurvePoint]) -> Result<(f64, f64)> {
    check_points(points)?;
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.v.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.err.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    // a rising curve has no decreasing power-law fit; start from a shallow one
    let mut b = (-slope).max(1e-3);
    if mx > 0.0 {
        // keep exp(my + b·mx) representable
        b = b.min((700.0 - my) / mx);
    }
    let a = (my + b * mx).exp();
    Ok((a, b))
}

pub fn fit_power_law(points: &[ErrorCurvePoint], config: &FitConfig) -> Result<FitResult> {
    let (a0, b0) = log_linear_guess(points)?;
    if !config.multi_start {
        return gauss_newton(points, a0, b0, config);
    }
    let mut best: Option<FitResult> = None;
    let mut last_err = None;
    for f in [1.0, 0.5, 0.75, 1.25, 1.5, 2.0, 0.35, 3.0] {
        let b = b0 * f;
        match gauss_newton(points, best_scale(points, b), b, config) {
            Ok(fit) => {
                if best.is_none_or(|x| fit.residual_sse < x.residual_sse) {
                    best = Some(fit);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.expect("at least one start ran"))
}

fn gauss_newton(
    points: &[ErrorCurvePoint],
    a0: f64,
    b0: f64,
    config: &FitConfig,
) -> Result<FitResult> {
    let (mut a, mut b) = (a0.max(PARAM_FLOOR), b0.max(PARAM_FLOOR));
    let mut f = sse(points, a, b);
    let mut grad_norm = f64::INFINITY;
    for iter in 0..config.max_iterations {
        // J columns: ∂r/∂a = v^-b, ∂r/∂b = -a·v^-b·ln v
        let (mut jtj, mut g) = ([0.0; 3], [0.0; 2]);
        for p in points {
            let w = p.v.powf(-b);
            let r = a * w - p.err;
            let ja = w;
            let jb = -a * w * p.v.ln();
            g[0] += ja * r;
            g[1] += jb * r;
            jtj[0] += ja * ja;
            jtj[1] += ja * jb;
            jtj[2] += jb * jb;
        }
        grad_norm = g[0].abs().max(g[1].abs());
        if grad_norm <= config.grad_tol {
            return Ok(FitResult {
                a,
                b,
                residual_sse: f,
                iterations: iter,
            });
        }
        let ridge = 1e-12 * (jtj[0] + jtj[2]);
        let (h00, h01, h11) = (jtj[0] + ridge, jtj[1], jtj[2] + ridge);
        let det = h00 * h11 - h01 * h01;
        let (mut da, mut db) = (
            (-g[0] * h11 + g[1] * h01) / det,
            (g[0] * h01 - g[1] * h00) / det,
        );
        if da.abs() <= 1e-14 * a && db.abs() <= 1e-14 * b {
            return Ok(FitResult {
                a,
                b,
                residual_sse: f,
                iterations: iter,
            });
        }
        if !(da.is_finite() && db.is_finite()) || g[0] * da + g[1] * db >= 0.0 {
            // fall back to steepest descent
            da = -g[0];
            db = -g[1];
        }
        let slope = 2.0 * (g[0] * da + g[1] * db);
        let mut step = 1.0;
        let mut moved = false;
        while step > 1e-20 {
            let na = (a + step * da).max(PARAM_FLOOR);
            let nb = (b + step * db).max(PARAM_FLOOR);
            let nf = sse(points, na, nb);
            if nf <= f + 1e-4 * step * slope {
                moved = (na, nb) != (a, b);
                a = na;
                b = nb;
                f = nf;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            // no decrease representable in floating point: numerically stationary
            if -slope <= 1e-14 * f.max(f64::MIN_POSITIVE) {
                return Ok(FitResult {
                    a,
                    b,
                    residual_sse: f,
                    iterations: iter,
                });
            }
            break;
        }
    }
    Err(Error::Convergence {
        what: "power-law fit".into(),
        iterations: config.max_iterations,
        residual: grad_norm,
        best: vec![a, b, f],
    })
}

/// Copy of `task` with `a` and `b` redrawn independently and uniformly
/// within `±fraction` of their values.
pub fn perturb_parameters<R: Rng + ?Sized>(
    task: &LearningErrorModel,
    fraction: f64,
    rng: &mut R,
) -> LearningErrorModel {
    assert!(
        (0.0..1.0).contains(&fraction),
        "perturbation fraction must lie in [0, 1), got {fraction}"
    );
    let mut out = task.clone();
    if fraction > 0.0 {
        out.a = rng.random_range(task.a * (1.0 - fraction)..=task.a * (1.0 + fraction));
        out.b = rng.random_range(task.b * (1.0 - fraction)..=task.b * (1.0 + fraction));
    }
    out
}
