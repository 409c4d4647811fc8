//! Reference solutions with certificates.
//!
//! Every solution is checked by evaluating the optimality conditions of the
//! problem directly at the returned point; the check does not reuse any part
//! of the solver that produced it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;
use crate::spec::{Family, ProblemSpec};
use crate::zoo::{box_data, lasso_data, ridge_data, tv_signal, LsData};

/// Iterative solvers stop once the certificate falls below this.
pub const REFERENCE_TOL: f64 = 1e-10;
/// Largest certificate accepted for a reference solution.
pub const CERTIFY_TOL: f64 = 1e-9;
pub const REFERENCE_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    ProximalGradient,
    DualProjectedGradient,
    UserProvided,
    /// Final iterate of a stored run.
    Record,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<f64>>,
    pub objective: f64,
    pub method: Method,
    /// Optimality residual at `x`; absent for user-provided solutions.
    pub residual: Option<f64>,
}

fn soft(a: f64, t: f64) -> f64 {
    a.signum() * (a.abs() - t).max(0.0)
}

fn ls_gradient(d: &LsData, x: &DVector<f64>) -> DVector<f64> {
    d.a.tr_mul(&(&d.a * x - &d.b))
}

fn ls_value(d: &LsData, x: &DVector<f64>) -> f64 {
    0.5 * (&d.a * x - &d.b).norm_squared()
}

/// Largest eigenvalue of `A^T A`.
fn ls_lipschitz(d: &LsData) -> f64 {
    d.a.tr_mul(&d.a).symmetric_eigenvalues().max()
}

/// Distance from `-grad h(x)` to `tau * sign(x)`, coordinatewise, in the
/// max norm.
pub fn lasso_residual(d: &LsData, tau: f64, x: &[f64]) -> f64 {
    let g = ls_gradient(d, &DVector::from_column_slice(x));
    x.iter()
        .zip(g.iter())
        .map(|(&xi, &gi)| if xi != 0.0 { (gi + tau * xi.signum()).abs() } else { (gi.abs() - tau).max(0.0) })
        .fold(0.0, f64::max)
}

/// Violation of the normal-cone condition of the box, in the max norm.
pub fn box_residual(d: &LsData, lo: f64, hi: f64, x: &[f64]) -> f64 {
    let g = ls_gradient(d, &DVector::from_column_slice(x));
    x.iter()
        .zip(g.iter())
        .map(|(&xi, &gi)| {
            if xi < lo || xi > hi {
                f64::INFINITY
            } else if lo == hi {
                0.0
            } else if xi == lo {
                (-gi).max(0.0)
            } else if xi == hi {
                gi.max(0.0)
            } else {
                gi.abs()
            }
        })
        .fold(0.0, f64::max)
}

/// The unique `z` with `x - y + D^T z = 0` on the first `n - 1`
/// coordinates, with `D` the first difference.
fn tv_dual(y: &[f64], x: &[f64]) -> Vec<f64> {
    let mut z = Vec::with_capacity(y.len() - 1);
    let mut prev = 0.0;
    for k in 0..y.len() - 1 {
        prev += x[k] - y[k];
        z.push(prev);
    }
    z
}

/// Residual of `0 in x - y + D^T (weight d|.|_1)(D x)`: the last equation
/// and the subgradient constraints on the recovered `z`.
pub fn tv_residual(y: &[f64], weight: f64, x: &[f64]) -> f64 {
    let n = y.len();
    let z = tv_dual(y, x);
    let mut worst = (x[n - 1] - y[n - 1] + z[n - 2]).abs();
    for i in 0..n - 1 {
        let dx = x[i + 1] - x[i];
        let r = if dx != 0.0 { (z[i] - weight * dx.signum()).abs() } else { (z[i].abs() - weight).max(0.0) };
        worst = worst.max(r);
    }
    worst
}

/// `|| sum_i A_i^T (A_i x - b_i) + reg x ||_inf`
pub fn ridge_residual(blocks: &[LsData], reg: f64, x: &[f64]) -> f64 {
    let x = DVector::from_column_slice(x);
    let g = blocks.iter().fold(reg * &x, |acc, d| acc + ls_gradient(d, &x));
    g.amax()
}

/// Proximal gradient with Nesterov momentum and gradient restart, stopped
/// when `certificate` drops below [`REFERENCE_TOL`].
fn accelerated(
    x0: DVector<f64>,
    step: f64,
    grad: impl Fn(&DVector<f64>) -> DVector<f64>,
    prox: impl Fn(DVector<f64>) -> DVector<f64>,
    certificate: impl Fn(&DVector<f64>) -> f64,
) -> Result<DVector<f64>, HarnessError> {
    let (mut x, mut y, mut t) = (x0.clone(), x0, 1.0f64);
    for k in 0..REFERENCE_CAP {
        let next = prox(&y - step * grad(&y));
        if k % 10 == 0 && certificate(&next) < REFERENCE_TOL {
            return Ok(next);
        }
        if (&y - &next).dot(&(&next - &x)) > 0.0 {
            t = 1.0;
            y = next.clone();
        } else {
            let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &next + (&next - &x) * ((t - 1.0) / tn);
            t = tn;
        }
        x = next;
    }
    Err(HarnessError::ReferenceUnavailable(format!(
        "no certificate below {REFERENCE_TOL:e} in {REFERENCE_CAP} iterations"
    )))
}

/// Piecewise-constant point whose jumps sit where `z` is clipped; exact
/// on the jump set of the solution.
fn tv_polish(y: &[f64], weight: f64, z: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut x = vec![0.0; n];
    let mut start = 0;
    for e in 0..n {
        if e + 1 < n && z[e].abs() != weight {
            continue;
        }
        let left = if start > 0 { z[start - 1] } else { 0.0 };
        let right = if e + 1 < n { z[e] } else { 0.0 };
        let c = (y[start..=e].iter().sum::<f64>() - left + right) / (e + 1 - start) as f64;
        x[start..=e].iter_mut().for_each(|a| *a = c);
        start = e + 1;
    }
    x
}

fn solve_tv(y: &[f64], weight: f64) -> Result<(Vec<f64>, Vec<f64>), HarnessError> {
    let n = y.len();
    let yv = DVector::from_column_slice(y);
    let d = DMatrix::from_fn(n - 1, n, |r, c| {
        if c == r + 1 {
            1.0
        } else if c == r {
            -1.0
        } else {
            0.0
        }
    });
    // dual: min over |z| <= weight of 1/2 ||y - D^T z||^2
    let grad = |z: &DVector<f64>| -(&d * (&yv - d.tr_mul(z)));
    let clip = |z: DVector<f64>| z.map(|a| a.clamp(-weight, weight));
    let certificate = |z: &DVector<f64>| tv_residual(y, weight, &tv_polish(y, weight, z.as_slice()));
    let z = accelerated(DVector::zeros(n - 1), 0.25, grad, clip, certificate)?;
    let x = tv_polish(y, weight, z.as_slice());
    let v = tv_dual(y, &x);
    Ok((x, v))
}

fn certified(
    x: Vec<f64>,
    v: Option<Vec<f64>>,
    objective: f64,
    method: Method,
    residual: f64,
) -> Result<ReferenceSolution, HarnessError> {
    if !(residual < CERTIFY_TOL) {
        return Err(HarnessError::ReferenceUnavailable(format!("optimality residual {residual:e}")));
    }
    Ok(ReferenceSolution { x, v, objective, method, residual: Some(residual) })
}

/// Reference solution of a zoo problem, or the user-provided one of a
/// custom problem.
pub fn solve_reference(spec: &ProblemSpec) -> Result<ReferenceSolution, HarnessError> {
    if let Some(r) = &spec.reference {
        return Ok(ReferenceSolution {
            x: r.x.clone(),
            v: None,
            objective: r.objective,
            method: Method::UserProvided,
            residual: None,
        });
    }
    match &spec.problem {
        Family::Lasso { samples, features, tau, data } => {
            let d = lasso_data(*samples, *features, data);
            let step = 1.0 / ls_lipschitz(&d);
            let x = accelerated(
                DVector::zeros(*features),
                step,
                |x| ls_gradient(&d, x),
                |z| z.map(|a| soft(a, tau * step)),
                |x| lasso_residual(&d, *tau, x.as_slice()),
            )?;
            let objective = ls_value(&d, &x) + tau * x.lp_norm(1);
            let residual = lasso_residual(&d, *tau, x.as_slice());
            certified(x.as_slice().to_vec(), Some(vec![0.0; *features]), objective, Method::ProximalGradient, residual)
        }
        Family::BoxLs { samples, features, lo, hi, data } => {
            let d = box_data(*samples, *features, data);
            let step = 1.0 / ls_lipschitz(&d);
            let x = accelerated(
                DVector::zeros(*features).map(|a: f64| a.clamp(*lo, *hi)),
                step,
                |x| ls_gradient(&d, x),
                |z| z.map(|a| a.clamp(*lo, *hi)),
                |x| box_residual(&d, *lo, *hi, x.as_slice()),
            )?;
            let residual = box_residual(&d, *lo, *hi, x.as_slice());
            certified(
                x.as_slice().to_vec(),
                Some(vec![0.0; *features]),
                ls_value(&d, &x),
                Method::ProximalGradient,
                residual,
            )
        }
        Family::Tv1d { len, weight, data } => {
            let y = tv_signal(*len, data);
            let (x, v) = solve_tv(&y, *weight)?;
            let tv: f64 = x.windows(2).map(|p| (p[1] - p[0]).abs()).sum();
            let objective = 0.5 * x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() + weight * tv;
            let residual = tv_residual(&y, *weight, &x);
            certified(x, Some(v), objective, Method::DualProjectedGradient, residual)
        }
        Family::RidgeConsensus { graph, dim, rows, reg, data } => {
            let blocks = ridge_data(graph.agents(), *rows, *dim, data);
            let (h, g) =
                blocks.iter().fold((DMatrix::identity(*dim, *dim) * *reg, DVector::zeros(*dim)), |(h, g), d| {
                    (h + d.a.tr_mul(&d.a), g + d.a.tr_mul(&d.b))
                });
            let x = h
                .cholesky()
                .ok_or_else(|| HarnessError::ReferenceUnavailable("normal equations are singular".into()))?
                .solve(&g);
            let objective = blocks.iter().map(|d| ls_value(d, &x)).sum::<f64>() + 0.5 * reg * x.norm_squared();
            let residual = ridge_residual(&blocks, *reg, x.as_slice());
            certified(x.as_slice().to_vec(), None, objective, Method::ClosedForm, residual)
        }
        Family::CustomPd { .. } | Family::CustomDist { .. } => {
            Err(HarnessError::spec("custom problems need a user-provided reference"))
        }
    }
}
