//! The closed-form maximizer of the step-size function against a nested
//! log-grid search, and the verdicts at the edge of the admissible region.

use rand::Rng;
use rpd_core::linalg::{BlockOperatorMatrix, DiagonalMetric, LinearBlock};
use rpd_core::operators::{MonotoneOp, ProxFn, SmoothFn};
use rpd_core::pd_engine::{
    alpha_hat, check_alg1, check_alg2, theta_alpha, DualBlock, PdProblem, PrimalBlock, NORM_TOL,
};

use crate::common::{rng, Outcome};

const TRIPLES: usize = 100;
const TOL: f64 = 1e-8;

/// Maximizes `alpha -> theta_alpha` on a log grid, then three more times on finer
/// grids around the best point.
fn grid_max(norm: f64, mu: f64, nu: f64) -> f64 {
    let eval = |log_a: f64| theta_alpha(norm, mu, nu, 10f64.powf(log_a)).unwrap();
    let (mut lo, mut hi) = (-8.0, 8.0);
    let mut best = f64::NEG_INFINITY;
    for _ in 0..4 {
        let points = 4000;
        let step = (hi - lo) / points as f64;
        let (i, value) = (0..=points)
            .map(|i| (i, eval(lo + i as f64 * step)))
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        best = best.max(value);
        let centre = lo + i as f64 * step;
        (lo, hi) = (centre - step, centre + step);
    }
    best
}

fn problem(w: f64, u: f64, primal_operator: bool) -> PdProblem {
    let f = if primal_operator { ProxFn::l1(2, 0.1).unwrap() } else { ProxFn::zero(2) };
    PdProblem::new(
        vec![PrimalBlock::new(
            MonotoneOp::Subdifferential(f),
            SmoothFn::least_squares(LinearBlock::identity(2), vec![0.0; 2], 1.0).unwrap(),
        )],
        vec![DualBlock::new(MonotoneOp::zero(2), SmoothFn::zero(2))],
        BlockOperatorMatrix::new(vec![2], vec![2], [(0, 0, LinearBlock::identity(2))]).unwrap(),
        DiagonalMetric::scalar(&[2], w).unwrap(),
        DiagonalMetric::scalar(&[2], u).unwrap(),
    )
    .unwrap()
}

fn boundary_cases() -> Result<usize, String> {
    let mut cases = 0;
    let mut expect_fail = |label: &str, passed: bool| {
        cases += 1;
        if passed {
            Err(format!("{label} passed"))
        } else {
            Ok(())
        }
    };
    for norm in [1.0, 1.5] {
        expect_fail(&format!("theta_alpha at norm {norm}"), theta_alpha(norm, 2.0, 2.0, 1.0).is_some_and(|t| t > 0.5))?;
    }
    expect_fail("theta_alpha at mu = 1/2, norm 0", theta_alpha(0.0, 0.5, 10.0, 1.0).is_some_and(|t| t > 0.5))?;
    // W = I, U = I, L = I: the scaled norm is exactly 1
    for u in [1.0, 2.25] {
        let r = check_alg1(&problem(1.0, u, true), None, NORM_TOL).map_err(|e| e.to_string())?;
        expect_fail(&format!("primal-dual check at norm {:.3}", r.norm), r.passed)?;
        let r = check_alg2(&problem(1.0, u, false), NORM_TOL).map_err(|e| e.to_string())?;
        expect_fail(&format!("no-primal-operator check at norm {:.3}", r.norm), r.passed)?;
    }
    // Lip(grad h) = 1 and W = 2 I give mu = 1/2
    let r = check_alg1(&problem(2.0, 1e-3, true), None, NORM_TOL).map_err(|e| e.to_string())?;
    if r.mu != 0.5 {
        return Err(format!("expected mu = 1/2, got {}", r.mu));
    }
    expect_fail("primal-dual check at mu = 1/2", r.passed)?;
    let r = check_alg2(&problem(2.0, 1e-3, false), NORM_TOL).map_err(|e| e.to_string())?;
    expect_fail("no-primal-operator check at mu = 1/2", r.passed)?;
    // just inside the region the same problems pass
    let inside = check_alg1(&problem(1.9, 1e-3, true), None, NORM_TOL).map_err(|e| e.to_string())?;
    if !inside.passed {
        return Err(format!("control case mu = {} failed", inside.mu));
    }
    Ok(cases)
}

pub fn run() -> Outcome {
    let mut r = rng(0xc0de);
    let mut worst = 0.0_f64;
    for _ in 0..TRIPLES {
        let mu = 10f64.powf(r.random_range(-1.0..1.5));
        let nu = 10f64.powf(r.random_range(-1.0..1.5));
        let norm = r.random_range(0.01..0.99);
        let a = alpha_hat(norm, mu, nu).ok_or("no maximizer")?;
        let closed = theta_alpha(norm, mu, nu, a).unwrap();
        let searched = grid_max(norm, mu, nu);
        let dev = (closed - searched).abs();
        if !(dev <= TOL) || searched > closed * (1.0 + 1e-12) {
            return Err(format!("mu {mu}, nu {nu}, norm {norm}: closed form {closed}, grid {searched}"));
        }
        worst = worst.max(dev);
    }
    let cases = boundary_cases()?;
    Ok(format!("{TRIPLES} triples, worst deviation {worst:.1e}; {cases} boundary cases fail as expected"))
}
