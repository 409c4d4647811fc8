//! The primal-first step with full activation against a dense transcription
//! of the iteration for one primal and one dual block:
//!
//! ```text
//! y = prox_f^{W^{-1}}(x - W (L^T v + grad h(x)))
//! x <- x + lambda (y - x)
//! u = prox_{g*}^{U^{-1}}(v + U L (2y - x))
//! v <- v + lambda (u - v)
//! ```

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rpd_core::activation::ActivationPattern;
use rpd_core::pd_engine::{step_alg1, PdErrors, PdProblem, PdState};
use rpd_harness::spec::{AlgorithmId, DataSource, ErrorSpec, Family, LsInline, ScheduleSpec, StopSpec, SPEC_VERSION};
use rpd_harness::{build_problem, Instance, ProblemSpec};

use crate::common::{rng, Outcome};

const LAMBDA: f64 = 0.9;
const ITERS: usize = 500;
const TOL: f64 = 1e-12;

struct Dense {
    a: DMatrix<f64>,
    b: DVector<f64>,
    l: DMatrix<f64>,
    /// Prox of `f` with step `w`.
    prox_f: Box<dyn Fn(&DVector<f64>, f64) -> DVector<f64>>,
    /// Prox of `g*` with step `u`.
    prox_g_conj: Box<dyn Fn(&DVector<f64>, f64) -> DVector<f64>>,
}

fn spec(problem: Family) -> ProblemSpec {
    ProblemSpec {
        version: SPEC_VERSION,
        problem,
        algorithm: AlgorithmId::PrimalFirst,
        schedule: ScheduleSpec::Full,
        errors: ErrorSpec::None,
        lambda: LAMBDA,
        stop: StopSpec { max_iters: ITERS, tol: 0.0, window: 10 },
        seed: 0,
        force: false,
        alpha: None,
        metrics: None,
        reference: None,
    }
}

fn problem(spec: &ProblemSpec) -> PdProblem {
    match build_problem(spec).unwrap() {
        Instance::Pd { problem, .. } => problem,
        Instance::Dist { .. } => unreachable!(),
    }
}

fn lasso() -> (PdProblem, Dense) {
    let mut r = rng(0x1a55);
    let (samples, features, tau) = (30, 12, 0.15);
    let a = DMatrix::from_fn(samples, features, |_, _| r.sample::<f64, _>(StandardNormal) / (samples as f64).sqrt());
    let b = DVector::from_fn(samples, |_, _| r.sample::<f64, _>(StandardNormal));
    let inline =
        LsInline { a: a.row_iter().map(|row| row.iter().copied().collect()).collect(), b: b.iter().copied().collect() };
    let prob = problem(&spec(Family::Lasso { samples, features, tau, data: DataSource::Inline(inline) }));
    let dense = Dense {
        a,
        b,
        l: DMatrix::identity(features, features),
        prox_f: Box::new(move |z, w| z.map(|t| t.signum() * (t.abs() - w * tau).max(0.0))),
        // g = 0, so g* is the indicator of the origin
        prox_g_conj: Box::new(|z, _| DVector::zeros(z.len())),
    };
    (prob, dense)
}

fn tv() -> (PdProblem, Dense) {
    let mut r = rng(0x7f01);
    let (len, weight) = (40, 0.4);
    let signal: Vec<f64> =
        (0..len).map(|i| if i < len / 2 { 1.0 } else { -0.5 } + 0.3 * r.random_range(-1.0..1.0)).collect();
    let prob = problem(&spec(Family::Tv1d { len, weight, data: DataSource::Inline(signal.clone()) }));
    let mut d = DMatrix::zeros(len - 1, len);
    for i in 0..len - 1 {
        d[(i, i)] = -1.0;
        d[(i, i + 1)] = 1.0;
    }
    let dense = Dense {
        a: DMatrix::identity(len, len),
        b: DVector::from_vec(signal),
        l: d,
        prox_f: Box::new(|z, _| z.clone()),
        // g = weight |.|_1, so g* is the indicator of [-weight, weight]
        prox_g_conj: Box::new(move |z, _| z.map(|t| t.clamp(-weight, weight))),
    };
    (prob, dense)
}

fn dense_step(p: &Dense, w: f64, u: f64, x: &DVector<f64>, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let grad = p.a.transpose() * (&p.a * x - &p.b);
    let y = (p.prox_f)(&(x - w * (p.l.transpose() * v + grad)), w);
    let x_next = x + LAMBDA * (&y - x);
    let dual = (p.prox_g_conj)(&(v + u * (&p.l * (2.0 * &y - x))), u);
    let v_next = v + LAMBDA * (dual - v);
    (x_next, v_next)
}

fn track(name: &str, prob: &PdProblem, dense: &Dense) -> Result<f64, String> {
    let (w, u) = (prob.primal_metric().block(0)[0], prob.dual_metric().block(0)[0]);
    if prob.primal_metric().block(0).iter().any(|&a| a != w) || prob.dual_metric().block(0).iter().any(|&a| a != u) {
        return Err(format!("{name}: expected scalar metrics"));
    }
    let mut r = rng(0xd00d);
    let (n, m) = (prob.primal_dims()[0], prob.dual_dims()[0]);
    let mut x = DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0));
    let mut v = DVector::from_fn(m, |_, _| r.random_range(-0.3..0.3));
    let mut state = PdState::zeros(prob);
    state.x.block_mut(0).copy_from_slice(x.as_slice());
    state.v.block_mut(0).copy_from_slice(v.as_slice());
    let full = ActivationPattern::full(2);
    let mut worst = 0.0_f64;
    for it in 1..=ITERS {
        state = step_alg1(prob, &state, &full, LAMBDA, PdErrors::default()).map_err(|e| e.to_string())?;
        (x, v) = dense_step(dense, w, u, &x, &v);
        let dev = x
            .iter()
            .zip(state.x.block(0))
            .chain(v.iter().zip(state.v.block(0)))
            .map(|(a, b)| (a - b).abs() / (1.0 + a.abs()))
            .fold(0.0, f64::max);
        if !(dev <= TOL) {
            return Err(format!("{name}: iteration {it} deviates by {dev:e}"));
        }
        worst = worst.max(dev);
    }
    Ok(worst)
}

pub fn run() -> Outcome {
    let (prob, dense) = lasso();
    let lasso_dev = track("lasso", &prob, &dense)?;
    let (prob, dense) = tv();
    let tv_dev = track("tv1d", &prob, &dense)?;
    Ok(format!("{ITERS} iterations, worst deviation lasso {lasso_dev:.1e}, tv1d {tv_dev:.1e}"))
}
