//! Structural properties every step and oracle must keep.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rpd_core::activation::{ActivationPattern, ActivationSchedule, Algorithm, ClosureRule, ScheduleKind};
use rpd_core::distributed::{
    step_dist1, step_dist2, step_dist_opt, step_dist_pairwise, Agent, DistCondition, DistProblem, DistState, EdgeMode,
    Hypergraph,
};
use rpd_core::fb_engine::{fb_step, CompositeFb, FbInstance};
use rpd_core::linalg::{dot, BlockOperatorMatrix, BlockVector, DiagonalMetric, LinearBlock};
use rpd_core::operators::{MonotoneOp, ProxFn, SmoothFn};
use rpd_core::pd_engine::{step_alg1, step_alg1_sym, step_alg2, DualBlock, PdErrors, PdProblem, PdState, PrimalBlock};

use crate::common::{
    every_prox_fn, positive_vec, random_block, random_dist_state, random_pd_state, random_vec, rich_dist_problem,
    rich_pd_problem, rng, Outcome,
};

const STEPS: usize = 200;

fn bernoulli(rule: ClosureRule, p: f64) -> ActivationSchedule {
    let n = rule.raw_len();
    ActivationSchedule::new(ScheduleKind::IidBernoulli(vec![p; n]), rule).unwrap()
}

fn pd_untouched(prob: &PdProblem, a: &PdState, b: &PdState, pattern: &ActivationPattern) -> bool {
    let p = prob.p();
    (0..p).all(|j| pattern.get(j) || a.x.block(j) == b.x.block(j))
        && (0..prob.q()).all(|k| pattern.get(p + k) || a.v.block(k) == b.v.block(k))
}

fn dist_untouched(prob: &DistProblem, a: &DistState, b: &DistState, pattern: &ActivationPattern) -> bool {
    let m = prob.num_agents();
    (0..m).all(|i| pattern.get(i) || a.x[i] == b.x[i])
        && (0..m).all(|i| pattern.get(m + i) || a.v[i] == b.v[i])
        && (0..prob.num_edges()).all(|l| pattern.get(2 * m + l) || a.edge_v[l] == b.edge_v[l])
}

type PdStep =
    fn(&PdProblem, &PdState, &ActivationPattern, f64, PdErrors) -> Result<PdState, rpd_core::pd_engine::PdError>;
type DistStep = fn(
    &DistProblem,
    &DistState,
    &ActivationPattern,
    f64,
    PdErrors,
) -> Result<DistState, rpd_core::distributed::DistError>;

fn dist1_general(
    prob: &DistProblem,
    s: &DistState,
    p: &ActivationPattern,
    lambda: f64,
    e: PdErrors,
) -> Result<DistState, rpd_core::distributed::DistError> {
    step_dist1(prob, s, p, lambda, e, EdgeMode::General)
}

/// Pairwise problem accepted by every distributed step: `l1` prox terms,
/// least-squares gradients, no dual terms.
fn pairwise_problem(seed: u64) -> DistProblem {
    let mut r = rng(seed);
    let d = 3;
    let agents = (0..5)
        .map(|_| {
            let h =
                SmoothFn::least_squares(random_block(&mut r, d + 2, d), random_vec(&mut r, d + 2, 1.0), 1.0).unwrap();
            let w = 0.9 / h.lipschitz();
            Agent {
                primal: PrimalBlock::new(MonotoneOp::Subdifferential(ProxFn::l1(d, 0.05).unwrap()), h),
                dual: DualBlock::new(MonotoneOp::zero(d), SmoothFn::zero(d)),
                coupling: LinearBlock::identity(d),
                primal_metric: vec![w; d],
                dual_metric: vec![1e-4; d],
            }
        })
        .collect();
    DistProblem::with_default_theta(Hypergraph::ring(5).unwrap(), d, agents, DistCondition::PrimalDual).unwrap()
}

fn immutability() -> Result<usize, String> {
    let mut checks = 0;
    let pd_cases: [(PdStep, Algorithm, bool); 3] = [
        (step_alg1, Algorithm::PrimalDual, true),
        (step_alg1_sym, Algorithm::PrimalDualSymmetric, true),
        (step_alg2, Algorithm::PrimalDualNoPrimalOperator, false),
    ];
    for (step, algorithm, primal_operators) in pd_cases {
        let prob = rich_pd_problem(11, primal_operators);
        let sched = bernoulli(prob.closure_rule(algorithm), 0.4);
        let mut r = rng(12);
        let mut s = random_pd_state(&prob, 13);
        for _ in 0..STEPS {
            let p = sched.sample(&mut r).unwrap();
            let next = step(&prob, &s, &p, 0.9, PdErrors::default()).map_err(|e| e.to_string())?;
            if !pd_untouched(&prob, &s, &next, &p) {
                return Err(format!("{algorithm:?}: an inactive block moved"));
            }
            s = next;
            checks += 1;
        }
    }
    let ring = || Hypergraph::new(5, vec![vec![0, 1, 2], vec![2, 3], vec![3, 4, 0]]).unwrap();
    let dist_cases: [(&str, DistStep, DistProblem, bool, bool); 4] = [
        ("dist1", dist1_general, rich_dist_problem(21, ring(), 2, true), false, false),
        ("dist2", step_dist2, rich_dist_problem(22, ring(), 2, false), false, false),
        ("dist_opt", step_dist_opt, rich_dist_problem(23, ring(), 2, true), true, false),
        ("pairwise", step_dist_pairwise, pairwise_problem(24), true, true),
    ];
    for (name, step, prob, sum_zero, tied) in dist_cases {
        let sched = bernoulli(prob.graph().closure_rule(tied), 0.3);
        let mut r = rng(25);
        let mut s = if tied { DistState::zeros(&prob) } else { random_dist_state(&prob, 26, sum_zero) };
        if tied {
            s.x = (0..prob.num_agents()).map(|_| random_vec(&mut r, prob.dim(), 1.0)).collect();
        }
        for _ in 0..STEPS {
            let p = sched.sample(&mut r).unwrap();
            let next = step(&prob, &s, &p, 0.9, PdErrors::default()).map_err(|e| format!("{name}: {e}"))?;
            if !dist_untouched(&prob, &s, &next, &p) {
                return Err(format!("{name}: an inactive block moved"));
            }
            s = next;
            checks += 1;
        }
    }
    let mut r = rng(31);
    let prox = vec![ProxFn::l1(3, 0.2).unwrap(), ProxFn::zero(2), ProxFn::boxed(vec![-1.0; 2], vec![1.0; 2]).unwrap()];
    let dims: Vec<usize> = prox.iter().map(ProxFn::dim).collect();
    let center = BlockVector::new(dims.iter().map(|&d| random_vec(&mut r, d, 1.0)).collect()).unwrap();
    let fb = CompositeFb {
        prox,
        gradient: Box::new(move |z: &BlockVector| {
            BlockVector::new(
                z.blocks()
                    .iter()
                    .zip(center.blocks())
                    .map(|(a, c)| a.iter().zip(c).map(|(x, y)| x - y).collect())
                    .collect(),
            )
            .unwrap()
        }),
        metric: DiagonalMetric::new(dims.iter().map(|&d| positive_vec(&mut r, d, 0.5, 1.0)).collect()).unwrap(),
    };
    let inst = FbInstance::new(fb, 0.5, 0.9, 1.0).map_err(|e| e.to_string())?;
    let sched = bernoulli(ClosureRule::None { n: dims.len() }, 0.4);
    let mut z = BlockVector::new(dims.iter().map(|&d| random_vec(&mut r, d, 2.0)).collect()).unwrap();
    for _ in 0..STEPS {
        let p = sched.sample(&mut r).unwrap();
        let next = fb_step(&inst, &z, &p, None, None).map_err(|e| e.to_string())?;
        if (0..dims.len()).any(|i| !p.get(i) && next.block(i) != z.block(i)) {
            return Err("forward-backward: an inactive block moved".into());
        }
        z = next;
        checks += 1;
    }
    Ok(checks)
}

/// `sum_j v_{l,j}` shrinks by `1 - lambda` on active edges and stays put on
/// inactive ones.
fn sum_zero_recursion() -> Result<f64, String> {
    let prob = rich_dist_problem(41, Hypergraph::new(4, vec![vec![0, 1, 2], vec![1, 3], vec![2, 3]]).unwrap(), 2, true);
    let sched = bernoulli(prob.graph().closure_rule(false), 0.5);
    let mut r = rng(42);
    let mut s = random_dist_state(&prob, 43, false);
    let (m, d, lambda) = (prob.num_agents(), prob.dim(), 0.7);
    let sums = |s: &DistState, l: usize| -> Vec<f64> {
        let v = &s.edge_v[l];
        (0..d).map(|c| (0..v.len() / d).map(|j| v[j * d + c]).sum()).collect()
    };
    let mut worst = 0.0_f64;
    for n in 0..STEPS {
        let p = sched.sample(&mut r).unwrap();
        let next =
            step_dist1(&prob, &s, &p, lambda, PdErrors::default(), EdgeMode::General).map_err(|e| e.to_string())?;
        for l in 0..prob.num_edges() {
            let factor = if p.get(2 * m + l) { 1.0 - lambda } else { 1.0 };
            for (a, b) in sums(&next, l).iter().zip(sums(&s, l)) {
                let dev = (a - factor * b).abs();
                if !(dev <= 1e-12) {
                    return Err(format!("iteration {n}, edge {l}: deviation {dev:e}"));
                }
                worst = worst.max(dev);
            }
        }
        s = next;
    }
    Ok(worst)
}

fn antisymmetry() -> Result<usize, String> {
    let prob = pairwise_problem(51);
    let sched = bernoulli(prob.graph().closure_rule(true), 0.4);
    let mut r = rng(52);
    let mut s =
        DistState::new(&prob, (0..prob.num_agents()).map(|_| random_vec(&mut r, prob.dim(), 1.0)).collect()).unwrap();
    let d = prob.dim();
    for v in s.edge_v.iter_mut() {
        for c in 0..d {
            v[c] = r.random_range(-1.0..1.0);
            v[d + c] = -v[c];
        }
    }
    for n in 0..STEPS {
        let p = sched.sample(&mut r).unwrap();
        s = step_dist_pairwise(&prob, &s, &p, 0.9, PdErrors::default()).map_err(|e| e.to_string())?;
        if s.edge_v.iter().any(|v| (0..d).any(|c| v[d + c] != -v[c])) {
            return Err(format!("iteration {n}: edge duals lost antisymmetry"));
        }
    }
    Ok(STEPS)
}

/// `|Jx - Jy|^2 <= <Jx - Jy, x - y>` in the norm weighted by `1 / w`.
fn firm_gap(w: &[f64], x: &[f64], y: &[f64], jx: &[f64], jy: &[f64]) -> f64 {
    let (mut lhs, mut rhs, mut scale) = (0.0, 0.0, 0.0);
    for c in 0..x.len() {
        let (dj, dx) = (jx[c] - jy[c], x[c] - y[c]);
        lhs += dj * dj / w[c];
        rhs += dj * dx / w[c];
        scale += dx * dx / w[c];
    }
    (lhs - rhs) / scale.max(1.0)
}

fn firm_nonexpansiveness() -> Result<(usize, f64), String> {
    let mut r = rng(61);
    let dim = 6;
    let shrink: Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync> =
        Arc::new(|g: f64, x: &[f64]| x.iter().map(|a| a / (1.0 + 2.0 * g)).collect());
    let mut ops: Vec<MonotoneOp> = every_prox_fn(&mut r, dim).into_iter().map(MonotoneOp::Subdifferential).collect();
    ops.push(MonotoneOp::ConsensusNormal { copies: 3, dim: 2 });
    ops.push(MonotoneOp::Explicit { dim, resolvent: shrink });
    let (mut checks, mut worst) = (0, f64::NEG_INFINITY);
    for op in &ops {
        let scalar_only = matches!(op, MonotoneOp::Explicit { .. });
        for _ in 0..50 {
            let w = if scalar_only { vec![r.random_range(0.1..5.0); dim] } else { metric(&mut r, dim) };
            let (x, y) = (random_vec(&mut r, dim, 5.0), random_vec(&mut r, dim, 5.0));
            let (jx, jy) = (op.resolvent(&w, &x).unwrap(), op.resolvent(&w, &y).unwrap());
            let (ix, iy) = (op.resolvent_inverse(&w, &x).unwrap(), op.resolvent_inverse(&w, &y).unwrap());
            for gap in [firm_gap(&w, &x, &y, &jx, &jy), firm_gap(&w, &x, &y, &ix, &iy)] {
                if !(gap <= 1e-10) {
                    return Err(format!("{op:?}: violation {gap:e}"));
                }
                worst = worst.max(gap);
                checks += 1;
            }
        }
    }
    Ok((checks, worst))
}

fn metric(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| 10f64.powf(r.random_range(-1.5..1.5))).collect()
}

fn gradients() -> Result<f64, String> {
    let mut r = rng(71);
    let mut worst = 0.0_f64;
    for _ in 0..50 {
        let (rows, dim) = (r.random_range(1..6), r.random_range(1..6));
        let f = SmoothFn::least_squares(
            random_block(&mut r, rows, dim),
            random_vec(&mut r, rows, 2.0),
            r.random_range(0.1..3.0),
        )
        .unwrap()
        .with_linear(random_vec(&mut r, dim, 1.0))
        .unwrap();
        let x = random_vec(&mut r, dim, 2.0);
        let g = f.gradient(&x).unwrap();
        let h = 1e-5;
        for c in 0..dim {
            let mut up = x.clone();
            up[c] += h;
            let mut down = x.clone();
            down[c] -= h;
            let fd = (f.value(&up).unwrap() - f.value(&down).unwrap()) / (2.0 * h);
            let rel = (fd - g[c]).abs() / g[c].abs().max(1.0);
            if !(rel <= 1e-5) {
                return Err(format!("coordinate {c}: gradient {} vs difference {fd}", g[c]));
            }
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

fn adjoints() -> Result<f64, String> {
    let mut r = rng(81);
    let mut worst = 0.0_f64;
    let mut check = |l: &BlockOperatorMatrix, r: &mut ChaCha8Rng| -> Result<(), String> {
        let x = BlockVector::new(l.col_dims().iter().map(|&d| random_vec(r, d, 1.0)).collect()).unwrap();
        let v = BlockVector::new(l.row_dims().iter().map(|&d| random_vec(r, d, 1.0)).collect()).unwrap();
        let lhs = dot(&l.apply(&x).unwrap().flatten(), &v.flatten());
        let rhs = dot(&x.flatten(), &l.adjoint_apply(&v).unwrap().flatten());
        let rel = (lhs - rhs).abs() / lhs.abs().max(1.0);
        if !(rel <= 1e-12) {
            return Err(format!("<Lx, v> = {lhs}, <x, L*v> = {rhs}"));
        }
        worst = worst.max(rel);
        Ok(())
    };
    for _ in 0..50 {
        let rows: Vec<usize> = (0..r.random_range(1..4)).map(|_| r.random_range(1..5)).collect();
        let cols: Vec<usize> = (0..r.random_range(1..4)).map(|_| r.random_range(1..5)).collect();
        let mut entries: Vec<(usize, usize, LinearBlock)> = Vec::new();
        for (k, &rk) in rows.iter().enumerate() {
            for (j, &cj) in cols.iter().enumerate() {
                if k == j % rows.len() || r.random_bool(0.5) {
                    entries.push((k, j, random_block(&mut r, rk, cj)));
                }
            }
        }
        // every row needs a block
        for k in cols.len()..rows.len() {
            if !entries.iter().any(|e| e.0 == k) {
                entries.push((k, 0, random_block(&mut r, rows[k], cols[0])));
            }
        }
        let l = BlockOperatorMatrix::new(rows, cols, entries).map_err(|e| e.to_string())?;
        check(&l, &mut r)?;
    }
    let difference = BlockOperatorMatrix::new(vec![9], vec![10], [(0, 0, LinearBlock::first_difference(10))]).unwrap();
    check(&difference, &mut r)?;
    let lifted = rich_dist_problem(82, Hypergraph::ring(4).unwrap(), 3, true).lift().map_err(|e| e.to_string())?;
    check(lifted.operator(), &mut r)?;
    Ok(worst)
}

pub fn run() -> Outcome {
    let steps = immutability()?;
    let sums = sum_zero_recursion().map_err(|e| format!("sum-zero recursion: {e}"))?;
    let pairs = antisymmetry()?;
    let (firm, firm_worst) = firm_nonexpansiveness()?;
    let grad = gradients()?;
    let adj = adjoints()?;
    Ok(format!(
        "immutability over {steps} steps; edge sums within {sums:.1e}; antisymmetry over {pairs} steps; \
         {firm} firm-nonexpansive pairs (worst {firm_worst:.1e}); gradients within {grad:.1e}; adjoints within {adj:.1e}"
    ))
}
