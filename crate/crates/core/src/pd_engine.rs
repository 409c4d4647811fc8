//! Randomized block-coordinate primal-dual splitting for
//!
//! find `x` with `0 in A_j x_j + C_j x_j + sum_k L_kj^* (B_k [] D_k)(sum_j' L_kj' x_j')`
//!
//! and its dual. Three schemes are provided: the primal-first step, the
//! dual-first (symmetric) step, and a step for `A = 0` with a block-diagonal
//! preconditioner. Each comes with its step-size condition.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::activation::{ActivationError, ActivationPattern, ActivationSchedule, Algorithm};
use crate::errors::{ErrorInjector, ErrorKind, InjectorError};
use crate::fb_engine::{StopReason, StopRule};
use crate::linalg::{scaled_norm, scaled_norm_bound, BlockOperatorMatrix, BlockVector, DiagonalMetric, LinalgError};
use crate::operators::{MonotoneOp, OperatorError, SmoothFn};

/// Default relative tolerance of the power iteration behind condition checks.
pub const NORM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PdError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Activation(#[from] ActivationError),
    #[error(transparent)]
    Injector(#[from] InjectorError),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("activation pattern violates the closure rule: {0}")]
    ClosureViolation(String),
    #[error("algorithm does not apply: {0}")]
    Inapplicable(String),
    #[error("schedule rejected: {}", .0.join("; "))]
    Schedule(Vec<String>),
    #[error("step-size condition fails: {}", .0.summary())]
    ConditionFailed(Box<ConditionReport>),
}

/// `A_j` (through its resolvent) and `C_j = grad h_j`.
#[derive(Debug, Clone)]
pub struct PrimalBlock {
    pub operator: MonotoneOp,
    pub gradient: SmoothFn,
    /// Cocoercivity of `C_j`; defaults to `1 / Lip(C_j)`.
    pub cocoercivity: Option<f64>,
}

impl PrimalBlock {
    pub fn new(operator: MonotoneOp, gradient: SmoothFn) -> Self {
        Self { operator, gradient, cocoercivity: None }
    }

    pub fn cocoercivity(&self) -> f64 {
        self.cocoercivity.unwrap_or_else(|| inverse_or_inf(self.gradient.lipschitz()))
    }
}

/// `B_k` (through the resolvent of its inverse) and `D_k^{-1} = grad l_k^*`.
#[derive(Debug, Clone)]
pub struct DualBlock {
    pub operator: MonotoneOp,
    pub inverse_gradient: SmoothFn,
    /// Strong monotonicity of `D_k`; defaults to `1 / Lip(D_k^{-1})`.
    pub strong_monotonicity: Option<f64>,
}

impl DualBlock {
    pub fn new(operator: MonotoneOp, inverse_gradient: SmoothFn) -> Self {
        Self { operator, inverse_gradient, strong_monotonicity: None }
    }

    pub fn strong_monotonicity(&self) -> f64 {
        self.strong_monotonicity.unwrap_or_else(|| inverse_or_inf(self.inverse_gradient.lipschitz()))
    }
}

fn inverse_or_inf(a: f64) -> f64 {
    if a == 0.0 {
        f64::INFINITY
    } else {
        1.0 / a
    }
}

#[derive(Debug, Clone)]
pub struct PdProblem {
    primal: Vec<PrimalBlock>,
    dual: Vec<DualBlock>,
    l: BlockOperatorMatrix,
    w: DiagonalMetric,
    u: DiagonalMetric,
}

impl PdProblem {
    pub fn new(
        primal: Vec<PrimalBlock>,
        dual: Vec<DualBlock>,
        l: BlockOperatorMatrix,
        w: DiagonalMetric,
        u: DiagonalMetric,
    ) -> Result<Self, PdError> {
        let bad = |msg: String| Err(PdError::InvalidProblem(msg));
        if primal.len() != l.num_cols() || dual.len() != l.num_rows() {
            return bad(format!(
                "{} primal and {} dual blocks for a {}x{} block operator",
                primal.len(),
                dual.len(),
                l.num_rows(),
                l.num_cols()
            ));
        }
        if w.dims() != l.col_dims() || u.dims() != l.row_dims() {
            return bad("metric shapes do not match the block operator".into());
        }
        for (j, b) in primal.iter().enumerate() {
            let d = l.col_dims()[j];
            if b.operator.dim() != d || b.gradient.dim() != d {
                return bad(format!("primal block {j} has inconsistent dimensions"));
            }
            if let Some(c) = b.cocoercivity {
                if !(c > 0.0) {
                    return bad(format!("primal block {j}: cocoercivity {c} must be positive"));
                }
            }
        }
        for (k, b) in dual.iter().enumerate() {
            let d = l.row_dims()[k];
            if b.operator.dim() != d || b.inverse_gradient.dim() != d {
                return bad(format!("dual block {k} has inconsistent dimensions"));
            }
            if let Some(c) = b.strong_monotonicity {
                if !(c > 0.0) {
                    return bad(format!("dual block {k}: strong monotonicity {c} must be positive"));
                }
            }
        }
        Ok(Self { primal, dual, l, w, u })
    }

    pub fn p(&self) -> usize {
        self.primal.len()
    }

    pub fn q(&self) -> usize {
        self.dual.len()
    }

    pub fn primal(&self) -> &[PrimalBlock] {
        &self.primal
    }

    pub fn dual(&self) -> &[DualBlock] {
        &self.dual
    }

    pub fn operator(&self) -> &BlockOperatorMatrix {
        &self.l
    }

    pub fn primal_metric(&self) -> &DiagonalMetric {
        &self.w
    }

    pub fn dual_metric(&self) -> &DiagonalMetric {
        &self.u
    }

    pub fn primal_dims(&self) -> &[usize] {
        self.l.col_dims()
    }

    pub fn dual_dims(&self) -> &[usize] {
        self.l.row_dims()
    }

    /// `mu = min_j cocoercivity_j / ||W_j||`.
    pub fn mu(&self) -> f64 {
        self.primal.iter().enumerate().map(|(j, b)| b.cocoercivity() / self.w.max_diag(j)).fold(f64::INFINITY, f64::min)
    }

    /// `nu = min_k strong_monotonicity_k / ||U_k||`.
    pub fn nu(&self) -> f64 {
        self.dual
            .iter()
            .enumerate()
            .map(|(k, b)| b.strong_monotonicity() / self.u.max_diag(k))
            .fold(f64::INFINITY, f64::min)
    }

    /// Every `D_k^{-1}` vanishes, i.e. `B_k [] D_k = B_k`.
    pub fn inverse_gradients_vanish(&self) -> bool {
        self.dual.iter().all(|b| b.inverse_gradient.is_zero())
    }

    pub fn primal_operators_vanish(&self) -> bool {
        self.primal.iter().all(|b| b.operator.is_zero())
    }

    /// `sum_j f_j(x_j) + h_j(x_j) + sum_k g_k(sum_j L_kj x_j)` when every
    /// operator is a subdifferential and every `D_k^{-1}` vanishes.
    pub fn objective(&self, x: &BlockVector) -> Option<f64> {
        if !self.inverse_gradients_vanish() {
            return None;
        }
        let mut val = 0.0;
        for (j, b) in self.primal.iter().enumerate() {
            val += b.operator.prox_fn()?.value(x.block(j)).ok()?;
            val += b.gradient.value(x.block(j)).ok()?;
        }
        for (k, b) in self.dual.iter().enumerate() {
            let lx = self.l.row_apply(k, x.blocks());
            val += b.operator.prox_fn()?.value(&lx).ok()?;
        }
        Some(val)
    }

    /// Pattern rule needed by `algorithm`.
    pub fn closure_rule(&self, algorithm: Algorithm) -> crate::activation::ClosureRule {
        use crate::activation::ClosureRule;
        let duals_of: Vec<Vec<usize>> = (0..self.p()).map(|j| self.l.col_support(j).to_vec()).collect();
        match algorithm {
            Algorithm::PrimalDual => ClosureRule::PrimalFollowsDual { q: self.q(), duals_of },
            Algorithm::PrimalDualSymmetric | Algorithm::PrimalDualNoPrimalOperator => {
                ClosureRule::DualFollowsPrimal { q: self.q(), duals_of }
            }
            _ => ClosureRule::None { n: self.p() + self.q() },
        }
    }

    fn check_state(&self, state: &PdState) -> Result<(), PdError> {
        state.x.check_shape(self.primal_dims())?;
        state.v.check_shape(self.dual_dims())?;
        Ok(())
    }
}

/// `theta_alpha = (1 - n^2) min{mu / (1 + alpha n), nu / (1 + n / alpha)}`,
/// or `None` when `n >= 1`.
pub fn theta_alpha(norm: f64, mu: f64, nu: f64, alpha: f64) -> Option<f64> {
    if !(0.0..1.0).contains(&norm) || !(alpha > 0.0) {
        return None;
    }
    let first = if mu.is_infinite() { f64::INFINITY } else { mu / (1.0 + alpha * norm) };
    let second = if nu.is_infinite() { f64::INFINITY } else { nu / (1.0 + norm / alpha) };
    Some((1.0 - norm * norm) * first.min(second))
}

/// Maximizer of [`theta_alpha`] over `alpha`; `None` when the maximum does
/// not depend on `alpha` (`n = 0`) or is only approached in a limit
/// (infinite `mu` or `nu`).
pub fn alpha_hat(norm: f64, mu: f64, nu: f64) -> Option<f64> {
    if !(norm > 0.0 && norm < 1.0) || mu.is_infinite() || nu.is_infinite() {
        return None;
    }
    let diff = mu - nu;
    Some((diff + (diff * diff + 4.0 * mu * nu * norm * norm).sqrt()) / (2.0 * nu * norm))
}

/// `sup_alpha theta_alpha`, including the limiting cases.
pub fn best_theta(norm: f64, mu: f64, nu: f64) -> Option<f64> {
    if !(0.0..1.0).contains(&norm) {
        return None;
    }
    let shrink = 1.0 - norm * norm;
    if norm == 0.0 {
        return Some(mu.min(nu));
    }
    match (mu.is_infinite(), nu.is_infinite()) {
        (true, true) => Some(f64::INFINITY),
        (false, true) => Some(shrink * mu),
        (true, false) => Some(shrink * nu),
        (false, false) => theta_alpha(norm, mu, nu, alpha_hat(norm, mu, nu)?),
    }
}

/// One inequality of a step-size condition, `value > 1/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub name: &'static str,
    pub value: f64,
    pub passed: bool,
}

impl Verdict {
    fn new(name: &'static str, value: f64) -> Self {
        Self { name, value, passed: value > 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub algorithm: Algorithm,
    /// Power-iteration estimate of `||U^{1/2} L W^{1/2}||`, or the
    /// distributed constant `sqrt(chi)`.
    pub norm: f64,
    /// Block-sum upper bound on `norm`.
    pub norm_bound: f64,
    pub mu: f64,
    pub nu: f64,
    pub alpha: Option<f64>,
    /// Cocoercivity constant reached by the preconditioned operator.
    pub theta: Option<f64>,
    /// The first verdict decides `passed`; the others are sufficient forms.
    pub verdicts: Vec<Verdict>,
    pub passed: bool,
}

impl ConditionReport {
    pub fn summary(&self) -> String {
        let parts: Vec<String> = self
            .verdicts
            .iter()
            .map(|v| format!("{}={:.6} ({})", v.name, v.value, if v.passed { "ok" } else { "fails" }))
            .collect();
        format!("{:?}: norm={:.6} mu={:.6} nu={:.6} {}", self.algorithm, self.norm, self.mu, self.nu, parts.join(", "))
    }
}

/// Condition of the primal-first and symmetric steps: `theta_alpha > 1/2`
/// at `alpha` (default: the maximizer).
pub fn check_alg1(prob: &PdProblem, alpha: Option<f64>, tol: f64) -> Result<ConditionReport, PdError> {
    let norm = scaled_norm(&prob.l, &prob.w, &prob.u, tol)?;
    let norm_bound = scaled_norm_bound(&prob.l, &prob.w, &prob.u)?;
    let (mu, nu) = (prob.mu(), prob.nu());
    let (alpha, theta) = match alpha {
        Some(a) => {
            if !(a > 0.0) {
                return Err(PdError::InvalidParameter(format!("alpha {a} must be positive")));
            }
            (Some(a), theta_alpha(norm, mu, nu, a))
        }
        None => (alpha_hat(norm, mu, nu), best_theta(norm, mu, nu)),
    };
    let mut verdicts = vec![Verdict::new("theta_alpha", theta.unwrap_or(f64::NEG_INFINITY))];
    verdicts.push(Verdict::new("unit_alpha_bound", (1.0 - norm_bound) * mu.min(nu)));
    if prob.inverse_gradients_vanish() {
        verdicts.push(Verdict::new("vanishing_dual_gradient_bound", (1.0 - norm_bound * norm_bound) * mu));
    }
    let passed = verdicts[0].passed;
    Ok(ConditionReport { algorithm: Algorithm::PrimalDual, norm, norm_bound, mu, nu, alpha, theta, verdicts, passed })
}

/// Condition of the `A = 0` step: `min{mu, nu (1 - n^2)} > 1/2` with `n < 1`.
pub fn check_alg2(prob: &PdProblem, tol: f64) -> Result<ConditionReport, PdError> {
    if !prob.primal_operators_vanish() {
        return Err(PdError::Inapplicable("every primal operator must vanish".into()));
    }
    let norm = scaled_norm(&prob.l, &prob.w, &prob.u, tol)?;
    let norm_bound = scaled_norm_bound(&prob.l, &prob.w, &prob.u)?;
    let (mu, nu) = (prob.mu(), prob.nu());
    let theta = |n: f64| {
        if n < 1.0 {
            if nu.is_infinite() {
                mu
            } else {
                mu.min(nu * (1.0 - n * n))
            }
        } else {
            f64::NEG_INFINITY
        }
    };
    let value = theta(norm);
    let verdicts = vec![Verdict::new("theta", value), Verdict::new("block_bound", theta(norm_bound))];
    let passed = verdicts[0].passed;
    Ok(ConditionReport {
        algorithm: Algorithm::PrimalDualNoPrimalOperator,
        norm,
        norm_bound,
        mu,
        nu,
        alpha: None,
        theta: (value.is_finite() || value == f64::INFINITY).then_some(value),
        verdicts,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdState {
    pub x: BlockVector,
    pub v: BlockVector,
}

impl PdState {
    pub fn zeros(prob: &PdProblem) -> Self {
        Self { x: BlockVector::zeros(prob.primal_dims()), v: BlockVector::zeros(prob.dual_dims()) }
    }
}

/// Error terms of one iteration: `a` after the primal resolvent, `b` after
/// the dual resolvent, `c` inside `C`, `d` inside `D^{-1}`.
#[derive(Debug, Clone, Copy, Default)]
pub struct PdErrors<'a> {
    pub a: Option<&'a BlockVector>,
    pub b: Option<&'a BlockVector>,
    pub c: Option<&'a BlockVector>,
    pub d: Option<&'a BlockVector>,
}

fn add_error(target: &mut [f64], e: Option<&BlockVector>, i: usize) {
    if let Some(e) = e {
        target.iter_mut().zip(e.block(i)).for_each(|(a, b)| *a += b);
    }
}

fn check_errors(prob: &PdProblem, e: &PdErrors) -> Result<(), PdError> {
    for v in [e.a, e.c].into_iter().flatten() {
        v.check_shape(prob.primal_dims())?;
    }
    for v in [e.b, e.d].into_iter().flatten() {
        v.check_shape(prob.dual_dims())?;
    }
    Ok(())
}

fn check_pattern(prob: &PdProblem, algorithm: Algorithm, pattern: &ActivationPattern) -> Result<(), PdError> {
    let n = prob.p() + prob.q();
    if pattern.len() != n {
        return Err(ActivationError::LengthMismatch { expected: n, got: pattern.len() }.into());
    }
    if !prob.closure_rule(algorithm).holds(pattern) {
        let msg = match algorithm {
            Algorithm::PrimalDual => "a primal block must be active whenever one of its duals is",
            _ => "every dual of an active primal block must be active",
        };
        return Err(PdError::ClosureViolation(msg.into()));
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<(), PdError> {
    if lambda > 0.0 && lambda <= 1.0 {
        Ok(())
    } else {
        Err(PdError::InvalidParameter(format!("relaxation {lambda} outside (0, 1]")))
    }
}

/// `x - W (t + C x + c)`
fn forward_primal(
    prob: &PdProblem,
    j: usize,
    x: &[f64],
    t: &[f64],
    c: Option<&BlockVector>,
) -> Result<Vec<f64>, PdError> {
    let mut g = prob.primal[j].gradient.gradient(x)?;
    add_error(&mut g, c, j);
    Ok(x.iter().zip(prob.w.block(j)).zip(t.iter().zip(&g)).map(|((xi, wi), (ti, gi))| xi - wi * (ti + gi)).collect())
}

/// `J_{U B^{-1}}(v + U (s - D^{-1} v + d)) + b`
fn dual_update(prob: &PdProblem, k: usize, v: &[f64], s: &[f64], e: &PdErrors) -> Result<Vec<f64>, PdError> {
    let mut r = prob.dual[k].inverse_gradient.gradient(v)?;
    r.iter_mut().zip(s).for_each(|(a, si)| *a = si - *a);
    add_error(&mut r, e.d, k);
    let arg: Vec<f64> = v.iter().zip(prob.u.block(k)).zip(&r).map(|((vi, ui), ri)| vi + ui * ri).collect();
    let mut out = prob.dual[k].operator.resolvent_inverse(prob.u.block(k), &arg)?;
    add_error(&mut out, e.b, k);
    Ok(out)
}

fn relax(old: &mut [f64], target: &[f64], lambda: f64) {
    for (o, t) in old.iter_mut().zip(target) {
        *o += lambda * (t - *o);
    }
}

/// Primal-first step. Requires primal `j` active whenever a dual `k` with
/// `L_kj != 0` is active.
pub fn step_alg1(
    prob: &PdProblem,
    state: &PdState,
    pattern: &ActivationPattern,
    lambda: f64,
    errors: PdErrors,
) -> Result<PdState, PdError> {
    prob.check_state(state)?;
    check_pattern(prob, Algorithm::PrimalDual, pattern)?;
    check_errors(prob, &errors)?;
    check_lambda(lambda)?;
    let p = prob.p();
    let mut next = state.clone();
    let mut extrapolated = vec![Vec::new(); p];
    for j in (0..p).filter(|&j| pattern.get(j)) {
        let x = state.x.block(j);
        let t = prob.l.col_adjoint_apply(j, state.v.blocks());
        let arg = forward_primal(prob, j, x, &t, errors.c)?;
        let mut y = prob.primal[j].operator.resolvent(prob.w.block(j), &arg)?;
        add_error(&mut y, errors.a, j);
        extrapolated[j] = y.iter().zip(x).map(|(yi, xi)| 2.0 * yi - xi).collect();
        relax(next.x.block_mut(j), &y, lambda);
    }
    for k in (0..prob.q()).filter(|&k| pattern.get(p + k)) {
        let s = prob.l.row_apply(k, &extrapolated);
        let u = dual_update(prob, k, state.v.block(k), &s, &errors)?;
        relax(next.v.block_mut(k), &u, lambda);
    }
    Ok(next)
}

/// Dual-first step. Requires every dual of an active primal block active.
pub fn step_alg1_sym(
    prob: &PdProblem,
    state: &PdState,
    pattern: &ActivationPattern,
    lambda: f64,
    errors: PdErrors,
) -> Result<PdState, PdError> {
    prob.check_state(state)?;
    check_pattern(prob, Algorithm::PrimalDualSymmetric, pattern)?;
    check_errors(prob, &errors)?;
    check_lambda(lambda)?;
    let p = prob.p();
    let mut next = state.clone();
    let mut extrapolated = vec![Vec::new(); prob.q()];
    for k in (0..prob.q()).filter(|&k| pattern.get(p + k)) {
        let v = state.v.block(k);
        let s = prob.l.row_apply(k, state.x.blocks());
        let u = dual_update(prob, k, v, &s, &errors)?;
        extrapolated[k] = u.iter().zip(v).map(|(ui, vi)| 2.0 * ui - vi).collect();
        relax(next.v.block_mut(k), &u, lambda);
    }
    for j in (0..p).filter(|&j| pattern.get(j)) {
        let x = state.x.block(j);
        let t = prob.l.col_adjoint_apply(j, &extrapolated);
        let arg = forward_primal(prob, j, x, &t, errors.c)?;
        let mut y = prob.primal[j].operator.resolvent(prob.w.block(j), &arg)?;
        add_error(&mut y, errors.a, j);
        relax(next.x.block_mut(j), &y, lambda);
    }
    Ok(next)
}

/// Step for `A = 0`; the `a` error channel is unused.
pub fn step_alg2(
    prob: &PdProblem,
    state: &PdState,
    pattern: &ActivationPattern,
    lambda: f64,
    errors: PdErrors,
) -> Result<PdState, PdError> {
    if !prob.primal_operators_vanish() {
        return Err(PdError::Inapplicable("every primal operator must vanish".into()));
    }
    prob.check_state(state)?;
    check_pattern(prob, Algorithm::PrimalDualNoPrimalOperator, pattern)?;
    check_errors(prob, &errors)?;
    check_lambda(lambda)?;
    let p = prob.p();
    let zero_t: Vec<Vec<f64>> = prob.primal_dims().iter().map(|&d| vec![0.0; d]).collect();
    let mut forward = vec![Vec::new(); p];
    let mut predicted = vec![Vec::new(); p];
    for j in 0..p {
        if !prob.l.col_support(j).iter().any(|&k| pattern.get(p + k)) {
            continue;
        }
        let x = state.x.block(j);
        let w = forward_primal(prob, j, x, &zero_t[j], errors.c)?;
        let lv = prob.l.col_adjoint_apply(j, state.v.blocks());
        predicted[j] = w.iter().zip(prob.w.block(j)).zip(&lv).map(|((a, wi), b)| a - wi * b).collect();
        forward[j] = w;
    }
    let mut duals = vec![Vec::new(); prob.q()];
    let mut next = state.clone();
    for k in (0..prob.q()).filter(|&k| pattern.get(p + k)) {
        let s = prob.l.row_apply(k, &predicted);
        let u = dual_update(prob, k, state.v.block(k), &s, &errors)?;
        relax(next.v.block_mut(k), &u, lambda);
        duals[k] = u;
    }
    for j in (0..p).filter(|&j| pattern.get(j)) {
        let lu = prob.l.col_adjoint_apply(j, &duals);
        let y: Vec<f64> = forward[j].iter().zip(prob.w.block(j)).zip(&lu).map(|((a, wi), b)| a - wi * b).collect();
        relax(next.x.block_mut(j), &y, lambda);
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdAlgorithm {
    PrimalFirst,
    DualFirst,
    NoPrimalOperator,
}

impl PdAlgorithm {
    pub fn activation_algorithm(self) -> Algorithm {
        match self {
            PdAlgorithm::PrimalFirst => Algorithm::PrimalDual,
            PdAlgorithm::DualFirst => Algorithm::PrimalDualSymmetric,
            PdAlgorithm::NoPrimalOperator => Algorithm::PrimalDualNoPrimalOperator,
        }
    }
}

/// The four error channels of a run, each with its own random stream.
#[derive(Debug, Clone)]
pub struct PdInjectors {
    pub a: ErrorInjector,
    pub b: ErrorInjector,
    pub c: ErrorInjector,
    pub d: ErrorInjector,
}

impl PdInjectors {
    pub fn none() -> Self {
        Self { a: ErrorInjector::none(), b: ErrorInjector::none(), c: ErrorInjector::none(), d: ErrorInjector::none() }
    }

    /// Same decay on every channel, streams 1 to 4 of `seed`.
    pub fn uniform(kind: ErrorKind, seed: u64) -> Result<Self, PdError> {
        Ok(Self {
            a: ErrorInjector::new(kind, seed, 1)?,
            b: ErrorInjector::new(kind, seed, 2)?,
            c: ErrorInjector::new(kind, seed, 3)?,
            d: ErrorInjector::new(kind, seed, 4)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub lambda: f64,
    pub stop: StopRule,
    /// Run even when the step-size condition fails.
    pub force: bool,
    /// `alpha` for the primal-dual condition; default is the maximizer.
    pub alpha: Option<f64>,
    pub norm_tol: f64,
}

impl RunConfig {
    pub fn new(lambda: f64, stop: StopRule) -> Self {
        Self { lambda, stop, force: false, alpha: None, norm_tol: NORM_TOL }
    }
}

/// One row of a run trace. Row 0 describes the starting point.
#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub n: usize,
    pub objective: Option<f64>,
    /// `||x_{n} - x_{n-1}||`
    pub primal_residual: f64,
    /// `||v_{n} - v_{n-1}||`
    pub dual_residual: f64,
    pub consensus_disagreement: Option<f64>,
    pub active_blocks: usize,
    pub cum_block_evals: usize,
    /// Norm of all errors injected in this iteration.
    pub err_norm: f64,
}

impl IterRecord {
    pub fn initial(objective: Option<f64>, consensus_disagreement: Option<f64>) -> Self {
        Self {
            n: 0,
            objective,
            primal_residual: 0.0,
            dual_residual: 0.0,
            consensus_disagreement,
            active_blocks: 0,
            cum_block_evals: 0,
            err_norm: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PdTrajectory {
    pub state: PdState,
    pub records: Vec<IterRecord>,
    pub stop_reason: StopReason,
    pub condition: ConditionReport,
    pub condition_forced: bool,
}

fn sq_norm_blocks(v: &Option<Vec<Vec<f64>>>) -> f64 {
    v.as_ref().map_or(0.0, |b| b.iter().flatten().map(|a| a * a).sum())
}

/// Condition check plus iteration loop. Activation uses stream 0 of `seed`.
pub fn run_pd(
    prob: &PdProblem,
    algorithm: PdAlgorithm,
    init: PdState,
    schedule: &ActivationSchedule,
    config: RunConfig,
    injectors: &mut PdInjectors,
    seed: u64,
) -> Result<PdTrajectory, PdError> {
    prob.check_state(&init)?;
    check_lambda(config.lambda)?;
    let report = schedule.validate(algorithm.activation_algorithm());
    let stop = config.stop.covering(&report.marginals);
    if !report.valid {
        return Err(PdError::Schedule(report.issues));
    }
    if schedule.len() != prob.p() + prob.q() {
        return Err(ActivationError::LengthMismatch { expected: prob.p() + prob.q(), got: schedule.len() }.into());
    }
    let mut condition = match algorithm {
        PdAlgorithm::NoPrimalOperator => check_alg2(prob, config.norm_tol)?,
        _ => check_alg1(prob, config.alpha, config.norm_tol)?,
    };
    if algorithm == PdAlgorithm::DualFirst {
        condition.algorithm = Algorithm::PrimalDualSymmetric;
    }
    if !condition.passed && !config.force {
        return Err(PdError::ConditionFailed(Box::new(condition)));
    }
    let condition_forced = !condition.passed;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = init;
    let mut records = vec![IterRecord::initial(prob.objective(&state.x), None)];
    let mut changes = Vec::new();
    let mut cum = 0;
    let (pd, qd) = (prob.primal_dims().to_vec(), prob.dual_dims().to_vec());
    loop {
        if let Some(stop_reason) = stop.check(&changes) {
            return Ok(PdTrajectory { state, records, stop_reason, condition, condition_forced });
        }
        let n = changes.len();
        let pattern = schedule.sample(&mut rng)?;
        let ea = injectors.a.sample_blocks(n, &pd);
        let eb = injectors.b.sample_blocks(n, &qd);
        let ec = injectors.c.sample_blocks(n, &pd);
        let ed = injectors.d.sample_blocks(n, &qd);
        let err_norm = (sq_norm_blocks(&ea) + sq_norm_blocks(&eb) + sq_norm_blocks(&ec) + sq_norm_blocks(&ed)).sqrt();
        let to_bv = |e: Option<Vec<Vec<f64>>>| e.map(BlockVector::new).transpose();
        let (ea, eb, ec, ed) = (to_bv(ea)?, to_bv(eb)?, to_bv(ec)?, to_bv(ed)?);
        let errors = PdErrors { a: ea.as_ref(), b: eb.as_ref(), c: ec.as_ref(), d: ed.as_ref() };
        let next = match algorithm {
            PdAlgorithm::PrimalFirst => step_alg1(prob, &state, &pattern, config.lambda, errors)?,
            PdAlgorithm::DualFirst => step_alg1_sym(prob, &state, &pattern, config.lambda, errors)?,
            PdAlgorithm::NoPrimalOperator => step_alg2(prob, &state, &pattern, config.lambda, errors)?,
        };
        let primal_residual = next.x.dist(&state.x)?;
        let dual_residual = next.v.dist(&state.v)?;
        changes.push(primal_residual.hypot(dual_residual));
        cum += pattern.count();
        records.push(IterRecord {
            n: n + 1,
            objective: prob.objective(&next.x),
            primal_residual,
            dual_residual,
            consensus_disagreement: None,
            active_blocks: pattern.count(),
            cum_block_evals: cum,
            err_norm,
        });
        state = next;
    }
}
