//! Randomized block-coordinate forward-backward iteration
//!
//! `z_i <- z_i + lambda * eps_i * ((J_{gamma V Q}(z - gamma V R z + s))_i + t_i - z_i)`
//!
//! with a fixed preconditioner `V`, a cocoercive `R` and a maximally monotone
//! `Q`. Both primal-dual engines are special cases of this iteration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::activation::{ActivationError, ActivationPattern, ActivationSchedule};
use crate::errors::ErrorInjector;
use crate::linalg::{BlockVector, DiagonalMetric, LinalgError};
use crate::operators::{OperatorError, ProxFn};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FbError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Activation(#[from] ActivationError),
}

/// When an iterative run ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    pub max_iters: usize,
    /// Threshold on the successive-change norm; `0` disables it.
    pub tol: f64,
    /// Number of consecutive changes that must all fall below `tol`.
    pub window: usize,
}

impl StopRule {
    pub fn max_iters(max_iters: usize) -> Self {
        Self { max_iters, tol: 0.0, window: 10 }
    }

    pub fn new(max_iters: usize, tol: f64) -> Self {
        Self { max_iters, tol, window: 10 }
    }

    /// Widens the window so that, with probability at least `1 - 1e-9`,
    /// every block is activated inside it.
    pub fn covering(mut self, marginals: &[f64]) -> Self {
        let p_min = marginals.iter().copied().fold(1.0, f64::min);
        if p_min > 0.0 && p_min < 1.0 {
            let needed = (1e-9f64.ln() / (1.0 - p_min).ln()).ceil() as usize;
            self.window = self.window.max(needed);
        }
        self
    }

    /// Decision after the changes recorded so far (`changes[n]` is
    /// `||z_{n+1} - z_n||`).
    pub fn check(&self, changes: &[f64]) -> Option<StopReason> {
        let n = changes.len();
        let w = self.window.max(1);
        if n >= w && changes[n - w..].iter().all(|&c| c < self.tol) {
            return Some(StopReason::Converged);
        }
        if n >= self.max_iters {
            return Some(StopReason::MaxIterations);
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxIterations,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Converged => "converged",
            StopReason::MaxIterations => "max_iterations",
        }
    }
}

/// Operator oracles of a forward-backward instance.
pub trait FbOperators {
    fn dims(&self) -> Vec<usize>;
    /// Preconditioned forward step `V R z`.
    fn forward(&self, z: &BlockVector) -> Result<BlockVector, FbError>;
    /// `J_{gamma V Q}(z)`.
    fn resolvent(&self, gamma: f64, z: &BlockVector) -> Result<BlockVector, FbError>;
}

#[derive(Debug, Clone)]
pub struct FbInstance<O> {
    ops: O,
    gamma: f64,
    lambda: f64,
}

impl<O: FbOperators> FbInstance<O> {
    /// `cocoercivity` is the constant of `R` in the norm of `V^{-1}`;
    /// requires `0 < gamma < 2 * cocoercivity` and `0 < lambda <= 1`.
    pub fn new(ops: O, gamma: f64, lambda: f64, cocoercivity: f64) -> Result<Self, FbError> {
        if !(gamma > 0.0 && gamma < 2.0 * cocoercivity) {
            return Err(FbError::InvalidParameter(format!("step {gamma} outside (0, {})", 2.0 * cocoercivity)));
        }
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(FbError::InvalidParameter(format!("relaxation {lambda} outside (0, 1]")));
        }
        Ok(Self { ops, gamma, lambda })
    }

    pub fn ops(&self) -> &O {
        &self.ops
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// One iteration; inactive blocks are returned untouched. `s` perturbs the
/// resolvent argument and `t` its output.
pub fn fb_step<O: FbOperators>(
    inst: &FbInstance<O>,
    z: &BlockVector,
    pattern: &ActivationPattern,
    s: Option<&BlockVector>,
    t: Option<&BlockVector>,
) -> Result<BlockVector, FbError> {
    let dims = inst.ops.dims();
    z.check_shape(&dims)?;
    if pattern.len() != dims.len() {
        return Err(ActivationError::LengthMismatch { expected: dims.len(), got: pattern.len() }.into());
    }
    let r = inst.ops.forward(z)?;
    r.check_shape(&dims)?;
    let mut arg = z.clone();
    for i in 0..dims.len() {
        let ai = arg.block_mut(i);
        for (a, ri) in ai.iter_mut().zip(r.block(i)) {
            *a -= inst.gamma * ri;
        }
        if let Some(s) = s {
            ai.iter_mut().zip(s.block(i)).for_each(|(a, e)| *a += e);
        }
    }
    let tz = inst.ops.resolvent(inst.gamma, &arg)?;
    tz.check_shape(&dims)?;
    let mut next = z.clone();
    for i in (0..dims.len()).filter(|&i| pattern.get(i)) {
        let zi = next.block_mut(i);
        for (c, old) in z.block(i).iter().enumerate() {
            let target = tz.block(i)[c] + t.map_or(0.0, |t| t.block(i)[c]);
            zi[c] = old + inst.lambda * (target - old);
        }
    }
    Ok(next)
}

#[derive(Debug, Clone)]
pub struct FbTrajectory {
    pub z: BlockVector,
    pub iterations: usize,
    /// `changes[n] = ||z_{n+1} - z_n||`
    pub changes: Vec<f64>,
    pub active_counts: Vec<usize>,
    pub stop_reason: StopReason,
}

/// Runs [`fb_step`] from `z0`. Activation draws use stream 0 of `seed`;
/// `s_errors` and `t_errors` carry their own streams.
pub fn run_fb<O: FbOperators>(
    inst: &FbInstance<O>,
    z0: &BlockVector,
    schedule: &ActivationSchedule,
    s_errors: &mut ErrorInjector,
    t_errors: &mut ErrorInjector,
    stop: StopRule,
    seed: u64,
) -> Result<FbTrajectory, FbError> {
    let dims = inst.ops.dims();
    z0.check_shape(&dims)?;
    let stop = stop.covering(&schedule.marginals());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = z0.clone();
    let mut changes = Vec::new();
    let mut active_counts = Vec::new();
    loop {
        if let Some(stop_reason) = stop.check(&changes) {
            return Ok(FbTrajectory { z, iterations: changes.len(), changes, active_counts, stop_reason });
        }
        let n = changes.len();
        let pattern = schedule.sample(&mut rng)?;
        let s = s_errors.sample_blocks(n, &dims).map(BlockVector::new).transpose()?;
        let t = t_errors.sample_blocks(n, &dims).map(BlockVector::new).transpose()?;
        let next = fb_step(inst, &z, &pattern, s.as_ref(), t.as_ref())?;
        changes.push(next.dist(&z)?);
        active_counts.push(pattern.count());
        z = next;
    }
}

/// Gradient oracle `z -> R z` for [`CompositeFb`].
pub type GradientFn = Box<dyn Fn(&BlockVector) -> BlockVector + Send + Sync>;

/// `Q = diag(df_1, ..., df_m)` with closed-form proximity operators,
/// `R` a user gradient and `V` diagonal.
pub struct CompositeFb {
    pub prox: Vec<ProxFn>,
    pub gradient: GradientFn,
    pub metric: DiagonalMetric,
}

impl FbOperators for CompositeFb {
    fn dims(&self) -> Vec<usize> {
        self.prox.iter().map(ProxFn::dim).collect()
    }

    fn forward(&self, z: &BlockVector) -> Result<BlockVector, FbError> {
        let mut g = (self.gradient)(z);
        g.check_shape(&self.dims())?;
        for i in 0..g.num_blocks() {
            g.block_mut(i).iter_mut().zip(self.metric.block(i)).for_each(|(a, w)| *a *= w);
        }
        Ok(g)
    }

    fn resolvent(&self, gamma: f64, z: &BlockVector) -> Result<BlockVector, FbError> {
        let blocks = self
            .prox
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let w: Vec<f64> = self.metric.block(i).iter().map(|a| gamma * a).collect();
                f.prox(&w, z.block(i))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BlockVector::new(blocks)?)
    }
}
