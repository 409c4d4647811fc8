//! Resolvents and proximity operators under diagonal metrics, conjugate
//! proximity operators through the Moreau identity, smooth-function oracles
//! and the consensus projection.
//!
//! Metric convention: `prox(w, x)` is the proximity operator of `f` in the
//! norm weighted by `diag(w)^{-1}`, which is the resolvent of `diag(w) df`.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::linalg::{dot, LinearBlock};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OperatorError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
}

fn check_len(expected: usize, got: usize) -> Result<(), OperatorError> {
    if expected == got {
        Ok(())
    } else {
        Err(OperatorError::DimensionMismatch { expected, got })
    }
}

fn invalid(msg: impl Into<String>) -> OperatorError {
    OperatorError::InvalidParameter(msg.into())
}

/// Proper lower semicontinuous convex function with a closed-form proximity
/// operator under any diagonal metric.
#[derive(Debug, Clone, PartialEq)]
pub enum ProxFn {
    /// `weight * ||x||_1`
    L1 { dim: usize, weight: f64 },
    /// `weight / 2 * ||x - center||^2`
    SqDistance { center: Vec<f64>, weight: f64 },
    /// Indicator of the box `[lo, hi]`; infinite bounds allowed.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// The zero function.
    Zero { dim: usize },
    /// Indicator of the singleton `{point}`.
    Point { point: Vec<f64> },
}

impl ProxFn {
    pub fn l1(dim: usize, weight: f64) -> Result<Self, OperatorError> {
        let f = ProxFn::L1 { dim, weight };
        f.validate()?;
        Ok(f)
    }

    pub fn sq_distance(center: Vec<f64>, weight: f64) -> Result<Self, OperatorError> {
        let f = ProxFn::SqDistance { center, weight };
        f.validate()?;
        Ok(f)
    }

    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, OperatorError> {
        let f = ProxFn::Box { lo, hi };
        f.validate()?;
        Ok(f)
    }

    pub fn zero(dim: usize) -> Self {
        ProxFn::Zero { dim }
    }

    pub fn point(point: Vec<f64>) -> Result<Self, OperatorError> {
        let f = ProxFn::Point { point };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<(), OperatorError> {
        if self.dim() == 0 {
            return Err(invalid("function on a zero-dimensional space"));
        }
        match self {
            ProxFn::L1 { weight, .. } | ProxFn::SqDistance { weight, .. }
                if !(*weight >= 0.0 && weight.is_finite()) =>
            {
                return Err(invalid(format!("weight {weight} must be finite and nonnegative")));
            }
            _ => {}
        }
        match self {
            ProxFn::SqDistance { center: v, .. } | ProxFn::Point { point: v } => {
                if v.iter().any(|a| !a.is_finite()) {
                    return Err(invalid("non-finite coordinates"));
                }
            }
            ProxFn::Box { lo, hi } => {
                check_len(lo.len(), hi.len())?;
                if lo
                    .iter()
                    .zip(hi)
                    .any(|(a, b)| !(a <= b) || a.is_nan() || *a == f64::INFINITY || *b == f64::NEG_INFINITY)
                {
                    return Err(invalid("box bounds must satisfy lo <= hi with lo < +inf and hi > -inf"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            ProxFn::L1 { dim, .. } | ProxFn::Zero { dim } => *dim,
            ProxFn::SqDistance { center, .. } => center.len(),
            ProxFn::Box { lo, .. } => lo.len(),
            ProxFn::Point { point } => point.len(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ProxFn::Zero { .. } => true,
            ProxFn::L1 { weight, .. } | ProxFn::SqDistance { weight, .. } => *weight == 0.0,
            ProxFn::Box { lo, hi } => lo.iter().chain(hi).all(|a| a.is_infinite()),
            ProxFn::Point { .. } => false,
        }
    }

    /// Function value; indicators use a `1e-12` relative slack.
    pub fn value(&self, x: &[f64]) -> Result<f64, OperatorError> {
        check_len(self.dim(), x.len())?;
        let slack = |a: f64| 1e-12 * (1.0 + a.abs());
        Ok(match self {
            ProxFn::L1 { weight, .. } => weight * x.iter().map(|a| a.abs()).sum::<f64>(),
            ProxFn::SqDistance { center, weight } => {
                0.5 * weight * x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>()
            }
            ProxFn::Box { lo, hi } => {
                let inside =
                    x.iter().zip(lo.iter().zip(hi)).all(|(&a, (&l, &h))| a >= l - slack(a) && a <= h + slack(a));
                if inside {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            ProxFn::Zero { .. } => 0.0,
            ProxFn::Point { point } => {
                if x.iter().zip(point).all(|(&a, &c)| (a - c).abs() <= slack(c)) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        })
    }

    /// Proximity operator in the metric `diag(w)^{-1}`.
    pub fn prox(&self, w: &[f64], x: &[f64]) -> Result<Vec<f64>, OperatorError> {
        check_len(self.dim(), x.len())?;
        check_len(self.dim(), w.len())?;
        Ok(match self {
            ProxFn::L1 { weight, .. } => x
                .iter()
                .zip(w)
                .map(|(&a, &wi)| {
                    let t = weight * wi;
                    if a > t {
                        a - t
                    } else if a < -t {
                        a + t
                    } else {
                        0.0
                    }
                })
                .collect(),
            ProxFn::SqDistance { center, weight } => x
                .iter()
                .zip(w.iter().zip(center))
                .map(|(&a, (&wi, &c))| (a + wi * weight * c) / (1.0 + wi * weight))
                .collect(),
            ProxFn::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).map(|(&a, (&l, &h))| a.max(l).min(h)).collect(),
            ProxFn::Zero { .. } => x.to_vec(),
            ProxFn::Point { point } => point.clone(),
        })
    }

    /// Proximity operator of the conjugate `f*` in the metric `diag(u)^{-1}`,
    /// computed as `v - u * prox_f^{diag(u)}(v / u)`.
    pub fn prox_conjugate(&self, u: &[f64], v: &[f64]) -> Result<Vec<f64>, OperatorError> {
        check_len(self.dim(), v.len())?;
        check_len(self.dim(), u.len())?;
        if let ProxFn::Zero { dim } = self {
            // the conjugate is the indicator of the origin
            return Ok(vec![0.0; *dim]);
        }
        let inv_u: Vec<f64> = u.iter().map(|a| 1.0 / a).collect();
        let scaled: Vec<f64> = v.iter().zip(u).map(|(a, b)| a / b).collect();
        let p = self.prox(&inv_u, &scaled)?;
        Ok(v.iter().zip(u.iter().zip(&p)).map(|(a, (b, c))| a - b * c).collect())
    }
}

/// Resolvent callback `(gamma, x) -> J_{gamma A} x`.
pub type ResolventFn = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;

/// Maximally monotone operator with a computable resolvent.
#[derive(Clone)]
pub enum MonotoneOp {
    /// Subdifferential of a [`ProxFn`].
    Subdifferential(ProxFn),
    /// Normal cone to the diagonal `{(y, ..., y)}` of `copies` stacked
    /// vectors of length `dim`.
    ConsensusNormal { copies: usize, dim: usize },
    /// User-supplied resolvent; usable only with scalar metrics.
    Explicit { dim: usize, resolvent: ResolventFn },
}

impl fmt::Debug for MonotoneOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MonotoneOp::Subdifferential(g) => f.debug_tuple("Subdifferential").field(g).finish(),
            MonotoneOp::ConsensusNormal { copies, dim } => {
                f.debug_struct("ConsensusNormal").field("copies", copies).field("dim", dim).finish()
            }
            MonotoneOp::Explicit { dim, .. } => f.debug_struct("Explicit").field("dim", dim).finish_non_exhaustive(),
        }
    }
}

impl MonotoneOp {
    pub fn zero(dim: usize) -> Self {
        MonotoneOp::Subdifferential(ProxFn::zero(dim))
    }

    pub fn dim(&self) -> usize {
        match self {
            MonotoneOp::Subdifferential(f) => f.dim(),
            MonotoneOp::ConsensusNormal { copies, dim } => copies * dim,
            MonotoneOp::Explicit { dim, .. } => *dim,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, MonotoneOp::Subdifferential(f) if f.is_zero())
    }

    pub fn prox_fn(&self) -> Option<&ProxFn> {
        match self {
            MonotoneOp::Subdifferential(f) => Some(f),
            _ => None,
        }
    }

    /// `J_{diag(w) A}(x)`.
    pub fn resolvent(&self, w: &[f64], x: &[f64]) -> Result<Vec<f64>, OperatorError> {
        check_len(self.dim(), x.len())?;
        check_len(self.dim(), w.len())?;
        match self {
            MonotoneOp::Subdifferential(f) => f.prox(w, x),
            MonotoneOp::ConsensusNormal { copies, dim } => Ok(weighted_consensus(x, w, *copies, *dim)),
            MonotoneOp::Explicit { resolvent, .. } => {
                let gamma = w[0];
                if w.iter().any(|&a| a != gamma) {
                    return Err(OperatorError::Unsupported(
                        "explicit resolvents accept only scalar metrics".to_string(),
                    ));
                }
                let out = resolvent(gamma, x);
                check_len(x.len(), out.len())?;
                Ok(out)
            }
        }
    }

    /// `J_{diag(u) A^{-1}}(v) = v - u * J_{diag(u)^{-1} A}(v / u)`.
    pub fn resolvent_inverse(&self, u: &[f64], v: &[f64]) -> Result<Vec<f64>, OperatorError> {
        if let MonotoneOp::Subdifferential(f) = self {
            return f.prox_conjugate(u, v);
        }
        check_len(self.dim(), v.len())?;
        check_len(self.dim(), u.len())?;
        let inv_u: Vec<f64> = u.iter().map(|a| 1.0 / a).collect();
        let scaled: Vec<f64> = v.iter().zip(u).map(|(a, b)| a / b).collect();
        let p = self.resolvent(&inv_u, &scaled)?;
        Ok(v.iter().zip(u.iter().zip(&p)).map(|(a, (b, c))| a - b * c).collect())
    }
}

/// Euclidean projection of `z = (z_1, ..., z_copies)` onto the diagonal:
/// every copy is replaced by the average.
pub fn project_consensus(z: &[f64], copies: usize) -> Result<Vec<f64>, OperatorError> {
    if copies == 0 || !z.len().is_multiple_of(copies) {
        return Err(invalid(format!("length {} is not a multiple of {copies} copies", z.len())));
    }
    let dim = z.len() / copies;
    Ok(weighted_consensus(z, &vec![1.0; z.len()], copies, dim))
}

/// Projection onto the diagonal in the norm weighted by `1 / w`.
fn weighted_consensus(z: &[f64], w: &[f64], copies: usize, dim: usize) -> Vec<f64> {
    let mut mean = vec![0.0; dim];
    for (i, m) in mean.iter_mut().enumerate() {
        let uniform = (1..copies).all(|c| w[c * dim + i] == w[i]);
        if uniform {
            *m = (0..copies).map(|c| z[c * dim + i]).sum::<f64>() / copies as f64;
        } else {
            let num: f64 = (0..copies).map(|c| z[c * dim + i] / w[c * dim + i]).sum();
            let den: f64 = (0..copies).map(|c| 1.0 / w[c * dim + i]).sum();
            *m = num / den;
        }
    }
    (0..copies).flat_map(|_| mean.iter().copied()).collect()
}

/// Convex function with Lipschitz gradient:
/// `weight / 2 * ||M x - target||^2 + <linear, x>`, or identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothFn {
    dim: usize,
    quad: Option<(LinearBlock, Vec<f64>, f64)>,
    linear: Option<Vec<f64>>,
    lipschitz: f64,
}

impl SmoothFn {
    pub fn zero(dim: usize) -> Self {
        Self { dim, quad: None, linear: None, lipschitz: 0.0 }
    }

    pub fn least_squares(m: LinearBlock, target: Vec<f64>, weight: f64) -> Result<Self, OperatorError> {
        check_len(m.rows(), target.len())?;
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(invalid(format!("weight {weight} must be finite and nonnegative")));
        }
        let lipschitz = weight * m.operator_norm().powi(2);
        Ok(Self { dim: m.cols(), quad: Some((m, target, weight)), linear: None, lipschitz })
    }

    pub fn linear(c: Vec<f64>) -> Self {
        Self { dim: c.len(), quad: None, linear: Some(c), lipschitz: 0.0 }
    }

    pub fn with_linear(mut self, c: Vec<f64>) -> Result<Self, OperatorError> {
        check_len(self.dim, c.len())?;
        self.linear = Some(c);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Lipschitz constant of the gradient.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// True when the gradient vanishes identically.
    pub fn is_zero(&self) -> bool {
        self.lipschitz == 0.0 && self.linear.as_ref().is_none_or(|c| c.iter().all(|&a| a == 0.0))
    }

    pub fn value(&self, x: &[f64]) -> Result<f64, OperatorError> {
        check_len(self.dim, x.len())?;
        let mut val = 0.0;
        if let Some((m, b, weight)) = &self.quad {
            let mut r = vec![0.0; m.rows()];
            m.apply_add(x, &mut r);
            val += 0.5 * weight * r.iter().zip(b).map(|(a, c)| (a - c) * (a - c)).sum::<f64>();
        }
        if let Some(c) = &self.linear {
            val += dot(c, x);
        }
        Ok(val)
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>, OperatorError> {
        check_len(self.dim, x.len())?;
        let mut g = vec![0.0; self.dim];
        if let Some((m, b, weight)) = &self.quad {
            let mut r = vec![0.0; m.rows()];
            m.apply_add(x, &mut r);
            for (a, c) in r.iter_mut().zip(b) {
                *a = weight * (*a - c);
            }
            m.apply_transpose_add(&r, &mut g);
        }
        if let Some(c) = &self.linear {
            g.iter_mut().zip(c).for_each(|(a, b)| *a += b);
        }
        Ok(g)
    }
}

/// Largest deviation between the gradient and central differences with step
/// `h`, relative to `max(1, ||grad||_inf)`.
pub fn gradient_check(f: &SmoothFn, x: &[f64], h: f64) -> Result<f64, OperatorError> {
    let g = f.gradient(x)?;
    let scale = g.iter().fold(1.0_f64, |acc, a| acc.max(a.abs()));
    let mut worst = 0.0_f64;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f.value(&probe)?;
        probe[i] = x[i] - h;
        let down = f.value(&probe)?;
        probe[i] = x[i];
        worst = worst.max(((up - down) / (2.0 * h) - g[i]).abs() / scale);
    }
    Ok(worst)
}
