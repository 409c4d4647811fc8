//! Summable error injection for robustness experiments.
//!
//! An injector draws a direction uniformly on the sphere and scales it to
//! exactly the bound of the current iteration, so the realised error norms
//! form a known summable sequence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InjectorError {
    #[error("decay exponent {0} must exceed 1")]
    Exponent(f64),
    #[error("decay ratio {0} must lie in (0, 1)")]
    Ratio(f64),
    #[error("scale {0} must be finite and nonnegative")]
    Scale(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorKind {
    None,
    /// `scale * (n + 1)^(-exponent)`
    DecayPower {
        scale: f64,
        exponent: f64,
    },
    /// `scale * ratio^n`
    DecayGeometric {
        scale: f64,
        ratio: f64,
    },
}

impl ErrorKind {
    pub fn validate(&self) -> Result<(), InjectorError> {
        match *self {
            ErrorKind::None => Ok(()),
            ErrorKind::DecayPower { scale, exponent } => {
                check_scale(scale)?;
                if exponent > 1.0 && exponent.is_finite() {
                    Ok(())
                } else {
                    Err(InjectorError::Exponent(exponent))
                }
            }
            ErrorKind::DecayGeometric { scale, ratio } => {
                check_scale(scale)?;
                if ratio > 0.0 && ratio < 1.0 {
                    Ok(())
                } else {
                    Err(InjectorError::Ratio(ratio))
                }
            }
        }
    }

    /// Norm of the error injected at iteration `n`.
    pub fn bound(&self, n: usize) -> f64 {
        match *self {
            ErrorKind::None => 0.0,
            ErrorKind::DecayPower { scale, exponent } => scale * ((n + 1) as f64).powf(-exponent),
            ErrorKind::DecayGeometric { scale, ratio } => scale * ratio.powi(n as i32),
        }
    }

    /// `sum_n bound(n)`; closed form for the geometric kind, a truncated sum
    /// with an integral tail for the power kind.
    pub fn total(&self) -> f64 {
        match *self {
            ErrorKind::None => 0.0,
            ErrorKind::DecayGeometric { scale, ratio } => scale / (1.0 - ratio),
            ErrorKind::DecayPower { scale, exponent } => {
                let cut = 100_000;
                let head: f64 = (0..cut).map(|n| self.bound(n)).sum();
                head + scale * (cut as f64 + 0.5).powf(1.0 - exponent) / (exponent - 1.0)
            }
        }
    }
}

fn check_scale(scale: f64) -> Result<(), InjectorError> {
    if scale >= 0.0 && scale.is_finite() {
        Ok(())
    } else {
        Err(InjectorError::Scale(scale))
    }
}

/// Error source with its own random stream.
#[derive(Debug, Clone)]
pub struct ErrorInjector {
    kind: ErrorKind,
    rng: ChaCha8Rng,
}

impl ErrorInjector {
    pub fn new(kind: ErrorKind, seed: u64, stream: u64) -> Result<Self, InjectorError> {
        kind.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Ok(Self { kind, rng })
    }

    pub fn none() -> Self {
        Self { kind: ErrorKind::None, rng: ChaCha8Rng::seed_from_u64(0) }
    }

    pub fn kind(&self) -> ErrorKind {
        self.kind
    }

    pub fn is_active(&self) -> bool {
        !matches!(self.kind, ErrorKind::None)
    }

    /// Error vector of length `dim` with norm exactly `bound(n)`, or `None`
    /// for the error-free kind.
    pub fn sample(&mut self, n: usize, dim: usize) -> Option<Vec<f64>> {
        if !self.is_active() {
            return None;
        }
        let bound = self.kind.bound(n);
        let mut e: Vec<f64> = (0..dim).map(|_| self.rng.sample(StandardNormal)).collect();
        let mut norm = e.iter().map(|a| a * a).sum::<f64>().sqrt();
        while norm == 0.0 {
            e = (0..dim).map(|_| self.rng.sample(StandardNormal)).collect();
            norm = e.iter().map(|a| a * a).sum::<f64>().sqrt();
        }
        e.iter_mut().for_each(|a| *a *= bound / norm);
        Some(e)
    }

    /// Like [`Self::sample`], split into blocks of the given sizes.
    pub fn sample_blocks(&mut self, n: usize, dims: &[usize]) -> Option<Vec<Vec<f64>>> {
        let flat = self.sample(n, dims.iter().sum())?;
        let mut out = Vec::with_capacity(dims.len());
        let mut off = 0;
        for &d in dims {
            out.push(flat[off..off + d].to_vec());
            off += d;
        }
        Some(out)
    }
}
