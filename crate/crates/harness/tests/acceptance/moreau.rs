//! Resolvents of `diag(w) A` against the conjugate side computed from
//! closed forms written out here:
//! `J_{W A}(x) = x - W J_{W^{-1} A^{-1}}(W^{-1} x)`.

use rand::Rng;
use rpd_core::operators::{MonotoneOp, ProxFn};

use crate::common::{every_prox_fn, max_abs_diff, positive_vec, random_vec, rng, Outcome};

const TOL: f64 = 1e-10;
const INPUTS: usize = 50;
const DIM: usize = 4;

/// `J_{diag(u) df*}(v)`, coordinatewise.
fn conjugate_prox(f: &ProxFn, u: &[f64], v: &[f64]) -> Vec<f64> {
    match f {
        // f* is the indicator of [-weight, weight]^n
        ProxFn::L1 { weight, .. } => v.iter().map(|a| a.clamp(-weight, *weight)).collect(),
        // f*(y) = |y|^2 / (2 weight) + <center, y>
        ProxFn::SqDistance { center, weight } => {
            v.iter().zip(u.iter().zip(center)).map(|(&a, (&ui, &c))| weight * (a - ui * c) / (weight + ui)).collect()
        }
        // f*(y) = sum max(lo y, hi y): slope hi right of 0, lo left of 0
        ProxFn::Box { lo, hi } => v
            .iter()
            .zip(u)
            .zip(lo.iter().zip(hi))
            .map(|((&a, &ui), (&l, &h))| {
                if a > ui * h {
                    a - ui * h
                } else if a < ui * l {
                    a - ui * l
                } else {
                    0.0
                }
            })
            .collect(),
        ProxFn::Zero { dim } => vec![0.0; *dim],
        ProxFn::Point { point } => v.iter().zip(u.iter().zip(point)).map(|(a, (ui, p))| a - ui * p).collect(),
    }
}

/// Projection onto `{sum of copies = 0}` in the norm weighted by `1 / u`.
fn consensus_complement(u: &[f64], v: &[f64], copies: usize, dim: usize) -> Vec<f64> {
    let mut out = v.to_vec();
    for c in 0..dim {
        let (num, den) = (0..copies).fold((0.0, 0.0), |(n, d), j| (n + v[j * dim + c], d + u[j * dim + c]));
        (0..copies).for_each(|j| out[j * dim + c] -= u[j * dim + c] * num / den);
    }
    out
}

fn metrics(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> [Vec<f64>; 3] {
    let scalar = rng.random_range(0.2..5.0);
    let spread = (0..n).map(|_| 10f64.powf(rng.random_range(-2.0..2.0))).collect();
    [vec![scalar; n], positive_vec(rng, n, 0.5, 2.0), spread]
}

fn identity_error(op: &MonotoneOp, w: &[f64], x: &[f64], conj: impl Fn(&[f64], &[f64]) -> Vec<f64>) -> f64 {
    let inv_w: Vec<f64> = w.iter().map(|a| 1.0 / a).collect();
    let scaled: Vec<f64> = x.iter().zip(w).map(|(a, b)| a / b).collect();
    let c = conj(&inv_w, &scaled);
    let rhs: Vec<f64> = x.iter().zip(w.iter().zip(&c)).map(|(a, (b, ci))| a - b * ci).collect();
    let lhs = op.resolvent(w, x).unwrap();
    // the library's own conjugate side must agree with the closed form too
    let lib = op.resolvent_inverse(&inv_w, &scaled).unwrap();
    let scale = 1.0 + x.iter().fold(0.0_f64, |m, a| m.max(a.abs()));
    max_abs_diff(&lhs, &rhs).max(max_abs_diff(&lib, &c)) / scale
}

pub fn run() -> Outcome {
    let mut rng = rng(0x3003);
    let mut worst = 0.0_f64;
    let mut checks = 0;
    for f in every_prox_fn(&mut rng, DIM) {
        let op = MonotoneOp::Subdifferential(f.clone());
        for w in metrics(&mut rng, DIM) {
            for _ in 0..INPUTS {
                let x = random_vec(&mut rng, DIM, 5.0);
                let e = identity_error(&op, &w, &x, |u, v| conjugate_prox(&f, u, v));
                if !(e <= TOL) {
                    return Err(format!("{f:?}, metric {w:?}, input {x:?}: error {e:e}"));
                }
                worst = worst.max(e);
                checks += 1;
            }
        }
    }
    let (copies, dim) = (3, 2);
    let op = MonotoneOp::ConsensusNormal { copies, dim };
    for w in metrics(&mut rng, copies * dim) {
        for _ in 0..INPUTS {
            let x = random_vec(&mut rng, copies * dim, 5.0);
            let e = identity_error(&op, &w, &x, |u, v| consensus_complement(u, v, copies, dim));
            if !(e <= TOL) {
                return Err(format!("consensus normal cone, metric {w:?}: error {e:e}"));
            }
            worst = worst.max(e);
            checks += 1;
        }
    }
    Ok(format!("{checks} identities, worst relative error {worst:.2e}"))
}
