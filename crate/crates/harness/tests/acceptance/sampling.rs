//! Empirical activation frequencies against marginals obtained by
//! enumerating every raw draw.

use rpd_core::activation::{ActivationSchedule, ClosureRule, ScheduleKind};

use crate::common::{rng, Outcome};

const SAMPLES: usize = 100_000;

/// Implications each rule imposes, checked directly on the bits.
fn closed(rule: &ClosureRule, b: &[bool]) -> bool {
    match rule {
        ClosureRule::None { .. } => true,
        ClosureRule::PrimalFollowsDual { duals_of, .. } => {
            let p = duals_of.len();
            duals_of.iter().enumerate().all(|(j, ks)| ks.iter().all(|&k| !b[p + k] || b[j]))
        }
        ClosureRule::DualFollowsPrimal { duals_of, .. } => {
            let p = duals_of.len();
            duals_of.iter().enumerate().all(|(j, ks)| ks.iter().all(|&k| !b[j] || b[p + k]))
        }
        ClosureRule::Distributed { m, edges } => {
            (0..*m).all(|i| !b[i] || b[m + i])
                && edges.iter().enumerate().all(|(l, e)| e.iter().all(|&i| !b[i] || b[2 * m + l]))
        }
        ClosureRule::DistributedTied { m, edges } => {
            (0..*m).all(|i| b[i] == b[m + i])
                && edges.iter().enumerate().all(|(l, e)| b[2 * m + l] == e.iter().any(|&i| b[i]))
        }
    }
}

/// Smallest closed pattern containing the raw draw.
fn close(rule: &ClosureRule, raw: &[bool]) -> Vec<bool> {
    match rule {
        ClosureRule::DistributedTied { m, edges } => {
            let mut b = raw.to_vec();
            b.extend_from_slice(raw);
            b.extend(edges.iter().map(|e| e.iter().any(|&i| raw[i])));
            debug_assert_eq!(b.len(), 2 * m + edges.len());
            b
        }
        _ => {
            let mut b = raw.to_vec();
            // implications are one level deep, one pass suffices
            match rule {
                ClosureRule::PrimalFollowsDual { duals_of, .. } => {
                    let p = duals_of.len();
                    for (j, ks) in duals_of.iter().enumerate() {
                        b[j] |= ks.iter().any(|&k| raw[p + k]);
                    }
                }
                ClosureRule::DualFollowsPrimal { duals_of, .. } => {
                    let p = duals_of.len();
                    for (j, ks) in duals_of.iter().enumerate() {
                        ks.iter().for_each(|&k| b[p + k] |= raw[j]);
                    }
                }
                ClosureRule::Distributed { m, edges } => {
                    (0..*m).for_each(|i| b[m + i] |= raw[i]);
                    for (l, e) in edges.iter().enumerate() {
                        b[2 * m + l] |= e.iter().any(|&i| raw[i]);
                    }
                }
                _ => {}
            }
            b
        }
    }
}

/// Exact marginals by enumerating raw draws with their probabilities.
fn enumerated(kind: &ScheduleKind, rule: &ClosureRule) -> Vec<f64> {
    let n = rule.raw_len();
    let len = rule.len();
    let mut acc = vec![0.0; len];
    match kind {
        ScheduleKind::Full => acc.iter_mut().for_each(|a| *a = 1.0),
        ScheduleKind::UniformSingleSeed => {
            for c in 0..n {
                let raw: Vec<bool> = (0..n).map(|i| i == c).collect();
                for (a, b) in acc.iter_mut().zip(close(rule, &raw)) {
                    *a += if b { 1.0 / n as f64 } else { 0.0 };
                }
            }
        }
        ScheduleKind::IidBernoulli(p) => {
            let mut total = 0.0;
            for mask in 1u32..(1 << n) {
                let raw: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
                let prob: f64 = raw.iter().zip(p).map(|(&b, &pi)| if b { pi } else { 1.0 - pi }).product();
                total += prob;
                for (a, b) in acc.iter_mut().zip(close(rule, &raw)) {
                    *a += if b { prob } else { 0.0 };
                }
            }
            acc.iter_mut().for_each(|a| *a /= total);
        }
    }
    acc
}

fn rules() -> Vec<(&'static str, ClosureRule)> {
    let duals_of = vec![vec![0], vec![0, 1], vec![2]];
    let edges = vec![vec![0, 1], vec![1, 2, 3], vec![3, 0]];
    vec![
        ("none", ClosureRule::None { n: 4 }),
        ("primal-follows-dual", ClosureRule::PrimalFollowsDual { q: 3, duals_of: duals_of.clone() }),
        ("dual-follows-primal", ClosureRule::DualFollowsPrimal { q: 3, duals_of }),
        ("distributed", ClosureRule::Distributed { m: 4, edges: edges.clone() }),
        ("distributed-tied", ClosureRule::DistributedTied { m: 4, edges }),
    ]
}

pub fn run() -> Outcome {
    let mut r = rng(0x8888);
    let mut schedules = 0;
    let mut worst_z = 0.0_f64;
    for (name, rule) in rules() {
        let n = rule.raw_len();
        let kinds = [
            ScheduleKind::Full,
            ScheduleKind::IidBernoulli((0..n).map(|i| 0.15 + 0.7 * i as f64 / n as f64).collect()),
            ScheduleKind::IidBernoulli(vec![0.05; n]),
            ScheduleKind::UniformSingleSeed,
        ];
        for kind in kinds {
            let label = format!("{name} / {kind:?}");
            let sched = ActivationSchedule::new(kind.clone(), rule.clone()).map_err(|e| format!("{label}: {e}"))?;
            let expected = enumerated(&kind, &rule);
            let stated = sched.marginals();
            if expected.iter().zip(&stated).any(|(a, b)| (a - b).abs() > 1e-12) {
                return Err(format!("{label}: stated marginals {stated:?}, enumerated {expected:?}"));
            }
            let mut hits = vec![0usize; rule.len()];
            for _ in 0..SAMPLES {
                let p = sched.sample(&mut r).map_err(|e| format!("{label}: {e}"))?;
                if p.count() == 0 {
                    return Err(format!("{label}: empty pattern drawn"));
                }
                if !closed(&rule, p.bits()) || !rule.holds(&p) {
                    return Err(format!("{label}: pattern {:?} is not closed", p.bits()));
                }
                p.bits().iter().zip(hits.iter_mut()).for_each(|(&b, h)| *h += b as usize);
            }
            for (c, (&h, &q)) in hits.iter().zip(&expected).enumerate() {
                let freq = h as f64 / SAMPLES as f64;
                let sigma = (q * (1.0 - q) / SAMPLES as f64).sqrt();
                let dev = (freq - q).abs();
                if sigma == 0.0 {
                    if dev != 0.0 {
                        return Err(format!("{label}: coordinate {c} should have frequency {q}, got {freq}"));
                    }
                    continue;
                }
                let z = dev / sigma;
                if !(z <= 3.0) {
                    return Err(format!("{label}: coordinate {c} frequency {freq} vs {q} ({z:.2} sigma)"));
                }
                worst_z = worst_z.max(z);
            }
            schedules += 1;
        }
    }
    Ok(format!("{schedules} schedules x {SAMPLES} draws, worst deviation {worst_z:.2} sigma"))
}
