//! The distributed dual-first step against the generic dual-first step on
//! the lifted product-space problem, compared bit for bit.

use rpd_core::activation::{ActivationSchedule, ScheduleKind};
use rpd_core::distributed::{step_dist1, DistState, EdgeMode, Hypergraph};
use rpd_core::pd_engine::{step_alg1_sym, PdErrors};

use crate::common::{random_dist_state, rich_dist_problem, rng, Outcome};

const AGENTS: usize = 4;
const DIM: usize = 3;
const ITERS: usize = 50;
const SEEDS: u64 = 5;

pub fn run() -> Outcome {
    let mut active = 0;
    for seed in 0..SEEDS {
        let prob = rich_dist_problem(seed, Hypergraph::ring(AGENTS).unwrap(), DIM, true);
        let lifted = prob.lift().map_err(|e| e.to_string())?;
        let rule = prob.graph().closure_rule(false);
        let sched = ActivationSchedule::new(ScheduleKind::IidBernoulli(vec![0.4; rule.raw_len()]), rule).unwrap();
        let mut r = rng(seed);
        let mut s = random_dist_state(&prob, seed, false);
        let mut t = s.lift().unwrap();
        for n in 1..=ITERS {
            let p = sched.sample(&mut r).unwrap();
            active += p.count();
            s = step_dist1(&prob, &s, &p, 0.9, PdErrors::default(), EdgeMode::General).map_err(|e| e.to_string())?;
            t = step_alg1_sym(&lifted, &t, &p, 0.9, PdErrors::default()).map_err(|e| e.to_string())?;
            let lowered = DistState::lower(&prob, &t).unwrap();
            let same_bits = |a: &[Vec<f64>], b: &[Vec<f64>]| {
                a.iter().flatten().zip(b.iter().flatten()).all(|(x, y)| x.to_bits() == y.to_bits())
            };
            if !(same_bits(&s.x, &lowered.x) && same_bits(&s.v, &lowered.v) && same_bits(&s.edge_v, &lowered.edge_v)) {
                return Err(format!("seed {seed}, iteration {n}: iterates differ"));
            }
        }
    }
    Ok(format!("{SEEDS} seeds x {ITERS} iterations bitwise equal, {active} block updates"))
}
