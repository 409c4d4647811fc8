//! Randomized runs against independently certified reference solutions.

use rayon::prelude::*;
use rpd_harness::spec::{AlgorithmId, DataSource, ErrorSpec, Family, GraphSpec, ScheduleSpec, StopSpec, SPEC_VERSION};
use rpd_harness::{compare, run_experiment, solve_reference, ProblemSpec};

use crate::common::Outcome;

const SEEDS: u64 = 20;
const GAP_TOL: f64 = 1e-4;
const CONSENSUS_TOL: f64 = 1e-5;

fn base(problem: Family, algorithm: AlgorithmId, schedule: ScheduleSpec, max_iters: usize) -> ProblemSpec {
    ProblemSpec {
        version: SPEC_VERSION,
        problem,
        algorithm,
        schedule,
        errors: ErrorSpec::None,
        lambda: 1.0,
        stop: StopSpec { max_iters, tol: 0.0, window: 10 },
        seed: 0,
        force: false,
        alpha: None,
        metrics: None,
        reference: None,
    }
}

pub fn lasso_spec(errors: ErrorSpec) -> ProblemSpec {
    let mut s = base(
        Family::Lasso { samples: 40, features: 20, tau: 0.1, data: DataSource::Seed(7) },
        AlgorithmId::PrimalFirst,
        ScheduleSpec::Bernoulli { p: 0.5 },
        20_000,
    );
    s.errors = errors;
    s
}

pub fn ridge_spec() -> ProblemSpec {
    base(
        Family::RidgeConsensus {
            graph: GraphSpec::Ring { agents: 5 },
            dim: 10,
            rows: 12,
            reg: 0.1,
            data: DataSource::Seed(7),
        },
        AlgorithmId::DistOptimization,
        ScheduleSpec::UniformSingle,
        50_000,
    )
}

/// Worst final objective gap over the seeds.
pub fn lasso_gaps(spec: &ProblemSpec) -> Result<f64, String> {
    let reference = solve_reference(spec).map_err(|e| e.to_string())?;
    let gaps = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let record =
                run_experiment(&ProblemSpec { seed, ..spec.clone() }).map_err(|e| format!("seed {seed}: {e}"))?;
            let c = compare(&record, &reference).map_err(|e| e.to_string())?;
            c.final_gap.ok_or_else(|| format!("seed {seed}: no objective"))
        })
        .collect::<Result<Vec<f64>, String>>()?;
    if let Some((seed, g)) = gaps.iter().enumerate().find(|(_, g)| !(**g < GAP_TOL)) {
        return Err(format!("seed {seed}: final gap {g:e}"));
    }
    Ok(gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Worst distance to the reference and worst disagreement over the seeds.
pub fn ridge_errors(spec: &ProblemSpec) -> Result<(f64, f64), String> {
    let reference = solve_reference(spec).map_err(|e| e.to_string())?;
    let results = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let record =
                run_experiment(&ProblemSpec { seed, ..spec.clone() }).map_err(|e| format!("seed {seed}: {e}"))?;
            let c = compare(&record, &reference).map_err(|e| e.to_string())?;
            let disagreement = record.rows.last().and_then(|r| r.consensus_disagreement).unwrap_or(f64::NAN);
            Ok((c.final_distance, disagreement))
        })
        .collect::<Result<Vec<(f64, f64)>, String>>()?;
    for (seed, (d, g)) in results.iter().enumerate() {
        if !(*d < CONSENSUS_TOL && *g < CONSENSUS_TOL) {
            return Err(format!("seed {seed}: distance {d:e}, disagreement {g:e}"));
        }
    }
    Ok(results.iter().fold((0.0, 0.0), |(a, b), (d, g)| (f64::max(a, *d), f64::max(b, *g))))
}

pub fn run() -> Outcome {
    let gap = lasso_gaps(&lasso_spec(ErrorSpec::None))?;
    let (dist, disagreement) = ridge_errors(&ridge_spec())?;
    Ok(format!(
        "lasso worst gap {gap:.1e}; ridge worst distance {dist:.1e}, disagreement {disagreement:.1e} ({SEEDS} seeds each)"
    ))
}

pub fn run_with_errors() -> Outcome {
    let gap = lasso_gaps(&lasso_spec(ErrorSpec::DecayPower { scale: 1.0, exponent: 2.0 }))?;
    Ok(format!("decaying errors on all channels, worst gap {gap:.1e} over {SEEDS} seeds"))
}
