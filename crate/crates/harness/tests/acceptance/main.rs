//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit status
//! if any criterion fails.

mod conditions;
mod convergence;
mod invariants;
mod lifted;
mod moreau;
mod rerun;
mod sampling;
mod transcription;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::Outcome;

struct Criterion {
    id: &'static str,
    name: &'static str,
    budget: Option<Duration>,
    check: fn() -> Outcome,
}

const CRITERIA: [Criterion; 9] = [
    Criterion { id: "1", name: "moreau decomposition", budget: Some(Duration::from_secs(5)), check: moreau::run },
    Criterion {
        id: "2",
        name: "deterministic transcription",
        budget: Some(Duration::from_secs(10)),
        check: transcription::run,
    },
    Criterion { id: "3", name: "lifted equivalence", budget: Some(Duration::from_secs(10)), check: lifted::run },
    Criterion {
        id: "4",
        name: "convergence to reference",
        budget: Some(Duration::from_secs(60)),
        check: convergence::run,
    },
    Criterion { id: "5", name: "error tolerance", budget: None, check: convergence::run_with_errors },
    Criterion { id: "6", name: "condition checker", budget: None, check: conditions::run },
    Criterion { id: "7", name: "invariants", budget: None, check: invariants::run },
    Criterion { id: "8", name: "activation statistics", budget: None, check: sampling::run },
    Criterion { id: "9", name: "reproducibility", budget: None, check: rerun::run },
];

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for c in CRITERIA.iter().filter(|c| filter.is_empty() || filter.iter().any(|f| f == c.id)) {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(c.check).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.budget) {
            (Ok(_), Some(b)) if elapsed > b => {
                Err(format!("took {:.2}s, budget {}s", elapsed.as_secs_f64(), b.as_secs()))
            }
            (o, _) => o,
        };
        let (status, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {} ({}): {status} [{:.2}s] {detail}", c.id, c.name, elapsed.as_secs_f64());
        failed += outcome.is_err() as usize;
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
