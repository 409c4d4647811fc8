//! Parameter sweeps. Runs are independent and execute in parallel; each
//! one owns its random streams.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;
use crate::record::{run_experiment, RunRecord};
use crate::spec::ProblemSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub value: String,
    pub record: RunRecord,
}

/// One line of the sweep summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub iterations: usize,
    pub stop_reason: String,
    /// Expected active blocks per iteration.
    pub expected_cost: f64,
    /// Realized active blocks per iteration.
    pub mean_cost: f64,
    pub cum_block_evals: usize,
    pub final_objective: Option<f64>,
}

impl From<&SweepEntry> for SweepRow {
    fn from(e: &SweepEntry) -> Self {
        Self {
            value: e.value.clone(),
            iterations: e.record.meta.iterations,
            stop_reason: e.record.meta.stop_reason.clone(),
            expected_cost: e.record.meta.expected_active_blocks,
            mean_cost: e.record.mean_active_blocks(),
            cum_block_evals: e.record.rows.last().map_or(0, |r| r.cum_block_evals),
            final_objective: e.record.final_objective(),
        }
    }
}

/// Runs `spec` once per value of the field at `path`, in input order.
pub fn sweep(spec: &ProblemSpec, path: &str, values: &[String]) -> Result<Vec<SweepEntry>, HarnessError> {
    let specs = values.iter().map(|v| spec.with_param(path, v)).collect::<Result<Vec<_>, _>>()?;
    specs
        .par_iter()
        .zip(values.par_iter())
        .map(|(s, v)| Ok(SweepEntry { value: v.clone(), record: run_experiment(s)? }))
        .collect()
}

pub fn summary_csv(entries: &[SweepEntry]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in entries {
        w.serialize(SweepRow::from(e))?;
    }
    w.into_inner().map_err(|e| HarnessError::Record(e.to_string()))
}
