//! Run records against reference solutions.

use serde::{Deserialize, Serialize};

use crate::error::HarnessError;
use crate::record::RunRecord;
use crate::reference::{Method, ReferenceSolution};

pub const GAP_THRESHOLDS: [f64; 3] = [1e-2, 1e-4, 1e-6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub tol: f64,
    /// First iteration with objective gap below `tol`.
    pub iteration: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// `objective - reference objective` at the last row.
    pub final_gap: Option<f64>,
    /// `||x - x*||`, or `max_i ||x_i - x*||` over the agents of a
    /// distributed run.
    pub final_distance: f64,
    pub thresholds: Vec<Threshold>,
}

impl ReferenceSolution {
    /// The final iterate and objective of a record, for comparing runs
    /// with each other.
    pub fn from_record(record: &RunRecord) -> Result<Self, HarnessError> {
        Ok(Self {
            x: record.meta.final_x.concat(),
            v: Some(record.meta.final_v.concat()),
            objective: record
                .final_objective()
                .ok_or_else(|| HarnessError::Record("record has no objective column".into()))?,
            method: Method::Record,
            residual: None,
        })
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn compare(record: &RunRecord, reference: &ReferenceSolution) -> Result<Comparison, HarnessError> {
    let flat = record.meta.final_x.concat();
    let star = &reference.x;
    let final_distance = if star.len() == flat.len() {
        distance(&flat, star)
    } else if record.meta.distributed && record.meta.final_x.iter().all(|x| x.len() == star.len()) {
        record.meta.final_x.iter().map(|x| distance(x, star)).fold(0.0, f64::max)
    } else {
        return Err(HarnessError::Record(format!(
            "reference has dimension {}, record final point has {}",
            star.len(),
            flat.len()
        )));
    };
    let gap = |r: &crate::record::Row| r.objective.map(|f| f - reference.objective);
    let thresholds = GAP_THRESHOLDS
        .iter()
        .map(|&tol| Threshold {
            tol,
            iteration: record.rows.iter().find(|r| gap(r).is_some_and(|g| g < tol)).map(|r| r.n),
        })
        .collect();
    Ok(Comparison { final_gap: record.rows.last().and_then(gap), final_distance, thresholds })
}
