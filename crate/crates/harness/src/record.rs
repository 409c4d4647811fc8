//! Running a spec and storing its trace.
//!
//! A record is a CSV file with one row per iteration (row 0 is the starting
//! point) and `#` footer lines, plus a JSON sidecar with the spec, the
//! condition report and the final iterate. Neither file holds anything that
//! varies between reruns of the same spec, so reruns are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use rpd_core::distributed::{run_dist, DistState};
use rpd_core::fb_engine::StopRule;
use rpd_core::pd_engine::{run_pd, ConditionReport, IterRecord, PdInjectors, PdState, RunConfig, NORM_TOL};
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;
use crate::spec::ProblemSpec;
use crate::zoo::{build_problem, Instance};

/// Fixed CSV column order.
pub const COLUMNS: [&str; 8] = [
    "n",
    "objective",
    "primal_residual",
    "dual_residual",
    "consensus_disagreement",
    "active_blocks",
    "cum_block_evals",
    "err_norm",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub n: usize,
    pub objective: Option<f64>,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub consensus_disagreement: Option<f64>,
    pub active_blocks: usize,
    pub cum_block_evals: usize,
    pub err_norm: f64,
}

impl From<&IterRecord> for Row {
    fn from(r: &IterRecord) -> Self {
        Self {
            n: r.n,
            objective: r.objective,
            primal_residual: r.primal_residual,
            dual_residual: r.dual_residual,
            consensus_disagreement: r.consensus_disagreement,
            active_blocks: r.active_blocks,
            cum_block_evals: r.cum_block_evals,
            err_norm: r.err_norm,
        }
    }
}

/// JSON numbers cannot hold infinities or NaN; they are written as strings.
mod extended {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(a: &f64, s: S) -> Result<S::Ok, S::Error> {
        if a.is_finite() {
            s.serialize_f64(*a)
        } else {
            s.serialize_str(&a.to_string())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(a) => Ok(a),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(a: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            match a {
                Some(a) => super::serialize(a, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            match Option::<Repr>::deserialize(d)? {
                None => Ok(None),
                Some(Repr::Num(a)) => Ok(Some(a)),
                Some(Repr::Text(t)) => t.parse().map(Some).map_err(serde::de::Error::custom),
            }
        }
    }

    /// Blocks of a (possibly diverged) iterate.
    pub mod blocks {
        use super::*;

        #[derive(Serialize, Deserialize)]
        struct Entry(#[serde(with = "super")] f64);

        pub fn serialize<S: Serializer>(a: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
            let wrapped: Vec<Vec<Entry>> = a.iter().map(|b| b.iter().map(|&x| Entry(x)).collect()).collect();
            wrapped.serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
            let wrapped = Vec::<Vec<Entry>>::deserialize(d)?;
            Ok(wrapped.into_iter().map(|b| b.into_iter().map(|e| e.0).collect()).collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictSummary {
    pub name: String,
    #[serde(with = "extended")]
    pub value: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub algorithm: String,
    #[serde(with = "extended")]
    pub norm: f64,
    #[serde(with = "extended")]
    pub mu: f64,
    #[serde(with = "extended")]
    pub nu: f64,
    #[serde(with = "extended::option")]
    pub alpha: Option<f64>,
    #[serde(with = "extended::option")]
    pub theta: Option<f64>,
    pub verdicts: Vec<VerdictSummary>,
    pub passed: bool,
}

impl From<&ConditionReport> for ConditionSummary {
    fn from(r: &ConditionReport) -> Self {
        Self {
            algorithm: format!("{:?}", r.algorithm),
            norm: r.norm,
            mu: r.mu,
            nu: r.nu,
            alpha: r.alpha,
            theta: r.theta,
            verdicts: r
                .verdicts
                .iter()
                .map(|v| VerdictSummary { name: v.name.to_string(), value: v.value, passed: v.passed })
                .collect(),
            passed: r.passed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub package: String,
    pub version: String,
    pub os: String,
    pub arch: String,
}

impl Environment {
    fn current() -> Self {
        Self {
            package: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
        }
    }
}

/// Everything in the sidecar, which is everything but the rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub config_hash: String,
    pub spec: ProblemSpec,
    pub environment: Environment,
    pub stop_reason: String,
    pub iterations: usize,
    pub condition: ConditionSummary,
    pub condition_forced: bool,
    /// Expected number of active blocks per iteration under the schedule.
    pub expected_active_blocks: f64,
    pub distributed: bool,
    /// Final primal blocks; one per agent for distributed runs.
    #[serde(with = "extended::blocks")]
    pub final_x: Vec<Vec<f64>>,
    #[serde(with = "extended::blocks")]
    pub final_v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<Row>,
    pub meta: RecordMeta,
}

/// Runs the engine configured by `spec` from the zero point.
pub fn run_experiment(spec: &ProblemSpec) -> Result<RunRecord, HarnessError> {
    let instance = build_problem(spec)?;
    let schedule = instance.schedule(&spec.schedule)?;
    let stop = StopRule { max_iters: spec.stop.max_iters, tol: spec.stop.tol, window: spec.stop.window };
    let config = RunConfig { lambda: spec.lambda, stop, force: spec.force, alpha: spec.alpha, norm_tol: NORM_TOL };
    let mut injectors = match spec.errors.kind() {
        rpd_core::errors::ErrorKind::None => PdInjectors::none(),
        kind => PdInjectors::uniform(kind, spec.seed)?,
    };
    let expected_active_blocks = schedule.marginals().iter().sum();
    let (records, stop_reason, condition, condition_forced, final_x, final_v) = match &instance {
        Instance::Pd { problem, algorithm } => {
            let t = run_pd(problem, *algorithm, PdState::zeros(problem), &schedule, config, &mut injectors, spec.seed)?;
            let (x, v) = (t.state.x.into_blocks(), t.state.v.into_blocks());
            (t.records, t.stop_reason, t.condition, t.condition_forced, x, v)
        }
        Instance::Dist { problem, algorithm } => {
            let t =
                run_dist(problem, *algorithm, DistState::zeros(problem), &schedule, config, &mut injectors, spec.seed)?;
            let mut v = t.state.v;
            v.extend(t.state.edge_v);
            (t.records, t.stop_reason, t.condition, t.condition_forced, t.state.x, v)
        }
    };
    let rows: Vec<Row> = records.iter().map(Row::from).collect();
    let meta = RecordMeta {
        config_hash: spec.config_hash(),
        spec: spec.clone(),
        environment: Environment::current(),
        stop_reason: stop_reason.as_str().to_string(),
        iterations: rows.len() - 1,
        condition: ConditionSummary::from(&condition),
        condition_forced,
        expected_active_blocks,
        distributed: instance.is_distributed(),
        final_x,
        final_v,
    };
    Ok(RunRecord { rows, meta })
}

impl RunRecord {
    /// Final objective value, if the objective column is filled.
    pub fn final_objective(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.objective)
    }

    /// Mean number of active blocks per iteration.
    pub fn mean_active_blocks(&self) -> f64 {
        if self.meta.iterations == 0 {
            return 0.0;
        }
        self.rows.last().map_or(0, |r| r.cum_block_evals) as f64 / self.meta.iterations as f64
    }

    pub fn csv_bytes(&self) -> Result<Vec<u8>, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        let mut out = w.into_inner().map_err(|e| HarnessError::Record(e.to_string()))?;
        let footer = format!(
            "# stop_reason={}\n# iterations={}\n# condition_forced={}\n# config_hash={}\n",
            self.meta.stop_reason, self.meta.iterations, self.meta.condition_forced, self.meta.config_hash
        );
        out.extend_from_slice(footer.as_bytes());
        Ok(out)
    }

    pub fn sidecar_bytes(&self) -> Result<Vec<u8>, HarnessError> {
        let mut out = serde_json::to_vec_pretty(&self.meta)?;
        out.push(b'\n');
        Ok(out)
    }

    /// Writes `<dir>/<stem>.csv` and `<dir>/<stem>.json`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf), HarnessError> {
        fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let json_path = dir.join(format!("{stem}.json"));
        fs::write(&csv_path, self.csv_bytes()?)?;
        fs::write(&json_path, self.sidecar_bytes()?)?;
        Ok((csv_path, json_path))
    }

    /// Reads a CSV record and the sidecar next to it, checking that the
    /// footer and the sidecar agree.
    pub fn read(csv_path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(csv_path)?;
        let meta: RecordMeta = serde_json::from_str(&fs::read_to_string(csv_path.with_extension("json"))?)?;
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        if reader.headers()?.iter().ne(COLUMNS) {
            return Err(HarnessError::Record("unexpected CSV header".into()));
        }
        let rows = reader.deserialize().collect::<Result<Vec<Row>, _>>()?;
        let footer: Vec<(&str, &str)> =
            text.lines().filter_map(|l| l.strip_prefix("# ")).filter_map(|l| l.split_once('=')).collect();
        let get = |key: &str| footer.iter().find(|(k, _)| *k == key).map(|(_, v)| *v);
        if get("config_hash") != Some(meta.config_hash.as_str())
            || get("stop_reason") != Some(meta.stop_reason.as_str())
        {
            return Err(HarnessError::Record("footer does not match the sidecar".into()));
        }
        if rows.len() != meta.iterations + 1 {
            return Err(HarnessError::Record(format!("{} rows for {} iterations", rows.len(), meta.iterations)));
        }
        if meta.spec.config_hash() != meta.config_hash {
            return Err(HarnessError::Record("config hash does not reproduce the stored spec".into()));
        }
        Ok(Self { rows, meta })
    }
}
