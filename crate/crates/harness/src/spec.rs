//! Problem specification documents.
//!
//! A spec is a JSON document with a `version` field; unknown fields are
//! rejected everywhere so that a typo never silently falls back to a default.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::HarnessError;

pub const SPEC_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub version: u32,
    pub problem: Family,
    pub algorithm: AlgorithmId,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub errors: ErrorSpec,
    pub lambda: f64,
    pub stop: StopSpec,
    /// Seed of the activation and error streams.
    #[serde(default)]
    pub seed: u64,
    /// Run even when the step-size condition fails.
    #[serde(default)]
    pub force: bool,
    /// Weight in the primal-dual condition; default is its maximizer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Scalar metric overrides for the zoo families.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricSpec>,
    /// Known solution, required to compare runs of the custom families.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceSpec>,
}

/// Either a generator seed or the data itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource<T> {
    Seed(u64),
    Inline(T),
}

/// `min 1/2 ||A x - b||^2` data, `a` given by rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LsInline {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", deny_unknown_fields)]
pub enum Family {
    /// `min tau ||x||_1 + 1/2 ||A x - b||^2`
    #[serde(rename = "lasso")]
    Lasso { samples: usize, features: usize, tau: f64, data: DataSource<LsInline> },
    /// `min 1/2 ||x - y||^2 + weight ||D x||_1` with `D` the first difference.
    #[serde(rename = "tv1d")]
    Tv1d { len: usize, weight: f64, data: DataSource<Vec<f64>> },
    /// `min 1/2 ||A x - b||^2` over the box `[lo, hi]^n`.
    #[serde(rename = "box_ls")]
    BoxLs { samples: usize, features: usize, lo: f64, hi: f64, data: DataSource<LsInline> },
    /// `min sum_i 1/2 ||A_i x - b_i||^2 + reg/2 ||x||^2` split over agents.
    #[serde(rename = "ridge_consensus")]
    RidgeConsensus { graph: GraphSpec, dim: usize, rows: usize, reg: f64, data: DataSource<Vec<LsInline>> },
    #[serde(rename = "custom-pd")]
    CustomPd { primal: Vec<PrimalSpec>, dual: Vec<DualSpec>, coupling: Vec<CouplingSpec> },
    #[serde(rename = "custom-dist")]
    CustomDist {
        graph: GraphSpec,
        dim: usize,
        agents: Vec<AgentSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta: Option<Vec<f64>>,
    },
}

impl Family {
    pub fn is_distributed(&self) -> bool {
        matches!(self, Family::RidgeConsensus { .. } | Family::CustomDist { .. })
    }

    pub fn is_custom(&self) -> bool {
        matches!(self, Family::CustomPd { .. } | Family::CustomDist { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::Lasso { .. } => "lasso",
            Family::Tv1d { .. } => "tv1d",
            Family::BoxLs { .. } => "box_ls",
            Family::RidgeConsensus { .. } => "ridge_consensus",
            Family::CustomPd { .. } => "custom-pd",
            Family::CustomDist { .. } => "custom-dist",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    Ring { agents: usize },
    Path { agents: usize },
    Edges { agents: usize, edges: Vec<Vec<usize>> },
}

impl GraphSpec {
    pub fn agents(&self) -> usize {
        match self {
            GraphSpec::Ring { agents } | GraphSpec::Path { agents } | GraphSpec::Edges { agents, .. } => *agents,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProxSpec {
    L1 { dim: usize, weight: f64 },
    SqDistance { center: Vec<f64>, weight: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Zero { dim: usize },
    Point { point: Vec<f64> },
}

impl ProxSpec {
    pub fn dim(&self) -> usize {
        match self {
            ProxSpec::L1 { dim, .. } | ProxSpec::Zero { dim } => *dim,
            ProxSpec::SqDistance { center, .. } => center.len(),
            ProxSpec::Box { lo, .. } => lo.len(),
            ProxSpec::Point { point } => point.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SmoothSpec {
    Zero {
        dim: usize,
    },
    /// `weight/2 ||M x - target||^2 + <linear, x>`
    LeastSquares {
        matrix: Vec<Vec<f64>>,
        target: Vec<f64>,
        weight: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        linear: Option<Vec<f64>>,
    },
    Linear {
        c: Vec<f64>,
    },
}

impl SmoothSpec {
    pub fn dim(&self) -> usize {
        match self {
            SmoothSpec::Zero { dim } => *dim,
            SmoothSpec::LeastSquares { matrix, .. } => matrix.first().map_or(0, Vec::len),
            SmoothSpec::Linear { c } => c.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimalSpec {
    pub operator: ProxSpec,
    pub smooth: SmoothSpec,
    pub metric: Vec<f64>,
}

/// `operator` is `g_k`; `smooth` is `l_k^*`, whose gradient is `D_k^{-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualSpec {
    pub operator: ProxSpec,
    pub smooth: SmoothSpec,
    pub metric: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSpec {
    pub row: usize,
    pub col: usize,
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub operator: ProxSpec,
    pub smooth: SmoothSpec,
    pub dual_operator: ProxSpec,
    pub dual_smooth: SmoothSpec,
    pub coupling: Vec<Vec<f64>>,
    pub primal_metric: Vec<f64>,
    pub dual_metric: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmId {
    PrimalFirst,
    DualFirst,
    NoPrimalOperator,
    DistPrimalDual,
    DistNoPrimalOperator,
    DistOptimization,
    DistPairwise,
}

impl AlgorithmId {
    pub fn is_distributed(self) -> bool {
        matches!(
            self,
            AlgorithmId::DistPrimalDual
                | AlgorithmId::DistNoPrimalOperator
                | AlgorithmId::DistOptimization
                | AlgorithmId::DistPairwise
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    #[default]
    Full,
    /// The same probability for every raw coordinate.
    Bernoulli {
        p: f64,
    },
    /// One probability per raw coordinate.
    BernoulliEach {
        p: Vec<f64>,
    },
    UniformSingle,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ErrorSpec {
    #[default]
    None,
    DecayPower {
        scale: f64,
        exponent: f64,
    },
    DecayGeometric {
        scale: f64,
        ratio: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopSpec {
    pub max_iters: usize,
    #[serde(default)]
    pub tol: f64,
    #[serde(default = "default_window")]
    pub window: usize,
}

fn default_window() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primal: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    pub x: Vec<f64>,
    pub objective: f64,
}

fn positive(name: &str, a: f64) -> Result<(), HarnessError> {
    if a > 0.0 && a.is_finite() {
        Ok(())
    } else {
        Err(HarnessError::spec(format!("{name} must be positive and finite, got {a}")))
    }
}

fn nonnegative(name: &str, a: f64) -> Result<(), HarnessError> {
    if a >= 0.0 && a.is_finite() {
        Ok(())
    } else {
        Err(HarnessError::spec(format!("{name} must be nonnegative and finite, got {a}")))
    }
}

fn nonzero(name: &str, n: usize) -> Result<(), HarnessError> {
    if n > 0 {
        Ok(())
    } else {
        Err(HarnessError::spec(format!("{name} must be positive")))
    }
}

fn check_matrix(name: &str, m: &[Vec<f64>], rows: usize, cols: usize) -> Result<(), HarnessError> {
    if m.len() != rows || m.iter().any(|r| r.len() != cols) {
        return Err(HarnessError::spec(format!("{name} must be {rows}x{cols}")));
    }
    Ok(())
}

fn check_ls(name: &str, d: &LsInline, rows: usize, cols: usize) -> Result<(), HarnessError> {
    check_matrix(&format!("{name}.a"), &d.a, rows, cols)?;
    if d.b.len() != rows {
        return Err(HarnessError::spec(format!("{name}.b must have {rows} entries")));
    }
    Ok(())
}

impl ProblemSpec {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let spec: Self = serde_json::from_str(text).map_err(|e| HarnessError::spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, HarnessError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("specs always serialize")
    }

    /// SHA-256 of the compact serialization.
    pub fn config_hash(&self) -> String {
        let text = serde_json::to_string(self).expect("specs always serialize");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Copy with the field at the dotted `path` replaced by `value`, parsed
    /// as JSON when possible and as a string otherwise.
    pub fn with_param(&self, path: &str, value: &str) -> Result<Self, HarnessError> {
        let mut doc = serde_json::to_value(self).expect("specs always serialize");
        let mut slot = &mut doc;
        for key in path.split('.') {
            slot = match slot {
                Value::Object(map) => map.get_mut(key),
                Value::Array(items) => key.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
                _ => None,
            }
            .ok_or_else(|| HarnessError::spec(format!("no field {path:?} in the spec")))?;
        }
        *slot = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        let spec: Self = serde_json::from_value(doc).map_err(|e| HarnessError::spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.version != SPEC_VERSION {
            return Err(HarnessError::spec(format!("unsupported version {}", self.version)));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(HarnessError::spec(format!("lambda {} outside (0, 1]", self.lambda)));
        }
        nonzero("stop.max_iters", self.stop.max_iters)?;
        nonnegative("stop.tol", self.stop.tol)?;
        if let Some(a) = self.alpha {
            positive("alpha", a)?;
        }
        if let Some(m) = self.metrics {
            m.primal.map(|a| positive("metrics.primal", a)).transpose()?;
            m.dual.map(|a| positive("metrics.dual", a)).transpose()?;
        }
        match &self.schedule {
            ScheduleSpec::Bernoulli { p } if !(*p > 0.0 && *p <= 1.0) => {
                return Err(HarnessError::spec(format!("activation probability {p} outside (0, 1]")));
            }
            ScheduleSpec::BernoulliEach { p } if p.iter().any(|a| !(0.0..=1.0).contains(a)) => {
                return Err(HarnessError::spec("activation probabilities must lie in [0, 1]"));
            }
            _ => {}
        }
        self.errors.kind().validate().map_err(|e| HarnessError::spec(e.to_string()))?;
        if self.problem.is_distributed() != self.algorithm.is_distributed() {
            return Err(HarnessError::spec(format!(
                "algorithm {:?} does not fit the {} family",
                self.algorithm,
                self.problem.name()
            )));
        }
        self.validate_family()
    }

    fn validate_family(&self) -> Result<(), HarnessError> {
        match &self.problem {
            Family::Lasso { samples, features, tau, data } => {
                nonzero("samples", *samples)?;
                nonzero("features", *features)?;
                nonnegative("tau", *tau)?;
                if let DataSource::Inline(d) = data {
                    check_ls("data", d, *samples, *features)?;
                }
            }
            Family::Tv1d { len, weight, data } => {
                if *len < 2 {
                    return Err(HarnessError::spec("tv1d needs at least two samples"));
                }
                nonnegative("weight", *weight)?;
                if let DataSource::Inline(y) = data {
                    if y.len() != *len {
                        return Err(HarnessError::spec(format!("signal must have {len} entries")));
                    }
                }
            }
            Family::BoxLs { samples, features, lo, hi, data } => {
                nonzero("samples", *samples)?;
                nonzero("features", *features)?;
                if !(lo <= hi) || lo.is_nan() || hi.is_nan() {
                    return Err(HarnessError::spec(format!("empty box [{lo}, {hi}]")));
                }
                if let DataSource::Inline(d) = data {
                    check_ls("data", d, *samples, *features)?;
                }
            }
            Family::RidgeConsensus { graph, dim, rows, reg, data } => {
                nonzero("dim", *dim)?;
                nonzero("rows", *rows)?;
                nonzero("graph.agents", graph.agents())?;
                nonnegative("reg", *reg)?;
                if let DataSource::Inline(blocks) = data {
                    if blocks.len() != graph.agents() {
                        return Err(HarnessError::spec(format!("data must hold {} agent blocks", graph.agents())));
                    }
                    for (i, d) in blocks.iter().enumerate() {
                        check_ls(&format!("data[{i}]"), d, *rows, *dim)?;
                    }
                }
            }
            Family::CustomPd { primal, dual, coupling } => {
                if primal.is_empty() || dual.is_empty() {
                    return Err(HarnessError::spec("custom-pd needs primal and dual blocks"));
                }
                for (j, b) in primal.iter().enumerate() {
                    let d = b.operator.dim();
                    nonzero(&format!("primal[{j}] dimension"), d)?;
                    if b.smooth.dim() != d || b.metric.len() != d {
                        return Err(HarnessError::spec(format!("primal[{j}] has inconsistent dimensions")));
                    }
                }
                for (k, b) in dual.iter().enumerate() {
                    let d = b.operator.dim();
                    nonzero(&format!("dual[{k}] dimension"), d)?;
                    if b.smooth.dim() != d || b.metric.len() != d {
                        return Err(HarnessError::spec(format!("dual[{k}] has inconsistent dimensions")));
                    }
                }
                for (i, c) in coupling.iter().enumerate() {
                    let (Some(r), Some(q)) = (dual.get(c.row), primal.get(c.col)) else {
                        return Err(HarnessError::spec(format!("coupling[{i}] indexes a missing block")));
                    };
                    check_matrix(&format!("coupling[{i}]"), &c.matrix, r.operator.dim(), q.operator.dim())?;
                }
            }
            Family::CustomDist { graph, dim, agents, theta } => {
                nonzero("dim", *dim)?;
                if agents.len() != graph.agents() {
                    return Err(HarnessError::spec(format!(
                        "{} agents given, graph has {}",
                        agents.len(),
                        graph.agents()
                    )));
                }
                for (i, a) in agents.iter().enumerate() {
                    let q = a.dual_operator.dim();
                    if a.operator.dim() != *dim || a.smooth.dim() != *dim || a.primal_metric.len() != *dim {
                        return Err(HarnessError::spec(format!("agent {i}: primal data must have dimension {dim}")));
                    }
                    if q == 0 || a.dual_smooth.dim() != q || a.dual_metric.len() != q {
                        return Err(HarnessError::spec(format!("agent {i}: dual data has inconsistent dimensions")));
                    }
                    check_matrix(&format!("agent {i} coupling"), &a.coupling, q, *dim)?;
                }
                if let Some(t) = theta {
                    t.iter().try_for_each(|&a| positive("theta", a))?;
                }
            }
        }
        Ok(())
    }
}

impl ErrorSpec {
    pub fn kind(&self) -> rpd_core::errors::ErrorKind {
        use rpd_core::errors::ErrorKind;
        match *self {
            ErrorSpec::None => ErrorKind::None,
            ErrorSpec::DecayPower { scale, exponent } => ErrorKind::DecayPower { scale, exponent },
            ErrorSpec::DecayGeometric { scale, ratio } => ErrorKind::DecayGeometric { scale, ratio },
        }
    }
}
