//! Problem instances built from specs.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rpd_core::activation::{ActivationSchedule, ScheduleKind};
use rpd_core::distributed::{Agent, DistAlgorithm, DistProblem, Hypergraph};
use rpd_core::linalg::{BlockOperatorMatrix, DiagonalMetric, LinearBlock};
use rpd_core::operators::{MonotoneOp, ProxFn, SmoothFn};
use rpd_core::pd_engine::{
    check_alg1, check_alg2, ConditionReport, DualBlock, PdAlgorithm, PdProblem, PrimalBlock, NORM_TOL,
};

use crate::error::HarnessError;
use crate::spec::{
    AlgorithmId, DataSource, Family, GraphSpec, LsInline, MetricSpec, ProblemSpec, ProxSpec, ScheduleSpec, SmoothSpec,
};

/// Share of `1 - ||U^{1/2} L W^{1/2}||^2` given up by the default dual metric.
const DEFAULT_COUPLING: f64 = 0.4;
/// Default primal step of a distributed agent, relative to `1 / Lip(h_i)`.
const DEFAULT_AGENT_STEP: f64 = 0.9;
const DEFAULT_AGENT_DUAL_METRIC: f64 = 1e-4;

fn bad(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Spec(e.to_string())
}

/// Least-squares data `(A, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LsData {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl LsData {
    fn from_inline(d: &LsInline) -> Self {
        let cols = d.a.first().map_or(0, Vec::len);
        Self { a: DMatrix::from_fn(d.a.len(), cols, |r, c| d.a[r][c]), b: DVector::from_column_slice(&d.b) }
    }

    fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
        let scale = 1.0 / (rows as f64).sqrt();
        DMatrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
    }

    fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
    }
}

/// Gaussian design, sparse ground truth with a fifth of the entries
/// nonzero, small observation noise.
pub fn lasso_data(samples: usize, features: usize, data: &DataSource<LsInline>) -> LsData {
    match data {
        DataSource::Inline(d) => LsData::from_inline(d),
        DataSource::Seed(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let a = LsData::gaussian(&mut rng, samples, features);
            let mut truth = DVector::zeros(features);
            for i in sample(&mut rng, features, (features / 5).max(1)) {
                truth[i] = rng.sample(StandardNormal);
            }
            let noise = LsData::normal_vec(&mut rng, samples);
            let b = &a * truth + 0.05 * noise;
            LsData { a, b }
        }
    }
}

pub fn box_data(samples: usize, features: usize, data: &DataSource<LsInline>) -> LsData {
    match data {
        DataSource::Inline(d) => LsData::from_inline(d),
        DataSource::Seed(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let a = LsData::gaussian(&mut rng, samples, features);
            let b = LsData::normal_vec(&mut rng, samples);
            LsData { a, b }
        }
    }
}

/// Four constant pieces plus Gaussian noise of standard deviation 0.2.
pub fn tv_signal(len: usize, data: &DataSource<Vec<f64>>) -> Vec<f64> {
    match data {
        DataSource::Inline(y) => y.clone(),
        DataSource::Seed(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let levels: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
            (0..len).map(|i| levels[4 * i / len] + 0.2 * rng.sample::<f64, _>(StandardNormal)).collect()
        }
    }
}

pub fn ridge_data(agents: usize, rows: usize, dim: usize, data: &DataSource<Vec<LsInline>>) -> Vec<LsData> {
    match data {
        DataSource::Inline(blocks) => blocks.iter().map(LsData::from_inline).collect(),
        DataSource::Seed(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..agents)
                .map(|_| {
                    let a = LsData::gaussian(&mut rng, rows, dim);
                    let b = LsData::normal_vec(&mut rng, rows);
                    LsData { a, b }
                })
                .collect()
        }
    }
}

pub fn hypergraph(g: &GraphSpec) -> Result<Hypergraph, HarnessError> {
    match g {
        GraphSpec::Ring { agents } => Hypergraph::ring(*agents),
        GraphSpec::Path { agents } => Hypergraph::path(*agents),
        GraphSpec::Edges { agents, edges } => Hypergraph::new(*agents, edges.clone()),
    }
    .map_err(bad)
}

pub fn prox_fn(p: &ProxSpec) -> Result<ProxFn, HarnessError> {
    match p {
        ProxSpec::L1 { dim, weight } => ProxFn::l1(*dim, *weight),
        ProxSpec::SqDistance { center, weight } => ProxFn::sq_distance(center.clone(), *weight),
        ProxSpec::Box { lo, hi } => ProxFn::boxed(lo.clone(), hi.clone()),
        ProxSpec::Zero { dim } => Ok(ProxFn::zero(*dim)),
        ProxSpec::Point { point } => ProxFn::point(point.clone()),
    }
    .map_err(bad)
}

pub fn smooth_fn(s: &SmoothSpec) -> Result<SmoothFn, HarnessError> {
    match s {
        SmoothSpec::Zero { dim } => Ok(SmoothFn::zero(*dim)),
        SmoothSpec::LeastSquares { matrix, target, weight, linear } => {
            let m = LinearBlock::from_rows(matrix).map_err(bad)?;
            let f = SmoothFn::least_squares(m, target.clone(), *weight).map_err(bad)?;
            match linear {
                Some(c) => f.with_linear(c.clone()).map_err(bad),
                None => Ok(f),
            }
        }
        SmoothSpec::Linear { c } => Ok(SmoothFn::linear(c.clone())),
    }
}

fn matrix_block(m: &DMatrix<f64>) -> Result<LinearBlock, HarnessError> {
    LinearBlock::from_dmatrix(m).map_err(bad)
}

/// A problem wired to the engine that runs it.
#[derive(Debug, Clone)]
pub enum Instance {
    Pd { problem: PdProblem, algorithm: PdAlgorithm },
    Dist { problem: DistProblem, algorithm: DistAlgorithm },
}

impl Instance {
    pub fn schedule(&self, spec: &ScheduleSpec) -> Result<ActivationSchedule, HarnessError> {
        let rule = match self {
            Instance::Pd { problem, algorithm } => problem.closure_rule(algorithm.activation_algorithm()),
            Instance::Dist { problem, algorithm } => {
                problem.graph().closure_rule(*algorithm == DistAlgorithm::Pairwise)
            }
        };
        let kind = match spec {
            ScheduleSpec::Full => ScheduleKind::Full,
            ScheduleSpec::Bernoulli { p } => ScheduleKind::IidBernoulli(vec![*p; rule.raw_len()]),
            ScheduleSpec::BernoulliEach { p } => ScheduleKind::IidBernoulli(p.clone()),
            ScheduleSpec::UniformSingle => ScheduleKind::UniformSingleSeed,
        };
        ActivationSchedule::new(kind, rule).map_err(bad)
    }

    /// Step-size condition of the configured algorithm.
    pub fn condition(&self, alpha: Option<f64>) -> Result<ConditionReport, HarnessError> {
        Ok(match self {
            Instance::Pd { problem, algorithm: PdAlgorithm::NoPrimalOperator } => check_alg2(problem, NORM_TOL)?,
            Instance::Pd { problem, .. } => check_alg1(problem, alpha, NORM_TOL)?,
            Instance::Dist { problem, algorithm } => problem.condition(algorithm.condition())?,
        })
    }

    pub fn is_distributed(&self) -> bool {
        matches!(self, Instance::Dist { .. })
    }
}

/// `f`, `h`, `g` and `L` with one block each, `W = w I`, `U = u I`. By
/// default `w = 1 / Lip(grad h)` and `u` spends [`DEFAULT_COUPLING`] of the
/// coupling budget.
fn single_block(
    f: ProxFn,
    h: SmoothFn,
    g: ProxFn,
    l: LinearBlock,
    metrics: Option<MetricSpec>,
) -> Result<PdProblem, HarnessError> {
    let (p, q) = (l.cols(), l.rows());
    let lip = h.lipschitz();
    let w = metrics.and_then(|m| m.primal).unwrap_or(if lip > 0.0 { 1.0 / lip } else { 1.0 });
    let u = metrics.and_then(|m| m.dual).unwrap_or(DEFAULT_COUPLING / (w * l.operator_norm().powi(2)));
    PdProblem::new(
        vec![PrimalBlock::new(MonotoneOp::Subdifferential(f), h)],
        vec![DualBlock::new(MonotoneOp::Subdifferential(g), SmoothFn::zero(q))],
        BlockOperatorMatrix::new(vec![q], vec![p], [(0, 0, l)]).map_err(bad)?,
        DiagonalMetric::scalar(&[p], w).map_err(bad)?,
        DiagonalMetric::scalar(&[q], u).map_err(bad)?,
    )
    .map_err(bad)
}

fn pd_algorithm(id: AlgorithmId) -> PdAlgorithm {
    match id {
        AlgorithmId::DualFirst => PdAlgorithm::DualFirst,
        AlgorithmId::NoPrimalOperator => PdAlgorithm::NoPrimalOperator,
        _ => PdAlgorithm::PrimalFirst,
    }
}

fn dist_algorithm(id: AlgorithmId) -> DistAlgorithm {
    match id {
        AlgorithmId::DistNoPrimalOperator => DistAlgorithm::NoPrimalOperator,
        AlgorithmId::DistOptimization => DistAlgorithm::Optimization,
        AlgorithmId::DistPairwise => DistAlgorithm::Pairwise,
        _ => DistAlgorithm::PrimalDual,
    }
}

/// Wires the problem described by `spec`; deterministic in the data seed.
pub fn build_problem(spec: &ProblemSpec) -> Result<Instance, HarnessError> {
    spec.validate()?;
    let metrics = spec.metrics;
    let instance = match &spec.problem {
        Family::Lasso { samples, features, tau, data } => {
            let d = lasso_data(*samples, *features, data);
            let h = SmoothFn::least_squares(matrix_block(&d.a)?, d.b.as_slice().to_vec(), 1.0).map_err(bad)?;
            let f = ProxFn::l1(*features, *tau).map_err(bad)?;
            let problem = single_block(f, h, ProxFn::zero(*features), LinearBlock::identity(*features), metrics)?;
            Instance::Pd { problem, algorithm: pd_algorithm(spec.algorithm) }
        }
        Family::Tv1d { len, weight, data } => {
            let y = tv_signal(*len, data);
            let h = SmoothFn::least_squares(LinearBlock::identity(*len), y, 1.0).map_err(bad)?;
            let g = ProxFn::l1(len - 1, *weight).map_err(bad)?;
            let problem = single_block(ProxFn::zero(*len), h, g, LinearBlock::first_difference(*len), metrics)?;
            Instance::Pd { problem, algorithm: pd_algorithm(spec.algorithm) }
        }
        Family::BoxLs { samples, features, lo, hi, data } => {
            let d = box_data(*samples, *features, data);
            let h = SmoothFn::least_squares(matrix_block(&d.a)?, d.b.as_slice().to_vec(), 1.0).map_err(bad)?;
            let f = ProxFn::boxed(vec![*lo; *features], vec![*hi; *features]).map_err(bad)?;
            let problem = single_block(f, h, ProxFn::zero(*features), LinearBlock::identity(*features), metrics)?;
            Instance::Pd { problem, algorithm: pd_algorithm(spec.algorithm) }
        }
        Family::RidgeConsensus { graph, dim, rows, reg, data } => {
            let h = hypergraph(graph)?;
            let m = h.num_agents();
            let blocks = ridge_data(m, *rows, *dim, data);
            let shrink = (reg / m as f64).sqrt();
            let agents = blocks
                .iter()
                .map(|d| {
                    // 1/2 ||A_i x - b_i||^2 + reg/(2m) ||x||^2 as one least-squares term
                    let mut a = DMatrix::zeros(rows + dim, *dim);
                    a.rows_mut(0, *rows).copy_from(&d.a);
                    a.rows_mut(*rows, *dim).fill_diagonal(shrink);
                    let mut b = vec![0.0; rows + dim];
                    b[..*rows].copy_from_slice(d.b.as_slice());
                    let smooth = SmoothFn::least_squares(matrix_block(&a)?, b, 1.0).map_err(bad)?;
                    let lip = smooth.lipschitz();
                    let w = metrics.and_then(|m| m.primal).unwrap_or(DEFAULT_AGENT_STEP / lip);
                    let u = metrics.and_then(|m| m.dual).unwrap_or(DEFAULT_AGENT_DUAL_METRIC);
                    Ok(Agent {
                        primal: PrimalBlock::new(MonotoneOp::zero(*dim), smooth),
                        dual: DualBlock::new(MonotoneOp::zero(*dim), SmoothFn::zero(*dim)),
                        coupling: LinearBlock::identity(*dim),
                        primal_metric: vec![w; *dim],
                        dual_metric: vec![u; *dim],
                    })
                })
                .collect::<Result<Vec<_>, HarnessError>>()?;
            let algorithm = dist_algorithm(spec.algorithm);
            let problem = DistProblem::with_default_theta(h, *dim, agents, algorithm.condition())?;
            Instance::Dist { problem, algorithm }
        }
        Family::CustomPd { primal, dual, coupling } => {
            let primal_dims: Vec<usize> = primal.iter().map(|b| b.operator.dim()).collect();
            let dual_dims: Vec<usize> = dual.iter().map(|b| b.operator.dim()).collect();
            let blocks = primal
                .iter()
                .map(|b| {
                    Ok(PrimalBlock::new(MonotoneOp::Subdifferential(prox_fn(&b.operator)?), smooth_fn(&b.smooth)?))
                })
                .collect::<Result<Vec<_>, HarnessError>>()?;
            let duals = dual
                .iter()
                .map(|b| Ok(DualBlock::new(MonotoneOp::Subdifferential(prox_fn(&b.operator)?), smooth_fn(&b.smooth)?)))
                .collect::<Result<Vec<_>, HarnessError>>()?;
            let entries = coupling
                .iter()
                .map(|c| Ok((c.row, c.col, LinearBlock::from_rows(&c.matrix).map_err(bad)?)))
                .collect::<Result<Vec<_>, HarnessError>>()?;
            let problem = PdProblem::new(
                blocks,
                duals,
                BlockOperatorMatrix::new(dual_dims, primal_dims, entries).map_err(bad)?,
                DiagonalMetric::new(primal.iter().map(|b| b.metric.clone()).collect()).map_err(bad)?,
                DiagonalMetric::new(dual.iter().map(|b| b.metric.clone()).collect()).map_err(bad)?,
            )
            .map_err(bad)?;
            Instance::Pd { problem, algorithm: pd_algorithm(spec.algorithm) }
        }
        Family::CustomDist { graph, dim, agents, theta } => {
            let h = hypergraph(graph)?;
            let agents = agents
                .iter()
                .map(|a| {
                    Ok(Agent {
                        primal: PrimalBlock::new(
                            MonotoneOp::Subdifferential(prox_fn(&a.operator)?),
                            smooth_fn(&a.smooth)?,
                        ),
                        dual: DualBlock::new(
                            MonotoneOp::Subdifferential(prox_fn(&a.dual_operator)?),
                            smooth_fn(&a.dual_smooth)?,
                        ),
                        coupling: LinearBlock::from_rows(&a.coupling).map_err(bad)?,
                        primal_metric: a.primal_metric.clone(),
                        dual_metric: a.dual_metric.clone(),
                    })
                })
                .collect::<Result<Vec<_>, HarnessError>>()?;
            let algorithm = dist_algorithm(spec.algorithm);
            let problem = match theta {
                Some(t) => DistProblem::new(h, *dim, agents, t.clone())?,
                None => DistProblem::with_default_theta(h, *dim, agents, algorithm.condition())?,
            };
            Instance::Dist { problem, algorithm }
        }
    };
    match &instance {
        Instance::Pd { problem, algorithm: PdAlgorithm::NoPrimalOperator } if !problem.primal_operators_vanish() => {
            Err(bad("no_primal_operator needs every primal operator to vanish"))
        }
        Instance::Dist { problem, algorithm: DistAlgorithm::NoPrimalOperator }
            if !problem.primal_operators_vanish() =>
        {
            Err(bad("dist_no_primal_operator needs every primal operator to vanish"))
        }
        _ => Ok(instance),
    }
}
