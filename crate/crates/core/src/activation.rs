//! Random activation patterns: which blocks an iteration updates.
//!
//! A schedule draws raw bits, rejects the all-zero draw, then applies a
//! closure rule so that every block whose update needs another block's
//! fresh value is switched on together with it.

use rand::Rng;
use thiserror::Error;

/// Attempts before giving up on drawing a nonzero pattern.
pub const RESAMPLE_CAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ActivationError {
    #[error("activation pattern has no active block")]
    ZeroPattern,
    #[error("pattern length {got} does not match {expected} coordinates")]
    LengthMismatch { expected: usize, got: usize },
    #[error("probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error("every activation probability is zero")]
    AllZero,
    #[error("no nonzero pattern after {0} draws")]
    ResampleCapExceeded(usize),
    #[error("closure rule is malformed: {0}")]
    BadRule(String),
}

/// Nonzero binary string `eps` in `{0, 1}^n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActivationPattern(Vec<bool>);

impl ActivationPattern {
    pub fn new(bits: Vec<bool>) -> Result<Self, ActivationError> {
        if bits.iter().any(|&b| b) {
            Ok(Self(bits))
        } else {
            Err(ActivationError::ZeroPattern)
        }
    }

    pub fn full(n: usize) -> Self {
        assert!(n > 0);
        Self(vec![true; n])
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

/// How blocks are tied together after the raw draw.
///
/// `duals_of[j]` lists the dual blocks `k` with `L_{k,j} != 0`; `edges[l]`
/// lists the agents of hyperedge `l`. Distributed patterns are laid out as
/// `(agents, agent duals, edges)`.
#[derive(Debug, Clone, PartialEq)]
pub enum ClosureRule {
    None {
        n: usize,
    },
    /// Primal `j` is on whenever one of its duals is on.
    PrimalFollowsDual {
        q: usize,
        duals_of: Vec<Vec<usize>>,
    },
    /// Every dual of an active primal `j` is on.
    DualFollowsPrimal {
        q: usize,
        duals_of: Vec<Vec<usize>>,
    },
    /// An active agent switches on its own dual and every edge containing it.
    Distributed {
        m: usize,
        edges: Vec<Vec<usize>>,
    },
    /// Raw bits are drawn for agents only; agent duals copy their agent and
    /// an edge is on exactly when one of its agents is.
    DistributedTied {
        m: usize,
        edges: Vec<Vec<usize>>,
    },
}

impl ClosureRule {
    /// Number of coordinates of the patterns this rule produces.
    pub fn len(&self) -> usize {
        match self {
            ClosureRule::None { n } => *n,
            ClosureRule::PrimalFollowsDual { q, duals_of } | ClosureRule::DualFollowsPrimal { q, duals_of } => {
                duals_of.len() + q
            }
            ClosureRule::Distributed { m, edges } | ClosureRule::DistributedTied { m, edges } => 2 * m + edges.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of coordinates that receive raw random bits.
    pub fn raw_len(&self) -> usize {
        match self {
            ClosureRule::DistributedTied { m, .. } => *m,
            _ => self.len(),
        }
    }

    fn validate(&self) -> Result<(), ActivationError> {
        let bad = |msg: String| Err(ActivationError::BadRule(msg));
        match self {
            ClosureRule::None { n } if *n == 0 => bad("no coordinates".into()),
            ClosureRule::PrimalFollowsDual { q, duals_of } | ClosureRule::DualFollowsPrimal { q, duals_of } => {
                if duals_of.is_empty() || *q == 0 {
                    return bad("empty primal or dual side".into());
                }
                match duals_of.iter().flatten().find(|&&k| k >= *q) {
                    Some(k) => bad(format!("dual index {k} out of range")),
                    None => Ok(()),
                }
            }
            ClosureRule::Distributed { m, edges } | ClosureRule::DistributedTied { m, edges } => {
                if *m == 0 || edges.is_empty() {
                    return bad("no agents or no edges".into());
                }
                match edges.iter().flatten().find(|&&i| i >= *m) {
                    Some(i) => bad(format!("agent {i} out of range")),
                    None => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }

    /// Expands raw bits (of length [`Self::raw_len`]) into a full pattern.
    fn close(&self, raw: Vec<bool>) -> Vec<bool> {
        match self {
            ClosureRule::None { .. } => raw,
            ClosureRule::PrimalFollowsDual { duals_of, .. } => {
                let p = duals_of.len();
                let mut bits = raw;
                for (j, ks) in duals_of.iter().enumerate() {
                    if ks.iter().any(|&k| bits[p + k]) {
                        bits[j] = true;
                    }
                }
                bits
            }
            ClosureRule::DualFollowsPrimal { duals_of, .. } => {
                let p = duals_of.len();
                let mut bits = raw;
                for (j, ks) in duals_of.iter().enumerate() {
                    if bits[j] {
                        ks.iter().for_each(|&k| bits[p + k] = true);
                    }
                }
                bits
            }
            ClosureRule::Distributed { m, edges } => {
                let mut bits = raw;
                for i in 0..*m {
                    if bits[i] {
                        bits[m + i] = true;
                    }
                }
                for (l, e) in edges.iter().enumerate() {
                    if e.iter().any(|&i| bits[i]) {
                        bits[2 * m + l] = true;
                    }
                }
                bits
            }
            ClosureRule::DistributedTied { m, edges } => {
                let mut bits = raw.clone();
                bits.extend_from_slice(&raw);
                bits.extend(edges.iter().map(|e| e.iter().any(|&i| raw[i])));
                debug_assert_eq!(bits.len(), 2 * m + edges.len());
                bits
            }
        }
    }

    /// Whether `pattern` is closed under this rule.
    pub fn holds(&self, pattern: &ActivationPattern) -> bool {
        if pattern.len() != self.len() {
            return false;
        }
        let bits = pattern.bits();
        match self {
            ClosureRule::None { .. } => true,
            ClosureRule::PrimalFollowsDual { duals_of, .. } => {
                let p = duals_of.len();
                duals_of.iter().enumerate().all(|(j, ks)| bits[j] || ks.iter().all(|&k| !bits[p + k]))
            }
            ClosureRule::DualFollowsPrimal { duals_of, .. } => {
                let p = duals_of.len();
                duals_of.iter().enumerate().all(|(j, ks)| !bits[j] || ks.iter().all(|&k| bits[p + k]))
            }
            ClosureRule::Distributed { m, edges } => {
                (0..*m).all(|i| !bits[i] || bits[m + i])
                    && edges.iter().enumerate().all(|(l, e)| bits[2 * m + l] || e.iter().all(|&i| !bits[i]))
            }
            ClosureRule::DistributedTied { m, edges } => {
                (0..*m).all(|i| bits[i] == bits[m + i])
                    && edges.iter().enumerate().all(|(l, e)| bits[2 * m + l] == e.iter().any(|&i| bits[i]))
            }
        }
    }

    /// For each coordinate, the raw coordinates whose activation turns it on.
    fn triggers(&self) -> Vec<Vec<usize>> {
        match self {
            ClosureRule::None { n } => (0..*n).map(|c| vec![c]).collect(),
            ClosureRule::PrimalFollowsDual { q, duals_of } => {
                let p = duals_of.len();
                let mut t: Vec<Vec<usize>> = (0..p + q).map(|c| vec![c]).collect();
                for (j, ks) in duals_of.iter().enumerate() {
                    t[j].extend(ks.iter().map(|&k| p + k));
                }
                t
            }
            ClosureRule::DualFollowsPrimal { q, duals_of } => {
                let p = duals_of.len();
                let mut t: Vec<Vec<usize>> = (0..p + q).map(|c| vec![c]).collect();
                for (j, ks) in duals_of.iter().enumerate() {
                    ks.iter().for_each(|&k| t[p + k].push(j));
                }
                t
            }
            ClosureRule::Distributed { m, edges } => {
                let mut t: Vec<Vec<usize>> = (0..self.len()).map(|c| vec![c]).collect();
                for i in 0..*m {
                    t[m + i].push(i);
                }
                for (l, e) in edges.iter().enumerate() {
                    t[2 * m + l].extend(e);
                }
                t
            }
            ClosureRule::DistributedTied { m, edges } => {
                let mut t: Vec<Vec<usize>> = (0..*m).map(|i| vec![i]).collect();
                t.extend((0..*m).map(|i| vec![i]));
                t.extend(edges.iter().cloned());
                t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleKind {
    /// Every block, every iteration.
    Full,
    /// Independent raw bits with the given probabilities (one per raw
    /// coordinate), all-zero draws rejected.
    IidBernoulli(Vec<f64>),
    /// One raw coordinate chosen uniformly.
    UniformSingleSeed,
}

/// Algorithms that consume activation patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    ForwardBackward,
    PrimalDual,
    PrimalDualSymmetric,
    PrimalDualNoPrimalOperator,
    DistributedPrimalDual,
    DistributedNoPrimalOperator,
    DistributedOptimization,
    DistributedPairwise,
}

impl Algorithm {
    fn accepts(self, rule: &ClosureRule) -> bool {
        use Algorithm::*;
        match self {
            ForwardBackward => true,
            PrimalDual => matches!(rule, ClosureRule::PrimalFollowsDual { .. }),
            PrimalDualSymmetric | PrimalDualNoPrimalOperator => {
                matches!(rule, ClosureRule::DualFollowsPrimal { .. })
            }
            DistributedPrimalDual | DistributedNoPrimalOperator | DistributedOptimization => {
                matches!(rule, ClosureRule::Distributed { .. } | ClosureRule::DistributedTied { .. })
            }
            DistributedPairwise => matches!(rule, ClosureRule::DistributedTied { .. }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSchedule {
    kind: ScheduleKind,
    rule: ClosureRule,
}

impl ActivationSchedule {
    pub fn new(kind: ScheduleKind, rule: ClosureRule) -> Result<Self, ActivationError> {
        rule.validate()?;
        if let ScheduleKind::IidBernoulli(p) = &kind {
            if p.len() != rule.raw_len() {
                return Err(ActivationError::LengthMismatch { expected: rule.raw_len(), got: p.len() });
            }
            if let Some(&bad) = p.iter().find(|&&a| !(0.0..=1.0).contains(&a)) {
                return Err(ActivationError::BadProbability(bad));
            }
            if p.iter().all(|&a| a == 0.0) {
                return Err(ActivationError::AllZero);
            }
        }
        Ok(Self { kind, rule })
    }

    pub fn kind(&self) -> &ScheduleKind {
        &self.kind
    }

    pub fn rule(&self) -> &ClosureRule {
        &self.rule
    }

    pub fn len(&self) -> usize {
        self.rule.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rule.is_empty()
    }

    /// Draws one closed, nonzero pattern. The number of random words used
    /// depends only on the draws themselves, never on algorithm state.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ActivationPattern, ActivationError> {
        let raw_len = self.rule.raw_len();
        let raw = match &self.kind {
            ScheduleKind::Full => vec![true; raw_len],
            ScheduleKind::IidBernoulli(p) => {
                let mut found = None;
                for _ in 0..RESAMPLE_CAP {
                    let bits: Vec<bool> = p.iter().map(|&pi| rng.random::<f64>() < pi).collect();
                    if bits.iter().any(|&b| b) {
                        found = Some(bits);
                        break;
                    }
                }
                found.ok_or(ActivationError::ResampleCapExceeded(RESAMPLE_CAP))?
            }
            ScheduleKind::UniformSingleSeed => {
                let mut bits = vec![false; raw_len];
                bits[rng.random_range(0..raw_len)] = true;
                bits
            }
        };
        let bits = match self.kind {
            ScheduleKind::Full => vec![true; self.rule.len()],
            _ => self.rule.close(raw),
        };
        ActivationPattern::new(bits)
    }

    /// Exact probability that each coordinate is active in a sampled pattern.
    pub fn marginals(&self) -> Vec<f64> {
        let triggers = self.rule.triggers();
        match &self.kind {
            ScheduleKind::Full => vec![1.0; self.rule.len()],
            ScheduleKind::IidBernoulli(p) => {
                let nonzero = 1.0 - p.iter().map(|a| 1.0 - a).product::<f64>();
                triggers.iter().map(|s| (1.0 - s.iter().map(|&c| 1.0 - p[c]).product::<f64>()) / nonzero).collect()
            }
            ScheduleKind::UniformSingleSeed => {
                let n = self.rule.raw_len() as f64;
                triggers.iter().map(|s| s.len() as f64 / n).collect()
            }
        }
    }

    /// Checks positivity of every marginal and that the closure rule is the
    /// one `algorithm` needs.
    pub fn validate(&self, algorithm: Algorithm) -> ValidationReport {
        let marginals = self.marginals();
        let mut issues = Vec::new();
        for (c, &p) in marginals.iter().enumerate() {
            if p <= 0.0 {
                issues.push(format!("coordinate {c} is never activated"));
            }
        }
        let rule_matches = matches!(self.kind, ScheduleKind::Full) || algorithm.accepts(&self.rule);
        if !rule_matches {
            issues.push(format!("closure rule {:?} does not fit {algorithm:?}", rule_name(&self.rule)));
        }
        let expected_active = marginals.iter().sum();
        ValidationReport { valid: issues.is_empty(), marginals, rule_matches, expected_active, issues }
    }
}

fn rule_name(rule: &ClosureRule) -> &'static str {
    match rule {
        ClosureRule::None { .. } => "none",
        ClosureRule::PrimalFollowsDual { .. } => "primal-follows-dual",
        ClosureRule::DualFollowsPrimal { .. } => "dual-follows-primal",
        ClosureRule::Distributed { .. } => "distributed",
        ClosureRule::DistributedTied { .. } => "distributed-tied",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub valid: bool,
    pub marginals: Vec<f64>,
    pub rule_matches: bool,
    /// Expected number of active coordinates per iteration.
    pub expected_active: f64,
    pub issues: Vec<String>,
}
