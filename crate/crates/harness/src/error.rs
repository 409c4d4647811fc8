use rpd_core::activation::ActivationError;
use rpd_core::distributed::DistError;
use rpd_core::pd_engine::PdError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("spec error: {0}")]
    Spec(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("condition check failed: {0}")]
    Condition(String),
    #[error("reference unavailable: {0}")]
    ReferenceUnavailable(String),
    #[error("record error: {0}")]
    Record(String),
    #[error("run failed: {0}")]
    Run(String),
}

impl HarnessError {
    /// Process exit status: 1 for IO and run failures, 2 for a failed
    /// condition check, 3 for an invalid spec.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Condition(_) => 2,
            HarnessError::Spec(_) => 3,
            _ => 1,
        }
    }

    pub(crate) fn spec(msg: impl Into<String>) -> Self {
        HarnessError::Spec(msg.into())
    }
}

impl From<PdError> for HarnessError {
    fn from(e: PdError) -> Self {
        match e {
            PdError::ConditionFailed(r) => HarnessError::Condition(r.summary()),
            PdError::Schedule(_)
            | PdError::InvalidProblem(_)
            | PdError::InvalidParameter(_)
            | PdError::Inapplicable(_)
            | PdError::Injector(_)
            | PdError::Activation(ActivationError::LengthMismatch { .. }) => HarnessError::Spec(e.to_string()),
            other => HarnessError::Run(other.to_string()),
        }
    }
}

impl From<DistError> for HarnessError {
    fn from(e: DistError) -> Self {
        match e {
            DistError::Pd(p) => p.into(),
            DistError::NoFeasibleTheta(_) => HarnessError::Condition(e.to_string()),
            other => HarnessError::Spec(other.to_string()),
        }
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Record(e.to_string())
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        HarnessError::Record(e.to_string())
    }
}
