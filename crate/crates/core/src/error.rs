use thiserror::Error;

pub type Result<T, E = DdsgError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DdsgError {
    #[error("invalid level/index pair (level {level}, index {index})")]
    InvalidLevelIndex { level: u32, index: u32 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point {point:?} lies outside the unit cube")]
    OutOfDomain { point: Vec<f64> },

    #[error("evaluator returned a non-finite value at {point:?}")]
    NonFinite { point: Vec<f64> },

    #[error("evaluation failed at {point:?}: {message}")]
    Evaluation { point: Vec<f64>, message: String },

    #[error("component {component}: {source}")]
    Component {
        component: String,
        #[source]
        source: Box<DdsgError>,
    },

    #[error("zero denominator in {0}; treat the criterion as significant")]
    ZeroDenominator(&'static str),

    #[error("grid count overflows 64 bits")]
    CountOverflow,

    #[error("inconsistent component family: {0}")]
    InconsistentFamily(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("serialization error: {0}")]
    Serialization(String),

    #[error("newton solve did not converge after {iterations} iterations (residual {residual:e})")]
    NewtonFailed {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("singular jacobian in newton solve")]
    SingularJacobian,

    #[error("time iteration step {step}: FOC solve failed at {failed} of {total} grid points")]
    FocFailures {
        step: usize,
        failed: usize,
        total: usize,
        states: Vec<Vec<f64>>,
    },

    #[error("task {task} failed ({failures} failures in total): {message}")]
    Task {
        task: usize,
        failures: usize,
        message: String,
    },
}

impl DdsgError {
    pub(crate) fn in_component(self, component: impl ToString) -> Self {
        DdsgError::Component {
            component: component.to_string(),
            source: Box::new(self),
        }
    }
}

impl From<serde_json::Error> for DdsgError {
    fn from(e: serde_json::Error) -> Self {
        DdsgError::Serialization(e.to_string())
    }
}
