use thiserror::Error;

/// Errors produced by the filtering library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{what} is not positive definite (condition estimate {condition:.3e})")]
    NotPositiveDefinite { what: &'static str, condition: f64 },

    #[error("{what} is not positive semi-definite (min eigenvalue {min_eigenvalue:.3e}, max eigenvalue {max_eigenvalue:.3e})")]
    NotPositiveSemiDefinite {
        what: &'static str,
        min_eigenvalue: f64,
        max_eigenvalue: f64,
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("model evaluation outside its domain: {reason}")]
    ModelDomain { reason: String },

    #[error("divergence detected at iteration {iteration}{}", time_suffix(*.time_index))]
    DivergenceDetected {
        time_index: Option<usize>,
        iteration: usize,
    },

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<FilterError>,
    },

    #[error("time step {time_index}: {source}")]
    AtTimeStep {
        time_index: usize,
        #[source]
        source: Box<FilterError>,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("precondition violated: {0}")]
    Precondition(String),
}

fn time_suffix(t: Option<usize>) -> String {
    match t {
        Some(k) => format!(" (time step {k})"),
        None => String::new(),
    }
}

impl FilterError {
    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        match self {
            FilterError::DivergenceDetected { time_index, .. } => FilterError::DivergenceDetected {
                time_index,
                iteration,
            },
            e @ FilterError::AtIteration { .. } => e,
            other => FilterError::AtIteration {
                iteration,
                source: Box::new(other),
            },
        }
    }

    pub(crate) fn at_time(self, time_index: usize) -> Self {
        match self {
            FilterError::DivergenceDetected { iteration, .. } => FilterError::DivergenceDetected {
                time_index: Some(time_index),
                iteration,
            },
            other => FilterError::AtTimeStep {
                time_index,
                source: Box::new(other),
            },
        }
    }

    /// True when the error means the estimate left the finite/valid region,
    /// which the benchmark harness books as a divergence.
    pub fn is_divergence(&self) -> bool {
        match self {
            FilterError::DivergenceDetected { .. } => true,
            FilterError::AtIteration { source, .. } | FilterError::AtTimeStep { source, .. } => {
                source.is_divergence()
            }
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, FilterError>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(FilterError::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}
