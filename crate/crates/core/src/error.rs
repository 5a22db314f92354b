use thiserror::Error;

/// Errors raised by the filter, the bridge sampler and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("balanced implicit scheme is singular at step {step} (1 - delta*f' = {factor:e})")]
    SingularScheme { step: usize, factor: f64 },

    #[error(
        "iteration did not converge after {iterations} iterations (last residual {residual:e})"
    )]
    Convergence { iterations: usize, residual: f64 },

    #[error("azimuth undefined at ({x}, {y})")]
    DegeneratePosition { x: f64, y: f64 },

    #[error("discriminant undefined: all displacement differences are zero")]
    UndefinedDiscriminant,

    #[error("no crossing of mean D = 1 in the scanned ratios")]
    NoBracket,

    #[error("acceptance band infeasible: {accepted} accepted out of {proposals} proposals")]
    InfeasibleBand { accepted: usize, proposals: usize },

    #[error("{failed} of {runs} runs failed, over the 1% failure budget")]
    FailureBudget { failed: usize, runs: usize },

    #[error("step {step}, particle {particle}: {source}")]
    AtStep {
        step: usize,
        particle: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("self-test failed: {0}")]
    SelfTest(String),

    #[error("malformed CSV: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether this is a numerical failure (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::SingularScheme { .. }
            | Error::Convergence { .. }
            | Error::DegeneratePosition { .. }
            | Error::UndefinedDiscriminant
            | Error::NoBracket
            | Error::InfeasibleBand { .. }
            | Error::FailureBudget { .. }
            | Error::SelfTest(_) => true,
            Error::AtStep { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
