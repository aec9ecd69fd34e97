use thiserror::Error;

/// Errors raised by the game, solver, inference and simulation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite derivative at timestep {t}")]
    NonFiniteDerivative { t: usize },
    #[error("ill-posed stage at timestep {t}: stacked stationarity system is singular")]
    IllPosedStage { t: usize },
    #[error("value matrix of agent {agent} is asymmetric at timestep {t} (residual {residual:e})")]
    Asymmetric { t: usize, agent: usize, residual: f64 },
    #[error("iterative solve diverged at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("quadrature did not reach tolerance: {0}")]
    Precision(String),
    #[error("centerline singularity: 1 - n*kappa = {margin:.4} at s = {s:.3}")]
    Singularity { s: f64, margin: f64 },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            what,
            expected,
            got,
        });
    }
    Ok(())
}
