use thiserror::Error;

/// Errors raised by the simulator, experiment harness and file interfaces.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("infeasible cable command: {0}")]
    Infeasible(String),

    #[error("infeasible lattice: {0}")]
    InfeasibleLattice(String),

    #[error("infeasible perturbation: post {post} could not be placed after {attempts} attempts")]
    InfeasiblePerturbation { post: usize, attempts: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("simulation diverged at t = {time:.4} s")]
    Diverged { time: f64 },

    #[error("setup error: {0}")]
    Setup(String),

    #[error("query error: {0}")]
    Query(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
