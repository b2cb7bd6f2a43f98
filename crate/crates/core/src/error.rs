use std::path::PathBuf;

use crate::manifold::Point;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape mismatch, foreign
    /// tangent space, non-stochastic weights, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Inputs are well-formed but outside the region where the operation is
    /// defined (beyond the injectivity bound, rank deficient, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("agent {agent}: {source}")]
    Agent { agent: usize, source: Box<Error> },

    #[error("agents {from} -> {to}: {source}")]
    AgentPair {
        from: usize,
        to: usize,
        source: Box<Error>,
    },

    #[error("round {round}: {source}")]
    Round { round: usize, source: Box<Error> },

    #[error("Fréchet mean did not converge after {iterations} iterations (residual {residual:e})")]
    FrechetMean {
        iterations: usize,
        residual: f64,
        last: Box<Point>,
    },

    #[error("Sinkhorn balancing did not converge after {iterations} iterations (deviation {deviation:e})")]
    Sinkhorn { iterations: usize, deviation: f64 },

    #[error("reference solver diverged: cost increased for {steps} consecutive steps")]
    Divergence { steps: usize },

    #[error("configuration error for `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{0}")]
    Data(String),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_agent(self, agent: usize) -> Self {
        Error::Agent {
            agent,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_round(self, round: usize) -> Self {
        Error::Round {
            round,
            source: Box::new(self),
        }
    }

    /// True if the innermost cause is a domain error.
    pub fn is_domain(&self) -> bool {
        match self {
            Error::Domain(_) => true,
            Error::Agent { source, .. }
            | Error::AgentPair { source, .. }
            | Error::Round { source, .. } => source.is_domain(),
            _ => false,
        }
    }

    /// True if the innermost cause is a contract violation.
    pub fn is_contract(&self) -> bool {
        match self {
            Error::Contract(_) => true,
            Error::Agent { source, .. }
            | Error::AgentPair { source, .. }
            | Error::Round { source, .. } => source.is_contract(),
            _ => false,
        }
    }
}
