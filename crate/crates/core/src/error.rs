use std::path::PathBuf;

use crate::cosserat::RodConfiguration;
use crate::kt::Rollout;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("statics did not converge after {iterations} iterations (tip step {residual:.3e} m)")]
    Convergence {
        iterations: usize,
        residual: f64,
        last: Box<RodConfiguration>,
    },

    #[error("axial strain {strain:.4} at node {node} reaches the material limit (eps3 <= -1)")]
    MaterialLimit { node: usize, strain: f64 },

    #[error("degenerate tendon geometry: {0}")]
    DegenerateGeometry(String),

    #[error("solver failed for tendon forces {forces:?}: {source}")]
    Solver {
        forces: [f64; 4],
        #[source]
        source: Box<Error>,
    },

    #[error("rollout stopped after {} steps: {source}", partial.steps.len())]
    Rollout {
        partial: Box<Rollout>,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
