use std::path::PathBuf;

use crate::tensor::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {shapes:?}")]
    ShapeMismatch { op: &'static str, shapes: Vec<Vec<usize>> },

    #[error("unknown primitive `{0}`")]
    UnknownPrimitive(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("node {0:?} was not produced through this computation record")]
    DanglingNode(Option<NodeId>),

    #[error("no gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("step size must be positive, found {0}")]
    NonPositiveStep(f64),

    #[error("exhaustive oracle supports at most {limit} users, got {k}")]
    OracleLimit { k: usize, limit: usize },

    #[error("beamformer uses {power} W, exceeding the {budget} W budget")]
    Infeasible { power: f64, budget: f64 },

    #[error("symbol frame is not power-normalized (mean power {0})")]
    Unnormalized(f64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("sequence of length {len} exceeds the cap {cap}")]
    LengthCap { len: usize, cap: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("missing table `{}`", .0.display())]
    MissingTable(PathBuf),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, shapes: &[&[usize]]) -> Self {
        Error::ShapeMismatch { op, shapes: shapes.iter().map(|s| s.to_vec()).collect() }
    }
}
