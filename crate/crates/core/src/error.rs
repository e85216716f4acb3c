use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("invalid box ({x1}, {y1}, {x2}, {y2}){}", fmt_line(*.line))]
    InvalidBox {
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        line: Option<usize>,
    },

    #[error("non-finite point ({x}, {y})")]
    NonFinitePoint { x: f64, y: f64 },

    #[error("cluster {cluster_id} averages to a degenerate box ({x1}, {y1}, {x2}, {y2})")]
    DegenerateBox {
        cluster_id: usize,
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
    },

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("IoU threshold {0} is outside (0, 1)")]
    InvalidThreshold(f64),

    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),

    #[error("constant series: correlation undefined")]
    ConstantSeries,

    #[error("too few samples for correlation: {0} < 3")]
    TooFewSamples(usize),

    #[error("cannot place {objects} objects with center separation > {separation} px after {attempts} attempts")]
    InfeasibleScene {
        objects: usize,
        separation: f64,
        attempts: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

fn fmt_line(line: Option<usize>) -> String {
    match line {
        Some(l) => format!(" at line {l}"),
        None => String::new(),
    }
}

impl Error {
    /// Attach a 1-based source line to errors that carry one.
    pub fn at_line(self, line: usize) -> Self {
        match self {
            Error::InvalidBox { x1, y1, x2, y2, .. } => Error::InvalidBox {
                x1,
                y1,
                x2,
                y2,
                line: Some(line),
            },
            Error::Parse { reason, .. } => Error::Parse { line, reason },
            other => Error::Parse {
                line,
                reason: other.to_string(),
            },
        }
    }

    pub fn line(&self) -> Option<usize> {
        match self {
            Error::InvalidBox { line, .. } => *line,
            Error::Parse { line, .. } => Some(*line),
            _ => None,
        }
    }
}
