use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("row {row}, column '{column}': cannot parse {value:?} as a finite number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("response column '{0}' not found in header")]
    MissingResponse(String),

    #[error("covariate '{0}' is constant and cannot be rescaled")]
    ConstantColumn(String),

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("training split of {train} rows is too small (need at least {need})")]
    SplitTooSmall { train: usize, need: usize },

    #[error("invalid kernel configuration: {0}")]
    InvalidKernel(String),

    #[error("kernel matrix is not positive semi-definite: eigenvalue {eigenvalue:e} below -{tolerance:e}")]
    NotPsd { eigenvalue: f64, tolerance: f64 },

    #[error("kernel factorisation failed: {0}")]
    Factorization(String),

    #[error("degenerate quadratic form y'(K+I)^-1 y = {0:e}")]
    DegenerateQuadForm(f64),

    #[error("all {restarts} restarts produced a non-finite objective")]
    OptimizationFailed { restarts: usize, trace: Vec<f64> },

    #[error("non-finite log target at the chain's starting point")]
    NonFiniteTarget,

    #[error("draw {index}: {source}")]
    Draw {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("replication {index}: {source}")]
    Replication {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{p} covariates exceed the enumeration cap of {cap}")]
    TooManyCovariates { p: usize, cap: usize },

    #[error("rank-deficient design: column '{column}' is collinear with earlier columns")]
    RankDeficient { column: String },

    #[error("candidate model interpolates the data (zero residual sum of squares)")]
    ZeroResidual,

    #[error("perfect fit: R^2 = {0}")]
    PerfectFit(f64),

    #[error("KL estimate {0:e} is negative beyond rounding tolerance")]
    NegativeKl(f64),

    #[error("weights sum to {0}, expected 1")]
    WeightSum(f64),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn at_draw(self, index: usize) -> Self {
        Error::Draw {
            index,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_replication(self, index: usize) -> Self {
        Error::Replication {
            index,
            source: Box::new(self),
        }
    }
}
