use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("vector length {0} is not a triangular number n(n+1)/2")]
    NotTriangular(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{context}: matrix is not Hurwitz (spectral abscissa {abscissa:e})")]
    NotHurwitz { context: &'static str, abscissa: f64 },

    #[error("{context}: linear system is numerically singular (condition estimate {condition:e})")]
    IllConditioned { context: &'static str, condition: f64 },

    #[error("{context}: no convergence after {iterations} iterations (last change {last_change:e})")]
    NoConvergence {
        context: &'static str,
        iterations: usize,
        last_change: f64,
    },

    #[error("no candidate pole yields an admissible gain for gamma {gamma}: best pole {best_pole} with norm {best_norm}")]
    NoAdmissibleGain {
        gamma: f64,
        best_pole: f64,
        best_norm: f64,
    },

    #[error("gain is not admissible: {0}")]
    Inadmissible(String),

    #[error("persistent excitation violated: regressor rank {rank} < {required} unknowns")]
    RankDeficient { rank: usize, required: usize },

    #[error("simulation diverged at t = {time} (state norm {norm:e})")]
    Divergence { time: f64, norm: f64 },

    #[error("iterate ({outer}, {inner}) failed: {source}")]
    Iterate {
        outer: usize,
        inner: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("stage {stage} failed: {source} (completed artifacts: {})", completed.join(", "))]
    Stage {
        stage: String,
        completed: Vec<String>,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// True for failures caused by malformed input rather than numerics.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Dimension { .. }
            | Error::NotSymmetric { .. }
            | Error::NotTriangular(_)
            | Error::InvalidArgument(_)
            | Error::Io { .. }
            | Error::Parse(_) => true,
            Error::Iterate { source, .. } | Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    pub(crate) fn dim(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
