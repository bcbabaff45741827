use thiserror::Error;

use crate::geometry::Wall;

/// Errors produced by the simulation and inversion pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("source at {distance:.3e} m from microphone {mic}: distance too small")]
    Singularity { mic: usize, distance: f64 },

    #[error("scene generation failed after {attempts} attempts")]
    Generation { attempts: usize },

    #[error("PSNR is undefined for an all-zero signal")]
    ZeroSignal,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("true source is ambiguous: two candidates within {0:.3e} m of the array center")]
    AmbiguousSource(f64),

    #[error("no reflection found for wall {0}")]
    MissingReflection(Wall),

    #[error("inconsistent basis: recovered length {length:.4} m along axis {axis}")]
    InconsistentBasis { axis: usize, length: f64 },

    #[error("axis matching failed: recovered axes {0:?} do not form a permutation")]
    AxisMatching([usize; 3]),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
