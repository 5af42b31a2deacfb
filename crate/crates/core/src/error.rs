use thiserror::Error;

/// Errors raised across the model hierarchy.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty time window")]
    EmptyTimeWindow,

    #[error("empty region")]
    EmptyRegion,

    #[error("nonpositive diffusion in cell {0}")]
    NonpositiveDiffusion(usize),

    #[error("raster size mismatch: expected {expected} values, got {got}")]
    RasterSizeMismatch { expected: usize, got: usize },

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("energy product not SPD")]
    EnergyNotSpd,

    #[error("FOM step singular")]
    FomStepSingular,

    #[error("singular matrix")]
    SingularMatrix,

    #[error("singular reduced system")]
    SingularReducedSystem,

    #[error("min-theta inapplicable: {0}")]
    MinThetaInapplicable(String),

    #[error("initial datum not contained in the reduced space")]
    InitialNotInSpace,

    #[error("coincident training inputs")]
    CoincidentInputs,

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("insufficient training data")]
    InsufficientTrainingData,

    #[error("unfitted model")]
    UnfittedModel,

    #[error("non-nested basis")]
    NonNestedBasis,

    #[error("enrichment failed: estimate {estimate:e} exceeds tolerance {tolerance:e}")]
    EnrichmentFailed { estimate: f64, tolerance: f64 },

    #[error("overlapping rectangles: {0}")]
    OverlappingRectangles(String),

    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical pipeline (as opposed to bad input or IO).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::EnergyNotSpd
                | Error::FomStepSingular
                | Error::SingularMatrix
                | Error::SingularReducedSystem
                | Error::MinThetaInapplicable(_)
                | Error::InitialNotInSpace
                | Error::CoincidentInputs
                | Error::EnrichmentFailed { .. }
                | Error::UnfittedModel
                | Error::NonNestedBasis
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
