use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid table configuration: {0}")]
    Config(String),
    #[error("scatterers {first} and {second} overlap (gap {gap})")]
    Overlap { first: usize, second: usize, gap: f64 },
    #[error("no scatterer with id {0}")]
    InvalidScatterer(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("collision too close to tangential (|cos phi| = {cos_phi:e})")]
    NearTangential { cos_phi: f64 },
    #[error("no scatterer within horizon bound {bound}")]
    HorizonViolation { bound: f64 },
    #[error("no scatterer with id {0}")]
    InvalidScatterer(usize),
    #[error("cone iteration stopped at depth {achieved} with angular error {accuracy:e}")]
    InsufficientDepth { achieved: usize, accuracy: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("not enough data: {0}")]
    Insufficient(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Map(#[from] MapError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectrumError {
    #[error("power iteration did not converge after {iterations} steps (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("eigenvector has negative entries down to {0:e} of its maximum")]
    NegativeEigenvector(f64),
    #[error("operator cache is incompatible: {0}")]
    Cache(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Map(#[from] MapError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SingularityError {
    #[error("itinerary truncated after {achieved} symbols by a near-tangential collision")]
    Truncated { achieved: usize },
    #[error("curve level {0} is outside the supported range")]
    Level(i32),
    #[error(transparent)]
    Map(#[from] MapError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatisticsError {
    #[error("insufficient range: {0}")]
    InsufficientRange(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
}
