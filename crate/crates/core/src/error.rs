use thiserror::Error;

pub type Result<T> = std::result::Result<T, GeoError>;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("training diverged at batch {batch}: {reason}")]
    TrainingDivergence { batch: usize, reason: String },

    #[error("rejected input: {0}")]
    RejectedInput(String),

    #[error("empty restriction: no gallery entry within {radius_km} km of ({lat}, {lon})")]
    EmptyRestriction { lat: f64, lon: f64, radius_km: f64 },

    #[error("item {index}: {source}")]
    AtIndex {
        index: usize,
        #[source]
        source: Box<GeoError>,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt file: {0}")]
    Corruption(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl GeoError {
    /// Short machine-readable tag, stable across releases.
    pub fn kind(&self) -> &'static str {
        match self {
            GeoError::InvalidConfig(_) => "invalid-config",
            GeoError::InvalidInput(_) => "invalid-input",
            GeoError::DegenerateInput(_) => "degenerate-input",
            GeoError::InvalidState(_) => "invalid-state",
            GeoError::TrainingDivergence { .. } => "training-divergence",
            GeoError::RejectedInput(_) => "rejected-input",
            GeoError::EmptyRestriction { .. } => "empty-restriction",
            GeoError::AtIndex { source, .. } => source.kind(),
            GeoError::Format(_) => "format",
            GeoError::Corruption(_) => "corruption",
            GeoError::Io(_) => "io",
        }
    }

    pub(crate) fn at(self, index: usize) -> GeoError {
        GeoError::AtIndex {
            index,
            source: Box::new(self),
        }
    }
}
