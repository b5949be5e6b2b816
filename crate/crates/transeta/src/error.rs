use thiserror::Error;

/// Errors produced by the geometry, grid, and pipeline layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid coordinate: lon {lon}, lat {lat}")]
    InvalidCoordinate { lon: f64, lat: f64 },

    #[error("polyline needs at least 2 distinct points, got {0}")]
    DegeneratePolyline(usize),

    #[error("invalid polygon ring: {0}")]
    InvalidRing(String),

    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),

    #[error("dilation radius must be positive and finite, got {0}")]
    InvalidRadius(f64),

    #[error("point ({lon}, {lat}) is more than 1 degree from projection origin")]
    OutsideProjection { lon: f64, lat: f64 },

    #[error("hex grid edge length must be positive, got {0}")]
    InvalidEdgeLength(f64),

    #[error("segment length must be positive, got {0}")]
    InvalidSegmentLength(f64),

    #[error("epsilon grid value {0} outside the open interval (1e-4, 1e-3)")]
    EpsilonOutOfBounds(f64),

    #[error("epsilon grid is empty")]
    EmptyEpsilonGrid,

    #[error("{context}: value {value} outside [{lo}, {hi}]")]
    OutOfRange {
        context: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("matrix must be symmetric: entry ({i},{j}) = {a} but ({j},{i}) = {b}")]
    AsymmetricMatrix { i: usize, j: usize, a: f64, b: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("empty test set")]
    EmptyTestSet,

    #[error("unknown segment id: {0}")]
    UnknownSegment(String),

    #[error("model file format error: {0}")]
    ModelFormat(String),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
