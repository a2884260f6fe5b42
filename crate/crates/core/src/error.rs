use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain is empty after shrinking by {eps} (limit {limit})")]
    EmptyDomain { eps: f64, limit: f64 },

    #[error("ball of radius {radius} at {center:?} is not contained in the domain (distance to boundary {clearance})")]
    BallOutsideDomain {
        center: Vec<f64>,
        radius: f64,
        clearance: f64,
    },

    #[error("point {point:?} is outside the tubular neighborhood (distance {distance}, width {width})")]
    OutsideTube {
        point: Vec<f64>,
        distance: f64,
        width: f64,
    },

    #[error("point {point:?} is within {margin} of the boundary")]
    Margin { point: Vec<f64>, margin: f64 },

    #[error("query point {y:?} is {distance} from the boundary image (clearance {clearance})")]
    BoundaryProximity {
        y: Vec<f64>,
        distance: f64,
        clearance: f64,
    },

    #[error("bump of radius {radius} at {y:?} overlaps the boundary image (distance {distance})")]
    Support {
        y: Vec<f64>,
        radius: f64,
        distance: f64,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("empty region: {0}")]
    EmptyRegion(String),

    #[error("insufficient resolution: {0}")]
    Resolution(String),

    #[error("ball of radius {radius} at {center:?} is not admissible (distance to boundary {clearance})")]
    Inadmissible {
        center: Vec<f64>,
        radius: f64,
        clearance: f64,
    },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("no degree at {p:?}: boundary margin {margin} is below the floor {floor}")]
    NoDegree { p: Vec<f64>, margin: f64, floor: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
