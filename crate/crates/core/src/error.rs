use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid coordinate: {0}")]
    InvalidCoordinate(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("schema error at row {row}: {message}")]
    Schema { row: usize, message: String },

    #[error("cannot impute competitor {competitor} over frames {start}..={end}: {reason}")]
    ImputationImpossible {
        competitor: String,
        start: i64,
        end: i64,
        reason: String,
    },

    #[error("out of range: {0}")]
    Range(String),

    #[error("invalid spline specification: {0}")]
    Spec(String),

    #[error("design row is missing field `{0}`")]
    Assembly(&'static str),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("optimization failed after {iterations} iterations: {message}")]
    Optimization { iterations: usize, message: String },

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("runaway simulation: {unfinished} competitor(s) unfinished after {frames} frames (leader at {leader_forward:.2} m)")]
    Runaway {
        frames: u32,
        unfinished: usize,
        leader_forward: f64,
    },

    #[error("simulation draw {draw} failed: {source}")]
    Draw {
        draw: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("unsupported parameter file version `{found}` (expected `{expected}`)")]
    Version { found: String, expected: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
