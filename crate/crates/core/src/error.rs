use thiserror::Error;

/// Errors raised by the forecasting, clustering and simulation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("business window {open}..{close} is not a positive multiple of 15 minutes")]
    InvalidBusinessHours { open: u32, close: u32 },

    #[error("order {order_id} references unknown or non-pick-up zone {zone}")]
    UnknownZone { order_id: String, zone: usize },

    #[error("weather records missing for {}", .0.join(", "))]
    MissingWeather(Vec<String>),

    #[error("feature vector has {found} entries, model expects {expected}")]
    SchemaMismatch { expected: usize, found: usize },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("quantile level {0} outside (0, 1)")]
    InvalidQuantile(f64),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("model was not fitted for quantile prediction")]
    NotQuantileModel,

    #[error("zones {0} and {1} are not connected in the adjacency graph")]
    Disconnected(usize, usize),

    #[error("no feasible cluster count: {0}")]
    NoFeasibleK(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
