//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by callers that map errors to process exit
/// codes: malformed or inconsistent input data vs. a numerical failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Data,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("event {event_id}: samples are not uniformly spaced (max deviation {max_dev:.3e} s)")]
    NonUniformSampling { event_id: String, max_dev: f64 },

    #[error("event {event_id}: needs at least 2 samples, got {len}")]
    TooFewSamples { event_id: String, len: usize },

    #[error("event {event_id}: {what} contains a non-finite value at sample {index}")]
    NonFiniteSample {
        event_id: String,
        what: &'static str,
        index: usize,
    },

    #[error("event {event_id}: time stamps are not strictly increasing at sample {index}")]
    NonMonotonicTime { event_id: String, index: usize },

    #[error("degenerate event geometry: {reason}")]
    DegenerateGeometry { reason: String },

    #[error("box is degenerate: lower bound >= upper bound in dimension {dim}")]
    DegenerateBox { dim: usize },

    #[error("box mass {prob:.3e} is below 1e-12; widen the bounds")]
    VanishingBoxMass { prob: f64 },

    #[error("covariance matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("data row {row} lies outside the box in dimension {dim}")]
    DataOutsideBox { row: usize, dim: usize },

    #[error("component {component} has degenerate responsibility mass")]
    DegenerateComponent { component: usize },

    #[error("model density underflows to zero at data row {row}")]
    ZeroDensity { row: usize },

    #[error("need at least K = {k} data points, got {n}")]
    TooFewPoints { n: usize, k: usize },

    #[error("data row {row}, column {col} is not finite")]
    NonFiniteData { row: usize, col: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("component {component}: in-box acceptance probability {prob:.3e} is below 1e-6; model is inconsistent with its box")]
    UnsampleableComponent { component: usize, prob: f64 },

    #[error("feature vector invalid: {reason}")]
    InvalidFeatureVector { reason: String },

    #[error("duration {duration} s is shorter than the sampling time {ts} s")]
    DurationBelowStep { duration: f64, ts: f64 },

    #[error("longitudinal speed {v_x} m/s is below the 0.5 m/s linear-model floor")]
    SpeedBelowFloor { v_x: f64 },

    #[error("vehicle/controller parameters invalid: {reason}")]
    InvalidParams { reason: String },

    #[error("integration interval is empty: start {start} >= end {end}")]
    EmptyInterval { start: f64, end: f64 },

    #[error("samples do not cover the window [{start}, {end}]")]
    WindowNotCovered { start: f64, end: f64 },

    #[error("trigger time {t_s} s is outside the event time span")]
    TriggerOutsideEvent { t_s: f64 },

    #[error("k range is empty")]
    EmptyKRange,

    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: String, column: String },

    #[error("{path} row {row}: {reason}")]
    MalformedRow {
        path: String,
        row: usize,
        reason: String,
    },

    #[error("model file invalid: {reason}")]
    InvalidModel { reason: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            NotPositiveDefinite
            | VanishingBoxMass { .. }
            | ZeroDensity { .. }
            | UnsampleableComponent { .. }
            | DegenerateGeometry { .. } => ErrorKind::Numerical,
            Io(_) => ErrorKind::Io,
            _ => ErrorKind::Data,
        }
    }
}
