//! From-scratch saliency prediction and eye-fixation evaluation.
//!
//! The crate implements a deeply supervised encoder-decoder network that
//! predicts where people look in an image, together with the standard
//! seven-metric fixation evaluation suite (AUC variants, NSS, CC, SIM and an
//! exact earth mover's distance). Everything numeric is `f64` and every
//! operation is deterministic for a fixed seed, including under `--threads`.
//!
//! The main entry points:
//!
//! * [`network`] builds the model and runs forward/backward passes,
//! * [`train`] fits it with momentum SGD and a step learning-rate schedule,
//! * [`metrics`] scores saliency maps against recorded fixations,
//! * [`data`] prepares images, fixation records and synthetic datasets,
//! * [`gradcheck`] verifies every analytic gradient against finite
//!   differences,
//! * [`cli`] backs the `dva` binary (`train`, `predict`, `eval`, `gradcheck`,
//!   `synth`).
//!
//! Each major capability also has a runnable example:
//!
//! ```text
//! cargo run --release -p dva --example train_synthetic
//! cargo run --release -p dva --example gradient_check
//! cargo run --release -p dva --example evaluate_metrics
//! cargo run --release -p dva --example predict_map
//! cargo run --release -p dva --example ablation_fusion
//! cargo run --release -p dva --example weight_roundtrip
//! ```

use std::path::PathBuf;

pub mod cli;
pub mod config;
pub mod data;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod objective;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod weights;

/// Crate-wide error type. The CLI maps these onto exit codes: configuration
/// and argument problems exit 2, broken data or weight files exit 3, numerical
/// failures exit 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or layer shape contract violation.
    #[error("shape error: {0}")]
    Shape(String),
    /// Invalid configuration, argument or network specification.
    #[error("config error: {0}")]
    Config(String),
    /// Malformed text input (manifest or config file) with location.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    /// Filesystem failure on a named path.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// An image file that exists but cannot be used as requested.
    #[error("{path}: {msg}")]
    BadImage { path: PathBuf, msg: String },
    /// Weight file corruption: bad magic, version, truncation or checksum.
    #[error("weight file {path}: {msg}")]
    WeightFormat { path: PathBuf, msg: String },
    /// Weight file entry whose shape does not match the network being built.
    #[error("weight file {path}: layer {layer}: expected {expected}, got {got}")]
    WeightShape {
        path: PathBuf,
        layer: String,
        expected: String,
        got: String,
    },
    /// Unusable data encountered mid-run (empty fixation map, zero-mass
    /// ground truth, undecodable pixels).
    #[error("data error: {0}")]
    Data(String),
    /// A metric's domain requirement was violated.
    #[error("metric error: {0}")]
    Metric(String),
    /// Numerical failure: non-finite loss, failed gradient check.
    #[error("numerical failure: {0}")]
    Numeric(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
