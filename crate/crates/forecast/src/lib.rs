//! GRU forecaster for cluster load demand and PV production.
//!
//! A stack of GRU layers reads the last six `(load, PV)` slots and a small
//! fully connected head predicts the next three. Everything, including
//! back-propagation through time and the ADAM optimiser, is implemented on
//! top of `ndarray`.

pub mod dataset;
pub mod gru;
pub mod model;
pub mod train;

use std::path::{Path, PathBuf};

pub use dataset::{read_dataset, read_dataset_file, write_dataset, DatasetRow};
pub use gru::{gru_cell, GruLayer};
pub use model::{
    persistence_forecast, Forecast, ForecastModel, History, ModelShape, Normalizer, FEATURES, INPUT_STEPS,
    OUTPUT_STEPS,
};
pub use train::{train, TrainConfig, TrainReport};

#[derive(Debug, thiserror::Error)]
pub enum ForecastError {
    #[error("{what} has size {got}, expected {expected}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("model has no fitted normaliser; train or load it first")]
    NotReady,
    #[error("dataset has {rows} rows, at least {needed} are needed")]
    DataTooShort { rows: usize, needed: usize },
    #[error("training diverged at epoch {epoch}; try a lower learning rate")]
    Divergence { epoch: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl ForecastError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ForecastError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
