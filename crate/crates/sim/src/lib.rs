//! Per-slot nanogrid cluster simulation: behavior, P2P trading, GA
//! scheduling, HVAC plant and cost accounting wired together, plus the
//! file outputs behind the `simctl` tool.

pub mod engine;
pub mod forecasting;
pub mod inputs;
pub mod output;
pub mod streams;

pub use engine::{simulate, Audit, EvSession, SimResult};
pub use forecasting::{prepare_forecaster, ForecastSource};
pub use inputs::World;
pub use output::{gen_dataset, report_run_dir, run, run_matrix, train_forecaster_file, RunOutputs};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] nanogrid_core::ConfigError),
    #[error("cannot read {what} from {path}: {message}")]
    Input { what: &'static str, path: PathBuf, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {message}")]
    Output { path: PathBuf, message: String },
    #[error(
        "no forecaster model at {path}; train one with `simctl train-forecaster`, set \
         forecaster.train_if_missing, or use forecaster.kind = \"persistence\""
    )]
    MissingModel { path: PathBuf },
    #[error("forecaster: {0}")]
    Forecast(#[from] nanogrid_forecast::ForecastError),
    #[error(transparent)]
    Trading(#[from] nanogrid_core::trading::TradingError),
    #[error(transparent)]
    Accounting(#[from] nanogrid_core::accounting::AccountingError),
    #[error("constraint audit failed with {count} violation(s); first: {first}")]
    Audit { count: usize, first: String },
}

impl SimError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io { path: path.into(), source }
    }
}
