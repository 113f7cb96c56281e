//! Load/PV forecasts used by the proposed trading rule, and the model store.

use crate::engine::simulate;
use crate::inputs::{cluster_peaks, World};
use crate::SimError;
use nanogrid_core::config::ForecasterKind;
use nanogrid_core::environment::RpvClass;
use nanogrid_core::{ScenarioConfig, Scheme};
use nanogrid_forecast::{persistence_forecast, train, ForecastModel, History, ModelShape, TrainConfig, INPUT_STEPS};
use std::path::{Path, PathBuf};

/// Seed offset for the synthetic training year, so a model never trains
/// on the very days it is evaluated on.
pub const DATASET_SEED_OFFSET: u64 = 0x5eed_da7a;

#[derive(Clone, Debug)]
pub enum ForecastSource {
    /// Repeat the latest observation.
    Persistence,
    /// One trained model per cluster.
    Models(Vec<ForecastModel>),
}

impl ForecastSource {
    /// Next `k` `(load_kw, pv_kw)` pairs for a cluster from its realized
    /// history, oldest first and ending with the current slot. Until six
    /// rows exist the persistence rule is used.
    pub fn forecast(&self, cluster: usize, history: &[[f64; 2]], k: usize) -> Result<Vec<(f64, f64)>, SimError> {
        let Some(last) = history.last() else {
            return Ok(Vec::new());
        };
        let ahead = match self {
            ForecastSource::Models(models) if history.len() >= INPUT_STEPS => {
                let mut h: History = [[0.0; 2]; INPUT_STEPS];
                h.copy_from_slice(&history[history.len() - INPUT_STEPS..]);
                models[cluster].forecast(&h)?
            }
            _ => persistence_forecast(&[*last; INPUT_STEPS]),
        };
        Ok(ahead.iter().take(k).map(|p| (p[0], p[1])).collect())
    }
}

/// Directory label for a scenario's PV setup.
pub fn rpv_label(cfg: &ScenarioConfig) -> &'static str {
    cfg.rpv_class.label()
}

pub fn model_path(dir: &Path, cfg: &ScenarioConfig, cluster: usize) -> PathBuf {
    dir.join(rpv_label(cfg)).join(format!("cluster{}.json", cluster + 1))
}

pub fn model_shape(cfg: &ScenarioConfig) -> ModelShape {
    ModelShape {
        gru_layers: cfg.forecaster.gru_layers,
        hidden: cfg.forecaster.hidden,
        ..ModelShape::default()
    }
}

/// Unscheduled `(load, pv)` series per cluster from a no-trading run with
/// the same PV peaks as `cfg` but an independent seed.
pub fn training_series(cfg: &ScenarioConfig, days: u32) -> Result<Vec<Vec<[f64; 2]>>, SimError> {
    let mut data_cfg = cfg.clone();
    data_cfg.scheme = Scheme::WithoutP2P;
    data_cfg.days = days;
    data_cfg.seed = cfg.seed.wrapping_add(DATASET_SEED_OFFSET);
    data_cfg.fixed_peaks_kw = Some(cluster_peaks(cfg));
    data_cfg.rpv_class = RpvClass::Fixed;
    data_cfg.reference_peaks = false;
    let world = World::build(&data_cfg)?;
    Ok(simulate(&data_cfg, &world, &ForecastSource::Persistence)?.unscheduled)
}

pub fn train_config(cfg: &ScenarioConfig, cluster: usize) -> TrainConfig {
    TrainConfig {
        epochs: cfg.forecaster.epochs,
        seed: cluster as u64,
        ..TrainConfig::default()
    }
}

/// Forecast source for a run: persistence unless the proposed scheme is
/// configured with GRU models, which are loaded from the model store or,
/// when allowed, trained on a synthetic dataset and saved there.
pub fn prepare_forecaster(cfg: &ScenarioConfig) -> Result<ForecastSource, SimError> {
    if cfg.scheme != Scheme::ProposedP2P || cfg.forecaster.kind == ForecasterKind::Persistence {
        return Ok(ForecastSource::Persistence);
    }
    let dir = cfg.forecaster.model_dir.clone().unwrap_or_else(|| PathBuf::from("models"));
    let paths: Vec<PathBuf> = (0..cfg.cluster_count).map(|c| model_path(&dir, cfg, c)).collect();
    let missing: Vec<&PathBuf> = paths.iter().filter(|p| !p.exists()).collect();
    if !missing.is_empty() {
        if !cfg.forecaster.train_if_missing {
            return Err(SimError::MissingModel { path: missing[0].clone() });
        }
        let series = training_series(cfg, cfg.forecaster.train_days as u32)?;
        for (c, path) in paths.iter().enumerate() {
            if path.exists() {
                continue;
            }
            let (model, _) = train(&series[c], &model_shape(cfg), &train_config(cfg, c))?;
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| SimError::io(parent, e))?;
            }
            model.save(path)?;
        }
    }
    let models = paths
        .iter()
        .map(|p| ForecastModel::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ForecastSource::Models(models))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_history_falls_back_to_persistence() {
        let src = ForecastSource::Models(vec![ForecastModel::zeros(ModelShape::default())]);
        let out = src.forecast(0, &[[1.0, 0.0], [4.0, 2.5]], 3).unwrap();
        assert_eq!(out, vec![(4.0, 2.5); 3]);
        let out = ForecastSource::Persistence.forecast(0, &[[3.0, 1.0]; 6], 2).unwrap();
        assert_eq!(out, vec![(3.0, 1.0); 2]);
    }

    #[test]
    fn missing_model_is_actionable() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ScenarioConfig::default();
        cfg.forecaster.model_dir = Some(dir.path().to_path_buf());
        let err = prepare_forecaster(&cfg).unwrap_err();
        assert!(matches!(err, SimError::MissingModel { .. }));
        assert!(err.to_string().contains("train-forecaster"), "{err}");
        cfg.scheme = Scheme::ConventionalP2P;
        assert!(matches!(prepare_forecaster(&cfg).unwrap(), ForecastSource::Persistence));
    }
}
