//! Scenario configuration and its JSON loader.

use crate::behavior::{EvModel, ROOMS};
use crate::environment::RpvClass;
use crate::hvac::ThermalParams;
use crate::scheduler::GaParams;
use crate::accounting::Tariff;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

/// Number of future slots the forecaster emits; the trading horizon cannot
/// look further ahead.
pub const FORECAST_HORIZON: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("configuration field `{field}`: {message}")]
    Parse { field: String, message: String },
    #[error("invalid configuration: {0}")]
    Validation(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(alias = "none", alias = "without_p2p")]
    WithoutP2P,
    #[serde(alias = "conventional", alias = "conventional_p2p")]
    ConventionalP2P,
    #[serde(alias = "proposed", alias = "proposed_p2p")]
    ProposedP2P,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::WithoutP2P, Scheme::ConventionalP2P, Scheme::ProposedP2P];

    /// Short name used on the command line and in output files.
    pub fn label(self) -> &'static str {
        match self {
            Scheme::WithoutP2P => "none",
            Scheme::ConventionalP2P => "conventional",
            Scheme::ProposedP2P => "proposed",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.label() == s)
    }

    pub fn trades(self) -> bool {
        self != Scheme::WithoutP2P
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForecasterKind {
    Gru,
    Persistence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecasterSettings {
    pub kind: ForecasterKind,
    /// Directory holding `<RPV label>/cluster{c}.json`, one model per cluster.
    pub model_dir: Option<PathBuf>,
    /// Train missing models from a generated dataset instead of failing.
    pub train_if_missing: bool,
    pub train_days: usize,
    pub epochs: usize,
    pub hidden: usize,
    pub gru_layers: usize,
}

impl Default for ForecasterSettings {
    fn default() -> Self {
        Self {
            kind: ForecasterKind::Gru,
            model_dir: None,
            train_if_missing: false,
            train_days: 365,
            epochs: 1000,
            hidden: 32,
            gru_layers: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scheme: Scheme,
    pub cluster_count: usize,
    pub houses_per_cluster: usize,
    pub pw_max_kw: f64,
    pub d_max_slots: u32,
    pub horizon_k: usize,
    pub rpv_class: RpvClass,
    /// Peaks per cluster when `rpv_class` is `Fixed`.
    pub fixed_peaks_kw: Option<Vec<f64>>,
    /// Use the published six-cluster peaks of the RPV class instead of
    /// drawing them.
    pub reference_peaks: bool,
    pub seed: u64,
    pub days: u32,
    /// Divide the horizon trade amount by `horizon_k + 1`.
    pub average_horizon_amount: bool,
    /// EV sessions per cluster planned to charge at the same time.
    pub ev_concurrency: usize,
    pub smp_usd_per_kwh: f64,
    pub smp_csv: Option<PathBuf>,
    pub tariff: Tariff,
    pub thermal: ThermalParams,
    pub ga: GaParams,
    pub ev: EvModel,
    pub ev_arrival_csv: Option<PathBuf>,
    pub emission_profile_csv: Option<PathBuf>,
    pub weather_csv: Option<PathBuf>,
    pub outdoor_co2_ppm: f64,
    pub pv_reference_csv: Option<PathBuf>,
    /// Row-stochastic room transition matrix, rooms 1-4.
    pub mobility: Option<[[f64; ROOMS]; ROOMS]>,
    /// Run length in slots per appliance index, overriding the catalog.
    pub appliance_durations: BTreeMap<u8, u32>,
    pub forecaster: ForecasterSettings,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::ProposedP2P,
            cluster_count: 6,
            houses_per_cluster: 3,
            pw_max_kw: 9.0,
            d_max_slots: 72,
            horizon_k: 3,
            rpv_class: RpvClass::Rpv1,
            fixed_peaks_kw: None,
            reference_peaks: false,
            seed: 1,
            days: 1,
            average_horizon_amount: false,
            ev_concurrency: 2,
            smp_usd_per_kwh: 0.10,
            smp_csv: None,
            tariff: Tariff::default(),
            thermal: ThermalParams::default(),
            ga: GaParams::default(),
            ev: EvModel::default(),
            ev_arrival_csv: None,
            emission_profile_csv: None,
            weather_csv: None,
            outdoor_co2_ppm: 550.0,
            pv_reference_csv: None,
            mobility: None,
            appliance_durations: BTreeMap::new(),
            forecaster: ForecasterSettings::default(),
        }
    }
}

impl ScenarioConfig {
    /// Parses a JSON document, naming the offending field on failure, and
    /// validates the result.
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            field: match e.path().to_string() {
                p if p == "." => "<root>".to_string(),
                p => p,
            },
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError::Validation(m));
        if !(self.pw_max_kw > 0.0 && self.pw_max_kw.is_finite()) {
            return fail(format!("pw_max_kw must be positive, got {}", self.pw_max_kw));
        }
        if self.d_max_slots < 1 {
            return fail("d_max_slots must be at least 1".into());
        }
        if !(1..=FORECAST_HORIZON).contains(&self.horizon_k) {
            return fail(format!("horizon_k must lie in 1..={FORECAST_HORIZON}, got {}", self.horizon_k));
        }
        if self.cluster_count < 1 || self.houses_per_cluster < 1 {
            return fail("cluster_count and houses_per_cluster must be at least 1".into());
        }
        if self.days < 1 {
            return fail("days must be at least 1".into());
        }
        if self.ev_concurrency < 1 {
            return fail("ev_concurrency must be at least 1".into());
        }
        if !(self.smp_usd_per_kwh >= 0.0 && self.smp_usd_per_kwh.is_finite()) {
            return fail(format!("smp_usd_per_kwh must be non-negative, got {}", self.smp_usd_per_kwh));
        }
        if !(self.outdoor_co2_ppm > 0.0) {
            return fail("outdoor_co2_ppm must be positive".into());
        }
        match (self.rpv_class, &self.fixed_peaks_kw) {
            (RpvClass::Fixed, None) => return fail("rpv_class Fixed requires fixed_peaks_kw".into()),
            (RpvClass::Fixed, Some(p)) if p.len() != self.cluster_count => {
                return fail(format!(
                    "fixed_peaks_kw has {} entries for {} clusters",
                    p.len(),
                    self.cluster_count
                ))
            }
            (RpvClass::Fixed, Some(p)) if p.iter().any(|v| !(*v >= 0.0 && v.is_finite())) => {
                return fail("fixed_peaks_kw entries must be non-negative".into())
            }
            _ => {}
        }
        if self.reference_peaks && self.rpv_class != RpvClass::Fixed && self.cluster_count != 6 {
            return fail("reference_peaks requires exactly 6 clusters".into());
        }
        for (idx, d) in &self.appliance_durations {
            if *d < 1 || !(4..=12).contains(idx) {
                return fail(format!("appliance_durations entry {idx} -> {d} is invalid"));
            }
        }
        self.thermal.validate().map_err(|e| ConfigError::Validation(e.to_string()))?;
        self.ga.validate().map_err(|e| ConfigError::Validation(e.to_string()))?;
        self.ev.validate().map_err(|e| ConfigError::Validation(e.to_string()))?;
        if let Some(m) = &self.mobility {
            crate::behavior::MobilityModel::new(*m).map_err(|e| ConfigError::Validation(e.to_string()))?;
        }
        let f = &self.forecaster;
        if f.hidden < 1 || f.gru_layers < 1 || f.epochs < 1 || f.train_days < 1 {
            return fail("forecaster sizes must be at least 1".into());
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.smp_csv);
        fix(&mut self.ev_arrival_csv);
        fix(&mut self.emission_profile_csv);
        fix(&mut self.weather_csv);
        fix(&mut self.pv_reference_csv);
        fix(&mut self.forecaster.model_dir);
    }
}

/// Loads a JSON scenario file. Relative data paths inside the file are
/// resolved against the file's directory.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cfg = ScenarioConfig::from_json_str(&text)?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}
