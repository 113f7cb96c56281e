//! Resolves a scenario into the concrete profiles and parameters a run uses.

use crate::streams::{stream, Purpose};
use crate::SimError;
use nanogrid_core::accounting::{SmpCurve, Tariff};
use nanogrid_core::behavior::{default_catalog, ApplianceSpec, EmissionProfile, EvModel, MobilityModel};
use nanogrid_core::environment::{draw_cluster_peaks, ReferenceCurve, RpvClass, WeatherProfile};
use nanogrid_core::ScenarioConfig;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

#[derive(Clone, Debug)]
pub struct World {
    pub catalog: Vec<ApplianceSpec>,
    pub profiles: EmissionProfile,
    pub ev: EvModel,
    pub mobility: MobilityModel,
    pub weather: WeatherProfile,
    pub curve: ReferenceCurve,
    pub tariff: Tariff,
    pub smp: SmpCurve,
    /// PV peak per cluster, in cluster order.
    pub peaks_kw: Vec<f64>,
}

fn open(path: &Path) -> Result<BufReader<File>, SimError> {
    File::open(path).map(BufReader::new).map_err(|e| SimError::io(path, e))
}

fn input_err(what: &'static str, path: &Path, e: impl std::fmt::Display) -> SimError {
    SimError::Input {
        what,
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// PV peaks of a scenario: fixed values, the published six-cluster peaks, or
/// sorted uniform draws from the RPV class on the seed's peak stream.
pub fn cluster_peaks(cfg: &ScenarioConfig) -> Vec<f64> {
    match (cfg.rpv_class, &cfg.fixed_peaks_kw) {
        (RpvClass::Fixed, Some(p)) => p.clone(),
        (class, _) if cfg.reference_peaks => class.reference_peaks().map(|p| p.to_vec()).unwrap_or_default(),
        (class, _) => draw_cluster_peaks(class, cfg.cluster_count, &mut stream(cfg.seed, 0, 0, Purpose::Peaks)),
    }
}

impl World {
    pub fn build(cfg: &ScenarioConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let mut catalog = default_catalog();
        for spec in catalog.iter_mut() {
            if let Some(d) = cfg.appliance_durations.get(&spec.index) {
                spec.duration_slots = *d;
            }
        }
        let profiles = match &cfg.emission_profile_csv {
            Some(p) => EmissionProfile::from_csv_reader(open(p)?).map_err(|e| input_err("emission profiles", p, e))?,
            None => EmissionProfile::bundled(),
        };
        let mut ev = cfg.ev.clone();
        if let Some(p) = &cfg.ev_arrival_csv {
            ev.load_arrivals(open(p)?).map_err(|e| input_err("EV arrival probabilities", p, e))?;
        }
        let mobility = match cfg.mobility {
            Some(m) => MobilityModel::new(m).map_err(|e| input_err("mobility", Path::new("<config>"), e))?,
            None => MobilityModel::default(),
        };
        let weather = match &cfg.weather_csv {
            Some(p) => WeatherProfile::from_csv_reader(open(p)?, cfg.outdoor_co2_ppm).map_err(|e| input_err("weather", p, e))?,
            None => WeatherProfile {
                outdoor_co2_ppm: cfg.outdoor_co2_ppm,
                ..WeatherProfile::default()
            },
        };
        let curve = match &cfg.pv_reference_csv {
            Some(p) => ReferenceCurve::from_csv_reader(open(p)?).map_err(|e| input_err("PV reference curve", p, e))?,
            None => ReferenceCurve::default(),
        };
        let smp = match &cfg.smp_csv {
            Some(p) => SmpCurve::from_csv_reader(open(p)?).map_err(|e| input_err("SMP curve", p, e))?,
            None => SmpCurve::constant(cfg.smp_usd_per_kwh)?,
        };
        Ok(Self {
            catalog,
            profiles,
            ev,
            mobility,
            weather,
            curve,
            tariff: cfg.tariff.clone(),
            smp,
            peaks_kw: cluster_peaks(cfg),
        })
    }
}
