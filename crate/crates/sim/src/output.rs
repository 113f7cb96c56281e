//! Run orchestration and the CSV/JSON artifacts of a run.

use crate::engine::{simulate, SimResult};
use crate::forecasting::{model_shape, prepare_forecaster, train_config, training_series, ForecastSource};
use crate::inputs::World;
use crate::SimError;
use nanogrid_core::accounting::{daily_report, write_report_csv, CostLedger, DailyReport};
use nanogrid_core::environment::RpvClass;
use nanogrid_core::{ScenarioConfig, Scheme, TimeSlot};
use nanogrid_forecast::{read_dataset_file, train, write_dataset, ModelShape, TrainConfig, TrainReport};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub const TRADE_LOG: &str = "trade_log.csv";
pub const SCHEDULE_LOG: &str = "schedule_log.csv";
pub const POWER_LOG: &str = "power.csv";
pub const COST_REPORT: &str = "cost_report.csv";
pub const LEDGER: &str = "ledger.csv";
pub const EV_ARRIVALS: &str = "ev_arrivals.csv";
pub const RUN_META: &str = "run_meta.json";

pub const ARTIFACT_VERSION: &str = concat!("nanogrid-sim/", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug)]
pub struct RunOutputs {
    pub dir: PathBuf,
    pub trade_log: PathBuf,
    pub schedule_log: PathBuf,
    pub power: PathBuf,
    pub cost_report: PathBuf,
    pub ledger: PathBuf,
    pub ev_arrivals: PathBuf,
    pub meta: PathBuf,
    pub result: SimResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub artifact_version: String,
    pub scheme: Scheme,
    pub rpv_class: String,
    pub seed: u64,
    pub days: u32,
    pub cluster_count: usize,
    pub peaks_kw: Vec<f64>,
    pub total_daily_cost_usd: f64,
    pub audit_violations: usize,
    pub max_grid_kw: f64,
    pub max_delay_slots: u32,
    pub hvac_shed_slots: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct LedgerRow {
    cluster: usize,
    day: u32,
    slot: usize,
    grid_cost_usd: f64,
    trade_settlement_usd: f64,
}

/// Files written so far, removed again if the run fails part-way.
struct Written {
    files: Vec<PathBuf>,
    created_dir: Option<PathBuf>,
}

impl Written {
    fn new(dir: &Path) -> Result<Self, SimError> {
        let created_dir = if dir.exists() {
            None
        } else {
            std::fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
            Some(dir.to_path_buf())
        };
        Ok(Self {
            files: Vec::new(),
            created_dir,
        })
    }

    fn create(&mut self, path: PathBuf) -> Result<BufWriter<File>, SimError> {
        let file = File::create(&path).map_err(|e| SimError::io(&path, e))?;
        self.files.push(path);
        Ok(BufWriter::new(file))
    }

    fn cleanup(self) {
        for f in &self.files {
            let _ = std::fs::remove_file(f);
        }
        if let Some(d) = &self.created_dir {
            let _ = std::fs::remove_dir(d);
        }
    }
}

fn out_err(path: &Path, e: impl std::fmt::Display) -> SimError {
    SimError::Output {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write_csv<T: Serialize>(w: &mut Written, path: PathBuf, rows: &[T], header: &[&str]) -> Result<(), SimError> {
    let mut csv = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(w.create(path.clone())?);
    csv.write_record(header).map_err(|e| out_err(&path, e))?;
    for row in rows {
        csv.serialize(row).map_err(|e| out_err(&path, e))?;
    }
    csv.flush().map_err(|e| SimError::io(&path, e))
}

fn rpv_name(cfg: &ScenarioConfig) -> &'static str {
    cfg.rpv_class.label()
}

fn write_outputs(dir: &Path, cfg: &ScenarioConfig, result: &SimResult, w: &mut Written) -> Result<(), SimError> {
    write_csv(
        w,
        dir.join(TRADE_LOG),
        &result.trades,
        &["day", "slot", "cluster", "role", "posted_kw", "cleared_kw", "smp", "settlement_usd"],
    )?;
    write_csv(
        w,
        dir.join(SCHEDULE_LOG),
        &result.schedule,
        &["day", "slot", "cluster", "appliance_index", "action", "accumulated_delay"],
    )?;
    write_csv(
        w,
        dir.join(POWER_LOG),
        &result.power,
        &[
            "day",
            "slot",
            "cluster",
            "pw_load_kw",
            "pv_self_used_kw",
            "pv_traded_kw",
            "grid_kw",
            "hvac_kw",
            "ev_kw",
            "total_delay_slots",
        ],
    )?;
    write_csv(w, dir.join(EV_ARRIVALS), &result.ev_arrivals, &["day", "slot", "cluster", "house"])?;
    let ledger_rows: Vec<LedgerRow> = (0..result.ledger.cluster_count())
        .flat_map(|c| {
            result.ledger.entries(c).iter().map(move |e| LedgerRow {
                cluster: c + 1,
                day: e.slot.day(),
                slot: e.slot.slot_of_day(),
                grid_cost_usd: e.grid_cost_usd,
                trade_settlement_usd: e.trade_settlement_usd,
            })
        })
        .collect();
    write_csv(
        w,
        dir.join(LEDGER),
        &ledger_rows,
        &["cluster", "day", "slot", "grid_cost_usd", "trade_settlement_usd"],
    )?;

    let path = dir.join(COST_REPORT);
    let mut out = w.create(path.clone())?;
    write_report_csv(&mut out, cfg.scheme.label(), rpv_name(cfg), &result.report)?;
    out.flush().map_err(|e| SimError::io(&path, e))?;

    let meta = RunMeta {
        artifact_version: ARTIFACT_VERSION.to_string(),
        scheme: cfg.scheme,
        rpv_class: rpv_name(cfg).to_string(),
        seed: cfg.seed,
        days: cfg.days,
        cluster_count: cfg.cluster_count,
        peaks_kw: result.peaks_kw.clone(),
        total_daily_cost_usd: result.report.total_usd,
        audit_violations: result.audit.violations.len(),
        max_grid_kw: result.audit.max_grid_kw,
        max_delay_slots: result.audit.max_delay_slots,
        hvac_shed_slots: result.audit.hvac_shed_slots,
    };
    let path = dir.join(RUN_META);
    let mut out = w.create(path.clone())?;
    serde_json::to_writer_pretty(&mut out, &meta).map_err(|e| out_err(&path, e))?;
    writeln!(out).and_then(|_| out.flush()).map_err(|e| SimError::io(&path, e))
}

/// Simulates a scenario and writes every artifact into `out_dir`.
///
/// Files already written are removed if writing fails. A run whose
/// constraint audit finds violations keeps its files for inspection but
/// returns [`SimError::Audit`].
pub fn run(cfg: &ScenarioConfig, out_dir: &Path, forecaster: Option<&ForecastSource>) -> Result<RunOutputs, SimError> {
    let world = World::build(cfg)?;
    let prepared;
    let forecaster = match forecaster {
        Some(f) => f,
        None => {
            prepared = prepare_forecaster(cfg)?;
            &prepared
        }
    };
    let result = simulate(cfg, &world, forecaster)?;
    let mut written = Written::new(out_dir)?;
    if let Err(e) = write_outputs(out_dir, cfg, &result, &mut written) {
        written.cleanup();
        return Err(e);
    }
    if let Some(first) = result.audit.violations.first() {
        return Err(SimError::Audit {
            count: result.audit.violations.len(),
            first: first.clone(),
        });
    }
    Ok(RunOutputs {
        dir: out_dir.to_path_buf(),
        trade_log: out_dir.join(TRADE_LOG),
        schedule_log: out_dir.join(SCHEDULE_LOG),
        power: out_dir.join(POWER_LOG),
        cost_report: out_dir.join(COST_REPORT),
        ledger: out_dir.join(LEDGER),
        ev_arrivals: out_dir.join(EV_ARRIVALS),
        meta: out_dir.join(RUN_META),
        result,
    })
}

/// Configuration of one matrix cell.
pub fn matrix_config(base: &ScenarioConfig, rpv: RpvClass, scheme: Scheme, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        scheme,
        rpv_class: rpv,
        seed,
        ..base.clone()
    }
}

/// Directory name of one matrix cell.
pub fn matrix_dir_name(rpv: RpvClass, scheme: Scheme, seed: Option<u64>) -> String {
    match seed {
        Some(s) => format!("{}-{}-seed{s}", rpv.label().to_lowercase(), scheme.label()),
        None => format!("{}-{}", rpv.label().to_lowercase(), scheme.label()),
    }
}

/// Runs every scheme under both RPV classes for each seed, with common
/// random numbers across schemes. With one seed the six result
/// directories are `rpv1-none`, ..., `rpv2-proposed`; with several the
/// seed is appended.
pub fn run_matrix(base: &ScenarioConfig, out_dir: &Path, seeds: &[u64]) -> Result<Vec<RunOutputs>, SimError> {
    let seeds: Vec<u64> = if seeds.is_empty() { vec![base.seed] } else { seeds.to_vec() };
    let mut outputs = Vec::new();
    for rpv in [RpvClass::Rpv1, RpvClass::Rpv2] {
        // The model store is keyed by RPV class, so load it once per class.
        let mut proposed_source = None;
        for &seed in &seeds {
            for scheme in Scheme::ALL {
                let cfg = matrix_config(base, rpv, scheme, seed);
                let source = if scheme == Scheme::ProposedP2P {
                    if proposed_source.is_none() {
                        proposed_source = Some(prepare_forecaster(&cfg)?);
                    }
                    proposed_source.clone().expect("prepared above")
                } else {
                    ForecastSource::Persistence
                };
                let name = matrix_dir_name(rpv, scheme, (seeds.len() > 1).then_some(seed));
                outputs.push(run(&cfg, &out_dir.join(name), Some(&source))?);
            }
        }
    }
    Ok(outputs)
}

/// Runs the no-trading scheme for `days` and writes one
/// `dataset_cluster{c}.csv` per cluster with the unscheduled load and PV.
pub fn gen_dataset(cfg: &ScenarioConfig, days: u32, out_dir: &Path) -> Result<Vec<PathBuf>, SimError> {
    let mut data_cfg = cfg.clone();
    data_cfg.scheme = Scheme::WithoutP2P;
    data_cfg.days = days;
    data_cfg.validate()?;
    let world = World::build(&data_cfg)?;
    let result = simulate(&data_cfg, &world, &ForecastSource::Persistence)?;
    let mut written = Written::new(out_dir)?;
    let mut paths = Vec::new();
    for (c, series) in result.unscheduled.iter().enumerate() {
        let path = out_dir.join(format!("dataset_cluster{}.csv", c + 1));
        let res = written
            .create(path.clone())
            .and_then(|out| write_dataset(out, series).map_err(SimError::from));
        if let Err(e) = res {
            written.cleanup();
            return Err(e);
        }
        paths.push(path);
    }
    Ok(paths)
}

/// Trains a forecaster on a dataset CSV and saves it as JSON.
pub fn train_forecaster_file(
    dataset: &Path,
    out: &Path,
    shape: &ModelShape,
    cfg: &TrainConfig,
) -> Result<TrainReport, SimError> {
    let series = read_dataset_file(dataset)?;
    let (model, report) = train(&series, shape, cfg)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| SimError::io(parent, e))?;
    }
    model.save(out)?;
    Ok(report)
}

/// Trains and stores the per-cluster models a proposed-scheme run of
/// `cfg` expects, overwriting existing ones.
pub fn train_model_store(cfg: &ScenarioConfig, model_dir: &Path) -> Result<Vec<TrainReport>, SimError> {
    let series = training_series(cfg, cfg.forecaster.train_days as u32)?;
    let mut reports = Vec::new();
    for (c, s) in series.iter().enumerate() {
        let (model, report) = train(s, &model_shape(cfg), &train_config(cfg, c))?;
        let path = crate::forecasting::model_path(model_dir, cfg, c);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| SimError::io(parent, e))?;
        }
        model.save(&path)?;
        reports.push(report);
    }
    Ok(reports)
}

/// Rebuilds the daily cost report of a finished run from its ledger.
pub fn report_run_dir(run_dir: &Path) -> Result<(RunMeta, DailyReport), SimError> {
    let meta_path = run_dir.join(RUN_META);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| SimError::io(&meta_path, e))?;
    let meta: RunMeta = serde_json::from_str(&text).map_err(|e| SimError::Input {
        what: "run metadata",
        path: meta_path.clone(),
        message: e.to_string(),
    })?;
    let ledger_path = run_dir.join(LEDGER);
    let mut rdr = csv::Reader::from_path(&ledger_path).map_err(|e| SimError::Input {
        what: "ledger",
        path: ledger_path.clone(),
        message: e.to_string(),
    })?;
    let mut ledger = CostLedger::new(meta.cluster_count);
    for row in rdr.deserialize::<LedgerRow>() {
        let row = row.map_err(|e| SimError::Input {
            what: "ledger",
            path: ledger_path.clone(),
            message: e.to_string(),
        })?;
        let slot = TimeSlot::new(row.day, row.slot).map_err(|e| SimError::Input {
            what: "ledger",
            path: ledger_path.clone(),
            message: e.to_string(),
        })?;
        if row.cluster == 0 {
            return Err(SimError::Input {
                what: "ledger",
                path: ledger_path.clone(),
                message: "clusters are numbered from 1".into(),
            });
        }
        ledger.record(row.cluster - 1, slot, row.grid_cost_usd, row.trade_settlement_usd)?;
    }
    Ok((meta.clone(), daily_report(&ledger)))
}

/// Writes a Table-3 style report for `meta` to `out`.
pub fn print_report<W: Write>(out: W, meta: &RunMeta, report: &DailyReport) -> Result<(), SimError> {
    write_report_csv(out, meta.scheme.label(), &meta.rpv_class, report)?;
    Ok(())
}
