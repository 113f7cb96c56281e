use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use nanogrid_core::environment::RpvClass;
use nanogrid_core::{load_scenario, ScenarioConfig, Scheme};
use nanogrid_forecast::{ModelShape, TrainConfig};
use nanogrid_sim::output::print_report;
use nanogrid_sim::{gen_dataset, report_run_dir, run, run_matrix, train_forecaster_file, RunOutputs};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "simctl", version, about = "Nanogrid cluster P2P trading simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write its logs and cost report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// none, conventional or proposed.
        #[arg(long)]
        scheme: Option<String>,
        /// PV capacity class, 1 or 2.
        #[arg(long)]
        rpv: Option<u8>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        days: Option<u32>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Run every scheme under both RPV classes.
    RunMatrix {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seeds; defaults to the config seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        days: Option<u32>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Write per-cluster (load, PV) training data from a no-trading run.
    GenDataset {
        #[arg(long)]
        days: u32,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "dataset")]
        out_dir: PathBuf,
    },
    /// Train a GRU forecaster on a dataset CSV.
    TrainForecaster {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        hidden: usize,
        #[arg(long, default_value_t = 6)]
        gru_layers: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the daily cost report of a finished run.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
    },
}

fn load(path: &Path) -> Result<ScenarioConfig> {
    load_scenario(path).with_context(|| format!("loading {}", path.display()))
}

fn summarize(out: &RunOutputs) {
    let a = &out.result.audit;
    println!(
        "{}: total ${:.4}/day, max grid {:.3} kW, max delay {} slots, {} HVAC-shed slots",
        out.dir.display(),
        out.result.report.total_usd,
        a.max_grid_kw,
        a.max_delay_slots,
        a.hvac_shed_slots
    );
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            scheme,
            rpv,
            seed,
            days,
            out_dir,
        } => {
            let mut cfg = load(&config)?;
            if let Some(s) = scheme {
                cfg.scheme = Scheme::from_label(&s).with_context(|| format!("unknown scheme {s:?}"))?;
            }
            if let Some(r) = rpv {
                cfg.rpv_class = match r {
                    1 => RpvClass::Rpv1,
                    2 => RpvClass::Rpv2,
                    _ => bail!("--rpv must be 1 or 2"),
                };
            }
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.days = days.unwrap_or(cfg.days);
            cfg.validate()?;
            summarize(&run(&cfg, &out_dir, None)?);
        }
        Command::RunMatrix {
            config,
            seeds,
            days,
            out_dir,
        } => {
            let mut cfg = load(&config)?;
            cfg.days = days.unwrap_or(cfg.days);
            cfg.validate()?;
            for out in run_matrix(&cfg, &out_dir, &seeds)? {
                summarize(&out);
            }
        }
        Command::GenDataset { days, config, out_dir } => {
            let cfg = match config {
                Some(p) => load(&p)?,
                None => ScenarioConfig::default(),
            };
            for p in gen_dataset(&cfg, days, &out_dir)? {
                println!("{}", p.display());
            }
        }
        Command::TrainForecaster {
            dataset,
            out,
            epochs,
            hidden,
            gru_layers,
            seed,
        } => {
            let shape = ModelShape {
                gru_layers,
                hidden,
                ..ModelShape::default()
            };
            let cfg = TrainConfig {
                epochs,
                seed,
                ..TrainConfig::default()
            };
            let report = train_forecaster_file(&dataset, &out, &shape, &cfg)?;
            println!(
                "validation RMSE / range: load {:.4}, pv {:.4} (persistence {:.4}, {:.4})",
                report.validation_rmse[0],
                report.validation_rmse[1],
                report.persistence_rmse[0],
                report.persistence_rmse[1]
            );
        }
        Command::Report { run_dir } => {
            let (meta, report) = report_run_dir(&run_dir)?;
            print_report(std::io::stdout().lock(), &meta, &report)?;
        }
    }
    Ok(())
}
