use nanogrid_core::config::ForecasterKind;
use nanogrid_core::environment::RpvClass;
use nanogrid_core::scheduler::GaParams;
use nanogrid_core::{ScenarioConfig, Scheme};
use nanogrid_sim::output::{EV_ARRIVALS, LEDGER, POWER_LOG, SCHEDULE_LOG, TRADE_LOG};
use nanogrid_sim::{gen_dataset, report_run_dir, run, run_matrix, SimError};
use std::fs;
use std::path::Path;

fn quick(scheme: Scheme) -> ScenarioConfig {
    let mut cfg = ScenarioConfig {
        scheme,
        reference_peaks: true,
        ga: GaParams {
            population: 30,
            generations: 30,
            ..GaParams::default()
        },
        ..ScenarioConfig::default()
    };
    cfg.forecaster.kind = ForecasterKind::Persistence;
    cfg
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn without_trading_the_trade_log_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&quick(Scheme::WithoutP2P), dir.path(), None).unwrap();
    assert_eq!(read(dir.path(), TRADE_LOG).lines().count(), 1);
    assert!(out.result.audit.is_clean());
    assert_eq!(out.result.power.len(), 6 * 144);
}

#[test]
fn without_pv_nobody_trades() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig {
        rpv_class: RpvClass::Fixed,
        fixed_peaks_kw: Some(vec![0.0; 6]),
        reference_peaks: false,
        ..quick(Scheme::ConventionalP2P)
    };
    let out = run(&cfg, dir.path(), None).unwrap();
    // Clusters over the grid limit still post requests, but nothing clears.
    assert!(!out.result.trades.is_empty());
    for t in &out.result.trades {
        assert_eq!(t.role, "buy");
        assert_eq!((t.cleared_kw, t.settlement_usd), (0.0, 0.0));
    }
    assert!(out.result.power.iter().all(|p| p.pv_self_used_kw == 0.0 && p.pv_traded_kw == 0.0));
}

#[test]
fn same_seed_gives_byte_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = quick(Scheme::ConventionalP2P);
    run(&cfg, a.path(), None).unwrap();
    run(&cfg, b.path(), None).unwrap();
    for name in [TRADE_LOG, SCHEDULE_LOG, POWER_LOG, LEDGER, EV_ARRIVALS, "cost_report.csv"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
    }
    assert!(read(a.path(), TRADE_LOG).lines().count() > 1);
}

#[test]
fn ev_arrivals_are_common_to_all_schemes() {
    let logs: Vec<String> = Scheme::ALL
        .iter()
        .map(|s| {
            let dir = tempfile::tempdir().unwrap();
            run(&quick(*s), dir.path(), None).unwrap();
            read(dir.path(), EV_ARRIVALS)
        })
        .collect();
    assert!(logs[0].lines().count() > 1);
    assert_eq!(logs[0], logs[1]);
    assert_eq!(logs[0], logs[2]);
}

#[test]
fn constant_forecasts_reproduce_the_conventional_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    // Persistence repeats the current slot, so averaging the horizon amount
    // makes every posted quantity equal to the single-slot one.
    let averaged = |scheme| ScenarioConfig {
        average_horizon_amount: true,
        ..quick(scheme)
    };
    run(&averaged(Scheme::ConventionalP2P), a.path(), None).unwrap();
    run(&averaged(Scheme::ProposedP2P), b.path(), None).unwrap();
    for name in [TRADE_LOG, SCHEDULE_LOG, POWER_LOG] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
    }
}

#[test]
fn power_log_balances_and_respects_the_grid_limit() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&quick(Scheme::ConventionalP2P), dir.path(), None).unwrap();
    let mut rdr = csv::Reader::from_path(&out.power).unwrap();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let v = |i: usize| rec[i].parse::<f64>().unwrap();
        assert!((v(3) - v(4) - v(5) - v(6)).abs() < 1e-9, "{rec:?}");
        assert!(v(6) < 9.0);
        rows += 1;
    }
    assert_eq!(rows, 6 * 144);
    let mut rdr = csv::Reader::from_path(&out.schedule_log).unwrap();
    for rec in rdr.records() {
        assert!(rec.unwrap()[5].parse::<u32>().unwrap() <= 72);
    }
}

#[test]
fn report_is_rebuilt_from_the_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&quick(Scheme::ConventionalP2P), dir.path(), None).unwrap();
    let (meta, report) = report_run_dir(dir.path()).unwrap();
    assert_eq!(meta.scheme, Scheme::ConventionalP2P);
    assert_eq!(report.cluster_daily_usd.len(), 6);
    for (a, b) in report.cluster_daily_usd.iter().zip(&out.result.report.cluster_daily_usd) {
        assert!((a - b).abs() < 1e-9);
    }
    let csv = read(dir.path(), "cost_report.csv");
    assert_eq!(csv.lines().count(), 1 + 6 + 2);
    assert!(csv.contains("conventional,RPV1,avg,") && csv.contains("conventional,RPV1,total,"));
}

#[test]
fn failed_write_removes_partial_files() {
    let dir = tempfile::tempdir().unwrap();
    // A directory where the ledger file should go makes that write fail
    // after the first logs are already on disk.
    fs::create_dir(dir.path().join(LEDGER)).unwrap();
    let err = run(&quick(Scheme::WithoutP2P), dir.path(), None).unwrap_err();
    assert!(matches!(err, SimError::Io { .. }), "{err}");
    for name in [TRADE_LOG, SCHEDULE_LOG, POWER_LOG, EV_ARRIVALS] {
        assert!(!dir.path().join(name).exists(), "{name} left behind");
    }
}

#[test]
fn proposed_without_models_fails_with_guidance() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick(Scheme::ProposedP2P);
    cfg.forecaster.kind = ForecasterKind::Gru;
    cfg.forecaster.model_dir = Some(dir.path().join("models"));
    let out = dir.path().join("run");
    let err = run(&cfg, &out, None).unwrap_err();
    assert!(matches!(err, SimError::MissingModel { .. }));
    assert!(!out.exists());
}

#[test]
fn proposed_trains_missing_models_when_allowed() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick(Scheme::ProposedP2P);
    cfg.cluster_count = 2;
    cfg.reference_peaks = false;
    cfg.forecaster.kind = ForecasterKind::Gru;
    cfg.forecaster.model_dir = Some(dir.path().join("models"));
    cfg.forecaster.train_if_missing = true;
    cfg.forecaster.train_days = 3;
    cfg.forecaster.epochs = 2;
    cfg.forecaster.hidden = 4;
    cfg.forecaster.gru_layers = 1;
    let out = run(&cfg, &dir.path().join("run"), None).unwrap();
    assert!(out.result.audit.is_clean());
    assert!(dir.path().join("models/RPV1/cluster1.json").exists());
    assert!(dir.path().join("models/RPV1/cluster2.json").exists());
}

#[test]
fn dataset_has_one_row_per_slot_and_dark_nights() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig {
        cluster_count: 2,
        reference_peaks: false,
        ..quick(Scheme::ProposedP2P)
    };
    let paths = gen_dataset(&cfg, 1, dir.path()).unwrap();
    assert_eq!(paths.len(), 2);
    for p in paths {
        let rows = nanogrid_forecast::read_dataset_file(&p).unwrap();
        assert_eq!(rows.len(), 144);
        for (s, r) in rows.iter().enumerate() {
            if s <= 36 || s >= 120 {
                assert_eq!(r[1], 0.0, "slot {s}");
            }
            assert!(r[0] > 0.0);
        }
    }
}

#[test]
fn matrix_covers_every_scheme_and_class() {
    let dir = tempfile::tempdir().unwrap();
    let outs = run_matrix(&quick(Scheme::WithoutP2P), dir.path(), &[]).unwrap();
    assert_eq!(outs.len(), 6);
    let mut names: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        ["rpv1-conventional", "rpv1-none", "rpv1-proposed", "rpv2-conventional", "rpv2-none", "rpv2-proposed"]
    );
    for out in &outs {
        let peaks = &out.result.peaks_kw;
        let top = peaks.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(peaks[5], top);
    }
}
