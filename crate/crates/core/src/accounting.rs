//! Demand-response tariff, SMP curve and the per-slot cost ledger.

use crate::scheduler::PowerSplit;
use crate::time::{TimeSlot, SLOTS_PER_DAY, SLOTS_PER_HOUR};
use crate::trading::settle;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

#[derive(Debug, thiserror::Error)]
pub enum AccountingError {
    #[error("{what} needs {expected} entries, got {got}")]
    Length { what: &'static str, expected: usize, got: usize },
    #[error("rate {0} is negative or not finite")]
    BadRate(f64),
    #[error("slot {0} is outside 0..144")]
    BadSlot(usize),
    #[error("cluster {0} is outside the ledger")]
    BadCluster(usize),
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn check_rates(rates: &[f64]) -> Result<(), AccountingError> {
    match rates.iter().find(|r| !(**r >= 0.0 && r.is_finite())) {
        Some(r) => Err(AccountingError::BadRate(*r)),
        None => Ok(()),
    }
}

/// Grid energy rate for every slot of the day in $/kWh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HourlyRates", into = "HourlyRates")]
pub struct Tariff {
    per_slot: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HourlyRates {
    hourly_usd_per_kwh: Vec<f64>,
}

impl TryFrom<HourlyRates> for Tariff {
    type Error = AccountingError;
    fn try_from(h: HourlyRates) -> Result<Self, Self::Error> {
        Tariff::from_hourly(&h.hourly_usd_per_kwh)
    }
}

impl From<Tariff> for HourlyRates {
    fn from(t: Tariff) -> Self {
        HourlyRates {
            hourly_usd_per_kwh: t.per_slot.iter().step_by(SLOTS_PER_HOUR).copied().collect(),
        }
    }
}

impl Default for Tariff {
    /// Three-tier demand-response program: $0.05 from 23:00 to 09:00, $0.18
    /// over 10:00-12:00 and 13:00-17:00, $0.10 in the remaining hours.
    fn default() -> Self {
        let hourly: Vec<f64> = (0..24)
            .map(|h| match h {
                23 | 0..=8 => 0.05,
                10 | 11 | 13..=16 => 0.18,
                _ => 0.10,
            })
            .collect();
        Self::from_hourly(&hourly).expect("default tariff is valid")
    }
}

impl Tariff {
    pub fn from_hourly(hourly: &[f64]) -> Result<Self, AccountingError> {
        if hourly.len() != 24 {
            return Err(AccountingError::Length {
                what: "hourly tariff",
                expected: 24,
                got: hourly.len(),
            });
        }
        check_rates(hourly)?;
        Ok(Self {
            per_slot: hourly.iter().flat_map(|r| [*r; SLOTS_PER_HOUR]).collect(),
        })
    }

    pub fn rate(&self, slot: TimeSlot) -> f64 {
        self.per_slot[slot.slot_of_day()]
    }
}

pub fn dr_rate(slot: TimeSlot, tariff: &Tariff) -> f64 {
    tariff.rate(slot)
}

/// System marginal price applied to traded PV energy, per slot of the day.
#[derive(Clone, Debug, PartialEq)]
pub struct SmpCurve {
    per_slot: Vec<f64>,
}

impl Default for SmpCurve {
    fn default() -> Self {
        Self::constant(0.10).expect("default SMP is valid")
    }
}

impl SmpCurve {
    pub fn constant(usd_per_kwh: f64) -> Result<Self, AccountingError> {
        check_rates(&[usd_per_kwh])?;
        Ok(Self {
            per_slot: vec![usd_per_kwh; SLOTS_PER_DAY],
        })
    }

    /// Reads `slot, usd_per_kwh` rows covering every slot of the day.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, AccountingError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut per_slot = vec![f64::NAN; SLOTS_PER_DAY];
        for row in rdr.deserialize::<(usize, f64)>() {
            let (slot, v) = row?;
            *per_slot.get_mut(slot).ok_or(AccountingError::BadSlot(slot))? = v;
        }
        check_rates(&per_slot)?;
        Ok(Self { per_slot })
    }

    pub fn price(&self, slot: TimeSlot) -> f64 {
        self.per_slot[slot.slot_of_day()]
    }
}

/// Cost of one slot for one cluster: grid energy at the tariff and traded
/// energy at the SMP. Own PV is free.
pub fn interval_cost(
    split: &PowerSplit,
    traded_kw_signed: f64,
    slot: TimeSlot,
    tariff: &Tariff,
    smp: &SmpCurve,
) -> (f64, f64) {
    (split.grid_kw * tariff.rate(slot) / 6.0, settle(traded_kw_signed, smp.price(slot)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub slot: TimeSlot,
    pub grid_cost_usd: f64,
    pub trade_settlement_usd: f64,
}

impl LedgerEntry {
    pub fn total_usd(&self) -> f64 {
        self.grid_cost_usd + self.trade_settlement_usd
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CostLedger {
    entries: Vec<Vec<LedgerEntry>>,
}

impl CostLedger {
    pub fn new(cluster_count: usize) -> Self {
        Self {
            entries: vec![Vec::new(); cluster_count],
        }
    }

    pub fn cluster_count(&self) -> usize {
        self.entries.len()
    }

    pub fn record(&mut self, cluster: usize, slot: TimeSlot, grid_cost_usd: f64, trade_settlement_usd: f64) -> Result<(), AccountingError> {
        self.entries
            .get_mut(cluster)
            .ok_or(AccountingError::BadCluster(cluster))?
            .push(LedgerEntry {
                slot,
                grid_cost_usd,
                trade_settlement_usd,
            });
        Ok(())
    }

    pub fn entries(&self, cluster: usize) -> &[LedgerEntry] {
        &self.entries[cluster]
    }

    pub fn cluster_total(&self, cluster: usize) -> f64 {
        self.entries[cluster].iter().map(LedgerEntry::total_usd).sum()
    }

    /// Total cost per day for one cluster, indexed by day.
    pub fn daily_totals(&self, cluster: usize) -> Vec<f64> {
        let days = self.entries[cluster].iter().map(|e| e.slot.day() as usize + 1).max().unwrap_or(0);
        let mut totals = vec![0.0; days];
        for e in &self.entries[cluster] {
            totals[e.slot.day() as usize] += e.total_usd();
        }
        totals
    }

    fn days_covered(&self) -> (usize, bool) {
        let days = self
            .entries
            .iter()
            .flatten()
            .map(|e| e.slot.day() as usize + 1)
            .max()
            .unwrap_or(0);
        let complete = self.entries.iter().all(|e| e.len() == days * SLOTS_PER_DAY);
        (days, complete)
    }
}

/// Mean daily cost per cluster with the average and total across clusters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DailyReport {
    pub cluster_daily_usd: Vec<f64>,
    pub average_usd: f64,
    pub total_usd: f64,
    pub days: usize,
    /// Set when some cluster does not cover every slot of every day.
    pub partial: bool,
}

pub fn daily_report(ledger: &CostLedger) -> DailyReport {
    let (days, complete) = ledger.days_covered();
    let per_day = days.max(1) as f64;
    let cluster_daily_usd: Vec<f64> = (0..ledger.cluster_count())
        .map(|c| ledger.cluster_total(c) / per_day)
        .collect();
    let total_usd: f64 = cluster_daily_usd.iter().sum();
    let average_usd = if cluster_daily_usd.is_empty() {
        0.0
    } else {
        total_usd / cluster_daily_usd.len() as f64
    };
    DailyReport {
        cluster_daily_usd,
        average_usd,
        total_usd,
        days,
        partial: !complete,
    }
}

/// Writes `scheme, rpv_class, cluster, daily_cost_usd` rows: one per cluster
/// (numbered from 1) followed by `avg` and `total`. A partial ledger gets a
/// leading `#` warning line.
pub fn write_report_csv<W: Write>(mut out: W, scheme: &str, rpv_class: &str, report: &DailyReport) -> Result<(), AccountingError> {
    if report.partial {
        writeln!(out, "# warning: ledger does not cover complete days; costs are partial")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scheme", "rpv_class", "cluster", "daily_cost_usd"])?;
    for (c, cost) in report.cluster_daily_usd.iter().enumerate() {
        w.write_record([scheme, rpv_class, &(c + 1).to_string(), &cost.to_string()])?;
    }
    w.write_record([scheme, rpv_class, "avg", &report.average_usd.to_string()])?;
    w.write_record([scheme, rpv_class, "total", &report.total_usd.to_string()])?;
    w.flush()?;
    Ok(())
}
