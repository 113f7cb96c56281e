use nanogrid_core::accounting::{daily_report, interval_cost, CostLedger, SmpCurve, Tariff};
use nanogrid_core::scheduler::allocate_power;
use nanogrid_core::trading::{clear_market, role_conventional, OrderBook, TradeRole};
use nanogrid_core::{TimeSlot, SLOTS_PER_DAY};
use proptest::prelude::*;

/// One slot for every cluster: roles, clearing, power split and ledger.
/// Returns the per-cluster grid cost and settlement.
fn cycle(loads: &[(f64, f64)], slot: TimeSlot, ledger: &mut CostLedger) -> Vec<(f64, f64)> {
    let pw_max = 9.0;
    let tariff = Tariff::default();
    let smp = SmpCurve::constant(0.10).unwrap();
    let roles: Vec<TradeRole> = loads
        .iter()
        .map(|(load, pv)| match role_conventional(*load, *pv, pw_max) {
            TradeRole::Sell { amount_kw } => TradeRole::Sell {
                amount_kw: amount_kw.min((pv - load).max(0.0)),
            },
            r => r,
        })
        .collect();
    let alloc = clear_market(&OrderBook::from_roles(&roles));
    loads
        .iter()
        .enumerate()
        .map(|(c, (load, pv))| {
            let pv_self = pv - alloc.delivered_kw(c);
            let split = allocate_power(*load, 0.0, pv_self, alloc.received_kw(c), f64::INFINITY).unwrap();
            let (grid, trade) = interval_cost(&split, alloc.traded_kw[c], slot, &tariff, &smp);
            ledger.record(c, slot, grid, trade).unwrap();
            (grid, trade)
        })
        .collect()
}

#[test]
fn a_seller_covers_a_buyer_at_midday() {
    // 13:00: cluster 0 needs 12 kW with no PV, cluster 1 has 6 kW spare.
    let slot = TimeSlot::new(0, 78).unwrap();
    let mut ledger = CostLedger::new(2);
    let costs = cycle(&[(12.0, 0.0), (2.0, 8.0)], slot, &mut ledger);
    // Buyer posts 3 kW and gets all of it: grid 9 kW at $0.18, 3 kW at SMP.
    assert!((costs[0].0 - 9.0 * 0.18 / 6.0).abs() < 1e-12);
    assert!((costs[0].1 - 3.0 * 0.10 / 6.0).abs() < 1e-12);
    assert_eq!(costs[1].0, 0.0);
    assert!((costs[1].1 + 3.0 * 0.10 / 6.0).abs() < 1e-12);
    let report = daily_report(&ledger);
    assert!((report.total_usd - 9.0 * 0.18 / 6.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn settlements_cancel_and_grid_cost_is_never_negative(
        loads in prop::collection::vec((0.0..25.0f64, 0.0..15.0f64), 2..8),
        s in 0..SLOTS_PER_DAY,
    ) {
        let slot = TimeSlot::new(0, s).unwrap();
        let mut ledger = CostLedger::new(loads.len());
        let costs = cycle(&loads, slot, &mut ledger);
        let settled: f64 = costs.iter().map(|c| c.1).sum();
        prop_assert!(settled.abs() < 1e-9);
        prop_assert!(costs.iter().all(|c| c.0 >= 0.0));
        let report = daily_report(&ledger);
        let grid: f64 = costs.iter().map(|c| c.0).sum();
        prop_assert!((report.total_usd - grid).abs() < 1e-9);
    }
}
