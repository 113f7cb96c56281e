//! Buy/sell role assignment, proportional market clearing and settlement.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TradingError {
    #[error("expected {expected} forecast pairs, got {got}")]
    ForecastCount { expected: usize, got: usize },
    #[error("cluster {0} is outside the order book")]
    UnknownCluster(usize),
    #[error("cluster {0} already has an order this slot")]
    DuplicateOrder(usize),
    #[error("order quantity must be positive and finite, got {0}")]
    BadQuantity(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TradeRole {
    Buy { amount_kw: f64 },
    Sell { amount_kw: f64 },
    Idle,
}

impl TradeRole {
    fn buy(amount_kw: f64) -> Self {
        if amount_kw > 0.0 {
            TradeRole::Buy { amount_kw }
        } else {
            TradeRole::Idle
        }
    }

    fn sell(amount_kw: f64) -> Self {
        if amount_kw > 0.0 {
            TradeRole::Sell { amount_kw }
        } else {
            TradeRole::Idle
        }
    }

    /// +1 for buyers, -1 for sellers, 0 when idle.
    pub fn sign(&self) -> i8 {
        match self {
            TradeRole::Buy { .. } => 1,
            TradeRole::Sell { .. } => -1,
            TradeRole::Idle => 0,
        }
    }

    pub fn amount_kw(&self) -> f64 {
        match self {
            TradeRole::Buy { amount_kw } | TradeRole::Sell { amount_kw } => *amount_kw,
            TradeRole::Idle => 0.0,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            TradeRole::Buy { .. } => "buy",
            TradeRole::Sell { .. } => "sell",
            TradeRole::Idle => "idle",
        }
    }

    /// Same role with the posted amount reduced to at most `cap_kw`.
    pub fn capped(self, cap_kw: f64) -> Self {
        match self {
            TradeRole::Buy { amount_kw } => TradeRole::buy(amount_kw.min(cap_kw)),
            TradeRole::Sell { amount_kw } => TradeRole::sell(amount_kw.min(cap_kw)),
            TradeRole::Idle => TradeRole::Idle,
        }
    }
}

/// Role from the current slot only: buy what exceeds the grid limit after
/// PV, sell the PV surplus, otherwise stay idle.
pub fn role_conventional(pw_load: f64, pw_pv: f64, pw_max: f64) -> TradeRole {
    let net = pw_load - pw_pv;
    if net > pw_max {
        TradeRole::buy(net - pw_max)
    } else if net < pw_max && pw_pv > 0.0 {
        TradeRole::sell((pw_pv - pw_load).max(0.0))
    } else {
        TradeRole::Idle
    }
}

/// Role from the current slot plus `k` forecast slots.
///
/// The horizon is compared through the sum of per-slot excesses over the
/// grid limit, which equals the summed net load minus `(k + 1)·pw_max` and
/// collapses to the single-slot rule when every slot is identical. With
/// `average_horizon_amount` the posted amount is divided by `k + 1`.
pub fn role_proposed(
    current: (f64, f64),
    forecasts: &[(f64, f64)],
    pw_max: f64,
    k: usize,
    average_horizon_amount: bool,
) -> Result<TradeRole, TradingError> {
    if forecasts.len() != k {
        return Err(TradingError::ForecastCount {
            expected: k,
            got: forecasts.len(),
        });
    }
    let horizon = || std::iter::once(&current).chain(forecasts.iter());
    let excess: f64 = horizon().map(|(load, pv)| (load - pv) - pw_max).sum();
    let scale = if average_horizon_amount { 1.0 / (k + 1) as f64 } else { 1.0 };
    let role = if excess > 0.0 {
        TradeRole::buy(excess * scale)
    } else if excess < 0.0 && current.1 > 0.0 {
        let surplus: f64 = horizon().map(|(load, pv)| pv - load).sum();
        TradeRole::sell(surplus.max(0.0) * scale)
    } else {
        TradeRole::Idle
    };
    Ok(role)
}

/// Offers and requests posted by clusters `0..cluster_count` in one slot.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OrderBook {
    cluster_count: usize,
    offers: Vec<(usize, f64)>,
    requests: Vec<(usize, f64)>,
}

impl OrderBook {
    pub fn new(cluster_count: usize) -> Self {
        Self {
            cluster_count,
            ..Self::default()
        }
    }

    /// Book holding each cluster's role, indexed by cluster.
    pub fn from_roles(roles: &[TradeRole]) -> Self {
        let mut book = Self::new(roles.len());
        for (c, role) in roles.iter().enumerate() {
            // Roles only carry positive amounts, so insertion cannot fail.
            match role {
                TradeRole::Sell { amount_kw } => book.add_offer(c, *amount_kw).expect("valid offer"),
                TradeRole::Buy { amount_kw } => book.add_request(c, *amount_kw).expect("valid request"),
                TradeRole::Idle => {}
            }
        }
        book
    }

    pub fn add_offer(&mut self, cluster: usize, kw: f64) -> Result<(), TradingError> {
        self.check(cluster, kw)?;
        self.offers.push((cluster, kw));
        Ok(())
    }

    pub fn add_request(&mut self, cluster: usize, kw: f64) -> Result<(), TradingError> {
        self.check(cluster, kw)?;
        self.requests.push((cluster, kw));
        Ok(())
    }

    fn check(&self, cluster: usize, kw: f64) -> Result<(), TradingError> {
        if cluster >= self.cluster_count {
            return Err(TradingError::UnknownCluster(cluster));
        }
        if self.offers.iter().chain(&self.requests).any(|(c, _)| *c == cluster) {
            return Err(TradingError::DuplicateOrder(cluster));
        }
        if !(kw > 0.0 && kw.is_finite()) {
            return Err(TradingError::BadQuantity(kw));
        }
        Ok(())
    }

    pub fn offers(&self) -> &[(usize, f64)] {
        &self.offers
    }

    pub fn requests(&self) -> &[(usize, f64)] {
        &self.requests
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_count
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// Per cluster: positive when received, negative when delivered.
    pub traded_kw: Vec<f64>,
    pub total_traded_kw: f64,
}

impl Allocation {
    pub fn received_kw(&self, cluster: usize) -> f64 {
        self.traded_kw[cluster].max(0.0)
    }

    pub fn delivered_kw(&self, cluster: usize) -> f64 {
        (-self.traded_kw[cluster]).max(0.0)
    }
}

/// Clears the book by proportional sharing: the traded total is the smaller
/// side, split across each side in proportion to the posted quantities.
pub fn clear_market(book: &OrderBook) -> Allocation {
    let supply: f64 = book.offers.iter().map(|(_, q)| q).sum();
    let demand: f64 = book.requests.iter().map(|(_, q)| q).sum();
    let mut traded_kw = vec![0.0; book.cluster_count];
    if supply <= 0.0 || demand <= 0.0 {
        return Allocation {
            traded_kw,
            total_traded_kw: 0.0,
        };
    }
    let total = supply.min(demand);
    for (c, q) in &book.offers {
        // When supply is the short side each producer delivers its full offer.
        traded_kw[*c] = -if supply <= demand { *q } else { total * q / supply };
    }
    for (c, q) in &book.requests {
        traded_kw[*c] = if demand <= supply { *q } else { total * q / demand };
    }
    Allocation {
        traded_kw,
        total_traded_kw: total,
    }
}

/// Payment for one slot of traded power: positive for buyers, negative
/// (revenue) for sellers.
pub fn settle(traded_kw: f64, smp: f64) -> f64 {
    traded_kw / 6.0 * smp
}
