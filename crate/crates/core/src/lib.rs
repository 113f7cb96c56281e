//! Domain model for cooperative peer-to-peer PV trading among nanogrid
//! clusters.
//!
//! The crate is organised by subsystem:
//!
//! - [`time`]: 10-minute slot discretisation and unit helpers.
//! - [`config`]: scenario configuration and its JSON loader.
//! - [`behavior`]: resident mobility, appliance requests and EV arrivals.
//! - [`environment`]: PV production curves and outdoor weather.
//! - [`hvac`]: per-room thermal/CO₂ plant and the thermostat rule.
//! - [`trading`]: buy/sell role assignment and proportional market clearing.
//! - [`scheduler`]: source-precedence power allocation and the GA scheduler.
//! - [`accounting`]: demand-response tariff, SMP and the cost ledger.
//!
//! All powers are kW and all energies kWh, stored as `f64`.

// Validation uses `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accounting;
pub mod behavior;
pub mod config;
pub mod environment;
pub mod hvac;
pub mod scheduler;
pub mod time;
pub mod trading;

pub use config::{load_scenario, ConfigError, ScenarioConfig, Scheme};
pub use time::{slot_energy_kwh, slot_to_clock, TimeSlot, SLOTS_PER_DAY, SLOTS_PER_HOUR};
