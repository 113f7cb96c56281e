//! Slot discretisation. A day is 144 slots of 10 minutes each.

use serde::{Deserialize, Serialize};
use std::fmt;

pub const SLOTS_PER_DAY: usize = 144;
pub const SLOTS_PER_HOUR: usize = 6;
pub const HOURS_PER_SLOT: f64 = 1.0 / SLOTS_PER_HOUR as f64;

/// A 10-minute interval identified by day and index within the day.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TimeSlot {
    day: u32,
    slot_of_day: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("slot_of_day {0} is outside [0, 144)")]
pub struct InvalidSlot(pub usize);

impl TimeSlot {
    pub fn new(day: u32, slot_of_day: usize) -> Result<Self, InvalidSlot> {
        if slot_of_day >= SLOTS_PER_DAY {
            return Err(InvalidSlot(slot_of_day));
        }
        Ok(Self {
            day,
            slot_of_day: slot_of_day as u16,
        })
    }

    /// Slot counted from the start of day 0.
    pub fn from_abs(abs: usize) -> Self {
        Self {
            day: (abs / SLOTS_PER_DAY) as u32,
            slot_of_day: (abs % SLOTS_PER_DAY) as u16,
        }
    }

    pub fn abs(self) -> usize {
        self.day as usize * SLOTS_PER_DAY + self.slot_of_day as usize
    }

    pub fn day(self) -> u32 {
        self.day
    }

    pub fn slot_of_day(self) -> usize {
        self.slot_of_day as usize
    }

    pub fn hour(self) -> usize {
        self.slot_of_day() / SLOTS_PER_HOUR
    }

    /// True on the first slot of every clock hour.
    pub fn is_hour_start(self) -> bool {
        self.slot_of_day().is_multiple_of(SLOTS_PER_HOUR)
    }

    pub fn next(self) -> Self {
        Self::from_abs(self.abs() + 1)
    }
}

impl fmt::Display for TimeSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (h, m) = slot_to_clock(*self);
        write!(f, "day {} {:02}:{:02}", self.day, h, m)
    }
}

/// Wall-clock (hour, minute) at the start of the slot.
pub fn slot_to_clock(slot: TimeSlot) -> (u32, u32) {
    let s = slot.slot_of_day() as u32;
    (s / SLOTS_PER_HOUR as u32, (s % SLOTS_PER_HOUR as u32) * 10)
}

/// Energy carried by a constant power over one slot.
pub fn slot_energy_kwh(power_kw: f64) -> f64 {
    power_kw / 6.0
}
