//! PV production curves, cluster PV capacities and outdoor weather.

use crate::time::{TimeSlot, SLOTS_PER_DAY};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Read;

/// Peak of the reference production curve.
pub const REFERENCE_PEAK_KW: f64 = 2.0;

/// Cluster peaks reported for the two RPV classes, cluster 1 to 6.
pub const RPV1_REFERENCE_PEAKS_KW: [f64; 6] = [2.23, 5.87, 8.1, 10.34, 13.97, 16.0];
pub const RPV2_REFERENCE_PEAKS_KW: [f64; 6] = [1.72, 3.84, 5.47, 7.49, 9.01, 10.24];

#[derive(Debug, thiserror::Error)]
pub enum EnvironmentError {
    #[error("PV curve needs sunrise < peak < sunset within a day, got {sunrise}/{peak}/{sunset}")]
    BadCurve { sunrise: usize, peak: usize, sunset: usize },
    #[error("tabulated profile must be finite with a positive maximum")]
    BadTable,
    #[error("slot {0} in a tabulated profile is outside 0..144")]
    BadSlot(usize),
    #[error("outdoor CO2 must be positive, got {0}")]
    BadCo2(f64),
    #[error("malformed CSV row: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PvSystemSpec {
    pub peak_kw: f64,
    pub sunrise_slot: usize,
    pub sunset_slot: usize,
    pub peak_slot: usize,
}

impl Default for PvSystemSpec {
    fn default() -> Self {
        Self {
            peak_kw: REFERENCE_PEAK_KW,
            sunrise_slot: 36,
            sunset_slot: 120,
            peak_slot: 78,
        }
    }
}

impl PvSystemSpec {
    pub fn validate(&self) -> Result<(), EnvironmentError> {
        let ok = self.sunrise_slot < self.peak_slot
            && self.peak_slot < self.sunset_slot
            && self.sunset_slot <= SLOTS_PER_DAY
            && self.peak_kw > 0.0;
        if ok {
            Ok(())
        } else {
            Err(EnvironmentError::BadCurve {
                sunrise: self.sunrise_slot,
                peak: self.peak_slot,
                sunset: self.sunset_slot,
            })
        }
    }
}

/// Shape of the 2 kW reference production curve.
#[derive(Clone, Debug, PartialEq)]
pub enum ReferenceCurve {
    /// Sine rise from sunrise to the peak slot and sine fall to sunset. With
    /// the peak midway between sunrise and sunset this is a plain half-sine.
    Analytic(PvSystemSpec),
    /// 144 tabulated values, rescaled so that the table maximum is 2 kW.
    Table(Vec<f64>),
}

impl Default for ReferenceCurve {
    fn default() -> Self {
        ReferenceCurve::Analytic(PvSystemSpec::default())
    }
}

impl ReferenceCurve {
    /// Reads `slot, kw` rows. Missing slots produce zero.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, EnvironmentError> {
        let values = read_slot_table(reader)?;
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(max > 0.0) || values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(EnvironmentError::BadTable);
        }
        Ok(ReferenceCurve::Table(values.iter().map(|v| v / max * REFERENCE_PEAK_KW).collect()))
    }

    /// Reference production in kW, peaking at 2 kW.
    pub fn reference_kw(&self, slot: TimeSlot) -> f64 {
        let s = slot.slot_of_day();
        match self {
            ReferenceCurve::Table(v) => v[s],
            ReferenceCurve::Analytic(spec) => {
                if s <= spec.sunrise_slot || s >= spec.sunset_slot {
                    return 0.0;
                }
                let phase = if s <= spec.peak_slot {
                    (s - spec.sunrise_slot) as f64 / (spec.peak_slot - spec.sunrise_slot) as f64
                } else {
                    1.0 + (s - spec.peak_slot) as f64 / (spec.sunset_slot - spec.peak_slot) as f64
                };
                REFERENCE_PEAK_KW * (PI / 2.0 * phase).sin()
            }
        }
    }
}

/// Reference curve with the default daylight window (06:00 to 20:00, peak at 13:00).
pub fn pv_reference(slot: TimeSlot, spec: &PvSystemSpec) -> f64 {
    ReferenceCurve::Analytic(*spec).reference_kw(slot)
}

/// Production of a system with the given peak, scaled from the reference curve.
pub fn pv_production(slot: TimeSlot, peak_kw: f64, curve: &ReferenceCurve) -> f64 {
    peak_kw / REFERENCE_PEAK_KW * curve.reference_kw(slot)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RpvClass {
    #[serde(alias = "rpv1", alias = "RPV1")]
    Rpv1,
    #[serde(alias = "rpv2", alias = "RPV2")]
    Rpv2,
    #[serde(alias = "fixed")]
    Fixed,
}

impl RpvClass {
    /// Bounds of the uniform peak distribution; `None` for fixed peaks.
    pub fn range_kw(self) -> Option<(f64, f64)> {
        match self {
            RpvClass::Rpv1 => Some((3.0, 16.0)),
            RpvClass::Rpv2 => Some((2.0, 11.0)),
            RpvClass::Fixed => None,
        }
    }

    /// The six peaks of the published realisation of this class.
    pub fn reference_peaks(self) -> Option<[f64; 6]> {
        match self {
            RpvClass::Rpv1 => Some(RPV1_REFERENCE_PEAKS_KW),
            RpvClass::Rpv2 => Some(RPV2_REFERENCE_PEAKS_KW),
            RpvClass::Fixed => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RpvClass::Rpv1 => "RPV1",
            RpvClass::Rpv2 => "RPV2",
            RpvClass::Fixed => "fixed",
        }
    }
}

/// Draws `count` cluster peaks uniformly from the class range, sorted
/// ascending so that cluster numbering follows capacity. A fixed class has
/// no distribution and yields an empty list.
pub fn draw_cluster_peaks<R: Rng + ?Sized>(class: RpvClass, count: usize, rng: &mut R) -> Vec<f64> {
    let Some((lo, hi)) = class.range_kw() else {
        return Vec::new();
    };
    let mut peaks: Vec<f64> = (0..count).map(|_| rng.gen_range(lo..=hi)).collect();
    peaks.sort_by(f64::total_cmp);
    peaks
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeatherProfile {
    pub outdoor_temp_c: Vec<f64>,
    pub outdoor_co2_ppm: f64,
}

impl Default for WeatherProfile {
    /// Synthetic summer day: 23 °C at 04:00 rising along a half cosine to
    /// 33 °C at 14:00, then falling along a slower half cosine back to
    /// 23 °C at 04:00 the next day.
    fn default() -> Self {
        const MIN_SLOT: f64 = 24.0;
        const MAX_SLOT: f64 = 84.0;
        let temps = (0..SLOTS_PER_DAY)
            .map(|s| {
                let s = s as f64;
                if (MIN_SLOT..=MAX_SLOT).contains(&s) {
                    28.0 - 5.0 * (PI * (s - MIN_SLOT) / (MAX_SLOT - MIN_SLOT)).cos()
                } else {
                    let since_max = (s - MAX_SLOT).rem_euclid(SLOTS_PER_DAY as f64);
                    let fall = SLOTS_PER_DAY as f64 - (MAX_SLOT - MIN_SLOT);
                    28.0 + 5.0 * (PI * since_max / fall).cos()
                }
            })
            .collect();
        Self {
            outdoor_temp_c: temps,
            outdoor_co2_ppm: 550.0,
        }
    }
}

impl WeatherProfile {
    /// Reads `slot, temp_c` rows; every slot of the day must be present.
    pub fn from_csv_reader<R: Read>(reader: R, outdoor_co2_ppm: f64) -> Result<Self, EnvironmentError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut temps = vec![f64::NAN; SLOTS_PER_DAY];
        for row in rdr.deserialize::<(usize, f64)>() {
            let (slot, t) = row?;
            *temps.get_mut(slot).ok_or(EnvironmentError::BadSlot(slot))? = t;
        }
        let profile = Self {
            outdoor_temp_c: temps,
            outdoor_co2_ppm,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<(), EnvironmentError> {
        if self.outdoor_temp_c.len() != SLOTS_PER_DAY || self.outdoor_temp_c.iter().any(|t| !t.is_finite()) {
            return Err(EnvironmentError::BadTable);
        }
        if !(self.outdoor_co2_ppm > 0.0 && self.outdoor_co2_ppm.is_finite()) {
            return Err(EnvironmentError::BadCo2(self.outdoor_co2_ppm));
        }
        Ok(())
    }
}

pub fn outdoor_temperature(slot: TimeSlot, profile: &WeatherProfile) -> f64 {
    profile.outdoor_temp_c[slot.slot_of_day()]
}

fn read_slot_table<R: Read>(reader: R) -> Result<Vec<f64>, EnvironmentError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut values = vec![0.0; SLOTS_PER_DAY];
    for row in rdr.deserialize::<(usize, f64)>() {
        let (slot, v) = row?;
        *values.get_mut(slot).ok_or(EnvironmentError::BadSlot(slot))? = v;
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn slot(s: usize) -> TimeSlot {
        TimeSlot::new(0, s).unwrap()
    }

    #[test]
    fn reference_anchor_points() {
        let spec = PvSystemSpec::default();
        assert_eq!(pv_reference(slot(78), &spec), 2.0);
        assert_eq!(pv_reference(slot(30), &spec), 0.0);
        let expected = 2.0 * (PI * 21.0 / 84.0).sin();
        assert!((pv_reference(slot(57), &spec) - expected).abs() < 1e-12);
        assert!((expected - std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn default_curve_is_the_half_sine() {
        let spec = PvSystemSpec::default();
        for s in 0..144usize {
            let half_sine = if (36..=120).contains(&s) {
                2.0 * (PI * (s as f64 - 36.0) / 84.0).sin()
            } else {
                0.0
            };
            assert!((pv_reference(slot(s), &spec) - half_sine).abs() < 1e-12, "slot {s}");
        }
    }

    #[test]
    fn production_examples() {
        let c = ReferenceCurve::default();
        assert!((pv_production(slot(78), 6.0, &c) - 6.0).abs() < 1e-12);
        assert_eq!(pv_production(slot(30), 6.0, &c), 0.0);
        assert!((pv_production(slot(57), 16.0, &c) - 8.0 * 2f64.sqrt()).abs() < 1e-9);
        assert!((pv_production(slot(57), 16.0, &c) - 11.3137).abs() < 1e-4);
    }

    #[test]
    fn daily_maximum_is_at_the_peak_slot() {
        let c = ReferenceCurve::default();
        let (arg, max) = (0..144usize)
            .map(|s| (s, pv_production(slot(s), 13.97, &c)))
            .fold((0, f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
        assert_eq!(arg, 78);
        assert!((max - 13.97).abs() < 1e-9);
    }

    #[test]
    fn tabulated_curve_is_normalised() {
        let c = ReferenceCurve::from_csv_reader("slot,kw\n70,1.5\n78,3.0\n".as_bytes()).unwrap();
        assert_eq!(c.reference_kw(slot(78)), 2.0);
        assert_eq!(c.reference_kw(slot(70)), 1.0);
        assert_eq!(c.reference_kw(slot(0)), 0.0);
        assert!(ReferenceCurve::from_csv_reader("slot,kw\n1,0\n".as_bytes()).is_err());
    }

    #[test]
    fn bad_spec_rejected() {
        let spec = PvSystemSpec { peak_slot: 30, ..PvSystemSpec::default() };
        assert!(spec.validate().is_err());
        assert!(PvSystemSpec::default().validate().is_ok());
    }

    #[test]
    fn uniform_peak_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let draws = draw_cluster_peaks(RpvClass::Rpv1, 10_000, &mut rng);
        assert!(draws.iter().all(|p| (3.0..=16.0).contains(p)));
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 9.5).abs() < 0.2, "{mean}");
        assert!(draws.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn reference_peaks_are_sorted() {
        for class in [RpvClass::Rpv1, RpvClass::Rpv2] {
            let p = class.reference_peaks().unwrap();
            assert!(p.windows(2).all(|w| w[0] < w[1]));
            let (lo, hi) = class.range_kw().unwrap();
            assert!(p.iter().all(|v| *v >= lo - 1.0 && *v <= hi));
        }
    }

    #[test]
    fn default_weather_extremes() {
        let w = WeatherProfile::default();
        assert!((outdoor_temperature(slot(84), &w) - 33.0).abs() < 1e-12);
        assert!((outdoor_temperature(slot(24), &w) - 23.0).abs() < 1e-12);
        for s in 60..=102 {
            assert!(outdoor_temperature(slot(s), &w) > 25.0, "slot {s}");
        }
        let min = w.outdoor_temp_c.iter().cloned().fold(f64::MAX, f64::min);
        let max = w.outdoor_temp_c.iter().cloned().fold(f64::MIN, f64::max);
        assert!((min - 23.0).abs() < 1e-12 && (max - 33.0).abs() < 1e-12);
        // Continuous across midnight.
        assert!((w.outdoor_temp_c[143] - w.outdoor_temp_c[0]).abs() < 0.2);
    }

    #[test]
    fn weather_csv_requires_every_slot() {
        let mut text = String::from("slot,temp_c\n");
        for s in 0..143 {
            text.push_str(&format!("{s},25\n"));
        }
        assert!(WeatherProfile::from_csv_reader(text.as_bytes(), 550.0).is_err());
        text.push_str("143,25\n");
        let w = WeatherProfile::from_csv_reader(text.as_bytes(), 550.0).unwrap();
        assert_eq!(w.outdoor_temp_c[143], 25.0);
    }

    proptest! {
        #[test]
        fn production_is_linear_and_nonnegative(s in 0usize..144, p in 0.0f64..20.0, a in 0.0f64..5.0) {
            let c = ReferenceCurve::default();
            let base = pv_production(slot(s), p, &c);
            prop_assert!(base >= 0.0);
            prop_assert!((pv_production(slot(s), a * p, &c) - a * base).abs() < 1e-12);
            if !(36..=120).contains(&s) {
                prop_assert_eq!(base, 0.0);
            }
        }
    }
}
