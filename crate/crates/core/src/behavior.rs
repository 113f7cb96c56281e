//! Stochastic resident behaviour: room-to-room mobility, appliance requests
//! and EV plug-in events, one independent random stream per house.

use crate::time::{TimeSlot, SLOTS_PER_DAY};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Read;

pub const ROOMS: usize = 4;
/// Appliance index used for EV charging sessions in logs and schedules.
pub const EV_APPLIANCE_INDEX: u8 = 13;

const BUNDLED_EMISSIONS: &str = include_str!("../data/emission_profiles.csv");
const BUNDLED_EV_ARRIVALS: &str = include_str!("../data/ev_arrival.csv");

#[derive(Debug, thiserror::Error)]
pub enum BehaviorError {
    #[error("transition row {row} is not a probability distribution (sum {sum})")]
    BadTransitionRow { row: usize, sum: f64 },
    #[error("room {0} is outside 1..=4")]
    BadRoom(usize),
    #[error("probability {value} at {what} is outside [0, 1]")]
    BadProbability { what: String, value: f64 },
    #[error("invalid EV model: {0}")]
    BadEvModel(String),
    #[error("malformed CSV row: {0}")]
    Csv(#[from] csv::Error),
}

/// A room of the four-room house, numbered 1 to 4.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Room(u8);

impl Room {
    pub fn new(number: usize) -> Result<Self, BehaviorError> {
        if (1..=ROOMS).contains(&number) {
            Ok(Room(number as u8))
        } else {
            Err(BehaviorError::BadRoom(number))
        }
    }

    pub fn number(self) -> usize {
        self.0 as usize
    }

    fn index(self) -> usize {
        self.0 as usize - 1
    }
}

/// First-order Markov chain over the four rooms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MobilityModel {
    transition: [[f64; ROOMS]; ROOMS],
}

impl MobilityModel {
    pub fn new(transition: [[f64; ROOMS]; ROOMS]) -> Result<Self, BehaviorError> {
        for (row, probs) in transition.iter().enumerate() {
            let sum: f64 = probs.iter().sum();
            if probs.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(BehaviorError::BadTransitionRow { row: row + 1, sum });
            }
        }
        Ok(Self { transition })
    }

    /// Uniform transitions over every room reachable from the current one.
    /// `reachable[i]` lists the rooms (1-based, including `i + 1` itself
    /// when staying is allowed) that can follow room `i + 1`.
    pub fn from_adjacency(reachable: &[Vec<usize>; ROOMS]) -> Result<Self, BehaviorError> {
        let mut transition = [[0.0; ROOMS]; ROOMS];
        for (i, targets) in reachable.iter().enumerate() {
            if targets.is_empty() {
                return Err(BehaviorError::BadTransitionRow { row: i + 1, sum: 0.0 });
            }
            let p = 1.0 / targets.len() as f64;
            for &t in targets {
                transition[i][Room::new(t)?.index()] += p;
            }
        }
        Self::new(transition)
    }

    pub fn row(&self, room: Room) -> &[f64; ROOMS] {
        &self.transition[room.index()]
    }
}

impl Default for MobilityModel {
    /// Room 1 connects to every room; rooms 2-4 may stay, return to room 1 or
    /// move on to the next room of the ring 2 → 3 → 4 → 2.
    fn default() -> Self {
        Self::from_adjacency(&[vec![1, 2, 3, 4], vec![2, 1, 3], vec![3, 1, 4], vec![4, 1, 2]])
            .expect("default adjacency is valid")
    }
}

pub fn step_resident<R: Rng + ?Sized>(room: Room, model: &MobilityModel, rng: &mut R) -> Room {
    let u: f64 = rng.gen();
    let row = model.row(room);
    let mut acc = 0.0;
    let mut last_possible = room;
    for (j, p) in row.iter().enumerate() {
        if *p <= 0.0 {
            continue;
        }
        last_possible = Room(j as u8 + 1);
        acc += p;
        if u < acc {
            return last_possible;
        }
    }
    last_possible
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ApplianceKind {
    HvacNonFlexible,
    NonFlexible,
    Flexible,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApplianceSpec {
    pub index: u8,
    pub name: String,
    pub kind: ApplianceKind,
    pub power_kw: f64,
    pub rooms: Vec<usize>,
    pub duration_slots: u32,
}

impl ApplianceSpec {
    fn new(index: u8, name: &str, kind: ApplianceKind, power_kw: f64, rooms: &[usize], duration_slots: u32) -> Self {
        Self {
            index,
            name: name.to_string(),
            kind,
            power_kw,
            rooms: rooms.to_vec(),
            duration_slots,
        }
    }

    pub fn is_in(&self, room: Room) -> bool {
        self.rooms.contains(&room.number())
    }
}

/// The twelve appliances of every house with their ratings and rooms.
pub fn default_catalog() -> Vec<ApplianceSpec> {
    use ApplianceKind::*;
    let all = [1, 2, 3, 4];
    vec![
        ApplianceSpec::new(1, "air-conditioner", HvacNonFlexible, 1.2, &all, 1),
        ApplianceSpec::new(2, "electric fan", HvacNonFlexible, 0.06, &all, 1),
        ApplianceSpec::new(3, "heater", HvacNonFlexible, 1.16, &all, 1),
        ApplianceSpec::new(4, "computer", NonFlexible, 0.255, &[3], 6),
        ApplianceSpec::new(5, "TV", NonFlexible, 0.13, &[1], 6),
        ApplianceSpec::new(6, "audio", Flexible, 0.05, &[3], 3),
        ApplianceSpec::new(7, "washing machine", Flexible, 0.242, &[2], 6),
        ApplianceSpec::new(8, "vacuum cleaner", Flexible, 1.07, &[3], 1),
        ApplianceSpec::new(9, "iron", Flexible, 1.23, &[1], 1),
        ApplianceSpec::new(10, "microwave oven", Flexible, 1.04, &[4], 1),
        ApplianceSpec::new(11, "rice cooker", Flexible, 1.03, &[4], 1),
        ApplianceSpec::new(12, "hair dryer", Flexible, 1.0, &[2], 1),
    ]
}

/// Per-appliance request probability for each slot of the day, conditional
/// on the resident being in the appliance's room.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct EmissionProfile {
    probs: BTreeMap<u8, Vec<f64>>,
}

impl EmissionProfile {
    /// Default profiles shipped with the crate: morning peaks for the rice
    /// cooker and hair dryer, evening peaks for the TV and washing machine.
    pub fn bundled() -> Self {
        Self::from_csv_reader(BUNDLED_EMISSIONS.as_bytes()).expect("bundled emission profile parses")
    }

    /// Reads `appliance_index, slot, probability` rows. Absent entries are 0.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, BehaviorError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut profile = Self::default();
        for row in rdr.deserialize::<(u8, usize, f64)>() {
            let (index, slot, p) = row?;
            if slot >= SLOTS_PER_DAY {
                return Err(BehaviorError::BadProbability {
                    what: format!("appliance {index} slot {slot}"),
                    value: p,
                });
            }
            profile.set(index, slot, p)?;
        }
        Ok(profile)
    }

    pub fn set(&mut self, index: u8, slot: usize, p: f64) -> Result<(), BehaviorError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(BehaviorError::BadProbability {
                what: format!("appliance {index} slot {slot}"),
                value: p,
            });
        }
        self.probs.entry(index).or_insert_with(|| vec![0.0; SLOTS_PER_DAY])[slot] = p;
        Ok(())
    }

    pub fn probability(&self, index: u8, slot_of_day: usize) -> f64 {
        self.probs.get(&index).map_or(0.0, |v| v[slot_of_day])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvModel {
    pub capacity_kwh: f64,
    pub charge_rate_kw: f64,
    pub efficiency: f64,
    pub initial_soc: f64,
    /// Probability of starting a charge in each clock hour.
    pub arrival_prob: Vec<f64>,
}

impl Default for EvModel {
    fn default() -> Self {
        Self {
            capacity_kwh: 15.0,
            charge_rate_kw: 3.0,
            efficiency: 0.9,
            initial_soc: 0.2,
            arrival_prob: read_hourly(BUNDLED_EV_ARRIVALS.as_bytes()).expect("bundled EV arrivals parse"),
        }
    }
}

impl EvModel {
    pub fn validate(&self) -> Result<(), BehaviorError> {
        let bad = |m: &str| Err(BehaviorError::BadEvModel(m.to_string()));
        if !(0.0..1.0).contains(&self.initial_soc) {
            return bad("initial_soc must lie in [0, 1)");
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return bad("efficiency must lie in (0, 1]");
        }
        if !(self.capacity_kwh > 0.0 && self.charge_rate_kw > 0.0) {
            return bad("capacity and charge rate must be positive");
        }
        if self.arrival_prob.len() != 24 {
            return bad("arrival_prob needs 24 hourly entries");
        }
        for (h, p) in self.arrival_prob.iter().enumerate() {
            if !(0.0..=1.0).contains(p) {
                return Err(BehaviorError::BadProbability {
                    what: format!("EV arrival hour {h}"),
                    value: *p,
                });
            }
        }
        Ok(())
    }

    /// Replaces the hourly arrival probabilities from `hour, probability` rows.
    pub fn load_arrivals<R: Read>(&mut self, reader: R) -> Result<(), BehaviorError> {
        self.arrival_prob = read_hourly(reader)?;
        self.validate()
    }

    /// Energy the battery must store to go from the initial SOC to full.
    pub fn energy_to_store_kwh(&self) -> f64 {
        (1.0 - self.initial_soc) * self.capacity_kwh
    }

    /// Energy drawn from the supply for one full charge.
    pub fn energy_to_draw_kwh(&self) -> f64 {
        self.energy_to_store_kwh() / self.efficiency
    }
}

fn read_hourly<R: Read>(reader: R) -> Result<Vec<f64>, BehaviorError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut probs = vec![0.0; 24];
    for row in rdr.deserialize::<(usize, f64)>() {
        let (hour, p) = row?;
        if hour >= 24 || !(0.0..=1.0).contains(&p) {
            return Err(BehaviorError::BadProbability {
                what: format!("EV arrival hour {hour}"),
                value: p,
            });
        }
        probs[hour] = p;
    }
    Ok(probs)
}

/// Slots needed to fully charge from the initial SOC at the rated power.
pub fn ev_required_slots(ev: &EvModel) -> u32 {
    slots_for_energy(ev.energy_to_draw_kwh(), ev.charge_rate_kw)
}

/// Slots needed to draw `energy_kwh` at no more than `rate_kw`.
pub fn slots_for_energy(energy_kwh: f64, rate_kw: f64) -> u32 {
    if energy_kwh <= 0.0 {
        return 0;
    }
    // The 1e-9 guard keeps exact quotients such as 1.0000000000000002 at 1.
    (energy_kwh / (rate_kw / 6.0) - 1e-9).ceil().max(1.0) as u32
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LoadKind {
    /// Runs in the slot it is requested.
    NonFlexible,
    /// May be deferred until its accumulated delay reaches `d_max`; runs to
    /// completion once started.
    Flexible,
    /// Resumable slot-by-slot charging with a deadline.
    EvCharge,
}

/// A pending or running electrical demand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadRequest {
    pub appliance_index: u8,
    pub house: usize,
    pub issued_slot: TimeSlot,
    pub kind: LoadKind,
    pub power_kw: f64,
    pub remaining_slots: u32,
    pub accumulated_delay_slots: u32,
    /// Supply-side energy still to be drawn. Only meaningful for EV sessions.
    pub remaining_energy_kwh: f64,
}

impl LoadRequest {
    pub fn appliance(spec: &ApplianceSpec, house: usize, slot: TimeSlot) -> Self {
        let kind = match spec.kind {
            ApplianceKind::Flexible => LoadKind::Flexible,
            _ => LoadKind::NonFlexible,
        };
        Self {
            appliance_index: spec.index,
            house,
            issued_slot: slot,
            kind,
            power_kw: spec.power_kw,
            remaining_slots: spec.duration_slots,
            accumulated_delay_slots: 0,
            remaining_energy_kwh: spec.power_kw * spec.duration_slots as f64 / 6.0,
        }
    }

    pub fn ev_session(ev: &EvModel, house: usize, slot: TimeSlot) -> Self {
        Self {
            appliance_index: EV_APPLIANCE_INDEX,
            house,
            issued_slot: slot,
            kind: LoadKind::EvCharge,
            power_kw: ev.charge_rate_kw,
            remaining_slots: ev_required_slots(ev),
            accumulated_delay_slots: 0,
            remaining_energy_kwh: ev.energy_to_draw_kwh(),
        }
    }

    pub fn is_ev(&self) -> bool {
        self.kind == LoadKind::EvCharge
    }

    /// Power drawn if the request runs in the current slot. The last slot of
    /// an EV session only tops up what is left.
    pub fn slot_power_kw(&self) -> f64 {
        match self.kind {
            LoadKind::EvCharge => self.power_kw.min(self.remaining_energy_kwh * 6.0),
            _ => self.power_kw,
        }
    }
}

/// Draws this slot's appliance requests for a resident standing in `room`.
///
/// One uniform variate is consumed per non-HVAC appliance regardless of the
/// room, so the stream position never depends on where the resident is.
pub fn sample_requests<R: Rng + ?Sized>(
    slot: TimeSlot,
    room: Room,
    house: usize,
    profiles: &EmissionProfile,
    catalog: &[ApplianceSpec],
    rng: &mut R,
) -> Vec<LoadRequest> {
    let mut out = Vec::new();
    for spec in catalog.iter().filter(|a| a.kind != ApplianceKind::HvacNonFlexible) {
        let u: f64 = rng.gen();
        if spec.is_in(room) && u < profiles.probability(spec.index, slot.slot_of_day()) {
            out.push(LoadRequest::appliance(spec, house, slot));
        }
    }
    out
}

/// Whether the EV plugs in this hour. Always consumes one variate.
pub fn sample_ev_arrival<R: Rng + ?Sized>(hour: usize, ev: &EvModel, already_charging: bool, rng: &mut R) -> bool {
    let u: f64 = rng.gen();
    !already_charging && u < ev.arrival_prob[hour]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn room(n: usize) -> Room {
        Room::new(n).unwrap()
    }

    #[test]
    fn deterministic_row_always_returns_room_one() {
        let mut t = [[0.25; 4]; 4];
        t[0] = [1.0, 0.0, 0.0, 0.0];
        let model = MobilityModel::new(t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert_eq!(step_resident(room(1), &model, &mut rng), room(1));
        }
    }

    #[test]
    fn rejects_non_stochastic_rows() {
        let mut t = [[0.25; 4]; 4];
        t[2] = [0.5, 0.5, 0.5, 0.0];
        assert!(matches!(MobilityModel::new(t), Err(BehaviorError::BadTransitionRow { row: 3, .. })));
        t[2] = [1.5, -0.5, 0.0, 0.0];
        assert!(MobilityModel::new(t).is_err());
    }

    fn frequencies(from: Room, n: usize, seed: u64) -> [f64; 4] {
        let model = MobilityModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[step_resident(from, &model, &mut rng).number() - 1] += 1;
        }
        counts.map(|c| c as f64 / n as f64)
    }

    #[test]
    fn room_one_moves_uniformly() {
        for f in frequencies(room(1), 100_000, 7) {
            assert!((f - 0.25).abs() < 0.01, "{f}");
        }
    }

    #[test]
    fn room_two_reaches_three_rooms_with_one_third_each() {
        let f = frequencies(room(2), 100_000, 11);
        // Chi-square against (1/3, 1/3, 1/3) on the reachable rooms 1, 2, 3.
        let n = 100_000.0;
        let chi2: f64 = [f[0], f[1], f[2]]
            .iter()
            .map(|p| (p * n - n / 3.0).powi(2) / (n / 3.0))
            .sum();
        assert!(chi2 < 13.8, "chi2 {chi2} exceeds the 0.001 critical value for 2 dof");
        for p in &f[..3] {
            assert!((p - 1.0 / 3.0).abs() < 0.01);
        }
        assert_eq!(f[3], 0.0);
    }

    #[test]
    fn default_rows_sum_to_one() {
        let m = MobilityModel::default();
        for r in 1..=4 {
            let s: f64 = m.row(room(r)).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn catalog_matches_the_appliance_table() {
        let c = default_catalog();
        assert_eq!(c.len(), 12);
        let ratings: Vec<f64> = c.iter().map(|a| a.power_kw).collect();
        assert_eq!(
            ratings,
            vec![1.2, 0.06, 1.16, 0.255, 0.13, 0.05, 0.242, 1.07, 1.23, 1.04, 1.03, 1.0]
        );
        for a in &c {
            assert_eq!(a.kind == ApplianceKind::HvacNonFlexible, a.index <= 3);
        }
    }

    fn profile_with(index: u8, p: f64) -> EmissionProfile {
        let mut prof = EmissionProfile::default();
        for s in 0..SLOTS_PER_DAY {
            prof.set(index, s, p).unwrap();
        }
        prof
    }

    #[test]
    fn zero_profile_emits_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let slot = TimeSlot::new(0, 50).unwrap();
        for r in 1..=4 {
            let reqs = sample_requests(slot, room(r), 0, &EmissionProfile::default(), &default_catalog(), &mut rng);
            assert!(reqs.is_empty());
        }
    }

    #[test]
    fn certain_washing_machine_request() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let slot = TimeSlot::new(0, 50).unwrap();
        let reqs = sample_requests(slot, room(2), 1, &profile_with(7, 1.0), &default_catalog(), &mut rng);
        assert_eq!(reqs.len(), 1);
        assert_eq!(reqs[0].appliance_index, 7);
        assert_eq!(reqs[0].power_kw, 0.242);
        assert_eq!(reqs[0].kind, LoadKind::Flexible);
        assert_eq!(reqs[0].accumulated_delay_slots, 0);
        assert_eq!(reqs[0].remaining_slots, 6);
    }

    #[test]
    fn non_flexible_requests_are_marked_immediate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let slot = TimeSlot::new(0, 50).unwrap();
        let reqs = sample_requests(slot, room(1), 0, &profile_with(5, 1.0), &default_catalog(), &mut rng);
        assert_eq!(reqs.len(), 1);
        assert_eq!(reqs[0].kind, LoadKind::NonFlexible);
    }

    #[test]
    fn emission_frequency_matches_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let prof = profile_with(7, 0.3);
        let slot = TimeSlot::new(0, 10).unwrap();
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| !sample_requests(slot, room(2), 0, &prof, &default_catalog(), &mut rng).is_empty())
            .count();
        // 3-sigma binomial half-width is 0.0043, well inside the 0.01 band.
        assert!((hits as f64 / n as f64 - 0.3).abs() < 0.01);
    }

    #[test]
    fn ev_arrival_rules() {
        let mut ev = EvModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        ev.arrival_prob = vec![1.0; 24];
        assert!(!sample_ev_arrival(9, &ev, true, &mut rng));
        ev.arrival_prob = vec![0.0; 24];
        assert!(!sample_ev_arrival(9, &ev, false, &mut rng));
        ev.arrival_prob[9] = 0.12;
        let n = 100_000;
        let hits = (0..n).filter(|_| sample_ev_arrival(9, &ev, false, &mut rng)).count();
        assert!((hits as f64 / n as f64 - 0.12).abs() < 0.01);
    }

    #[test]
    fn required_slots_examples() {
        assert_eq!(ev_required_slots(&EvModel::default()), 27);
        let nearly_full = EvModel { initial_soc: 0.999, ..EvModel::default() };
        assert_eq!(ev_required_slots(&nearly_full), 1);
        let exact = EvModel {
            capacity_kwh: 5.0,
            initial_soc: 0.8,
            efficiency: 1.0,
            charge_rate_kw: 6.0,
            ..EvModel::default()
        };
        assert_eq!(ev_required_slots(&exact), 1);
    }

    #[test]
    fn ev_model_validation() {
        assert!(EvModel::default().validate().is_ok());
        assert!(EvModel { initial_soc: 1.0, ..EvModel::default() }.validate().is_err());
        assert!(EvModel { efficiency: 0.0, ..EvModel::default() }.validate().is_err());
        let mut ev = EvModel::default();
        assert!(ev.load_arrivals("hour,probability\n3,1.5\n".as_bytes()).is_err());
        ev.load_arrivals("hour,probability\n3,0.5\n".as_bytes()).unwrap();
        assert_eq!(ev.arrival_prob[3], 0.5);
        assert_eq!(ev.arrival_prob[4], 0.0);
    }

    #[test]
    fn ev_session_last_slot_tops_up() {
        let ev = EvModel::default();
        let mut req = LoadRequest::ev_session(&ev, 0, TimeSlot::new(0, 0).unwrap());
        let mut drawn = 0.0;
        let mut slots = 0;
        while req.remaining_energy_kwh > 1e-12 {
            let p = req.slot_power_kw();
            drawn += p / 6.0;
            req.remaining_energy_kwh -= p / 6.0;
            slots += 1;
        }
        assert_eq!(slots, 27);
        assert!((drawn * ev.efficiency - 12.0).abs() < 1e-9);
    }

    #[test]
    fn bundled_profiles_are_valid() {
        let p = EmissionProfile::bundled();
        assert!(p.probability(11, 42) > p.probability(11, 120), "cooker peaks in the morning");
        assert!(p.probability(5, 123) > p.probability(5, 42), "TV peaks in the evening");
        assert_eq!(p.probability(1, 0), 0.0);
    }
}
