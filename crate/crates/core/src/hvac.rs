//! First-order indoor temperature and CO₂ model with a thermostat rule.

use serde::{Deserialize, Serialize};

pub const AIR_CONDITIONER_KW: f64 = 1.2;
pub const HEATER_KW: f64 = 1.16;
pub const FAN_KW: f64 = 0.06;

pub const OCCUPIED_TARGET_C: f64 = 23.0;
pub const UNOCCUPIED_TARGET_C: f64 = 25.0;
pub const CO2_TARGET_PPM: f64 = 500.0;

#[derive(Debug, thiserror::Error)]
#[error("invalid thermal parameter {0}")]
pub struct ThermalParamError(pub &'static str);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomState {
    pub temp_c: f64,
    pub co2_ppm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThermalParams {
    /// Fraction of the indoor/outdoor temperature gap closed each slot.
    pub leak_coeff: f64,
    pub cool_delta_c: f64,
    pub heat_delta_c: f64,
    pub deadband_c: f64,
    /// Fraction of the indoor/outdoor CO₂ gap closed each slot by the fan.
    pub fan_vent_coeff: f64,
    pub occupant_co2_ppm_per_slot: f64,
}

impl Default for ThermalParams {
    fn default() -> Self {
        Self {
            leak_coeff: 0.02,
            cool_delta_c: 0.5,
            heat_delta_c: 0.5,
            deadband_c: 0.5,
            fan_vent_coeff: 0.3,
            occupant_co2_ppm_per_slot: 15.0,
        }
    }
}

impl ThermalParams {
    pub fn validate(&self) -> Result<(), ThermalParamError> {
        let positive = [
            (self.leak_coeff, "leak_coeff"),
            (self.cool_delta_c, "cool_delta_c"),
            (self.heat_delta_c, "heat_delta_c"),
            (self.deadband_c, "deadband_c"),
            (self.fan_vent_coeff, "fan_vent_coeff"),
            (self.occupant_co2_ppm_per_slot, "occupant_co2_ppm_per_slot"),
        ];
        for (v, name) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ThermalParamError(name));
            }
        }
        if self.leak_coeff >= 1.0 {
            return Err(ThermalParamError("leak_coeff"));
        }
        if self.fan_vent_coeff >= 1.0 {
            return Err(ThermalParamError("fan_vent_coeff"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HvacCommand {
    pub cool_on: bool,
    pub heat_on: bool,
    pub fan_on: bool,
}

impl HvacCommand {
    pub const OFF: HvacCommand = HvacCommand {
        cool_on: false,
        heat_on: false,
        fan_on: false,
    };

    pub fn power_kw(&self) -> f64 {
        let mut p = 0.0;
        if self.cool_on {
            p += AIR_CONDITIONER_KW;
        }
        if self.heat_on {
            p += HEATER_KW;
        }
        if self.fan_on {
            p += FAN_KW;
        }
        p
    }
}

pub fn target_temp_c(occupied: bool) -> f64 {
    if occupied {
        OCCUPIED_TARGET_C
    } else {
        UNOCCUPIED_TARGET_C
    }
}

pub fn hvac_control(state: RoomState, occupied: bool, params: &ThermalParams) -> HvacCommand {
    let target = target_temp_c(occupied);
    HvacCommand {
        cool_on: state.temp_c > target + params.deadband_c,
        heat_on: state.temp_c < target - params.deadband_c,
        fan_on: state.co2_ppm > CO2_TARGET_PPM,
    }
}

/// Advances the room temperature by one slot. Only the temperature changes.
pub fn step_thermal(state: RoomState, cmd: HvacCommand, t_out: f64, params: &ThermalParams) -> RoomState {
    let mut temp = state.temp_c + params.leak_coeff * (t_out - state.temp_c);
    if cmd.cool_on {
        temp -= params.cool_delta_c;
    }
    if cmd.heat_on {
        temp += params.heat_delta_c;
    }
    RoomState { temp_c: temp, ..state }
}

pub fn step_co2(state: RoomState, fan_on: bool, occupied: bool, outdoor_ppm: f64, params: &ThermalParams) -> f64 {
    let mut co2 = state.co2_ppm;
    if occupied {
        co2 += params.occupant_co2_ppm_per_slot;
    }
    if fan_on {
        co2 += params.fan_vent_coeff * (outdoor_ppm - state.co2_ppm);
    }
    co2
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn room(temp_c: f64, co2_ppm: f64) -> RoomState {
        RoomState { temp_c, co2_ppm }
    }

    #[test]
    fn control_examples() {
        let p = ThermalParams::default();
        let c = hvac_control(room(28.0, 450.0), true, &p);
        assert!(c.cool_on && !c.heat_on);
        assert_eq!(hvac_control(room(23.0, 480.0), true, &p), HvacCommand::OFF);
        let c = hvac_control(room(24.7, 450.0), false, &p);
        assert!(!c.cool_on && !c.heat_on);
        assert!(hvac_control(room(24.7, 501.0), false, &p).fan_on);
    }

    #[test]
    fn thermal_examples() {
        let p = ThermalParams::default();
        assert_eq!(step_thermal(room(27.0, 500.0), HvacCommand::OFF, 27.0, &p).temp_c, 27.0);
        let cool = HvacCommand { cool_on: true, ..HvacCommand::OFF };
        assert!((step_thermal(room(30.0, 500.0), cool, 30.0, &p).temp_c - 29.5).abs() < 1e-12);
        assert!((step_thermal(room(20.0, 500.0), HvacCommand::OFF, 30.0, &p).temp_c - 20.2).abs() < 1e-12);
        let leaky = ThermalParams { leak_coeff: 0.1, ..p };
        assert!((step_thermal(room(20.0, 500.0), HvacCommand::OFF, 30.0, &leaky).temp_c - 21.0).abs() < 1e-12);
    }

    #[test]
    fn co2_examples() {
        let p = ThermalParams::default();
        assert_eq!(step_co2(room(25.0, 550.0), true, false, 550.0, &p), 550.0);
        assert!((step_co2(room(25.0, 600.0), true, false, 550.0, &p) - 585.0).abs() < 1e-12);
        assert_eq!(step_co2(room(25.0, 500.0), false, true, 550.0, &p), 515.0);
    }

    #[test]
    fn params_validation() {
        assert!(ThermalParams::default().validate().is_ok());
        assert!(ThermalParams { leak_coeff: 1.0, ..Default::default() }.validate().is_err());
        assert!(ThermalParams { cool_delta_c: 0.0, ..Default::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn power_is_one_of_the_allowed_levels(temp in 10.0f64..40.0, co2 in 300.0f64..900.0, occ: bool) {
            let cmd = hvac_control(room(temp, co2), occ, &ThermalParams::default());
            prop_assert!(!(cmd.cool_on && cmd.heat_on));
            let p = cmd.power_kw();
            prop_assert!([0.0, 0.06, 1.16, 1.2, 1.22, 1.26].iter().any(|l| (p - l).abs() < 1e-12));
        }

        #[test]
        fn cooling_never_warms_a_room_above_outdoor(temp in 20.0f64..40.0, t_out in 15.0f64..40.0) {
            prop_assume!(temp > t_out);
            let p = ThermalParams::default();
            let cool = HvacCommand { cool_on: true, ..HvacCommand::OFF };
            prop_assert!(step_thermal(room(temp, 500.0), cool, t_out, &p).temp_c <= temp);
        }

        #[test]
        fn free_running_room_approaches_outdoor(temp in 10.0f64..40.0, t_out in 10.0f64..40.0) {
            let p = ThermalParams::default();
            let next = step_thermal(room(temp, 500.0), HvacCommand::OFF, t_out, &p).temp_c;
            prop_assert!((next - t_out).abs() <= (temp - t_out).abs());
            prop_assert!((next - t_out) * (temp - t_out) >= 0.0);
        }
    }
}
