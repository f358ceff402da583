//! Conductor heat balance (non-radial dynamic model) and the fire ambient model.
//!
//! The conductor is treated as a single lumped temperature: the surface
//! temperature used by the convection and radiation terms equals the mean
//! strand-layer temperature at every step.

mod catalogue;
mod fire;

pub use catalogue::{Catalogue, ConductorEntry, DEFAULT_CATALOGUE_TOML};
pub use fire::{
    calibrate_from_table, fire_delta_ta, read_calibration_csv, read_table_csv, reproduce,
    table_one, write_calibration_csv, write_reproduction_csv, write_table_csv, CalibrationSample,
    FireCalibration, FireSource, ReproductionRow, TABLE_ONE, TIME_LAW_TOLERANCE,
};

use serde::{Deserialize, Serialize};

use crate::phasor::LineSegment;

pub const ZERO_CELSIUS_K: f64 = 273.0;
pub const MAX_WIND_SPEED: f64 = 6.5;
pub const MAX_STEP_S: f64 = 0.1;

/// Convection, radiation and air-property constants.
///
/// Defaults are the SI forms of the bare-conductor rating standard for a wind
/// perpendicular to the conductor at sea level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Correlations {
    pub elevation_m: f64,
    /// Wind-direction factor; 1.0 for wind perpendicular to the conductor axis.
    pub wind_direction_factor: f64,
    pub forced_a: f64,
    pub forced_b: f64,
    pub forced_reynolds_exp: f64,
    pub natural_coeff: f64,
    pub natural_diameter_exp: f64,
    pub natural_dt_exp: f64,
    pub radiation_coeff: f64,
    pub density_sea_level: f64,
    pub density_elev_1: f64,
    pub density_elev_2: f64,
    pub density_temp_coeff: f64,
    pub viscosity_coeff: f64,
    pub viscosity_sutherland: f64,
    pub conductivity_0: f64,
    pub conductivity_1: f64,
    pub conductivity_2: f64,
}

impl Default for Correlations {
    fn default() -> Self {
        Correlations {
            elevation_m: 0.0,
            wind_direction_factor: 1.0,
            forced_a: 1.01,
            forced_b: 1.35,
            forced_reynolds_exp: 0.52,
            natural_coeff: 3.645,
            natural_diameter_exp: 0.75,
            natural_dt_exp: 1.25,
            radiation_coeff: 17.8,
            density_sea_level: 1.293,
            density_elev_1: -1.525e-4,
            density_elev_2: 6.379e-9,
            density_temp_coeff: 0.00367,
            viscosity_coeff: 1.458e-6,
            viscosity_sutherland: 383.4,
            conductivity_0: 2.424e-2,
            conductivity_1: 7.477e-5,
            conductivity_2: -4.407e-9,
        }
    }
}

/// Air properties at the boundary-layer film temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilmAir {
    /// kg/m³
    pub density: f64,
    /// kg/(m·s)
    pub viscosity: f64,
    /// W/(m·°C)
    pub conductivity: f64,
}

impl Correlations {
    pub fn film_air(&self, t_film: f64) -> FilmAir {
        let h = self.elevation_m;
        let density =
            (self.density_sea_level + self.density_elev_1 * h + self.density_elev_2 * h * h)
                / (1.0 + self.density_temp_coeff * t_film);
        let tk = t_film + ZERO_CELSIUS_K;
        let viscosity =
            self.viscosity_coeff * tk * tk.sqrt() / (t_film + self.viscosity_sutherland);
        let conductivity = self.conductivity_0
            + self.conductivity_1 * t_film
            + self.conductivity_2 * t_film * t_film;
        FilmAir {
            density,
            viscosity,
            conductivity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConductorThermalParams {
    /// Total heat capacity per metre, J/(m·°C).
    pub m_cp: f64,
    pub diameter_m: f64,
    pub emissivity: f64,
    /// Solar heat gain, W/m. Zero for the worst-case (night or smoke) scenarios.
    #[serde(default)]
    pub solar_gain_w_per_m: f64,
    #[serde(default)]
    pub correlations: Correlations,
}

impl ConductorThermalParams {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.m_cp > 0.0 && self.diameter_m > 0.0) {
            return Err(crate::Error::invalid(
                "conductor thermal parameters",
                "m_cp and diameter_m must be > 0",
            ));
        }
        if !(0.2..=0.95).contains(&self.emissivity) {
            return Err(crate::Error::invalid(
                "conductor thermal parameters",
                format!("emissivity {} outside [0.2, 0.95]", self.emissivity),
            ));
        }
        Ok(())
    }
}

/// Conductor and ambient temperatures, °C.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalState {
    /// Mean strand-layer temperature.
    pub t_c: f64,
    /// Surface temperature; equal to `t_c` in the lumped model.
    pub t_s: f64,
    /// Ambient temperature at the conductor including any fire contribution.
    pub t_a: f64,
}

impl ThermalState {
    pub fn lumped(t_c: f64, t_a: f64) -> Self {
        ThermalState { t_c, t_s: t_c, t_a }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weather {
    /// Wind speed, m/s.
    pub v_w: f64,
    /// Ambient temperature, °C.
    pub t_a: f64,
}

/// Heat-balance terms, all W/m.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatBalance {
    pub joule: f64,
    pub solar: f64,
    pub convection: f64,
    pub radiation: f64,
}

impl HeatBalance {
    pub fn net(&self) -> f64 {
        self.joule + self.solar - self.convection - self.radiation
    }
}

#[inline]
fn signed_pow(x: f64, e: f64) -> f64 {
    x.signum() * x.abs().powf(e)
}

/// Convective loss (W/m); the larger of forced and natural convection.
/// Negative when the air is hotter than the conductor.
pub fn convection_loss(params: &ConductorThermalParams, v_w: f64, t_s: f64, t_a: f64) -> f64 {
    let dt = t_s - t_a;
    if dt == 0.0 {
        return 0.0;
    }
    let c = &params.correlations;
    let air = c.film_air(0.5 * (t_s + t_a));
    let d = params.diameter_m;
    let reynolds = d * air.density * v_w / air.viscosity;
    let forced = c.wind_direction_factor
        * (c.forced_a + c.forced_b * reynolds.powf(c.forced_reynolds_exp))
        * air.conductivity
        * dt;
    let natural = c.natural_coeff
        * air.density.sqrt()
        * d.powf(c.natural_diameter_exp)
        * signed_pow(dt, c.natural_dt_exp);
    if forced.abs() >= natural.abs() {
        forced
    } else {
        natural
    }
}

/// Radiated loss (W/m).
pub fn radiation_loss(params: &ConductorThermalParams, t_s: f64, t_a: f64) -> f64 {
    let s = (t_s + ZERO_CELSIUS_K) / 100.0;
    let a = (t_a + ZERO_CELSIUS_K) / 100.0;
    let (s2, a2) = (s * s, a * a);
    params.correlations.radiation_coeff
        * params.diameter_m
        * params.emissivity
        * (s2 * s2 - a2 * a2)
}

pub fn heat_balance(
    state: &ThermalState,
    params: &ConductorThermalParams,
    seg: &LineSegment,
    i_rms: f64,
    weather: &Weather,
) -> HeatBalance {
    let r_per_m = seg.resistance_at(state.t_c) / seg.length_m();
    HeatBalance {
        joule: r_per_m * i_rms * i_rms,
        solar: params.solar_gain_w_per_m,
        convection: convection_loss(params, weather.v_w, state.t_s, weather.t_a),
        radiation: radiation_loss(params, state.t_s, weather.t_a),
    }
}

/// dT_c/dt in °C/s.
pub fn temperature_rate(
    state: &ThermalState,
    params: &ConductorThermalParams,
    seg: &LineSegment,
    i_rms: f64,
    weather: &Weather,
) -> f64 {
    heat_balance(state, params, seg, i_rms, weather).net() / params.m_cp
}

/// One explicit-Euler step of the conductor temperature.
pub fn step_conductor_temp(
    state: ThermalState,
    params: &ConductorThermalParams,
    seg: &LineSegment,
    i_rms: f64,
    weather: Weather,
    dt: f64,
) -> ThermalState {
    debug_assert!(dt > 0.0 && dt <= MAX_STEP_S, "dt = {dt}");
    debug_assert!((0.0..=MAX_WIND_SPEED).contains(&weather.v_w));
    let rate = temperature_rate(&state, params, seg, i_rms, &weather);
    ThermalState::lumped(state.t_c + rate * dt, weather.t_a)
}

/// Steady conductor temperature (°C) for a constant current and weather, by bisection.
pub fn equilibrium_temperature(
    params: &ConductorThermalParams,
    seg: &LineSegment,
    i_rms: f64,
    weather: &Weather,
) -> crate::Result<f64> {
    let net = |t: f64| {
        heat_balance(
            &ThermalState::lumped(t, weather.t_a),
            params,
            seg,
            i_rms,
            weather,
        )
        .net()
    };
    let (mut lo, mut hi) = (weather.t_a - 50.0, weather.t_a + 1000.0);
    if !(net(lo) >= 0.0 && net(hi) <= 0.0) {
        return Err(crate::Error::Domain(format!(
            "no equilibrium between {lo} and {hi} °C for {i_rms} A"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if net(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * hi.abs().max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Weather and temperature limit used for the static (ampacity) rating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatingConditions {
    pub max_conductor_temp_c: f64,
    pub ambient_c: f64,
    pub wind_speed: f64,
}

impl Default for RatingConditions {
    fn default() -> Self {
        RatingConditions {
            max_conductor_temp_c: 100.0,
            ambient_c: 40.0,
            wind_speed: 0.61,
        }
    }
}

/// Steady-state current (A) that holds the conductor at the rating temperature.
pub fn static_ampacity(
    params: &ConductorThermalParams,
    seg: &LineSegment,
    cond: &RatingConditions,
) -> f64 {
    let t = cond.max_conductor_temp_c;
    let losses = convection_loss(params, cond.wind_speed, t, cond.ambient_c)
        + radiation_loss(params, t, cond.ambient_c)
        - params.solar_gain_w_per_m;
    let r_per_m = seg.resistance_at(t) / seg.length_m();
    (losses.max(0.0) / r_per_m).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drake() -> (ConductorThermalParams, LineSegment) {
        let cat = Catalogue::builtin();
        let entry = cat.get("drake").unwrap();
        let seg = LineSegment::from_conductor(entry.r20_ohm_per_m, 1.0, 2.0).unwrap();
        (entry.thermal(), seg)
    }

    #[test]
    fn equilibrium_without_current_or_temperature_difference() {
        let (p, seg) = drake();
        let s = ThermalState::lumped(30.0, 30.0);
        for v_w in [0.0, 1.0, 6.5] {
            let next = step_conductor_temp(s, &p, &seg, 0.0, Weather { v_w, t_a: 30.0 }, 0.1);
            assert_eq!(next.t_c, 30.0);
        }
    }

    #[test]
    fn joule_heating_raises_temperature() {
        let (p, seg) = drake();
        let s = ThermalState::lumped(30.0, 30.0);
        let next = step_conductor_temp(
            s,
            &p,
            &seg,
            500.0,
            Weather {
                v_w: 2.0,
                t_a: 30.0,
            },
            0.1,
        );
        assert!(next.t_c > 30.0);
    }

    #[test]
    fn convection_is_continuous_across_zero_difference() {
        let (p, _) = drake();
        let lo = convection_loss(&p, 0.0, 40.0 - 1e-9, 40.0);
        let hi = convection_loss(&p, 0.0, 40.0 + 1e-9, 40.0);
        assert!(lo.abs() < 1e-8 && hi.abs() < 1e-8);
        assert!(lo < 0.0 && hi > 0.0);
    }

    #[test]
    fn hot_air_heats_the_conductor() {
        let (p, seg) = drake();
        let s = ThermalState::lumped(30.0, 30.0);
        let rate = temperature_rate(
            &s,
            &p,
            &seg,
            0.0,
            &Weather {
                v_w: 1.0,
                t_a: 150.0,
            },
        );
        assert!(rate > 0.0);
    }

    #[test]
    fn rate_monotone_in_inputs() {
        let (p, seg) = drake();
        let s = ThermalState::lumped(60.0, 30.0);
        let w = Weather {
            v_w: 1.0,
            t_a: 30.0,
        };
        let base = temperature_rate(&s, &p, &seg, 800.0, &w);
        assert!(temperature_rate(&s, &p, &seg, 900.0, &w) > base);
        assert!(temperature_rate(&s, &p, &seg, 800.0, &Weather { t_a: 35.0, ..w }) > base);
        assert!(temperature_rate(&s, &p, &seg, 800.0, &Weather { v_w: 2.0, ..w }) < base);
    }

    #[test]
    fn drake_static_rating_is_plausible() {
        let (p, seg) = drake();
        let amps = static_ampacity(&p, &seg, &RatingConditions::default());
        assert!(amps > 1000.0 && amps < 1300.0, "{amps}");
    }
}
