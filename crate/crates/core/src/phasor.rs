//! Phasors, the pi-model line segment and the two-bus steady-state solve.
//!
//! All quantities are per phase and in SI units (V, A, W, var, Ω, S) unless a
//! [`PerUnitBase`] is applied explicitly. The source bus `S` holds an ideal
//! voltage; the receiving bus `R` carries a constant-PQ load and an optional
//! switchable shunt capacitor bank.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Conductor temperatures (°C) for which the linear resistance law is accepted.
pub const CONDUCTOR_TEMP_RANGE: (f64, f64) = (-40.0, 300.0);
/// Admissible X/R ratio of the monitored segment.
pub const XR_RATIO_RANGE: (f64, f64) = (0.13, 4.26);
pub const MAX_SEGMENT_LENGTH_KM: f64 = 20.0;
pub const DEFAULT_ALPHA: f64 = 0.004;
pub const DEFAULT_T_REF: f64 = 20.0;

/// Wrap an angle into `(-π, π]`.
pub fn normalize_angle(angle: f64) -> f64 {
    let a = (angle + PI).rem_euclid(2.0 * PI) - PI;
    if a <= -PI {
        a + 2.0 * PI
    } else {
        a
    }
}

/// A polar phasor. The magnitude is never negative and the angle is kept in `(-π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phasor {
    pub magnitude: f64,
    /// Radians.
    pub angle: f64,
}

impl Phasor {
    pub const ZERO: Phasor = Phasor {
        magnitude: 0.0,
        angle: 0.0,
    };

    pub fn new(magnitude: f64, angle: f64) -> Self {
        if magnitude < 0.0 {
            Phasor {
                magnitude: -magnitude,
                angle: normalize_angle(angle + PI),
            }
        } else {
            Phasor {
                magnitude,
                angle: normalize_angle(angle),
            }
        }
    }

    pub fn from_complex(c: C64) -> Self {
        let magnitude = c.norm();
        let angle = if magnitude == 0.0 { 0.0 } else { c.arg() };
        Phasor::new(magnitude, angle)
    }

    #[inline]
    pub fn to_complex(self) -> C64 {
        C64::from_polar(self.magnitude, self.angle)
    }

    pub fn scale(self, k: f64) -> Self {
        Phasor::new(self.magnitude * k, self.angle)
    }

    pub fn rotate(self, by: f64) -> Self {
        Phasor::new(self.magnitude, self.angle + by)
    }
}

/// A monitored line segment in the lumped pi-model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSegment {
    /// Series resistance at `t_ref_c`, Ω.
    pub r_ref_ohm: f64,
    /// Series reactance, Ω. Independent of temperature.
    pub x_ohm: f64,
    /// Total shunt susceptance, S; half is placed at each end.
    #[serde(default)]
    pub b_shunt_s: f64,
    pub length_km: f64,
    /// Temperature coefficient of resistance, 1/°C.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_t_ref")]
    pub t_ref_c: f64,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_t_ref() -> f64 {
    DEFAULT_T_REF
}

impl LineSegment {
    /// Build a segment from a per-metre conductor resistance and an X/R ratio.
    pub fn from_conductor(r_per_m_ref: f64, length_km: f64, xr_ratio: f64) -> Result<Self> {
        let r_ref_ohm = r_per_m_ref * length_km * 1000.0;
        let seg = LineSegment {
            r_ref_ohm,
            x_ohm: xr_ratio * r_ref_ohm,
            b_shunt_s: 0.0,
            length_km,
            alpha: DEFAULT_ALPHA,
            t_ref_c: DEFAULT_T_REF,
        };
        seg.validate()?;
        Ok(seg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid("line segment", m));
        if !(self.r_ref_ohm > 0.0) {
            return bad(format!("r_ref_ohm must be > 0, got {}", self.r_ref_ohm));
        }
        if !(self.length_km > 0.0 && self.length_km <= MAX_SEGMENT_LENGTH_KM) {
            return bad(format!(
                "length_km must lie in (0, {MAX_SEGMENT_LENGTH_KM}], got {}",
                self.length_km
            ));
        }
        let ratio = self.xr_ratio();
        // Small tolerance so that ratios built as x = ratio * r at the range ends pass.
        let tol = 1e-9;
        if !(ratio >= XR_RATIO_RANGE.0 - tol && ratio <= XR_RATIO_RANGE.1 + tol) {
            return bad(format!(
                "x/r_ref = {ratio} outside [{}, {}]",
                XR_RATIO_RANGE.0, XR_RATIO_RANGE.1
            ));
        }
        if !(self.alpha >= 0.0) || !self.b_shunt_s.is_finite() || self.b_shunt_s < 0.0 {
            return bad("alpha and b_shunt_s must be non-negative".into());
        }
        Ok(())
    }

    pub fn xr_ratio(&self) -> f64 {
        self.x_ohm / self.r_ref_ohm
    }

    pub fn length_m(&self) -> f64 {
        self.length_km * 1000.0
    }

    /// Resistance at `t_c` without range checking. Used inside the integrators.
    #[inline]
    pub fn resistance_at(&self, t_c: f64) -> f64 {
        self.r_ref_ohm * (1.0 + self.alpha * (t_c - self.t_ref_c))
    }

    /// Series impedance with the reactance reduced by a series-compensation fraction.
    #[inline]
    pub fn impedance_at(&self, t_c: f64, series_compensation: f64) -> C64 {
        C64::new(
            self.resistance_at(t_c),
            self.x_ohm * (1.0 - series_compensation),
        )
    }
}

/// `R(T_c) = R_ref · [1 + α (T_c − T_ref)]`.
pub fn line_resistance(seg: &LineSegment, t_c: f64) -> Result<f64> {
    let (lo, hi) = CONDUCTOR_TEMP_RANGE;
    if !(t_c >= lo && t_c <= hi) {
        return Err(Error::Domain(format!(
            "conductor temperature {t_c} °C outside [{lo}, {hi}]"
        )));
    }
    Ok(seg.resistance_at(t_c))
}

/// X / R(T_c), the tangent of the impedance angle.
pub fn true_tan_delta(seg: &LineSegment, t_c: f64) -> Result<f64> {
    let r = line_resistance(seg, t_c)?;
    if r <= 0.0 {
        return Err(Error::Domain(format!("non-positive resistance {r} Ω")));
    }
    Ok(seg.x_ohm / r)
}

/// Load and compensation at the receiving bus, fed from an ideal source at `S`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatingPoint {
    pub source_voltage: Phasor,
    /// Active power drawn by the load, W.
    pub load_p_w: f64,
    /// Reactive power drawn by the load, var (positive = inductive).
    pub load_q_var: f64,
    /// Capacitor-bank susceptance at the load bus, S.
    #[serde(default)]
    pub shunt_compensation_s: f64,
}

impl OperatingPoint {
    /// Size a load so that, at nominal voltage, the line carries `current_a` at the
    /// corrected power factor.
    ///
    /// The load itself runs at `native_pf` (lagging); a capacitor bank supplies the
    /// fraction of reactive demand that lifts the bus power factor from `native_pf`
    /// towards 1 by `correction` ∈ [0, 1].
    pub fn from_line_current(
        v_nominal: f64,
        current_a: f64,
        native_pf: f64,
        correction: f64,
    ) -> Result<Self> {
        if !(native_pf > 0.0 && native_pf <= 1.0) {
            return Err(Error::invalid(
                "operating point",
                "native_pf must lie in (0, 1]",
            ));
        }
        if !(0.0..=1.0).contains(&correction) {
            return Err(Error::invalid(
                "operating point",
                "correction must lie in [0, 1]",
            ));
        }
        if !(current_a >= 0.0) {
            return Err(Error::invalid("operating point", "current must be >= 0"));
        }
        let pf = native_pf + correction * (1.0 - native_pf);
        let s = v_nominal * current_a;
        let p = s * pf;
        let q_net = s * (1.0 - pf * pf).max(0.0).sqrt();
        let q_native = p * (1.0 - native_pf * native_pf).max(0.0).sqrt() / native_pf;
        Ok(OperatingPoint {
            source_voltage: Phasor::new(v_nominal, 0.0),
            load_p_w: p,
            load_q_var: q_native,
            shunt_compensation_s: (q_native - q_net) / (v_nominal * v_nominal),
        })
    }

    pub fn apparent_power(&self) -> f64 {
        self.load_p_w.hypot(self.load_q_var)
    }
}

/// Terminal phasors of a solved segment.
///
/// `i_r` is the series-branch current arriving at `R`; the receiving-end shunt
/// and capacitor-bank currents are netted out by the pi-model solve. `i_s` is
/// the current leaving the source, including the sending-end charging current.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub v_s: Phasor,
    pub v_r: Phasor,
    pub i_s: Phasor,
    pub i_r: Phasor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFlow {
    pub p_r: f64,
    pub q_r: f64,
}

impl PowerFlow {
    pub fn apparent(&self) -> f64 {
        self.p_r.hypot(self.q_r)
    }
}

/// Active and reactive power delivered through `i_r` at voltage `v_r`.
pub fn receiving_power(v_r: Phasor, i_r: Phasor) -> PowerFlow {
    let phi = v_r.angle - i_r.angle;
    let s = v_r.magnitude * i_r.magnitude;
    PowerFlow {
        p_r: s * phi.cos(),
        q_r: s * phi.sin(),
    }
}

/// Solve the segment at conductor temperature `t_c`.
pub fn solve_steady_state(seg: &LineSegment, op: &OperatingPoint, t_c: f64) -> Result<SteadyState> {
    let r = line_resistance(seg, t_c)?;
    solve_with_impedance(C64::new(r, seg.x_ohm), seg.b_shunt_s, op)
}

/// Terminal quantities as complex numbers, in the source's angle frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexState {
    pub v_s: C64,
    pub v_r: C64,
    pub i_s: C64,
    pub i_r: C64,
}

impl ComplexState {
    pub fn to_phasors(&self) -> SteadyState {
        SteadyState {
            v_s: Phasor::from_complex(self.v_s),
            v_r: Phasor::from_complex(self.v_r),
            i_s: Phasor::from_complex(self.i_s),
            i_r: Phasor::from_complex(self.i_r),
        }
    }
}

/// Closed-form two-bus solve for an explicit series impedance.
pub fn solve_with_impedance(z: C64, b_shunt: f64, op: &OperatingPoint) -> Result<SteadyState> {
    let mut st = solve_complex(z, b_shunt, op)?.to_phasors();
    // Keep the source phasor exactly as given rather than its round trip.
    st.v_s = op.source_voltage;
    Ok(st)
}

/// Closed-form two-bus solve returning complex terminal quantities.
///
/// With `v_r` as reference and `U = |v_r|²`, KVL across the series branch
/// gives a quadratic in `U`; the higher root is the normal operating branch.
#[inline]
pub fn solve_complex(z: C64, b_shunt: f64, op: &OperatingPoint) -> Result<ComplexState> {
    let (r, x) = (z.re, z.im);
    let e = op.source_voltage.magnitude;
    let p = op.load_p_w;
    let q_load = op.load_q_var;
    // Constant-susceptance elements at R: half line charging plus the capacitor bank.
    let b_r = 0.5 * b_shunt + op.shunt_compensation_s;

    let a = 1.0 - x * b_r;
    let b = r * b_r;
    let c1 = r * p + x * q_load;
    let c2 = x * p - r * q_load;

    let qa = a * a + b * b;
    let qb = 2.0 * (a * c1 + b * c2) - e * e;
    let qc = c1 * c1 + c2 * c2;
    if !(qa > 0.0) {
        return Err(Error::Infeasible(format!(
            "degenerate quadratic (x·b = {})",
            x * b_r
        )));
    }
    let disc = qb * qb - 4.0 * qa * qc;
    if !(disc >= 0.0) {
        return Err(Error::Infeasible(format!(
            "load {:.4e} W + j{:.4e} var exceeds transfer capability",
            p, q_load
        )));
    }
    let root = disc.sqrt();
    let u_hi = (-qb + root) / (2.0 * qa);
    if !(u_hi > 0.0) {
        return Err(Error::Infeasible("no positive voltage root".into()));
    }
    if log::log_enabled!(log::Level::Trace) {
        let u_lo = (-qb - root) / (2.0 * qa);
        if u_lo > 0.0 && u_lo != u_hi {
            log::trace!("rejecting low-voltage root |v_r| = {:.6e}", u_lo.sqrt());
        }
    }

    let v = u_hi.sqrt();
    // Source phasor in the frame where v_r is real, then rotate onto the actual source.
    let vs_local = C64::new(a * u_hi + c1, b * u_hi + c2) / v;
    let v_s = op.source_voltage.to_complex();
    let rot = if e > 0.0 {
        v_s / vs_local
    } else {
        C64::new(1.0, 0.0)
    };
    let v_r = rot * v;
    let i_r = (v_s - v_r) / z;
    let i_s = i_r + C64::new(0.0, 0.5 * b_shunt) * v_s;
    Ok(ComplexState { v_s, v_r, i_s, i_r })
}

/// Per-unit normalisation for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerUnitBase {
    pub v_base: f64,
    pub s_base: f64,
}

impl PerUnitBase {
    pub fn i_base(&self) -> f64 {
        self.s_base / self.v_base
    }

    pub fn z_base(&self) -> f64 {
        self.v_base * self.v_base / self.s_base
    }

    pub fn voltage(&self, v: Phasor) -> Phasor {
        v.scale(1.0 / self.v_base)
    }

    pub fn current(&self, i: Phasor) -> Phasor {
        i.scale(1.0 / self.i_base())
    }
}
