//! PMU measurement errors and synchronisation faults.
//!
//! A reported phasor is the true phasor scaled by a magnitude error, rotated by
//! an angle error and perturbed by a complex error drawn from the TVE disc.
//! Errors are independent from sample to sample.

use std::collections::VecDeque;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{csv_writer, write_schema_line};
use crate::phasor::{Phasor, C64};
use crate::rng::SimRng;

/// Standard-class angle error of the instrument transformers, degrees.
pub const DEFAULT_ANGLE_ERR_DEG: f64 = 0.021;
/// Upper limit on total vector error accepted for a compliant PMU.
pub const TVE_LIMIT: f64 = 0.01;
/// Currents at or below this fraction of nominal use the low-current error class.
pub const LOW_CURRENT_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorDistribution {
    Uniform,
    /// Normal with `sigma = gaussian_sigma_fraction · bound`, redrawn until inside the bound.
    TruncatedGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasurementModel {
    /// Voltage magnitude error bound, per unit of the true magnitude.
    pub v_mag_err_max: f64,
    /// Current magnitude error bound above 20 % of nominal current.
    pub i_mag_err_max_high: f64,
    /// Current magnitude error bound at or below 20 % of nominal current.
    pub i_mag_err_max_low: f64,
    pub tve_max: f64,
    /// Radians.
    pub angle_err_max: f64,
    pub sample_rate: f64,
    /// Amperes; selects the current error class.
    pub nominal_current: f64,
    pub distribution: ErrorDistribution,
    pub gaussian_sigma_fraction: f64,
}

impl Default for MeasurementModel {
    fn default() -> Self {
        MeasurementModel {
            v_mag_err_max: 0.003,
            i_mag_err_max_high: 0.003,
            i_mag_err_max_low: 0.006,
            tve_max: TVE_LIMIT,
            angle_err_max: DEFAULT_ANGLE_ERR_DEG.to_radians(),
            sample_rate: 5000.0,
            nominal_current: 2100.0,
            distribution: ErrorDistribution::Uniform,
            gaussian_sigma_fraction: 1.0 / 3.0,
        }
    }
}

/// `exp(jθ)`; below 1e-3 rad the truncated series is exact to double precision.
#[inline]
fn small_rotation(theta: f64) -> C64 {
    if theta.abs() < 1e-3 {
        let t2 = theta * theta;
        C64::new(
            1.0 - t2 * (0.5 - t2 / 24.0),
            theta * (1.0 - t2 * (1.0 / 6.0 - t2 / 120.0)),
        )
    } else {
        C64::from_polar(1.0, theta)
    }
}

/// Uniform on [-1, 1).
#[inline]
fn symmetric_unit(rng: &mut SimRng) -> f64 {
    2.0 * rng.gen::<f64>() - 1.0
}

impl MeasurementModel {
    /// A model that reports the truth.
    pub fn ideal() -> Self {
        MeasurementModel {
            v_mag_err_max: 0.0,
            i_mag_err_max_high: 0.0,
            i_mag_err_max_low: 0.0,
            tve_max: 0.0,
            angle_err_max: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid("measurement model", m));
        for (name, v) in [
            ("v_mag_err_max", self.v_mag_err_max),
            ("i_mag_err_max_high", self.i_mag_err_max_high),
            ("i_mag_err_max_low", self.i_mag_err_max_low),
            ("tve_max", self.tve_max),
            ("angle_err_max", self.angle_err_max),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite value >= 0, got {v}"));
            }
        }
        if self.tve_max > TVE_LIMIT {
            return bad(format!("tve_max {} exceeds {TVE_LIMIT}", self.tve_max));
        }
        if !(self.sample_rate > 0.0) {
            return bad("sample_rate must be > 0".into());
        }
        if !(self.nominal_current > 0.0) {
            return bad("nominal_current must be > 0".into());
        }
        if !(self.gaussian_sigma_fraction > 0.0) {
            return bad("gaussian_sigma_fraction must be > 0".into());
        }
        Ok(())
    }

    pub fn is_ideal(&self) -> bool {
        self.v_mag_err_max == 0.0
            && self.i_mag_err_max_high == 0.0
            && self.i_mag_err_max_low == 0.0
            && self.tve_max == 0.0
            && self.angle_err_max == 0.0
    }

    /// Magnitude error bound for a current of `amps`.
    #[inline]
    pub fn current_bound(&self, amps: f64) -> f64 {
        if amps <= LOW_CURRENT_FRACTION * self.nominal_current {
            self.i_mag_err_max_low
        } else {
            self.i_mag_err_max_high
        }
    }

    /// Largest relative vector error a sample can carry for a given magnitude bound.
    pub fn composite_bound(&self, mag_bound: f64) -> f64 {
        (1.0 + mag_bound) * (1.0 + self.angle_err_max) * (1.0 + self.tve_max) - 1.0
    }

    #[inline]
    fn draw_symmetric(&self, rng: &mut SimRng, bound: f64) -> f64 {
        if bound == 0.0 {
            return 0.0;
        }
        match self.distribution {
            ErrorDistribution::Uniform => bound * symmetric_unit(rng),
            ErrorDistribution::TruncatedGaussian => {
                let sigma = self.gaussian_sigma_fraction * bound;
                loop {
                    let z: f64 = StandardNormal.sample(rng);
                    let e = z * sigma;
                    if e.abs() <= bound {
                        return e;
                    }
                }
            }
        }
    }

    /// Uniform point in the disc of radius `tve_max`.
    #[inline]
    fn draw_tve(&self, rng: &mut SimRng) -> C64 {
        if self.tve_max == 0.0 {
            return C64::new(0.0, 0.0);
        }
        loop {
            let x = symmetric_unit(rng);
            let y = symmetric_unit(rng);
            if x * x + y * y <= 1.0 {
                return C64::new(x * self.tve_max, y * self.tve_max);
            }
        }
    }

    /// Apply one draw of every error source to a true phasor given as a complex number.
    #[inline]
    pub fn perturb(&self, truth: C64, mag_bound: f64, rng: &mut SimRng) -> C64 {
        let e_mag = self.draw_symmetric(rng, mag_bound);
        let e_ang = self.draw_symmetric(rng, self.angle_err_max);
        let gain = if e_ang == 0.0 {
            C64::new(1.0 + e_mag, 0.0)
        } else {
            small_rotation(e_ang) * (1.0 + e_mag)
        };
        let tve = self.draw_tve(rng);
        truth * gain * (C64::new(1.0, 0.0) + tve)
    }

    pub fn measure_voltage(&self, truth: C64, rng: &mut SimRng) -> C64 {
        self.perturb(truth, self.v_mag_err_max, rng)
    }

    pub fn measure_current(&self, truth: C64, rng: &mut SimRng) -> C64 {
        self.perturb(truth, self.current_bound(truth.norm()), rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Terminal {
    S,
    R,
}

/// One PMU report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSample {
    pub timestamp: f64,
    pub v: Phasor,
    pub i: Phasor,
    pub terminal: Terminal,
}

/// Measure a terminal's voltage and current at time `timestamp`.
pub fn measure(
    terminal: Terminal,
    timestamp: f64,
    true_v: Phasor,
    true_i: Phasor,
    model: &MeasurementModel,
    rng: &mut SimRng,
) -> MeasurementSample {
    let v = model.measure_voltage(true_v.to_complex(), rng);
    let i = model.measure_current(true_i.to_complex(), rng);
    MeasurementSample {
        timestamp,
        v: Phasor::from_complex(v),
        i: Phasor::from_complex(i),
        terminal,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultKind {
    #[default]
    None,
    /// The PMU keeps reporting its last value after losing synchronisation.
    Frozen,
    /// Reports arrive late by a fixed delay.
    Delay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    #[default]
    Sending,
    Receiving,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingFault {
    pub kind: FaultKind,
    pub side: Side,
    /// Seconds from the start of the run.
    pub onset_s: f64,
    pub delay_s: f64,
}

impl Default for TimingFault {
    fn default() -> Self {
        TimingFault {
            kind: FaultKind::None,
            side: Side::Sending,
            onset_s: 0.0,
            delay_s: 0.1,
        }
    }
}

impl TimingFault {
    pub fn frozen(side: Side, onset_s: f64) -> Self {
        TimingFault {
            kind: FaultKind::Frozen,
            side,
            onset_s,
            ..Default::default()
        }
    }

    pub fn delay(side: Side, onset_s: f64, delay_s: f64) -> Self {
        TimingFault {
            kind: FaultKind::Delay,
            side,
            onset_s,
            delay_s,
        }
    }

    pub fn validate(&self, duration_s: f64) -> Result<()> {
        if self.kind == FaultKind::None {
            return Ok(());
        }
        if !(self.onset_s >= 0.0 && self.onset_s <= duration_s) {
            return Err(Error::invalid(
                "timing fault",
                format!(
                    "onset {} s outside the run window [0, {duration_s}]",
                    self.onset_s
                ),
            ));
        }
        if self.kind == FaultKind::Delay && !(self.delay_s > 0.0) {
            return Err(Error::invalid("timing fault", "delay_s must be > 0"));
        }
        Ok(())
    }

    /// Index of the first affected sample.
    pub fn onset_index(&self, sample_rate: f64) -> usize {
        (self.onset_s * sample_rate + 1e-9).floor() as usize
    }

    pub fn delay_samples(&self, sample_rate: f64) -> usize {
        (self.delay_s * sample_rate).round() as usize
    }
}

/// Streaming form of [`apply_timing_fault`]: feed samples in order, get the
/// reported samples back.
#[derive(Debug, Clone)]
pub struct TimingInjector<T> {
    fault: TimingFault,
    onset: usize,
    delay: usize,
    history: VecDeque<T>,
    first: Option<T>,
    held: Option<T>,
    n: usize,
}

impl<T: Copy> TimingInjector<T> {
    pub fn new(fault: TimingFault, sample_rate: f64) -> Self {
        let delay = if fault.kind == FaultKind::Delay {
            fault.delay_samples(sample_rate)
        } else {
            0
        };
        TimingInjector {
            fault,
            onset: fault.onset_index(sample_rate),
            delay,
            history: VecDeque::with_capacity(delay + 1),
            first: None,
            held: None,
            n: 0,
        }
    }

    pub fn side(&self) -> Side {
        self.fault.side
    }

    pub fn is_active(&self) -> bool {
        self.fault.kind != FaultKind::None
    }

    /// Pass the faulted side's true sample for the next index; returns what is reported.
    pub fn push(&mut self, sample: T) -> T {
        let n = self.n;
        self.n += 1;
        match self.fault.kind {
            FaultKind::None => sample,
            FaultKind::Frozen => {
                if n <= self.onset {
                    self.held = Some(sample);
                }
                if n < self.onset {
                    sample
                } else {
                    self.held.unwrap_or(sample)
                }
            }
            FaultKind::Delay => {
                if self.first.is_none() {
                    self.first = Some(sample);
                }
                self.history.push_back(sample);
                if self.history.len() > self.delay + 1 {
                    self.history.pop_front();
                }
                if n < self.onset {
                    sample
                } else if n < self.delay {
                    self.first.unwrap_or(sample)
                } else {
                    self.history[0]
                }
            }
        }
    }
}

/// Apply a timing fault to two aligned streams sampled at `sample_rate`.
pub fn apply_timing_fault<T: Copy>(
    stream_s: &[T],
    stream_r: &[T],
    fault: &TimingFault,
    sample_rate: f64,
) -> Result<(Vec<T>, Vec<T>)> {
    if stream_s.len() != stream_r.len() {
        return Err(Error::invalid(
            "measurement streams",
            format!("length mismatch: {} vs {}", stream_s.len(), stream_r.len()),
        ));
    }
    let (faulted, clean) = match fault.side {
        Side::Sending => (stream_s, stream_r),
        Side::Receiving => (stream_r, stream_s),
    };
    let mut inj = TimingInjector::new(*fault, sample_rate);
    let out: Vec<T> = faulted.iter().map(|&x| inj.push(x)).collect();
    Ok(match fault.side {
        Side::Sending => (out, clean.to_vec()),
        Side::Receiving => (clean.to_vec(), out),
    })
}

#[derive(Serialize)]
struct SampleRow {
    t_s: f64,
    terminal: Terminal,
    v_mag: f64,
    v_ang: f64,
    i_mag: f64,
    i_ang: f64,
}

/// CSV with columns `t_s, terminal, v_mag, v_ang, i_mag, i_ang` (V, rad, A, rad).
pub fn write_measurements_csv<W: Write>(w: W, samples: &[MeasurementSample]) -> Result<()> {
    let mut w = w;
    write_schema_line(&mut w, "measurements", 1)?;
    let mut wtr = csv_writer(w);
    for s in samples {
        wtr.serialize(SampleRow {
            t_s: s.timestamp,
            terminal: s.terminal,
            v_mag: s.v.magnitude,
            v_ang: s.v.angle,
            i_mag: s.i.magnitude,
            i_ang: s.i.angle,
        })?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
