//! Quasi-static single-run engine.
//!
//! Each sample: update the ambient from the fire model, step the conductor
//! temperature, update the resistance, solve the two-bus circuit, measure
//! both terminals, then feed the detector.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::detector::{
    tan_delta_complex, DetectorConfig, DetectorOutput, DetectorState, LatencyBudget, TripDecision,
};
use crate::error::{Error, Result};
use crate::io::{csv_reader, csv_writer, write_schema_line};
use crate::measurement::{MeasurementModel, Side, TimingFault, TimingInjector};
use crate::phasor::{
    receiving_power, solve_complex, ComplexState, LineSegment, OperatingPoint, Phasor, C64,
    CONDUCTOR_TEMP_RANGE,
};
use crate::rng::rng_from;
use crate::thermal::{
    step_conductor_temp, Catalogue, ConductorThermalParams, FireCalibration, FireSource,
    ThermalState, Weather, MAX_WIND_SPEED,
};

/// Setpoint change applied at the first sample boundary at or after `time_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduledEvent {
    LoadStep {
        time_s: f64,
        p_w: f64,
        q_var: f64,
    },
    /// New capacitor-bank susceptance at the load bus, S.
    ShuntCompensation {
        time_s: f64,
        susceptance_s: f64,
    },
    /// New fraction of series reactance cancelled by series capacitors.
    SeriesCompensation {
        time_s: f64,
        fraction: f64,
    },
}

impl ScheduledEvent {
    pub fn time_s(&self) -> f64 {
        match *self {
            ScheduledEvent::LoadStep { time_s, .. }
            | ScheduledEvent::ShuntCompensation { time_s, .. }
            | ScheduledEvent::SeriesCompensation { time_s, .. } => time_s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConditions {
    /// Conductor temperature at `t = 0`, °C.
    pub t_c: f64,
    /// Ambient temperature without the fire, °C.
    pub t_a: f64,
    /// Wind speed, m/s.
    pub v_w: f64,
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSpec {
    pub duration_s: f64,
    pub sample_rate: f64,
    pub seed: u64,
    pub segment: LineSegment,
    pub operating: OperatingPoint,
    pub events: Vec<ScheduledEvent>,
    pub thermal: ConductorThermalParams,
    pub initial: InitialConditions,
    pub fire: FireSource,
    /// Defaults to the built-in table calibration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fire_calibration: Option<FireCalibration>,
    pub measurement: MeasurementModel,
    pub timing_fault: TimingFault,
    pub detector: DetectorConfig,
    pub latency: LatencyBudget,
}

impl Default for RunSpec {
    /// A 10 km Drake segment at 138 kV carrying 1000 A with a fire 5 m away.
    fn default() -> Self {
        let cat = Catalogue::builtin();
        let drake = cat.get("drake").expect("built-in conductor");
        let segment = LineSegment::from_conductor(drake.r20_ohm_per_m, 10.0, 4.0)
            .expect("valid default segment");
        let v_phase = 138e3 / 3f64.sqrt();
        RunSpec {
            duration_s: 0.5,
            sample_rate: 5000.0,
            seed: 1,
            segment,
            operating: OperatingPoint::from_line_current(v_phase, 1000.0, 0.8, 0.5)
                .expect("valid default load"),
            events: Vec::new(),
            thermal: drake.thermal(),
            initial: InitialConditions {
                t_c: 40.0,
                t_a: 30.0,
                v_w: 1.0,
            },
            fire: FireSource {
                distance_m: 5.0,
                ignition_time_s: 0.0,
                active: true,
            },
            fire_calibration: None,
            measurement: MeasurementModel::default(),
            timing_fault: TimingFault::default(),
            detector: DetectorConfig::default(),
            latency: LatencyBudget::default(),
        }
    }
}

impl RunSpec {
    pub fn sample_count(&self) -> usize {
        (self.duration_s * self.sample_rate).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid("run spec", m));
        if !(self.duration_s > 0.0) {
            return bad("duration_s must be > 0".into());
        }
        if !(self.sample_rate > 0.0) {
            return bad("sample_rate must be > 0".into());
        }
        if (self.measurement.sample_rate - self.sample_rate).abs() > 1e-9 {
            return bad(format!(
                "measurement.sample_rate ({}) must equal sample_rate ({})",
                self.measurement.sample_rate, self.sample_rate
            ));
        }
        let dt = 1.0 / self.sample_rate;
        if dt > crate::thermal::MAX_STEP_S {
            return bad(format!(
                "sample period {dt} s exceeds the thermal step limit"
            ));
        }
        self.segment.validate()?;
        self.thermal.validate()?;
        self.measurement.validate()?;
        self.detector.validate()?;
        self.fire.validate()?;
        self.timing_fault.validate(self.duration_s)?;
        if let Some(cal) = &self.fire_calibration {
            cal.validate()?;
        }
        if !(0.0..=MAX_WIND_SPEED).contains(&self.initial.v_w) {
            return bad(format!(
                "initial.v_w {} outside [0, {MAX_WIND_SPEED}]",
                self.initial.v_w
            ));
        }
        let (lo, hi) = CONDUCTOR_TEMP_RANGE;
        if !(lo..=hi).contains(&self.initial.t_c) {
            return bad(format!(
                "initial.t_c {} outside [{lo}, {hi}]",
                self.initial.t_c
            ));
        }
        if !(self.operating.source_voltage.magnitude > 0.0) {
            return bad("operating.source_voltage magnitude must be > 0".into());
        }
        let warm = self.detector.warm_up_s(self.sample_rate);
        if self.duration_s < warm {
            return bad(format!(
                "duration {} s shorter than detector warm-up {warm:.4} s",
                self.duration_s
            ));
        }
        for e in &self.events {
            if !(e.time_s() >= 0.0 && e.time_s() <= self.duration_s) {
                return bad(format!("event at {} s outside the run window", e.time_s()));
            }
            if let ScheduledEvent::SeriesCompensation { fraction, .. } = e {
                if !(0.0..1.0).contains(fraction) {
                    return bad(format!("series compensation {fraction} outside [0, 1)"));
                }
            }
        }
        Ok(())
    }
}

/// One simulated sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRecord {
    pub t: f64,
    pub truth: ComplexState,
    pub measured: ComplexState,
    pub t_c: f64,
    pub t_a: f64,
    pub true_tan_delta: f64,
    pub detector: DetectorOutput,
}

/// Slope ratios from the last sample on which the detector was warm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalSlopes {
    /// Time of that sample; `None` if the detector never warmed up.
    pub at_s: Option<f64>,
    pub delta6: Option<f64>,
    pub delta4: Option<f64>,
    pub delta3: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub samples: usize,
    /// Set when the run stopped early; the reason is kept for the log.
    pub discarded: Option<String>,
    pub t_c_start: f64,
    pub t_c_end: f64,
    pub delta_tc: f64,
    /// Fire contribution to the ambient at the last sample, °C.
    pub delta_ta_end: f64,
    /// Receiving-end power at `t = 0`, per phase.
    pub initial_p_r_w: f64,
    pub initial_q_r_var: f64,
    pub trip: Option<TripDecision>,
    pub control1_time_s: Option<f64>,
    pub control2_time_s: Option<f64>,
    /// Trip time measured from ignition (or from the start if the fire predates it).
    pub detection_latency_s: Option<f64>,
    pub end_to_end_s: Option<f64>,
    pub within_latency_budget: Option<bool>,
    pub final_slopes: FinalSlopes,
    pub restarts: Vec<f64>,
    pub invalid_tan_delta_samples: u64,
}

impl RunSummary {
    pub fn initial_apparent_power(&self) -> f64 {
        self.initial_p_r_w.hypot(self.initial_q_r_var)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub records: Vec<SampleRecord>,
    pub summary: RunSummary,
}

/// Run a spec, handing every sample to `on_sample`.
pub fn run_with<F: FnMut(&SampleRecord)>(spec: &RunSpec, mut on_sample: F) -> Result<RunSummary> {
    spec.validate()?;
    let default_cal;
    let cal = match &spec.fire_calibration {
        Some(c) => c,
        None => {
            default_cal = FireCalibration::default();
            &default_cal
        }
    };
    let fire_factor = if spec.fire.active {
        Some(cal.factor(spec.fire.distance_m)?)
    } else {
        None
    };
    let fs = spec.sample_rate;
    let dt = 1.0 / fs;
    let n_samples = spec.sample_count();

    let mut rng = rng_from(spec.seed);
    let mut det = DetectorState::new(&spec.detector, fs)?;
    let mut injector: TimingInjector<(C64, C64)> = TimingInjector::new(spec.timing_fault, fs);
    let mut events = spec.events.clone();
    events.sort_by(|a, b| a.time_s().total_cmp(&b.time_s()));
    let mut next_event = 0;

    let seg = spec.segment;
    let mut op = spec.operating;
    let mut series_comp = 0.0;
    let model = &spec.measurement;
    let eps = spec.detector.denominator_eps;

    let mut state = ThermalState::lumped(spec.initial.t_c, spec.initial.t_a);
    let t_c_start = state.t_c;
    let mut prev_current = 0.0;
    let mut summary = RunSummary {
        samples: 0,
        discarded: None,
        t_c_start,
        t_c_end: t_c_start,
        delta_tc: 0.0,
        delta_ta_end: 0.0,
        initial_p_r_w: 0.0,
        initial_q_r_var: 0.0,
        trip: None,
        control1_time_s: None,
        control2_time_s: None,
        detection_latency_s: None,
        end_to_end_s: None,
        within_latency_budget: None,
        final_slopes: FinalSlopes {
            at_s: None,
            delta6: None,
            delta4: None,
            delta3: None,
        },
        restarts: Vec::new(),
        invalid_tan_delta_samples: 0,
    };
    let (t_lo, t_hi) = CONDUCTOR_TEMP_RANGE;

    for n in 0..n_samples {
        let t = n as f64 * dt;
        while next_event < events.len() && events[next_event].time_s() <= t + 1e-12 {
            match events[next_event] {
                ScheduledEvent::LoadStep { p_w, q_var, .. } => {
                    op.load_p_w = p_w;
                    op.load_q_var = q_var;
                }
                ScheduledEvent::ShuntCompensation { susceptance_s, .. } => {
                    op.shunt_compensation_s = susceptance_s;
                }
                ScheduledEvent::SeriesCompensation { fraction, .. } => series_comp = fraction,
            }
            next_event += 1;
        }

        // (1) ambient
        let delta_ta = match fire_factor {
            Some(f) if t > spec.fire.ignition_time_s => {
                f * cal.time_term(t - spec.fire.ignition_time_s)
            }
            _ => 0.0,
        };
        let weather = Weather {
            v_w: spec.initial.v_w,
            t_a: spec.initial.t_a + delta_ta,
        };
        // (2) conductor temperature, driven by the current of the previous sample
        if n > 0 {
            state = step_conductor_temp(state, &spec.thermal, &seg, prev_current, weather, dt);
        } else {
            state.t_a = weather.t_a;
        }
        if !(state.t_c >= t_lo && state.t_c <= t_hi) {
            summary.discarded = Some(format!(
                "conductor temperature {:.2} °C left the model range at t = {t:.4} s",
                state.t_c
            ));
            break;
        }
        // (3) resistance, (4) circuit
        let z = seg.impedance_at(state.t_c, series_comp);
        let truth = match solve_complex(z, seg.b_shunt_s, &op) {
            Ok(s) => s,
            Err(e) => {
                log::info!("run discarded at t = {t:.4} s: {e}");
                summary.discarded = Some(e.to_string());
                break;
            }
        };
        prev_current = truth.i_r.norm();
        if n == 0 {
            let pf = receiving_power(
                Phasor::from_complex(truth.v_r),
                Phasor::from_complex(truth.i_r),
            );
            summary.initial_p_r_w = pf.p_r;
            summary.initial_q_r_var = pf.q_r;
        }
        // (5) measurement, then synchronisation faults
        let mut s_side = (
            model.measure_voltage(truth.v_s, &mut rng),
            model.measure_current(truth.i_s, &mut rng),
        );
        let mut r_side = (
            model.measure_voltage(truth.v_r, &mut rng),
            model.measure_current(truth.i_r, &mut rng),
        );
        if injector.is_active() {
            match injector.side() {
                Side::Sending => s_side = injector.push(s_side),
                Side::Receiving => r_side = injector.push(r_side),
            }
        }
        let measured = ComplexState {
            v_s: s_side.0,
            i_s: s_side.1,
            v_r: r_side.0,
            i_r: r_side.1,
        };
        // (6) detector update, (7) controls
        let sample = tan_delta_complex(measured.v_s, measured.v_r, measured.i_r, eps);
        let out = det.update(t, sample);

        summary.samples = n + 1;
        summary.t_c_end = state.t_c;
        summary.delta_ta_end = delta_ta;
        on_sample(&SampleRecord {
            t,
            truth,
            measured,
            t_c: state.t_c,
            t_a: state.t_a,
            true_tan_delta: z.im / z.re,
            detector: out,
        });
        if out.delta6.is_some() {
            summary.final_slopes = FinalSlopes {
                at_s: Some(t),
                delta6: out.delta6,
                delta4: out.delta4,
                delta3: out.delta3,
            };
        }
    }

    summary.delta_tc = summary.t_c_end - t_c_start;
    summary.control1_time_s = det.control1_at;
    summary.control2_time_s = det.control2_at;
    summary.restarts = det.restarts().to_vec();
    summary.invalid_tan_delta_samples = det.invalid_samples();
    if let Some(trip) = det.trip() {
        let origin = if spec.fire.active {
            spec.fire.ignition_time_s.max(0.0)
        } else {
            0.0
        };
        let detection = (trip.time - origin).max(0.0);
        summary.detection_latency_s = Some(detection);
        summary.end_to_end_s = Some(spec.latency.end_to_end(detection));
        summary.within_latency_budget = Some(spec.latency.within(detection));
        summary.trip = Some(trip.clone());
    }
    Ok(summary)
}

pub fn run_summary(spec: &RunSpec) -> Result<RunSummary> {
    run_with(spec, |_| {})
}

pub fn run(spec: &RunSpec) -> Result<RunTrace> {
    let mut records = Vec::with_capacity(spec.sample_count());
    let summary = run_with(spec, |r| records.push(*r))?;
    Ok(RunTrace { records, summary })
}

/// One row of the trace export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub vs_mag: f64,
    pub vs_ang: f64,
    pub vr_mag: f64,
    pub vr_ang: f64,
    pub ir_mag: f64,
    pub ir_ang: f64,
    pub vs_mag_meas: f64,
    pub vs_ang_meas: f64,
    pub vr_mag_meas: f64,
    pub vr_ang_meas: f64,
    pub ir_mag_meas: f64,
    pub ir_ang_meas: f64,
    pub t_c: f64,
    pub t_a: f64,
    pub true_tan_delta: f64,
    pub tan_delta: f64,
    pub tan_delta_valid: bool,
    pub ma: Option<f64>,
    pub delta6: Option<f64>,
    pub delta4: Option<f64>,
    pub delta3: Option<f64>,
    pub control1: bool,
    pub control2: bool,
}

/// Per-sample trace: true and measured phasors (V, A, rad), temperatures (°C),
/// tan δ, the moving average, slope ratios and the rule states.
impl TraceRow {
    pub fn from_record(r: &SampleRecord) -> Self {
        let p = |c: C64| Phasor::from_complex(c);
        let (vs, vr, ir) = (p(r.truth.v_s), p(r.truth.v_r), p(r.truth.i_r));
        let (mvs, mvr, mir) = (p(r.measured.v_s), p(r.measured.v_r), p(r.measured.i_r));
        let d = &r.detector;
        TraceRow {
            t: r.t,
            vs_mag: vs.magnitude,
            vs_ang: vs.angle,
            vr_mag: vr.magnitude,
            vr_ang: vr.angle,
            ir_mag: ir.magnitude,
            ir_ang: ir.angle,
            vs_mag_meas: mvs.magnitude,
            vs_ang_meas: mvs.angle,
            vr_mag_meas: mvr.magnitude,
            vr_ang_meas: mvr.angle,
            ir_mag_meas: mir.magnitude,
            ir_ang_meas: mir.angle,
            t_c: r.t_c,
            t_a: r.t_a,
            true_tan_delta: r.true_tan_delta,
            tan_delta: d.tan_delta,
            tan_delta_valid: d.valid,
            ma: d.ma,
            delta6: d.delta6,
            delta4: d.delta4,
            delta3: d.delta3,
            control1: d.control1,
            control2: d.control2,
        }
    }
}

pub fn write_trace_csv<W: Write>(w: W, records: &[SampleRecord]) -> Result<()> {
    let mut w = w;
    write_schema_line(&mut w, "trace", 1)?;
    let mut wtr = csv_writer(w);
    for r in records {
        wtr.serialize(TraceRow::from_record(r))?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(r: R) -> Result<Vec<TraceRow>> {
    let mut rdr = csv_reader(r);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(mut spec: RunSpec) -> RunSpec {
        spec.measurement = MeasurementModel::ideal();
        spec
    }

    #[test]
    fn default_spec_is_valid_and_round_trips() {
        let spec = RunSpec::default();
        spec.validate().unwrap();
        let text = toml::to_string(&spec).unwrap();
        let back: RunSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn record_count_matches_duration() {
        let trace = run(&quiet(RunSpec::default())).unwrap();
        assert_eq!(trace.records.len(), 2500);
        assert!(trace.records.windows(2).all(|w| w[1].t > w[0].t));
    }

    #[test]
    fn noiseless_tan_delta_tracks_resistance() {
        let trace = run(&quiet(RunSpec::default())).unwrap();
        for r in &trace.records {
            let rel = (r.detector.tan_delta - r.true_tan_delta).abs() / r.true_tan_delta;
            assert!(rel < 1e-9, "t = {}: {rel}", r.t);
        }
    }

    #[test]
    fn unknown_field_is_named() {
        let mut text = toml::to_string(&RunSpec::default()).unwrap();
        text = text.replace("duration_s", "duraton_s");
        let err = toml::from_str::<RunSpec>(&text).unwrap_err().to_string();
        assert!(err.contains("duraton_s"), "{err}");
    }

    #[test]
    fn overload_run_is_discarded() {
        let mut spec = quiet(RunSpec::default());
        spec.operating.load_p_w *= 200.0;
        let s = run_summary(&spec).unwrap();
        assert!(s.discarded.is_some());
        assert_eq!(s.samples, 0);
    }

    #[test]
    fn same_seed_same_summary() {
        let spec = RunSpec::default();
        assert_eq!(run_summary(&spec).unwrap(), run_summary(&spec).unwrap());
    }
}
