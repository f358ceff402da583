//! tan δ estimation from two-terminal phasors and the moving-average slope trip logic.
//!
//! tan δ is sampled every PMU report, averaged over a fixed window, and the
//! average `k` cycles back is compared with the average one cycle back:
//!
//! `Δ(k) = ma(t − kT) / ma(t − T)`
//!
//! A rising resistance lowers tan δ, so `Δ(k) > 1` points at heating.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{csv_writer, write_schema_line};
use crate::phasor::{receiving_power, Phasor, C64};

pub const DEFAULT_CYCLE_PERIOD: f64 = 1.0 / 60.0;
pub const DEFAULT_DENOMINATOR_EPS: f64 = 1e-12;
/// Lags used by the two trip rules.
pub const RULE_LAGS: [u32; 3] = [6, 4, 3];
pub const K_RANGE: (u32, u32) = (2, 12);

/// tan δ from the sending voltage and the receiving voltage and current.
///
/// Returns `None` when the normalised denominator falls below `eps`, which
/// happens for a near purely reactive reading.
pub fn tan_delta_sample(v_s: Phasor, v_r: Phasor, i_r: Phasor, eps: f64) -> Option<f64> {
    let theta = v_s.angle - v_r.angle;
    let pf = receiving_power(v_r, i_r);
    let (p, q) = (pf.p_r, pf.q_r);
    let (vs, vr) = (v_s.magnitude, v_r.magnitude);
    let (sin, cos) = theta.sin_cos();
    let num = p * vs * sin + q * vs * cos - q * vr;
    let den = p * vs * cos - q * vs * sin - p * vr;
    let scale = pf.apparent() * vs;
    if !(scale > 0.0) || !((den / scale).abs() >= eps) {
        return None;
    }
    Some(num / den)
}

/// Same quantity as [`tan_delta_sample`] evaluated on complex phasors.
///
/// Multiplying the two lines of the polar form by `|v_r|` collapses them to
/// `conj(i_r)·(v_s − v_r)`, which avoids every trigonometric call.
#[inline]
pub fn tan_delta_complex(v_s: C64, v_r: C64, i_r: C64, eps: f64) -> Option<f64> {
    let w = i_r.conj() * (v_s - v_r);
    let scale2 = i_r.norm_sqr() * v_s.norm_sqr();
    if !(scale2 > 0.0) || !(w.re * w.re >= eps * eps * scale2) {
        return None;
    }
    Some(w.im / w.re)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Control {
    /// `Δ(6) > 1 ∧ (Δ(4) > 1 ∨ Δ(3) > 1)`
    Control1,
    /// `Δ(6) > 1`
    Control2,
}

impl Control {
    pub fn name(self) -> &'static str {
        match self {
            Control::Control1 => "control1",
            Control::Control2 => "control2",
        }
    }
}

/// How the averages entering `Δ(k)` are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AverageMode {
    /// Fixed-length window evaluated at lagged times.
    #[default]
    Lagged,
    /// Both averages end now; the numerator spans `k` cycles, the denominator one.
    Trailing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    /// Electrical cycle `T`, s.
    pub cycle_period_s: f64,
    pub ma_window_cycles: f64,
    pub k_set: Vec<u32>,
    pub control: Control,
    /// Relative change between consecutive window averages that restarts the slope
    /// history. `None` disables step detection.
    pub step_change_threshold: Option<f64>,
    pub denominator_eps: f64,
    /// `ma(t − T)` at or below this is treated as unusable for a ratio.
    pub ratio_eps: f64,
    pub average_mode: AverageMode,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            cycle_period_s: DEFAULT_CYCLE_PERIOD,
            ma_window_cycles: 1.0,
            k_set: vec![3, 4, 6],
            control: Control::Control1,
            step_change_threshold: Some(0.05),
            denominator_eps: DEFAULT_DENOMINATOR_EPS,
            ratio_eps: DEFAULT_DENOMINATOR_EPS,
            average_mode: AverageMode::Lagged,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid("detector config", m));
        if !(self.cycle_period_s > 0.0) {
            return bad("cycle_period_s must be > 0".into());
        }
        if !(self.ma_window_cycles >= 1.0) {
            return bad(format!(
                "ma_window_cycles must be >= 1, got {}",
                self.ma_window_cycles
            ));
        }
        for &k in &self.k_set {
            if !(K_RANGE.0..=K_RANGE.1).contains(&k) {
                return bad(format!("k = {k} outside [{}, {}]", K_RANGE.0, K_RANGE.1));
            }
        }
        for k in RULE_LAGS {
            if !self.k_set.contains(&k) {
                return bad(format!("k_set must contain {k} for the trip rules"));
            }
        }
        if let Some(th) = self.step_change_threshold {
            if !(th > 0.0) {
                return bad("step_change_threshold must be > 0".into());
            }
        }
        if !(self.denominator_eps >= 0.0 && self.ratio_eps >= 0.0) {
            return bad("epsilons must be >= 0".into());
        }
        Ok(())
    }

    fn samples(&self, cycles: f64, sample_rate: f64) -> usize {
        ((cycles * self.cycle_period_s * sample_rate).round() as usize).max(1)
    }

    pub fn window_samples(&self, sample_rate: f64) -> usize {
        self.samples(self.ma_window_cycles, sample_rate)
    }

    pub fn lag_samples(&self, k: u32, sample_rate: f64) -> usize {
        self.samples(k as f64, sample_rate)
    }

    fn max_k(&self) -> u32 {
        self.k_set.iter().copied().max().unwrap_or(6)
    }

    /// Samples after a (re)start before the controls are evaluated.
    pub fn warm_up_samples(&self, sample_rate: f64) -> usize {
        let span = match self.average_mode {
            AverageMode::Lagged => {
                self.lag_samples(self.max_k(), sample_rate) + self.window_samples(sample_rate)
            }
            AverageMode::Trailing => self.lag_samples(self.max_k(), sample_rate),
        };
        span
    }

    pub fn warm_up_s(&self, sample_rate: f64) -> f64 {
        self.warm_up_samples(sample_rate) as f64 / sample_rate
    }
}

/// Evaluate both rules on a set of slope ratios.
pub fn rule_holds(control: Control, d6: f64, d4: f64, d3: f64) -> bool {
    match control {
        Control::Control1 => d6 > 1.0 && (d4 > 1.0 || d3 > 1.0),
        Control::Control2 => d6 > 1.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripDecision {
    pub tripped: bool,
    pub time: f64,
    pub rule_fired: Control,
    pub slope_values: BTreeMap<u32, f64>,
}

/// Reporting and communication delays added on top of detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatencyBudget {
    pub reporting_s: f64,
    pub communication_s: f64,
    /// End-to-end limit the total is checked against.
    pub limit_s: f64,
}

impl Default for LatencyBudget {
    fn default() -> Self {
        LatencyBudget {
            reporting_s: 0.2,
            communication_s: 0.035,
            limit_s: 0.5,
        }
    }
}

impl LatencyBudget {
    pub fn end_to_end(&self, detection_s: f64) -> f64 {
        detection_s + self.reporting_s + self.communication_s
    }

    pub fn within(&self, detection_s: f64) -> bool {
        self.end_to_end(detection_s) <= self.limit_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Raw {
    t: f64,
    value: f64,
    valid: bool,
}

/// What the detector produced for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DetectorOutput {
    /// tan δ as reported; an invalid sample repeats the last valid value.
    pub tan_delta: f64,
    pub valid: bool,
    pub ma: Option<f64>,
    pub delta6: Option<f64>,
    pub delta4: Option<f64>,
    pub delta3: Option<f64>,
    pub control1: bool,
    pub control2: bool,
    /// A step change was detected on this sample and the history restarted.
    pub restarted: bool,
}

/// Streaming detector for one monitored segment.
#[derive(Debug, Clone)]
pub struct DetectorState {
    cfg: DetectorConfig,
    window: usize,
    lag1: usize,
    lags: Vec<(u32, usize)>,
    lag6: usize,
    lag4: usize,
    lag3: usize,
    warm_up: usize,
    raw: VecDeque<Raw>,
    raw_cap: usize,
    /// Most recent first: `ma_hist[j]` is the average ending `j` samples ago.
    ma_hist: VecDeque<Option<f64>>,
    ma_cap: usize,
    /// Running sum and count of the valid samples in `raw` (lagged mode).
    win_sum: f64,
    win_valid: usize,
    since_resum: usize,
    since_restart: usize,
    last_valid: Option<f64>,
    pub armed_since: f64,
    pub control1_at: Option<f64>,
    pub control2_at: Option<f64>,
    trip: Option<TripDecision>,
    slopes: Vec<Option<f64>>,
    restarts: Vec<f64>,
    invalid_count: u64,
}

impl DetectorState {
    pub fn new(cfg: &DetectorConfig, sample_rate: f64) -> Result<Self> {
        cfg.validate()?;
        if !(sample_rate > 0.0) {
            return Err(Error::invalid("detector", "sample_rate must be > 0"));
        }
        let window = cfg.window_samples(sample_rate);
        let lags: Vec<(u32, usize)> = cfg
            .k_set
            .iter()
            .map(|&k| (k, cfg.lag_samples(k, sample_rate)))
            .collect();
        let lag_of = |k| cfg.lag_samples(k, sample_rate);
        let max_lag = lags.iter().map(|l| l.1).max().unwrap_or(0);
        let raw_cap = match cfg.average_mode {
            AverageMode::Lagged => window,
            AverageMode::Trailing => max_lag,
        };
        Ok(DetectorState {
            window,
            lag1: lag_of(1),
            lag6: lag_of(6),
            lag4: lag_of(4),
            lag3: lag_of(3),
            warm_up: cfg.warm_up_samples(sample_rate),
            raw: VecDeque::with_capacity(raw_cap + 1),
            raw_cap,
            ma_hist: VecDeque::with_capacity(max_lag + 2),
            ma_cap: max_lag + 1,
            win_sum: 0.0,
            win_valid: 0,
            since_resum: 0,
            since_restart: 0,
            last_valid: None,
            armed_since: 0.0,
            control1_at: None,
            control2_at: None,
            trip: None,
            slopes: vec![None; lags.len()],
            lags,
            restarts: Vec::new(),
            invalid_count: 0,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    pub fn trip(&self) -> Option<&TripDecision> {
        self.trip.as_ref()
    }

    /// Times at which the slope history was restarted.
    pub fn restarts(&self) -> &[f64] {
        &self.restarts
    }

    pub fn invalid_samples(&self) -> u64 {
        self.invalid_count
    }

    /// Slope ratios for every configured `k`, in `k_set` order, from the last sample.
    pub fn slope_values(&self) -> impl Iterator<Item = (u32, Option<f64>)> + '_ {
        self.lags
            .iter()
            .map(|l| l.0)
            .zip(self.slopes.iter().copied())
    }

    pub fn is_warm(&self) -> bool {
        self.since_restart >= self.warm_up
    }

    /// Moving average ending `lag` samples ago.
    pub fn ma_at_lag(&self, lag: usize) -> Option<f64> {
        self.ma_hist.get(lag).copied().flatten()
    }

    /// `ma(t − kT) / ma(t − T)` for the sample just processed.
    pub fn slope_ratio(&self, k: u32) -> Option<f64> {
        let lag = self.lags.iter().find(|l| l.0 == k)?.1;
        self.ratio_for_lag(lag)
    }

    fn ratio_for_lag(&self, lag: usize) -> Option<f64> {
        match self.cfg.average_mode {
            AverageMode::Lagged => {
                let num = self.ma_at_lag(lag)?;
                let den = self.ma_at_lag(self.lag1)?;
                if den <= self.cfg.ratio_eps {
                    log::trace!("slope ratio skipped, ma(t - T) = {den:.3e}");
                    return None;
                }
                Some(num / den)
            }
            AverageMode::Trailing => {
                let num = self.trailing_mean(lag)?;
                let den = self.trailing_mean(self.lag1)?;
                if den <= self.cfg.ratio_eps {
                    return None;
                }
                Some(num / den)
            }
        }
    }

    fn trailing_mean(&self, span: usize) -> Option<f64> {
        if self.raw.len() < span {
            return None;
        }
        mean_valid(self.raw.iter().rev().take(span))
    }

    /// Forget the slope history; ratios recompute from samples after `t`.
    pub fn restart(&mut self, t: f64) {
        self.raw.clear();
        self.ma_hist.clear();
        self.win_sum = 0.0;
        self.win_valid = 0;
        self.since_resum = 0;
        self.since_restart = 0;
        self.armed_since = t;
        self.slopes.iter_mut().for_each(|s| *s = None);
        self.restarts.push(t);
    }

    /// Process one tan δ sample (`None` for an invalid one) at time `t`.
    pub fn update(&mut self, t: f64, sample: Option<f64>) -> DetectorOutput {
        let valid = sample.is_some();
        let value = match sample {
            Some(v) => {
                self.last_valid = Some(v);
                v
            }
            None => {
                self.invalid_count += 1;
                if self.invalid_count == 1 {
                    log::debug!("invalid tan δ sample at t = {t:.6} s, holding previous value");
                }
                self.last_valid.unwrap_or(f64::NAN)
            }
        };
        self.push(Raw { t, value, valid });

        let mut restarted = false;
        if let Some(th) = self.cfg.step_change_threshold {
            if self.cfg.average_mode == AverageMode::Lagged {
                if let (Some(now), Some(before)) = (self.ma_at_lag(0), self.ma_at_lag(self.window))
                {
                    if (now - before).abs() > th * before.abs() {
                        self.restart_at_step();
                        restarted = true;
                    }
                }
            }
        }

        let mut out = DetectorOutput {
            tan_delta: value,
            valid,
            ma: self.ma_at_lag(0),
            restarted,
            ..Default::default()
        };
        if !self.is_warm() {
            return out;
        }
        for j in 0..self.lags.len() {
            self.slopes[j] = self.ratio_for_lag(self.lags[j].1);
        }
        let d6 = self.ratio_for_lag(self.lag6);
        let d4 = self.ratio_for_lag(self.lag4);
        let d3 = self.ratio_for_lag(self.lag3);
        out.delta6 = d6;
        out.delta4 = d4;
        out.delta3 = d3;
        if let Some(d6) = d6 {
            let d4 = d4.unwrap_or(f64::NAN);
            let d3 = d3.unwrap_or(f64::NAN);
            out.control1 = rule_holds(Control::Control1, d6, d4, d3);
            out.control2 = rule_holds(Control::Control2, d6, d4, d3);
        }
        if out.control1 && self.control1_at.is_none() {
            self.control1_at = Some(t);
        }
        if out.control2 && self.control2_at.is_none() {
            self.control2_at = Some(t);
        }
        let fired = match self.cfg.control {
            Control::Control1 => out.control1,
            Control::Control2 => out.control2,
        };
        if fired && self.trip.is_none() {
            self.trip = Some(TripDecision {
                tripped: true,
                time: t,
                rule_fired: self.cfg.control,
                slope_values: self
                    .slope_values()
                    .filter_map(|(k, v)| v.map(|v| (k, v)))
                    .collect(),
            });
        }
        out
    }

    fn push(&mut self, r: Raw) {
        self.raw.push_back(r);
        let dropped = if self.raw.len() > self.raw_cap {
            self.raw.pop_front()
        } else {
            None
        };
        self.since_restart += 1;
        if self.cfg.average_mode == AverageMode::Lagged {
            if r.valid {
                self.win_sum += r.value;
                self.win_valid += 1;
            }
            if let Some(d) = dropped.filter(|d| d.valid) {
                self.win_sum -= d.value;
                self.win_valid -= 1;
            }
            // Re-add from scratch once per window so rounding cannot accumulate.
            self.since_resum += 1;
            if self.since_resum >= self.window {
                self.since_resum = 0;
                self.win_sum = self.raw.iter().filter(|x| x.valid).map(|x| x.value).sum();
            }
            let ma = if self.raw.len() == self.window && self.win_valid > 0 {
                Some(self.win_sum / self.win_valid as f64)
            } else {
                None
            };
            self.ma_hist.push_front(ma);
            if self.ma_hist.len() > self.ma_cap {
                self.ma_hist.pop_back();
            }
        }
    }

    /// Restart from the largest sample-to-sample jump inside the current window,
    /// keeping the samples from that point on.
    fn restart_at_step(&mut self) {
        let raw: Vec<Raw> = self.raw.iter().copied().collect();
        let mut onset = raw.len() - 1;
        let mut best = -1.0;
        for i in 1..raw.len() {
            if raw[i].valid && raw[i - 1].valid {
                let jump = (raw[i].value - raw[i - 1].value).abs();
                if jump > best {
                    best = jump;
                    onset = i;
                }
            }
        }
        let t_onset = raw[onset].t;
        log::debug!("step change in tan δ near t = {t_onset:.6} s, restarting slope history");
        self.restart(t_onset);
        for r in &raw[onset..] {
            self.push(*r);
        }
    }
}

fn mean_valid<'a>(it: impl Iterator<Item = &'a Raw>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for r in it {
        if r.valid {
            sum += r.value;
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// One row of the detector time-series export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorRow {
    pub t: f64,
    pub tan_delta: f64,
    pub ma: Option<f64>,
    pub delta6: Option<f64>,
    pub delta4: Option<f64>,
    pub delta3: Option<f64>,
    pub control1: bool,
    pub control2: bool,
}

impl DetectorRow {
    pub fn new(t: f64, o: &DetectorOutput) -> Self {
        DetectorRow {
            t,
            tan_delta: o.tan_delta,
            ma: o.ma,
            delta6: o.delta6,
            delta4: o.delta4,
            delta3: o.delta3,
            control1: o.control1,
            control2: o.control2,
        }
    }
}

/// CSV with columns `t, tan_delta, ma, delta6, delta4, delta3, control1, control2`.
/// Undefined averages and ratios are empty fields.
pub fn write_detector_csv<W: Write>(w: W, rows: &[DetectorRow]) -> Result<()> {
    let mut w = w;
    write_schema_line(&mut w, "detector-series", 1)?;
    let mut wtr = csv_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_detector_csv<R: std::io::Read>(r: R) -> Result<Vec<DetectorRow>> {
    let mut rdr = crate::io::csv_reader(r);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}
