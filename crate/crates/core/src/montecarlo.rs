//! Scenario grid, seeded batches of runs, outcome labelling and confusion matrices.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{Control, DetectorConfig, LatencyBudget};
use crate::error::{Error, Result};
use crate::io::{csv_writer, write_schema_line};
use crate::measurement::{ErrorDistribution, MeasurementModel, TimingFault, DEFAULT_ANGLE_ERR_DEG};
use crate::phasor::{LineSegment, OperatingPoint, XR_RATIO_RANGE};
use crate::rng::{derive, rng_from, SimRng};
use crate::sim::{run_summary, InitialConditions, RunSpec, RunSummary};
use crate::thermal::{
    static_ampacity, Catalogue, ConductorEntry, FireCalibration, FireSource, RatingConditions,
};

pub const DIMENSIONS: usize = 9;
pub const DIM_NAMES: [&str; DIMENSIONS] = [
    "delta_ta",
    "t_a",
    "v_w",
    "t_s",
    "length_km",
    "current_a",
    "pf_correction",
    "v_err",
    "i_err",
];
/// Outer limits of each dimension.
pub const DIM_LIMITS: [(f64, f64); DIMENSIONS] = [
    (0.0, 225.5),
    (10.0, 40.0),
    (0.0, 6.5),
    (10.0, 100.0),
    (0.0, 20.0),
    (0.0, 1600.0),
    (0.0, 1.0),
    (0.0, 0.003),
    (0.0, 0.006),
];
/// Shortest segment drawn when a length interval starts at zero.
pub const MIN_LENGTH_KM: f64 = 0.01;

const STRATUM_TAG: u64 = 0x5354_5241_5455_4D00;
const LHS_TAG: u64 = 0x4C48_5300_0000_0000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimRange {
    pub lo: f64,
    pub hi: f64,
    /// Overrides `intervals_per_dim` for this dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervals: Option<usize>,
}

impl DimRange {
    const fn new(lo: f64, hi: f64) -> Self {
        DimRange {
            lo,
            hi,
            intervals: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioGrid {
    pub intervals_per_dim: usize,
    pub delta_ta: DimRange,
    pub t_a: DimRange,
    pub v_w: DimRange,
    pub t_s: DimRange,
    pub length_km: DimRange,
    pub current_a: DimRange,
    pub pf_correction: DimRange,
    pub v_err: DimRange,
    pub i_err: DimRange,
}

impl Default for ScenarioGrid {
    fn default() -> Self {
        let r = |i: usize| DimRange::new(DIM_LIMITS[i].0, DIM_LIMITS[i].1);
        ScenarioGrid {
            intervals_per_dim: 5,
            delta_ta: r(0),
            t_a: r(1),
            v_w: r(2),
            t_s: r(3),
            length_km: r(4),
            current_a: r(5),
            pf_correction: r(6),
            v_err: r(7),
            i_err: r(8),
        }
    }
}

impl ScenarioGrid {
    pub fn uniform(intervals_per_dim: usize) -> Self {
        ScenarioGrid {
            intervals_per_dim,
            ..Default::default()
        }
    }

    pub fn ranges(&self) -> [DimRange; DIMENSIONS] {
        [
            self.delta_ta,
            self.t_a,
            self.v_w,
            self.t_s,
            self.length_km,
            self.current_a,
            self.pf_correction,
            self.v_err,
            self.i_err,
        ]
    }

    pub fn intervals(&self) -> [usize; DIMENSIONS] {
        self.ranges()
            .map(|r| r.intervals.unwrap_or(self.intervals_per_dim))
    }

    pub fn cell_count(&self) -> u64 {
        self.intervals().iter().map(|&n| n as u64).product()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid("scenario grid", m));
        for (i, r) in self.ranges().iter().enumerate() {
            let (lo, hi) = DIM_LIMITS[i];
            let name = DIM_NAMES[i];
            if !(r.lo >= lo && r.hi <= hi && r.lo <= r.hi) {
                return bad(format!(
                    "{name} range [{}, {}] must lie within [{lo}, {hi}] with lo <= hi",
                    r.lo, r.hi
                ));
            }
            let n = r.intervals.unwrap_or(self.intervals_per_dim);
            if n == 0 || n > u16::MAX as usize {
                return bad(format!("{name}: interval count {n} out of range"));
            }
        }
        if self.length_km.hi <= 0.0 {
            return bad("length_km range must extend above 0".into());
        }
        Ok(())
    }

    /// Bounds of interval `idx` of dimension `dim`.
    pub fn interval(&self, dim: usize, idx: usize) -> (f64, f64) {
        let r = self.ranges()[dim];
        let n = r.intervals.unwrap_or(self.intervals_per_dim) as f64;
        let w = (r.hi - r.lo) / n;
        let lo = r.lo + w * idx as f64;
        let hi = if idx as f64 + 1.0 >= n { r.hi } else { lo + w };
        (lo, hi)
    }

    /// Mixed-radix decode; the first dimension is the most significant digit.
    pub fn decode(&self, mut linear: u64) -> [u16; DIMENSIONS] {
        let n = self.intervals();
        let mut out = [0u16; DIMENSIONS];
        for d in (0..DIMENSIONS).rev() {
            out[d] = (linear % n[d] as u64) as u16;
            linear /= n[d] as u64;
        }
        out
    }

    pub fn encode(&self, idx: &[u16; DIMENSIONS]) -> u64 {
        let n = self.intervals();
        idx.iter()
            .zip(n)
            .fold(0u64, |acc, (&i, n)| acc * n as u64 + i as u64)
    }
}

/// How cells are chosen from the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Subsample {
    Full,
    /// `n` cells spread equally over the ΔT_a intervals, drawn without replacement.
    Stratified(usize),
    /// `n` cells with every interval of every dimension used equally often.
    Lhs(usize),
}

impl fmt::Display for Subsample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subsample::Full => write!(f, "full"),
            Subsample::Stratified(n) => write!(f, "stratified:{n}"),
            Subsample::Lhs(n) => write!(f, "lhs:{n}"),
        }
    }
}

impl FromStr for Subsample {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::invalid(
                "subsample",
                format!("'{s}' is not one of full, stratified:N, lhs:N"),
            )
        };
        if s == "full" {
            return Ok(Subsample::Full);
        }
        let (kind, n) = s.split_once(':').ok_or_else(bad)?;
        let n: usize = n.parse().map_err(|_| bad())?;
        if n == 0 {
            return Err(bad());
        }
        match kind {
            "stratified" => Ok(Subsample::Stratified(n)),
            "lhs" => Ok(Subsample::Lhs(n)),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for Subsample {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Subsample> for String {
    fn from(s: Subsample) -> String {
        s.to_string()
    }
}

/// One grid cell selected for simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioCell {
    /// Position within the generated plan.
    pub ordinal: usize,
    /// Mixed-radix index into the full grid.
    pub linear_index: u64,
    pub intervals: [u16; DIMENSIONS],
    pub seed: u64,
}

/// The list of cells a sweep visits, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub enum CellPlan {
    Full { count: u64 },
    Listed(Vec<u64>),
    Lhs(Vec<[u16; DIMENSIONS]>),
}

impl CellPlan {
    pub fn len(&self) -> usize {
        match self {
            CellPlan::Full { count } => *count as usize,
            CellPlan::Listed(v) => v.len(),
            CellPlan::Lhs(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell(&self, grid: &ScenarioGrid, seed: u64, ordinal: usize) -> ScenarioCell {
        match self {
            CellPlan::Full { .. } => {
                let linear = ordinal as u64;
                ScenarioCell {
                    ordinal,
                    linear_index: linear,
                    intervals: grid.decode(linear),
                    seed: derive(seed, linear),
                }
            }
            CellPlan::Listed(v) => {
                let linear = v[ordinal];
                ScenarioCell {
                    ordinal,
                    linear_index: linear,
                    intervals: grid.decode(linear),
                    seed: derive(seed, linear),
                }
            }
            CellPlan::Lhs(v) => ScenarioCell {
                ordinal,
                linear_index: grid.encode(&v[ordinal]),
                intervals: v[ordinal],
                seed: derive(derive(seed, LHS_TAG), ordinal as u64),
            },
        }
    }

    pub fn iter<'a>(
        &'a self,
        grid: &'a ScenarioGrid,
        seed: u64,
    ) -> impl Iterator<Item = ScenarioCell> + 'a {
        (0..self.len()).map(move |i| self.cell(grid, seed, i))
    }
}

/// Choose the cells of a sweep. Deterministic in `(grid, strategy, seed)`.
pub fn generate_cells(grid: &ScenarioGrid, subsample: Subsample, seed: u64) -> Result<CellPlan> {
    grid.validate()?;
    let total = grid.cell_count();
    match subsample {
        Subsample::Full => Ok(CellPlan::Full { count: total }),
        Subsample::Stratified(n) => {
            if n as u64 >= total {
                return Ok(CellPlan::Full { count: total });
            }
            let strata = grid.intervals()[0] as u64;
            let per_stratum = total / strata;
            let mut chosen = Vec::with_capacity(n);
            for s in 0..strata {
                let want = (n as u64 / strata + u64::from(s < n as u64 % strata)).min(per_stratum);
                let mut rng = rng_from(derive(seed ^ STRATUM_TAG, s));
                let picks = floyd_sample(&mut rng, per_stratum, want);
                chosen.extend(picks.into_iter().map(|j| s * per_stratum + j));
            }
            chosen.sort_unstable();
            Ok(CellPlan::Listed(chosen))
        }
        Subsample::Lhs(n) => {
            let counts = grid.intervals();
            let mut cols: Vec<Vec<u16>> = Vec::with_capacity(DIMENSIONS);
            for (d, &k) in counts.iter().enumerate() {
                let mut rng = rng_from(derive(seed ^ LHS_TAG, d as u64));
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut rng);
                cols.push(perm.into_iter().map(|p| (p * k / n) as u16).collect());
            }
            let cells = (0..n)
                .map(|j| std::array::from_fn(|d| cols[d][j]))
                .collect();
            Ok(CellPlan::Lhs(cells))
        }
    }
}

/// `k` distinct values from `0..m` (Floyd's algorithm).
fn floyd_sample(rng: &mut SimRng, m: u64, k: u64) -> BTreeSet<u64> {
    let mut set = BTreeSet::new();
    for j in (m - k)..m {
        let t = rng.gen_range(0..=j);
        if !set.insert(t) {
            set.insert(j);
        }
    }
    set
}

/// Threshold values of the conditions reported alongside the confusion matrices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConditionThresholds {
    pub delta_tc_min: f64,
    pub a_delta_ta_min: f64,
    pub b_v_w_max: f64,
    pub b_loading_min: f64,
    pub c_t_s_max: f64,
    pub c_loading_min: f64,
    pub c_delta_ta_min: f64,
    /// Voltage error ceiling of the second control's reference row, pu.
    pub control2_v_err_max: f64,
}

impl Default for ConditionThresholds {
    fn default() -> Self {
        ConditionThresholds {
            delta_tc_min: 2.87,
            a_delta_ta_min: 76.0,
            b_v_w_max: 1.35,
            b_loading_min: 0.9,
            c_t_s_max: 57.0,
            c_loading_min: 0.5,
            c_delta_ta_min: 46.0,
            control2_v_err_max: 0.00003,
        }
    }
}

/// Fixed parts of every simulated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSettings {
    pub conductor: String,
    /// Optional catalogue file; the built-in catalogue is used otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub catalogue: Option<PathBuf>,
    /// Line-to-line, kV.
    pub line_voltage_kv: f64,
    /// Power factor of the load before any capacitor-bank correction.
    pub native_pf: f64,
    pub xr_ratio: (f64, f64),
    pub b_shunt_s_per_km: f64,
    /// Share of tests in the lowest ΔT_a interval that have no fire at all.
    pub no_fire_probability: f64,
    /// Range from which the fire's burning time at the end of the run is drawn, s.
    pub fire_heating_time_s: (f64, f64),
    pub tve_max: f64,
    pub angle_err_deg: f64,
    pub nominal_current: f64,
    pub distribution: ErrorDistribution,
    /// When true every test of a cell reuses the parameters of test 0 and only
    /// the measurement noise differs.
    pub fixed_parameters_per_cell: bool,
    pub duration_s: f64,
    pub sample_rate: f64,
    pub detector: DetectorConfig,
    pub rating: RatingConditions,
    pub latency: LatencyBudget,
    pub conditions: ConditionThresholds,
}

impl Default for ScenarioSettings {
    fn default() -> Self {
        ScenarioSettings {
            conductor: "drake".into(),
            catalogue: None,
            line_voltage_kv: 138.0,
            native_pf: 0.8,
            xr_ratio: XR_RATIO_RANGE,
            b_shunt_s_per_km: 0.0,
            no_fire_probability: 0.5,
            fire_heating_time_s: (10.0, 100.0),
            tve_max: 0.01,
            angle_err_deg: DEFAULT_ANGLE_ERR_DEG,
            nominal_current: 2100.0,
            distribution: ErrorDistribution::Uniform,
            fixed_parameters_per_cell: false,
            duration_s: 0.5,
            sample_rate: 5000.0,
            detector: DetectorConfig::default(),
            rating: RatingConditions::default(),
            latency: LatencyBudget::default(),
            conditions: ConditionThresholds::default(),
        }
    }
}

impl ScenarioSettings {
    pub fn v_phase(&self) -> f64 {
        self.line_voltage_kv * 1e3 / 3f64.sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid("scenario settings", m));
        let (lo, hi) = self.xr_ratio;
        if !(lo >= XR_RATIO_RANGE.0 && hi <= XR_RATIO_RANGE.1 && lo <= hi) {
            return bad(format!("xr_ratio ({lo}, {hi}) outside {XR_RATIO_RANGE:?}"));
        }
        if !(0.0..=1.0).contains(&self.no_fire_probability) {
            return bad("no_fire_probability must lie in [0, 1]".into());
        }
        let (a, b) = self.fire_heating_time_s;
        if !(a > 0.0 && a <= b) {
            return bad("fire_heating_time_s must be positive and ordered".into());
        }
        if !(self.line_voltage_kv > 0.0) {
            return bad("line_voltage_kv must be > 0".into());
        }
        if !(self.native_pf > 0.0 && self.native_pf <= 1.0) {
            return bad("native_pf must lie in (0, 1]".into());
        }
        if !(self.b_shunt_s_per_km >= 0.0) {
            return bad("b_shunt_s_per_km must be >= 0".into());
        }
        self.detector.validate()?;
        self.measurement_template(0.0, 0.0).validate()
    }

    fn measurement_template(&self, v_err: f64, i_err: f64) -> MeasurementModel {
        MeasurementModel {
            v_mag_err_max: v_err,
            i_mag_err_max_high: 0.5 * i_err,
            i_mag_err_max_low: i_err,
            tve_max: self.tve_max,
            angle_err_max: self.angle_err_deg.to_radians(),
            sample_rate: self.sample_rate,
            nominal_current: self.nominal_current,
            distribution: self.distribution,
            ..Default::default()
        }
    }
}

/// A sweep: grid, cell selection, tests per cell and the fixed scenario settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub seed: u64,
    pub tests_per_cell: usize,
    pub subsample: Subsample,
    pub grid: ScenarioGrid,
    pub scenario: ScenarioSettings,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            seed: 1,
            tests_per_cell: 50,
            subsample: Subsample::Stratified(19_683),
            grid: ScenarioGrid::default(),
            scenario: ScenarioSettings::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tests_per_cell == 0 {
            return Err(Error::invalid(
                "sweep config",
                "tests_per_cell must be >= 1",
            ));
        }
        self.grid.validate()?;
        self.scenario.validate()
    }
}

/// Everything a worker needs that does not change between tests.
#[derive(Debug, Clone)]
pub struct SweepContext {
    pub config: SweepConfig,
    pub conductor: ConductorEntry,
    pub calibration: FireCalibration,
    /// Static rating of the conductor, A.
    pub static_rating_a: f64,
}

impl SweepContext {
    pub fn new(config: SweepConfig) -> Result<Self> {
        config.validate()?;
        let catalogue = match &config.scenario.catalogue {
            Some(p) => Catalogue::load(p)?,
            None => Catalogue::builtin(),
        };
        let conductor = catalogue.get(&config.scenario.conductor)?.clone();
        // The rating is per metre, so any length gives the same current.
        let seg = LineSegment::from_conductor(conductor.r20_ohm_per_m, 1.0, 1.0)?;
        let mut seg = seg;
        seg.alpha = conductor.alpha;
        let static_rating_a = static_ampacity(&conductor.thermal(), &seg, &config.scenario.rating);
        Ok(SweepContext {
            config,
            conductor,
            calibration: FireCalibration::default(),
            static_rating_a,
        })
    }

    pub fn with_calibration(mut self, calibration: FireCalibration) -> Self {
        self.calibration = calibration;
        self
    }
}

/// Parameters of one test, drawn within a cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    /// Fire contribution to the ambient at the end of the run, °C.
    pub delta_ta: f64,
    pub t_a: f64,
    pub v_w: f64,
    /// Initial conductor temperature, °C.
    pub t_s: f64,
    pub length_km: f64,
    pub current_a: f64,
    pub pf_correction: f64,
    pub v_err: f64,
    pub i_err: f64,
    pub xr_ratio: f64,
    pub fire: Option<FireSource>,
}

impl ScenarioParams {
    pub fn features(&self) -> [f64; DIMENSIONS] {
        [
            self.delta_ta,
            self.t_a,
            self.v_w,
            self.t_s,
            self.length_km,
            self.current_a,
            self.pf_correction,
            self.v_err,
            self.i_err,
        ]
    }
}

/// Place a fire so that the ambient rise reaches `delta_ta` at the end of the run.
///
/// A burning time is drawn first; if no calibrated distance yields `delta_ta`
/// at that time, the time is moved to the nearest one that does.
pub fn place_fire(
    cal: &FireCalibration,
    delta_ta: f64,
    heating_time: f64,
    duration_s: f64,
) -> Result<FireSource> {
    let g = &cal.distance_grid;
    let (f_near, f_far) = (g[0].1, g[g.len() - 1].1);
    let mut t_f = heating_time;
    let mut f = delta_ta / t_f.sqrt();
    if f > f_near {
        t_f = (delta_ta / f_near).powi(2);
        f = f_near;
    } else if f < f_far {
        t_f = (delta_ta / f_far).powi(2);
        f = f_far;
    }
    let distance_m = cal.distance_for_factor(f)?;
    Ok(FireSource {
        distance_m,
        ignition_time_s: duration_s - t_f,
        active: true,
    })
}

fn uniform_in(rng: &mut SimRng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Draw the parameters of test `test_index` of `cell`.
pub fn draw_params(
    ctx: &SweepContext,
    cell: &ScenarioCell,
    test_index: u64,
) -> Result<ScenarioParams> {
    let cfg = &ctx.config;
    let s = &cfg.scenario;
    let param_key = if s.fixed_parameters_per_cell {
        0
    } else {
        test_index
    };
    let mut rng = rng_from(derive(derive(cell.seed, param_key), 0x5041_5241_4D53));
    let iv = |d: usize| cfg.grid.interval(d, cell.intervals[d] as usize);
    let mut x = [0.0; DIMENSIONS];
    for (d, slot) in x.iter_mut().enumerate() {
        *slot = uniform_in(&mut rng, iv(d));
    }
    let xr_ratio = uniform_in(&mut rng, s.xr_ratio);
    let heating = uniform_in(&mut rng, s.fire_heating_time_s);
    let no_fire_roll: f64 = rng.gen();

    let (dta_lo, _) = iv(0);
    let no_fire = x[0] <= 0.0 || (dta_lo <= 0.0 && no_fire_roll < s.no_fire_probability);
    let delta_ta = if no_fire { 0.0 } else { x[0] };
    let fire = if no_fire {
        None
    } else {
        Some(place_fire(
            &ctx.calibration,
            delta_ta,
            heating,
            s.duration_s,
        )?)
    };
    Ok(ScenarioParams {
        delta_ta,
        t_a: x[1],
        v_w: x[2],
        t_s: x[3],
        length_km: x[4].max(MIN_LENGTH_KM),
        current_a: x[5],
        pf_correction: x[6],
        v_err: x[7],
        i_err: x[8],
        xr_ratio,
        fire,
    })
}

/// Build the single-run specification for a parameter draw.
pub fn build_run_spec(ctx: &SweepContext, params: &ScenarioParams, seed: u64) -> Result<RunSpec> {
    let s = &ctx.config.scenario;
    let c = &ctx.conductor;
    let mut segment =
        LineSegment::from_conductor(c.r20_ohm_per_m, params.length_km, params.xr_ratio)?;
    segment.alpha = c.alpha;
    segment.b_shunt_s = s.b_shunt_s_per_km * params.length_km;
    let operating = OperatingPoint::from_line_current(
        s.v_phase(),
        params.current_a,
        s.native_pf,
        params.pf_correction,
    )?;
    Ok(RunSpec {
        duration_s: s.duration_s,
        sample_rate: s.sample_rate,
        seed,
        segment,
        operating,
        events: Vec::new(),
        thermal: c.thermal(),
        initial: InitialConditions {
            t_c: params.t_s,
            t_a: params.t_a,
            v_w: params.v_w,
        },
        fire: params.fire.unwrap_or_default(),
        fire_calibration: Some(ctx.calibration.clone()),
        measurement: s.measurement_template(params.v_err, params.i_err),
        timing_fault: TimingFault::default(),
        detector: s.detector.clone(),
        latency: s.latency,
    })
}

/// Seed of the measurement noise of one test.
pub fn test_seed(cell: &ScenarioCell, test_index: u64) -> u64 {
    derive(cell.seed, test_index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConditionFlags {
    pub a: bool,
    pub b: bool,
    pub c: bool,
    /// ΔT_c above the reporting threshold.
    pub delta_tc: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    TruePositive,
    TrueNegative,
    FalsePositive,
    FalseNegative,
}

pub fn classify(fire_present: bool, tripped: bool) -> Classification {
    match (fire_present, tripped) {
        (true, true) => Classification::TruePositive,
        (false, false) => Classification::TrueNegative,
        (false, true) => Classification::FalsePositive,
        (true, false) => Classification::FalseNegative,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub cell: usize,
    pub test_index: u64,
    pub params: ScenarioParams,
    pub discarded: bool,
    pub fire_present: bool,
    pub control1_trip_s: Option<f64>,
    pub control2_trip_s: Option<f64>,
    pub delta_tc: f64,
    /// Receiving-end apparent power at `t = 0` over the static rating.
    pub loading: f64,
    pub delta6: Option<f64>,
    pub delta4: Option<f64>,
    pub delta3: Option<f64>,
    pub flags: ConditionFlags,
}

impl RunOutcome {
    pub fn trip_time(&self, control: Control) -> Option<f64> {
        match control {
            Control::Control1 => self.control1_trip_s,
            Control::Control2 => self.control2_trip_s,
        }
    }

    pub fn tripped(&self, control: Control) -> bool {
        self.trip_time(control).is_some()
    }

    pub fn classification(&self, control: Control) -> Classification {
        classify(self.fire_present, self.tripped(control))
    }
}

/// Condition flags for a test.
pub fn label_conditions(
    params: &ScenarioParams,
    loading: f64,
    delta_tc: f64,
    th: &ConditionThresholds,
) -> ConditionFlags {
    let fire = params.delta_ta > 0.0;
    ConditionFlags {
        a: fire && params.delta_ta > th.a_delta_ta_min,
        b: fire && params.v_w < th.b_v_w_max && loading > th.b_loading_min,
        c: fire
            && params.t_s < th.c_t_s_max
            && loading > th.c_loading_min
            && params.delta_ta > th.c_delta_ta_min,
        delta_tc: delta_tc > th.delta_tc_min,
    }
}

pub fn outcome_from_summary(
    ctx: &SweepContext,
    cell: usize,
    test_index: u64,
    params: ScenarioParams,
    summary: &RunSummary,
) -> RunOutcome {
    let s = &ctx.config.scenario;
    let loading = summary.initial_apparent_power() / (s.v_phase() * ctx.static_rating_a);
    let discarded = summary.discarded.is_some();
    RunOutcome {
        cell,
        test_index,
        params,
        discarded,
        fire_present: params.fire.is_some(),
        control1_trip_s: summary.control1_time_s,
        control2_trip_s: summary.control2_time_s,
        delta_tc: summary.delta_tc,
        loading,
        delta6: summary.final_slopes.delta6,
        delta4: summary.final_slopes.delta4,
        delta3: summary.final_slopes.delta3,
        flags: label_conditions(&params, loading, summary.delta_tc, &s.conditions),
    }
}

/// Simulate one test of a cell.
pub fn run_test(ctx: &SweepContext, cell: &ScenarioCell, test_index: u64) -> Result<RunOutcome> {
    let params = draw_params(ctx, cell, test_index)?;
    let spec = build_run_spec(ctx, &params, test_seed(cell, test_index))?;
    let summary = run_summary(&spec)?;
    if let Some(why) = &summary.discarded {
        log::debug!("cell {} test {test_index} discarded: {why}", cell.ordinal);
    }
    Ok(outcome_from_summary(
        ctx,
        cell.ordinal,
        test_index,
        params,
        &summary,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub tp: f64,
    pub tn: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
}

impl ConfusionMatrix {
    pub fn add(&mut self, c: Classification) {
        match c {
            Classification::TruePositive => self.tp += 1,
            Classification::TrueNegative => self.tn += 1,
            Classification::FalsePositive => self.fp += 1,
            Classification::FalseNegative => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, o: &ConfusionMatrix) {
        self.tp += o.tp;
        self.tn += o.tn;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Fractions of the total; `None` for an empty matrix.
    pub fn rates(&self) -> Option<Rates> {
        let n = self.total();
        if n == 0 {
            return None;
        }
        let n = n as f64;
        Some(Rates {
            tp: self.tp as f64 / n,
            tn: self.tn as f64 / n,
            fp: self.fp as f64 / n,
            fn_: self.fn_ as f64 / n,
        })
    }
}

/// Counts under a filter. `tp + tn + fp + fn + excluded + discarded = total`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub matrix: ConfusionMatrix,
    pub rates: Option<Rates>,
    /// Usable runs rejected by the filter.
    pub excluded: u64,
    /// Runs stopped by an infeasible operating point, whatever the filter.
    pub discarded: u64,
    pub total: u64,
}

impl Aggregate {
    pub fn is_empty(&self) -> bool {
        self.matrix.total() == 0
    }
}

pub fn aggregate<'a, I, F>(outcomes: I, control: Control, filter: F) -> Aggregate
where
    I: IntoIterator<Item = &'a RunOutcome>,
    F: Fn(&RunOutcome) -> bool,
{
    let mut matrix = ConfusionMatrix::default();
    let (mut excluded, mut discarded, mut total) = (0, 0, 0);
    for o in outcomes {
        total += 1;
        if o.discarded {
            discarded += 1;
        } else if filter(o) {
            matrix.add(o.classification(control));
        } else {
            excluded += 1;
        }
    }
    Aggregate {
        matrix,
        rates: matrix.rates(),
        excluded,
        discarded,
        total,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: ScenarioCell,
    pub outcomes: Vec<RunOutcome>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub plan_len: usize,
    pub cells: Vec<CellResult>,
}

impl SweepResult {
    pub fn outcomes(&self) -> impl Iterator<Item = &RunOutcome> {
        self.cells.iter().flat_map(|c| c.outcomes.iter())
    }
}

/// `0` means one worker per available core.
pub fn resolve_workers(workers: usize) -> usize {
    if workers == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        workers
    }
}

/// Run every test of every planned cell on `workers` threads (`0` = all cores).
///
/// Results come back in plan order whatever the scheduling, so everything
/// derived from them is independent of the worker count.
pub fn sweep(ctx: &SweepContext, plan: &CellPlan, workers: usize) -> Result<SweepResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(resolve_workers(workers))
        .build()
        .map_err(|e| Error::invalid("worker pool", e.to_string()))?;
    let cfg = &ctx.config;
    let cells = pool.install(|| {
        (0..plan.len())
            .into_par_iter()
            .map(|i| {
                let cell = plan.cell(&cfg.grid, cfg.seed, i);
                let outcomes = (0..cfg.tests_per_cell as u64)
                    .map(|t| run_test(ctx, &cell, t))
                    .collect::<Result<Vec<_>>>()?;
                Ok(CellResult { cell, outcomes })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(SweepResult {
        plan_len: plan.len(),
        cells,
    })
}

/// Reference row for side-by-side reporting.
#[derive(Debug, Clone, Serialize)]
pub struct ReferenceRow {
    pub label: &'static str,
    pub control: Control,
    pub tp_pct: f64,
    pub tn_pct: f64,
    pub fp_pct: f64,
    pub fn_pct: f64,
}

pub const REFERENCE_ROWS: [ReferenceRow; 2] = [
    ReferenceRow {
        label: "control1, delta_tc > 2.87",
        control: Control::Control1,
        tp_pct: 99.32,
        tn_pct: 0.29,
        fp_pct: 0.29,
        fn_pct: 0.10,
    },
    ReferenceRow {
        label: "control2, delta_tc > 2.87 and v_err < 0.00003",
        control: Control::Control2,
        tp_pct: 89.13,
        tn_pct: 0.00,
        fp_pct: 0.00,
        fn_pct: 10.87,
    },
];

/// Reference share of tests with ΔT_c above the threshold under each condition.
pub const REFERENCE_CONDITION_PCT: [(&str, f64); 3] = [("a", 86.0), ("b", 100.0), ("c", 94.0)];

#[derive(Debug, Clone, Serialize)]
pub struct FilterReport {
    pub name: String,
    pub control: Control,
    #[serde(flatten)]
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub condition: &'static str,
    pub cases: u64,
    pub delta_tc_above: u64,
    pub fraction: Option<f64>,
    pub reference_pct: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub schema: &'static str,
    pub version: u32,
    pub seed: u64,
    pub subsample: String,
    pub cells: usize,
    pub tests_per_cell: usize,
    pub runs: u64,
    pub discarded: u64,
    pub static_rating_a: f64,
    pub filters: Vec<FilterReport>,
    pub conditions: Vec<ConditionReport>,
    pub reference: [ReferenceRow; 2],
}

/// Confusion matrices under the standard filters, per control.
pub fn summarize(ctx: &SweepContext, result: &SweepResult) -> SweepSummary {
    let cfg = &ctx.config;
    let th = cfg.scenario.conditions;
    let all: Vec<&RunOutcome> = result.outcomes().collect();
    type Filter = Box<dyn Fn(&RunOutcome) -> bool>;
    let filters: Vec<(&str, Filter)> = vec![
        ("all", Box::new(|_| true)),
        ("delta_tc", Box::new(|o| o.flags.delta_tc)),
        (
            "delta_tc_and_v_err",
            Box::new(move |o| o.flags.delta_tc && o.params.v_err < th.control2_v_err_max),
        ),
        ("condition_a", Box::new(|o| o.flags.a || !o.fire_present)),
        ("condition_b", Box::new(|o| o.flags.b || !o.fire_present)),
        ("condition_c", Box::new(|o| o.flags.c || !o.fire_present)),
    ];
    let mut reports = Vec::new();
    for (name, f) in &filters {
        for control in [Control::Control1, Control::Control2] {
            reports.push(FilterReport {
                name: name.to_string(),
                control,
                aggregate: aggregate(all.iter().copied(), control, f),
            });
        }
    }
    let usable = || all.iter().filter(|o| !o.discarded);
    let cond = |name: &'static str, pick: fn(&ConditionFlags) -> bool, reference_pct: f64| {
        let cases = usable().filter(|o| pick(&o.flags)).count() as u64;
        let above = usable()
            .filter(|o| pick(&o.flags) && o.flags.delta_tc)
            .count() as u64;
        ConditionReport {
            condition: name,
            cases,
            delta_tc_above: above,
            fraction: (cases > 0).then(|| above as f64 / cases as f64),
            reference_pct,
        }
    };
    let conditions = vec![
        cond("a", |f| f.a, REFERENCE_CONDITION_PCT[0].1),
        cond("b", |f| f.b, REFERENCE_CONDITION_PCT[1].1),
        cond("c", |f| f.c, REFERENCE_CONDITION_PCT[2].1),
    ];
    SweepSummary {
        schema: "linewatch-sweep-summary",
        version: 1,
        seed: cfg.seed,
        subsample: cfg.subsample.to_string(),
        cells: result.plan_len,
        tests_per_cell: cfg.tests_per_cell,
        runs: all.len() as u64,
        discarded: all.iter().filter(|o| o.discarded).count() as u64,
        static_rating_a: ctx.static_rating_a,
        filters: reports,
        conditions,
        reference: REFERENCE_ROWS,
    }
}

/// Per-cell CSV: cell identity, interval bounds of every dimension, counts per control.
pub fn write_cells_csv<W: Write>(w: W, ctx: &SweepContext, result: &SweepResult) -> Result<()> {
    let mut w = w;
    write_schema_line(&mut w, "sweep-cells", 1)?;
    let mut wtr = csv_writer(w);
    let mut header = vec!["ordinal".to_string(), "linear_index".into(), "seed".into()];
    for name in DIM_NAMES {
        header.push(format!("{name}_lo"));
        header.push(format!("{name}_hi"));
    }
    header.extend(
        [
            "tests",
            "discarded",
            "c1_tp",
            "c1_tn",
            "c1_fp",
            "c1_fn",
            "c2_tp",
            "c2_tn",
            "c2_fp",
            "c2_fn",
        ]
        .map(String::from),
    );
    wtr.write_record(&header)?;
    for c in &result.cells {
        let mut row = vec![
            c.cell.ordinal.to_string(),
            c.cell.linear_index.to_string(),
            c.cell.seed.to_string(),
        ];
        for d in 0..DIMENSIONS {
            let (lo, hi) = ctx.config.grid.interval(d, c.cell.intervals[d] as usize);
            row.push(lo.to_string());
            row.push(hi.to_string());
        }
        let a1 = aggregate(&c.outcomes, Control::Control1, |_| true);
        let a2 = aggregate(&c.outcomes, Control::Control2, |_| true);
        row.push(c.outcomes.len().to_string());
        row.push(a1.discarded.to_string());
        for m in [a1.matrix, a2.matrix] {
            for v in [m.tp, m.tn, m.fp, m.fn_] {
                row.push(v.to_string());
            }
        }
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub const DATASET_COLUMNS: [&str; 17] = [
    "delta_ta",
    "t_a",
    "v_w",
    "t_s",
    "length_km",
    "current_a",
    "pf_correction",
    "v_err",
    "i_err",
    "loading",
    "delta_tc",
    "delta6",
    "delta4",
    "delta3",
    "control1",
    "control2",
    "label",
];

/// One row per usable run whose detector produced end-of-run slopes.
/// Returns the number of rows written and the number skipped.
pub fn write_dataset_csv<W: Write>(w: W, result: &SweepResult) -> Result<(u64, u64)> {
    let mut w = w;
    write_schema_line(&mut w, "dataset", 1)?;
    let mut wtr = csv_writer(w);
    wtr.write_record(DATASET_COLUMNS)?;
    let (mut written, mut skipped) = (0, 0);
    for o in result.outcomes() {
        let (Some(d6), Some(d4), Some(d3)) = (o.delta6, o.delta4, o.delta3) else {
            skipped += 1;
            continue;
        };
        if o.discarded {
            skipped += 1;
            continue;
        }
        let mut row: Vec<String> = o.params.features().iter().map(|v| v.to_string()).collect();
        row.push(o.loading.to_string());
        row.push(o.delta_tc.to_string());
        row.extend([d6, d4, d3].map(|v| v.to_string()));
        row.push(o.tripped(Control::Control1).to_string());
        row.push(o.tripped(Control::Control2).to_string());
        row.push(o.fire_present.to_string());
        wtr.write_record(&row)?;
        written += 1;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok((written, skipped))
}

fn pct(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{:.2}", 100.0 * v))
}

/// Plain-text comparison of desk-scale results with the reference figures.
pub fn render_report(summary: &SweepSummary) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "linewatch sweep report\nseed {}  subsample {}  cells {}  tests/cell {}  runs {}  discarded {}\nstatic rating {:.1} A\n\n",
        summary.seed,
        summary.subsample,
        summary.cells,
        summary.tests_per_cell,
        summary.runs,
        summary.discarded,
        summary.static_rating_a
    ));
    s.push_str(
        "confusion rates (%)                                    TP      TN      FP      FN     n\n",
    );
    for f in &summary.filters {
        let r = f.aggregate.rates;
        s.push_str(&format!(
            "{:<28} {:<10} {:>16} {:>7} {:>7} {:>7} {:>6}\n",
            f.name,
            f.control.name(),
            pct(r.map(|r| r.tp)),
            pct(r.map(|r| r.tn)),
            pct(r.map(|r| r.fp)),
            pct(r.map(|r| r.fn_)),
            f.aggregate.matrix.total()
        ));
    }
    s.push_str("\nreference rates (%)\n");
    for r in &summary.reference {
        s.push_str(&format!(
            "{:<50} {:>7.2} {:>7.2} {:>7.2} {:>7.2}\n",
            r.label, r.tp_pct, r.tn_pct, r.fp_pct, r.fn_pct
        ));
    }
    s.push_str("\nshare of tests with delta_tc above threshold\n");
    for c in &summary.conditions {
        s.push_str(&format!(
            "condition {}: {} of {} ({}%), reference {:.0}%\n",
            c.condition,
            c.delta_tc_above,
            c.cases,
            pct(c.fraction),
            c.reference_pct
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(fire: bool, trip: bool) -> RunOutcome {
        RunOutcome {
            cell: 0,
            test_index: 0,
            params: ScenarioParams {
                delta_ta: if fire { 10.0 } else { 0.0 },
                t_a: 20.0,
                v_w: 1.0,
                t_s: 40.0,
                length_km: 5.0,
                current_a: 500.0,
                pf_correction: 0.5,
                v_err: 0.001,
                i_err: 0.002,
                xr_ratio: 2.0,
                fire: None,
            },
            discarded: false,
            fire_present: fire,
            control1_trip_s: trip.then_some(0.2),
            control2_trip_s: trip.then_some(0.2),
            delta_tc: 0.0,
            loading: 0.5,
            delta6: None,
            delta4: None,
            delta3: None,
            flags: ConditionFlags::default(),
        }
    }

    #[test]
    fn full_grid_counts() {
        assert_eq!(ScenarioGrid::uniform(5).cell_count(), 1_953_125);
        let one = ScenarioGrid::uniform(1);
        let plan = generate_cells(&one, Subsample::Full, 3).unwrap();
        assert_eq!(plan.len(), 1);
    }

    #[test]
    fn decode_encode_round_trip() {
        let g = ScenarioGrid::uniform(5);
        for linear in [0, 1, 4, 5, 390_624, 1_953_124] {
            assert_eq!(g.encode(&g.decode(linear)), linear);
        }
        assert_eq!(g.decode(1), [0, 0, 0, 0, 0, 0, 0, 0, 1]);
    }

    #[test]
    fn stratified_is_balanced_and_reproducible() {
        let g = ScenarioGrid::uniform(5);
        let a = generate_cells(&g, Subsample::Stratified(1000), 7).unwrap();
        let b = generate_cells(&g, Subsample::Stratified(1000), 7).unwrap();
        let c = generate_cells(&g, Subsample::Stratified(1000), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let CellPlan::Listed(v) = &a else { panic!() };
        assert_eq!(v.len(), 1000);
        assert!(v.windows(2).all(|w| w[0] < w[1]));
        for s in 0..5 {
            assert_eq!(v.iter().filter(|&&l| g.decode(l)[0] == s).count(), 200);
        }
    }

    #[test]
    fn lhs_uses_every_interval_equally() {
        let g = ScenarioGrid::uniform(5);
        let plan = generate_cells(&g, Subsample::Lhs(50), 1).unwrap();
        let cells: Vec<_> = plan.iter(&g, 1).collect();
        for d in 0..DIMENSIONS {
            for k in 0..5 {
                assert_eq!(cells.iter().filter(|c| c.intervals[d] == k).count(), 10);
            }
        }
    }

    #[test]
    fn subsample_parsing() {
        assert_eq!("full".parse::<Subsample>().unwrap(), Subsample::Full);
        assert_eq!(
            "stratified:12".parse::<Subsample>().unwrap(),
            Subsample::Stratified(12)
        );
        assert_eq!("lhs:3".parse::<Subsample>().unwrap(), Subsample::Lhs(3));
        assert!("lhs:0".parse::<Subsample>().is_err());
        assert!("random:5".parse::<Subsample>().is_err());
    }

    #[test]
    fn confusion_rates() {
        let all_tp: Vec<_> = (0..4).map(|_| outcome(true, true)).collect();
        let a = aggregate(&all_tp, Control::Control1, |_| true);
        let r = a.rates.unwrap();
        assert_eq!((r.tp, r.tn, r.fp, r.fn_), (1.0, 0.0, 0.0, 0.0));

        let mixed = [
            outcome(true, true),
            outcome(false, false),
            outcome(false, true),
            outcome(true, false),
        ];
        let a = aggregate(&mixed, Control::Control1, |_| true);
        let r = a.rates.unwrap();
        assert_eq!((r.tp, r.tn, r.fp, r.fn_), (0.25, 0.25, 0.25, 0.25));

        let none = aggregate(&mixed, Control::Control1, |_| false);
        assert!(none.is_empty() && none.rates.is_none());
        assert_eq!(none.excluded, 4);
    }

    #[test]
    fn condition_examples() {
        let th = ConditionThresholds::default();
        let mut p = outcome(true, true).params;
        p.delta_ta = 80.0;
        assert!(label_conditions(&p, 0.1, 0.0, &th).a);
        p.delta_ta = 10.0;
        p.v_w = 1.0;
        assert!(label_conditions(&p, 0.95, 0.0, &th).b);
        p.delta_ta = 0.0;
        let f = label_conditions(&p, 0.95, 0.0, &th);
        assert!(!f.a && !f.b && !f.c);
    }

    #[test]
    fn fire_placement_hits_target() {
        let cal = FireCalibration::default();
        for (target, tf) in [(0.01, 30.0), (5.0, 10.0), (100.0, 50.0), (225.0, 10.0)] {
            let fire = place_fire(&cal, target, tf, 0.5).unwrap();
            let got = fire.delta_ta(&cal, 0.5).unwrap();
            assert!(
                (got - target).abs() < 1e-9 * target.max(1.0),
                "{target}: {got}"
            );
            assert!(fire.distance_m >= 1.0 && fire.distance_m <= 50.0);
        }
    }
}
