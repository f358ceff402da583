//! Ambient temperature rise near a fire seat.
//!
//! The rise at distance `d` after heating time `t_f` follows
//! `ΔT_a = f(d) · t_f^0.5`, with the distance factor `f(d)` calibrated from a
//! table of `(d, t_f, ΔT_a)` observations and interpolated log-linearly in `d`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{csv_reader, csv_writer, write_schema_line};

/// Relative tolerance of the square-root time law accepted at calibration.
pub const TIME_LAW_TOLERANCE: f64 = 0.01;

/// Reference observations: ambient rise in a pine stand with grass, as
/// `(distance m, heating time s, ΔT_a °C)`.
pub const TABLE_ONE: [(f64, f64, f64); 12] = [
    (50.0, 10.0, 8.23e-5),
    (50.0, 30.0, 1.42e-4),
    (50.0, 60.0, 2.02e-4),
    (10.0, 10.0, 5.81),
    (10.0, 30.0, 10.06),
    (10.0, 60.0, 14.23),
    (5.0, 10.0, 30.99),
    (5.0, 30.0, 53.69),
    (5.0, 60.0, 75.93),
    (1.0, 10.0, 71.61),
    (1.0, 30.0, 124.03),
    (1.0, 60.0, 175.40),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub d_m: f64,
    pub t_f_s: f64,
    pub delta_ta_c: f64,
}

pub fn table_one() -> Vec<CalibrationSample> {
    TABLE_ONE
        .iter()
        .map(|&(d_m, t_f_s, delta_ta_c)| CalibrationSample {
            d_m,
            t_f_s,
            delta_ta_c,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FireCalibration {
    /// `(distance m, factor °C/√s)`, sorted by distance.
    pub distance_grid: Vec<(f64, f64)>,
    #[serde(default = "half")]
    pub exponent: f64,
}

fn half() -> f64 {
    0.5
}

impl Default for FireCalibration {
    fn default() -> Self {
        calibrate_from_table(&table_one()).expect("reference table is consistent")
    }
}

impl FireCalibration {
    pub fn new(mut distance_grid: Vec<(f64, f64)>) -> Result<Self> {
        distance_grid.sort_by(|a, b| a.0.total_cmp(&b.0));
        let cal = FireCalibration {
            distance_grid,
            exponent: 0.5,
        };
        cal.validate()?;
        Ok(cal)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid("fire calibration", m));
        if self.distance_grid.is_empty() {
            return bad("empty distance grid".into());
        }
        if self.exponent != 0.5 {
            return bad(format!("time exponent must be 0.5, got {}", self.exponent));
        }
        for &(d, f) in &self.distance_grid {
            if !(d > 0.0) || !(f > 0.0) || !f.is_finite() {
                return bad(format!("grid point ({d}, {f}) must be positive"));
            }
        }
        for w in self.distance_grid.windows(2) {
            if !(w[1].0 > w[0].0) {
                return bad(format!("duplicate distance {}", w[0].0));
            }
            if !(w[1].1 < w[0].1) {
                return bad(format!(
                    "factor must decrease with distance ({} m: {}, {} m: {})",
                    w[0].0, w[0].1, w[1].0, w[1].1
                ));
            }
        }
        Ok(())
    }

    pub fn distance_range(&self) -> (f64, f64) {
        (
            self.distance_grid[0].0,
            self.distance_grid[self.distance_grid.len() - 1].0,
        )
    }

    /// `f(d)` in °C/√s; log-linear interpolation, no extrapolation.
    pub fn factor(&self, d: f64) -> Result<f64> {
        let (lo, hi) = self.distance_range();
        if !(d >= lo && d <= hi) {
            return Err(Error::Domain(format!(
                "distance {d} m outside calibrated range [{lo}, {hi}] m"
            )));
        }
        let g = &self.distance_grid;
        let i = g.partition_point(|p| p.0 < d);
        if i < g.len() && g[i].0 == d {
            return Ok(g[i].1);
        }
        let (d0, f0) = g[i - 1];
        let (d1, f1) = g[i];
        let w = (d - d0) / (d1 - d0);
        Ok((f0.ln() + w * (f1.ln() - f0.ln())).exp())
    }

    /// Inverse of [`factor`](Self::factor): the distance at which the factor equals `f`.
    pub fn distance_for_factor(&self, f: f64) -> Result<f64> {
        let g = &self.distance_grid;
        let (f_near, f_far) = (g[0].1, g[g.len() - 1].1);
        if !(f <= f_near && f >= f_far) {
            return Err(Error::Domain(format!(
                "factor {f} outside calibrated range [{f_far}, {f_near}]"
            )));
        }
        if g.len() == 1 {
            return Ok(g[0].0);
        }
        // Factor is decreasing, so search on the reversed order.
        let i = g.partition_point(|p| p.1 > f);
        if i < g.len() && g[i].1 == f {
            return Ok(g[i].0);
        }
        let (d0, f0) = g[i - 1];
        let (d1, f1) = g[i];
        let w = (f.ln() - f0.ln()) / (f1.ln() - f0.ln());
        Ok(d0 + w * (d1 - d0))
    }

    #[inline]
    pub fn time_term(&self, t_f: f64) -> f64 {
        if self.exponent == 0.5 {
            t_f.sqrt()
        } else {
            t_f.powf(self.exponent)
        }
    }
}

/// Ambient temperature rise (°C) at distance `d` after `t_f` seconds of heating.
pub fn fire_delta_ta(cal: &FireCalibration, d: f64, t_f: f64) -> Result<f64> {
    if !(t_f >= 0.0) {
        return Err(Error::Domain(format!("heating time {t_f} s must be >= 0")));
    }
    let f = cal.factor(d)?;
    if t_f == 0.0 {
        return Ok(0.0);
    }
    Ok(f * cal.time_term(t_f))
}

/// Build `f(d)` from observations, averaging `ΔT_a/√t_f` over the times at each distance.
pub fn calibrate_from_table(samples: &[CalibrationSample]) -> Result<FireCalibration> {
    if samples.is_empty() {
        return Err(Error::Calibration {
            message: "no calibration samples".into(),
            rows: vec![],
        });
    }
    let bad_rows: Vec<_> = samples
        .iter()
        .filter(|s| !(s.d_m > 0.0 && s.t_f_s > 0.0 && s.delta_ta_c > 0.0))
        .map(|s| (s.d_m, s.t_f_s, s.delta_ta_c))
        .collect();
    if !bad_rows.is_empty() {
        return Err(Error::Calibration {
            message: "distance, heating time and rise must all be positive".into(),
            rows: bad_rows,
        });
    }

    let mut distances: Vec<f64> = samples.iter().map(|s| s.d_m).collect();
    distances.sort_by(f64::total_cmp);
    distances.dedup();

    let mut grid = Vec::with_capacity(distances.len());
    let mut offending = Vec::new();
    for &d in &distances {
        let rows: Vec<_> = samples.iter().filter(|s| s.d_m == d).collect();
        let ratios: Vec<f64> = rows.iter().map(|s| s.delta_ta_c / s.t_f_s.sqrt()).collect();
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        for (s, r) in rows.iter().zip(&ratios) {
            if (r / mean - 1.0).abs() > TIME_LAW_TOLERANCE {
                offending.push((s.d_m, s.t_f_s, s.delta_ta_c));
            }
        }
        grid.push((d, mean));
    }
    if !offending.is_empty() {
        return Err(Error::Calibration {
            message: format!(
                "{} row(s) deviate from the square-root time law by more than {:.0}%",
                offending.len(),
                TIME_LAW_TOLERANCE * 100.0
            ),
            rows: offending,
        });
    }
    FireCalibration::new(grid).map_err(|e| Error::Calibration {
        message: e.to_string(),
        rows: vec![],
    })
}

/// A fire seat near the monitored segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FireSource {
    pub distance_m: f64,
    /// Simulation time of ignition, s. Negative when the fire predates the window.
    pub ignition_time_s: f64,
    pub active: bool,
}

impl Default for FireSource {
    fn default() -> Self {
        FireSource::NONE
    }
}

impl FireSource {
    pub const NONE: FireSource = FireSource {
        distance_m: 50.0,
        ignition_time_s: 0.0,
        active: false,
    };

    pub fn validate(&self) -> Result<()> {
        if self.active && !(self.distance_m > 0.0 && self.distance_m <= 50.0) {
            return Err(Error::invalid(
                "fire source",
                format!("distance {} m outside (0, 50]", self.distance_m),
            ));
        }
        Ok(())
    }

    /// Ambient rise at simulation time `t`.
    pub fn delta_ta(&self, cal: &FireCalibration, t: f64) -> Result<f64> {
        if !self.active || t <= self.ignition_time_s {
            return Ok(0.0);
        }
        fire_delta_ta(cal, self.distance_m, t - self.ignition_time_s)
    }
}

pub fn read_table_csv<R: Read>(r: R) -> Result<Vec<CalibrationSample>> {
    let mut rdr = csv_reader(r);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub fn write_table_csv<W: Write>(w: W, samples: &[CalibrationSample]) -> Result<()> {
    let mut w = w;
    write_schema_line(&mut w, "fire-table", 1)?;
    let mut wtr = csv_writer(w);
    for s in samples {
        wtr.serialize(s)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct GridRow {
    d_m: f64,
    factor_c_per_sqrt_s: f64,
}

pub fn write_calibration_csv<W: Write>(w: W, cal: &FireCalibration) -> Result<()> {
    let mut w = w;
    write_schema_line(&mut w, "fire-calibration", 1)?;
    let mut wtr = csv_writer(w);
    for &(d_m, factor_c_per_sqrt_s) in &cal.distance_grid {
        wtr.serialize(GridRow {
            d_m,
            factor_c_per_sqrt_s,
        })?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_calibration_csv<R: Read>(r: R) -> Result<FireCalibration> {
    let mut rdr = csv_reader(r);
    let mut grid = Vec::new();
    for row in rdr.deserialize() {
        let row: GridRow = row?;
        grid.push((row.d_m, row.factor_c_per_sqrt_s));
    }
    FireCalibration::new(grid)
}

/// Observed and predicted rise for one calibration sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReproductionRow {
    pub d_m: f64,
    pub t_f_s: f64,
    pub observed_c: f64,
    pub predicted_c: f64,
    /// `predicted / observed − 1`.
    pub residual: f64,
}

/// Predict every sample with `cal` and report the relative residuals.
pub fn reproduce(
    cal: &FireCalibration,
    samples: &[CalibrationSample],
) -> Result<Vec<ReproductionRow>> {
    samples
        .iter()
        .map(|s| {
            let predicted_c = fire_delta_ta(cal, s.d_m, s.t_f_s)?;
            Ok(ReproductionRow {
                d_m: s.d_m,
                t_f_s: s.t_f_s,
                observed_c: s.delta_ta_c,
                predicted_c,
                residual: predicted_c / s.delta_ta_c - 1.0,
            })
        })
        .collect()
}

pub fn write_reproduction_csv<W: Write>(w: W, rows: &[ReproductionRow]) -> Result<()> {
    let mut w = w;
    write_schema_line(&mut w, "fire-reproduction", 1)?;
    let mut wtr = csv_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
