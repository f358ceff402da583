//! Shared fixtures for the hot-path benchmarks.

use linewatch_core::dtree::{Dataset, FeatureKind};
use linewatch_core::phasor::{LineSegment, OperatingPoint};
use linewatch_core::thermal::{Catalogue, ConductorThermalParams};

pub const V_PHASE: f64 = 138e3 / 1.732_050_807_568_877_2;

pub fn drake() -> (ConductorThermalParams, LineSegment) {
    let cat = Catalogue::builtin();
    let entry = cat.get("drake").expect("drake in built-in catalogue");
    let seg = LineSegment::from_conductor(entry.r20_ohm_per_m, 10.0, 2.0).expect("valid segment");
    (entry.thermal(), seg)
}

pub fn operating_point() -> OperatingPoint {
    OperatingPoint::from_line_current(V_PHASE, 1000.0, 0.8, 0.5).expect("valid operating point")
}

/// A deterministic two-feature dataset labelled by `x0 > 0.6`.
pub fn threshold_dataset(n: usize) -> Dataset {
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let x0 = ((i * 7919) % n) as f64 / n as f64;
        let x1 = ((i * 104_729) % 997) as f64 / 997.0;
        rows.push(vec![x0, x1]);
        labels.push(x0 > 0.6);
    }
    Dataset::new(
        vec!["x0".into(), "x1".into()],
        vec![FeatureKind::Numeric; 2],
        rows,
        labels,
    )
    .expect("valid dataset")
}
