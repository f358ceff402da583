use linewatch_core::measurement::{ErrorDistribution, MeasurementModel};
use linewatch_core::phasor::{normalize_angle, C64};
use linewatch_core::rng::rng_from;
use linewatch_core::sim::{run, RunSpec};
use proptest::prelude::*;

const SAMPLES: usize = 1_000_000;

fn check_envelope(model: &MeasurementModel, seed: u64) {
    let mut rng = rng_from(seed);
    let truth_v = C64::from_polar(79_674.3, 0.3);
    let bound_v = model.v_mag_err_max;
    let tol = 1e-12;
    for k in 0..SAMPLES {
        let amps = 50.0 + (k % 1600) as f64;
        let truth_i = C64::from_polar(amps, -0.4);
        let bound_i = model.current_bound(amps);
        let v = model.measure_voltage(truth_v, &mut rng);
        let i = model.measure_current(truth_i, &mut rng);
        for (m, t, b) in [(v, truth_v, bound_v), (i, truth_i, bound_i)] {
            let rel = (m - t).norm() / t.norm();
            assert!(rel <= model.composite_bound(b) + tol, "sample {k}: {rel}");
            if model.tve_max == 0.0 {
                assert!((m.norm() / t.norm() - 1.0).abs() <= b + tol);
                assert!(normalize_angle(m.arg() - t.arg()).abs() <= model.angle_err_max + tol);
            }
        }
    }
}

#[test]
fn magnitude_and_angle_errors_stay_inside_envelope() {
    let model = MeasurementModel {
        tve_max: 0.0,
        ..Default::default()
    };
    check_envelope(&model, 7);
}

#[test]
fn composite_error_stays_inside_envelope() {
    check_envelope(&MeasurementModel::default(), 8);
    let gaussian = MeasurementModel {
        distribution: ErrorDistribution::TruncatedGaussian,
        ..Default::default()
    };
    check_envelope(&gaussian, 9);
}

#[test]
fn low_current_class_uses_wider_bound() {
    let m = MeasurementModel::default();
    assert_eq!(
        m.current_bound(0.2 * m.nominal_current),
        m.i_mag_err_max_low
    );
    assert_eq!(
        m.current_bound(0.2 * m.nominal_current + 1.0),
        m.i_mag_err_max_high
    );
}

#[test]
fn same_seed_same_stream() {
    let model = MeasurementModel::default();
    let truth = C64::from_polar(1000.0, 0.1);
    let draw = |seed| {
        let mut rng = rng_from(seed);
        (0..1000)
            .map(|_| model.measure_current(truth, &mut rng))
            .collect::<Vec<_>>()
    };
    assert_eq!(draw(3), draw(3));
    assert_ne!(draw(3), draw(4));
}

#[test]
fn noiseless_run_tracks_true_tan_delta() {
    let mut spec = RunSpec::default();
    spec.measurement = MeasurementModel::ideal();
    spec.segment.b_shunt_s = 3e-5;
    let trace = run(&spec).unwrap();
    for r in &trace.records {
        let x_over_r = spec.segment.x_ohm / spec.segment.resistance_at(r.t_c);
        assert!((r.true_tan_delta - x_over_r).abs() <= 1e-9 * x_over_r);
        assert!(
            (r.detector.tan_delta - x_over_r).abs() <= 1e-9 * x_over_r,
            "t = {}",
            r.t
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ideal_model_is_identity(re in -1e5f64..1e5, im in -1e5f64..1e5, seed in any::<u64>()) {
        let mut rng = rng_from(seed);
        let z = C64::new(re, im);
        prop_assert_eq!(MeasurementModel::ideal().measure_voltage(z, &mut rng), z);
    }
}
