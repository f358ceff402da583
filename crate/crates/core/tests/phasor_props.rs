use linewatch_core::detector::{tan_delta_complex, tan_delta_sample};
use linewatch_core::phasor::{
    solve_complex, solve_steady_state, true_tan_delta, LineSegment, OperatingPoint, Phasor, C64,
};
use proptest::prelude::*;

const V_PHASE: f64 = 138e3 / 1.732_050_807_568_877_2;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

prop_compose! {
    fn segment()(
        r_per_km in 0.03f64..0.17,
        length in 0.05f64..20.0,
        xr in 0.13f64..4.26,
        b_per_km in prop_oneof![Just(0.0), 1e-6f64..4e-6],
    ) -> LineSegment {
        let mut seg = LineSegment::from_conductor(r_per_km / 1000.0, length, xr).unwrap();
        seg.b_shunt_s = b_per_km * length;
        seg
    }
}

prop_compose! {
    fn operating()(
        current in 20.0f64..1600.0,
        pf in 0.7f64..1.0,
        correction in 0.0f64..1.0,
    ) -> OperatingPoint {
        OperatingPoint::from_line_current(V_PHASE, current, pf, correction).unwrap()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn series_branch_matches_true_tan_delta(seg in segment(), op in operating(), t_c in -20.0f64..150.0) {
        let st = solve_steady_state(&seg, &op, t_c);
        prop_assume!(st.is_ok());
        let st = st.unwrap();
        let z = (st.v_s.to_complex() - st.v_r.to_complex()) / st.i_r.to_complex();
        prop_assert!(rel(z.im / z.re, true_tan_delta(&seg, t_c).unwrap()) < 1e-9);
    }

    #[test]
    fn kirchhoff_at_both_buses(seg in segment(), op in operating(), t_c in -20.0f64..150.0) {
        let z = seg.impedance_at(t_c, 0.0);
        let s = solve_complex(z, seg.b_shunt_s, &op);
        prop_assume!(s.is_ok());
        let s = s.unwrap();
        let drop = s.v_s - s.v_r;
        prop_assert!((drop - z * s.i_r).norm() <= 1e-9 * drop.norm().max(1.0));
        let i_s = s.i_r + C64::new(0.0, 0.5 * seg.b_shunt_s) * s.v_s;
        prop_assert!((i_s - s.i_s).norm() <= 1e-12 * s.i_s.norm().max(1.0));
        // Series current feeds the load, the line's receiving-end charging and the capacitor bank.
        let b_r = 0.5 * seg.b_shunt_s + op.shunt_compensation_s;
        let s_r = s.v_r * s.i_r.conj();
        let expect = C64::new(op.load_p_w, op.load_q_var - b_r * s.v_r.norm_sqr());
        prop_assert!((s_r - expect).norm() <= 1e-8 * expect.norm().max(1.0));
    }

    #[test]
    fn energy_balance(seg in segment(), op in operating(), t_c in -20.0f64..150.0) {
        let z = seg.impedance_at(t_c, 0.0);
        let s = solve_complex(z, seg.b_shunt_s, &op);
        prop_assume!(s.is_ok());
        let s = s.unwrap();
        let p_s = (s.v_s * s.i_s.conj()).re;
        let p_r = (s.v_r * s.i_r.conj()).re;
        let loss = s.i_r.norm_sqr() * z.re;
        prop_assert!(rel(p_s - p_r, loss) < 1e-8, "{} vs {}", p_s - p_r, loss);
        // Reactive: series I²X minus the sending-end charging.
        let q_s = (s.v_s * s.i_s.conj()).im;
        let q_r = (s.v_r * s.i_r.conj()).im;
        let q_expect = s.i_r.norm_sqr() * z.im - 0.5 * seg.b_shunt_s * s.v_s.norm_sqr();
        prop_assert!(((q_s - q_r) - q_expect).abs() <= 1e-8 * s.v_s.norm() * s.i_s.norm());
    }

    #[test]
    fn solve_is_deterministic(seg in segment(), op in operating(), t_c in -20.0f64..150.0) {
        let a = solve_steady_state(&seg, &op, t_c);
        let b = solve_steady_state(&seg, &op, t_c);
        prop_assert_eq!(a.ok(), b.ok());
    }

    #[test]
    fn hotter_conductor_lowers_tan_delta(seg in segment(), t_c in -20.0f64..200.0, dt in 0.01f64..50.0) {
        prop_assert!(true_tan_delta(&seg, t_c + dt).unwrap() < true_tan_delta(&seg, t_c).unwrap());
    }

    #[test]
    fn tan_delta_is_scale_invariant(seg in segment(), op in operating(), t_c in 0.0f64..120.0, k in 1e-3f64..1e3) {
        let st = solve_steady_state(&seg, &op, t_c);
        prop_assume!(st.is_ok());
        let st = st.unwrap();
        let a = tan_delta_sample(st.v_s, st.v_r, st.i_r, 1e-12).unwrap();
        let b = tan_delta_sample(st.v_s.scale(k), st.v_r.scale(k), st.i_r.scale(k), 1e-12).unwrap();
        prop_assert!(rel(b, a) < 1e-9);
    }

    #[test]
    fn polar_and_complex_forms_agree(seg in segment(), op in operating(), t_c in 0.0f64..120.0) {
        let s = solve_complex(seg.impedance_at(t_c, 0.0), seg.b_shunt_s, &op);
        prop_assume!(s.is_ok());
        let s = s.unwrap();
        let p = s.to_phasors();
        let a = tan_delta_sample(p.v_s, p.v_r, p.i_r, 1e-12).unwrap();
        let b = tan_delta_complex(s.v_s, s.v_r, s.i_r, 1e-12).unwrap();
        prop_assert!(rel(a, b) < 1e-9);
    }

    #[test]
    fn phasor_invariants(m in -1e6f64..1e6, a in -50.0f64..50.0) {
        let p = Phasor::new(m, a);
        prop_assert!(p.magnitude >= 0.0);
        prop_assert!(p.angle > -std::f64::consts::PI && p.angle <= std::f64::consts::PI);
        prop_assert!((p.to_complex() - C64::from_polar(m, a)).norm() <= 1e-9 * m.abs().max(1.0));
    }
}

#[test]
fn purely_reactive_reading_is_rejected() {
    let v_s = Phasor::new(1.0, 0.0);
    let v_r = Phasor::new(1.0, 0.0);
    let i_r = Phasor::new(1.0, 0.3);
    assert_eq!(tan_delta_sample(v_s, v_r, i_r, 1e-12), None);
}
