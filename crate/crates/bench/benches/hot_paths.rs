use criterion::{black_box, criterion_group, criterion_main, Criterion};

use linewatch_bench::{drake, operating_point, threshold_dataset};
use linewatch_core::detector::tan_delta_complex;
use linewatch_core::dtree::{best_split, train, TrainConfig};
use linewatch_core::phasor::solve_complex;
use linewatch_core::sim::{run_summary, RunSpec};
use linewatch_core::thermal::{step_conductor_temp, ThermalState, Weather};

fn phasor(c: &mut Criterion) {
    let (_, seg) = drake();
    let op = operating_point();
    let z = seg.impedance_at(60.0, 0.0);
    c.bench_function("solve_complex", |b| {
        b.iter(|| solve_complex(black_box(z), 0.0, black_box(&op)))
    });
    let s = solve_complex(z, 0.0, &op).unwrap();
    c.bench_function("tan_delta_complex", |b| {
        b.iter(|| tan_delta_complex(black_box(s.v_s), black_box(s.v_r), black_box(s.i_r), 1e-9))
    });
}

fn thermal(c: &mut Criterion) {
    let (params, seg) = drake();
    let weather = Weather {
        v_w: 1.0,
        t_a: 40.0,
    };
    c.bench_function("thermal_step", |b| {
        b.iter(|| {
            step_conductor_temp(
                black_box(ThermalState::lumped(50.0, 40.0)),
                &params,
                &seg,
                black_box(800.0),
                weather,
                2e-4,
            )
        })
    });
}

fn simulation(c: &mut Criterion) {
    let spec = RunSpec::default();
    c.bench_function("run_summary_default", |b| {
        b.iter(|| run_summary(black_box(&spec)).unwrap())
    });
}

fn tree(c: &mut Criterion) {
    let data = threshold_dataset(10_000);
    let idx: Vec<usize> = (0..data.len()).collect();
    c.bench_function("best_split_10k", |b| {
        b.iter(|| best_split(black_box(&data), &idx, 200))
    });
    c.bench_function("train_10k", |b| {
        b.iter(|| train(black_box(&data), &TrainConfig::default()).unwrap())
    });
}

criterion_group!(benches, phasor, thermal, simulation, tree);
criterion_main!(benches);
