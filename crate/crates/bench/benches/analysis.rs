use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use num_complex::Complex64;

use pollcalc_core::cycletime::cycle_lst_begin;
use pollcalc_core::numerics::{cdf_grid, waiting_cdf, EulerParams};
use pollcalc_core::optimizer::apply_thresholds;
use pollcalc_core::presets::two_queue;
use pollcalc_core::simulator::simulate;
use pollcalc_core::waiting::all_mean_waits;
use pollcalc_core::{AnalysisReport, Discipline, SimConfig, System};

fn split(d: Discipline) -> System {
    System::new(apply_thresholds(&two_queue(d), 0, &[0.6, 1.4, 2.7]).unwrap()).unwrap()
}

fn transforms(c: &mut Criterion) {
    let w = Complex64::new(0.3, 1.7);
    for d in [Discipline::Gated, Discipline::Exhaustive, Discipline::GloballyGated] {
        let sys = split(d);
        c.bench_function(&format!("cycle_lst/{}", d.name()), |b| {
            b.iter(|| cycle_lst_begin(&sys, 0, black_box(w)).unwrap())
        });
        c.bench_function(&format!("mean_waits/{}", d.name()), |b| {
            b.iter(|| all_mean_waits(black_box(&sys)).unwrap())
        });
        c.bench_function(&format!("report/{}", d.name()), |b| {
            b.iter(|| AnalysisReport::build(black_box(&sys)).unwrap())
        });
    }
}

fn inversion(c: &mut Criterion) {
    let sys = Arc::new(System::new(two_queue(Discipline::Gated)).unwrap());
    let mean = all_mean_waits(&sys).unwrap()[0][0];
    let grid = cdf_grid(mean, 2.0 * mean * mean, 20);
    let p = EulerParams::default();
    c.bench_function("waiting_cdf/gated_20_points", |b| {
        b.iter(|| waiting_cdf(sys.clone(), 0, 0, black_box(&grid), &p).unwrap())
    });
}

fn simulation(c: &mut Criterion) {
    let spec = two_queue(Discipline::Exhaustive);
    let cfg = SimConfig { seed: 1, replications: 10, cycles: 1000, warmup: 100 };
    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);
    g.bench_function("exhaustive_10x1000", |b| b.iter(|| simulate(black_box(&spec), &cfg).unwrap()));
    g.finish();
}

criterion_group!(benches, transforms, inversion, simulation);
criterion_main!(benches);
