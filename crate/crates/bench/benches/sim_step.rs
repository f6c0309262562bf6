use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use c2te_bench::merge_fleet;
use c2te_core::sim::{compute_step_controls, integrate_step, World};

fn bench_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("sim_step");
    for n in [8usize, 50] {
        let scenario = merge_fleet(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &scenario, |b, scenario| {
            let params = scenario.controller_params();
            let world = World::from_scenario(scenario);
            b.iter(|| {
                let mut world = world.clone();
                let controls = compute_step_controls(black_box(&mut world), &params).unwrap();
                integrate_step(&mut world, &controls, scenario.dt_s).unwrap();
                world.snap.vehicles[0].x
            })
        });
    }
    group.finish();
}

fn bench_full_second(c: &mut Criterion) {
    let scenario = merge_fleet(8);
    c.bench_function("run_one_second_8_vehicles", |b| {
        b.iter(|| c2te_core::run(black_box(&scenario)))
    });
}

criterion_group!(benches, bench_step, bench_full_second);
criterion_main!(benches);
