//! Sequential vs parallel backends on the per-cell hot loops.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use vpl_core::exec::Exec;
use vpl_core::solver::{DtPolicy, InitialData, Integrator, MeshSpec, Mode, Simulation, SolverConfig};

fn sim(exec: Exec, mode: Mode) -> Simulation {
    Simulation::new(SolverConfig {
        v_max: 6.0,
        n_axis: 12,
        mesh: MeshSpec::Slab { length: 1.0, n_cells: 32 },
        mode,
        integrator: Integrator::Exponential,
        dt: DtPolicy::Cfl { safety: 0.9 },
        initial: InitialData::IsotropicBump,
        exec,
        ..Default::default()
    })
    .unwrap()
}

fn backends(c: &mut Criterion) {
    let mut group = c.benchmark_group("backend");
    group.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        let name = format!("{exec:?}").to_lowercase();
        let s = sim(exec, Mode::Frozen);
        let f = s.initial_field().unwrap();
        group.bench_with_input(BenchmarkId::new("apply_l", &name), &f, |b, f| b.iter(|| s.ops.apply_field(black_box(f), exec, |o, x| o.apply_l(x))));
        group.bench_with_input(BenchmarkId::new("transport", &name), &f, |b, f| b.iter(|| s.step_transport(black_box(f), s.dt).unwrap()));
        let full = sim(exec, Mode::Full);
        group.bench_with_input(BenchmarkId::new("collision_full", &name), &f, |b, f| b.iter(|| full.step_collision(black_box(f), full.dt, 1).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, backends);
criterion_main!(benches);
