use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use memflow::circuit::CircuitSystem;
use memflow::cnf::generate_planted_ksat;
use memflow::dynamics::{default_initial_state, rk4_in_place, Rk4Workspace};
use memflow::field::VectorField;
use memflow::rng::seeded;
use memflow::topology::{check_family, FieldFamily};

fn system(n: usize) -> CircuitSystem {
    let (formula, _) = generate_planted_ksat(n, 4.25, 3, 1).unwrap();
    CircuitSystem::with_defaults(formula)
}

fn flow_field(c: &mut Criterion) {
    let mut group = c.benchmark_group("flow_field");
    for n in [50, 200, 800] {
        let sys = system(n);
        let x = default_initial_state(&sys, &mut seeded(2)).into_flat();
        let mut out = vec![0.0; sys.dim()];
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| sys.eval(black_box(&x), &mut out)));
    }
    group.finish();
}

fn rk4_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("rk4_step");
    for n in [50, 200, 800] {
        let sys = system(n);
        let x0 = default_initial_state(&sys, &mut seeded(2)).into_flat();
        let mut ws = Rk4Workspace::new(sys.dim());
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            let mut x = x0.clone();
            b.iter(|| rk4_in_place(&sys, &mut x, 0.05, 0.0, &mut ws).unwrap())
        });
    }
    group.finish();
}

fn generator(c: &mut Criterion) {
    c.bench_function("planted_3sat_n200", |b| {
        let mut seed = 0;
        b.iter(|| {
            seed += 1;
            generate_planted_ksat(200, 4.25, 3, seed).unwrap()
        })
    });
}

fn topology(c: &mut Criterion) {
    c.bench_function("topo_sphere_quadric_sweep20", |b| b.iter(|| check_family(FieldFamily::SphereQuadric, 20)));
}

criterion_group!(benches, flow_field, rk4_step, generator, topology);
criterion_main!(benches);
