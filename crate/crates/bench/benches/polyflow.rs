use criterion::{black_box, criterion_group, criterion_main, Criterion};
use polyflow_core::flows::{square_generators, DEFAULT_TOL};
use polyflow_core::{
    build_partition_of_unity, catalog, integrate_flow, is_simple, CompatibleFamily, ExtensionOperator, Field, Vector,
};

fn lattice(c: &mut Criterion) {
    c.bench_function("is_simple dodecahedron", |b| {
        let p = catalog::polytope("dodecahedron").unwrap();
        b.iter(|| is_simple(black_box(&p)))
    });
    c.bench_function("build cube4", |b| b.iter(|| catalog::polytope(black_box("cube4")).unwrap()));
}

fn extension(c: &mut Criterion) {
    let p = catalog::polytope("cube3").unwrap();
    c.bench_function("partition of unity cube3", |b| b.iter(|| build_partition_of_unity(black_box(&p)).unwrap()));
    let op = ExtensionOperator::new(&p, 2).unwrap();
    let g = Field::scalar(3, |x| x[0] * x[1] - x[2] * x[2]);
    let s = op.apply(&CompatibleFamily::restrict(&p, 2, &g)).unwrap();
    let x = Vector::from_vec(vec![0.3, 0.6, 0.2]);
    c.bench_function("extension eval cube3", |b| b.iter(|| s.eval(black_box(&x))));
}

fn flows(c: &mut Criterion) {
    let sq = catalog::polytope("square").unwrap();
    let (z1, _) = square_generators(&sq).unwrap();
    let x0 = Vector::from_vec(vec![0.2, 0.8]);
    c.bench_function("flow Z1 square", |b| b.iter(|| integrate_flow(&z1, black_box(&x0), 1.0, DEFAULT_TOL).unwrap()));
}

criterion_group!(benches, lattice, extension, flows);
criterion_main!(benches);
