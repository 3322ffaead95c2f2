use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use cprank::covers::{ball_cover, cover_strict_order, strict_refinement};
use cprank::cpmap::{strict_order_abelian, ORTHOGONALITY_TOL};
use cprank::cprlab::{approx_from_cover, build_cp_approx, extract_cover, extraction_plan};
use cprank::matfun::Mat;
use cprank::projkit::{connect_projections, repair_almost_projection};
use cprank::{sample, AlgebraElement, Cover, FiniteMetricSpace, FunctionSystem, Tolerances};

fn projections(c: &mut Criterion) {
    let tol = Tolerances::default();
    let mut rng = sample::rng(1);
    let values = [0.02, 0.97, 0.04, 0.99, 0.01, 0.95];
    let h = AlgebraElement::from_matrix(sample::hermitian_with_spectrum(&mut rng, &values));
    c.bench_function("repair_almost_projection/6", |b| {
        b.iter(|| repair_almost_projection(black_box(&h), 0.1, tol).unwrap())
    });

    let p = sample::random_projection(&mut rng, 6, 3);
    let u = sample::unitary_near(&mut rng, &Mat::identity(6, 6), 0.05);
    let q = &u * &p * u.adjoint();
    let q = AlgebraElement::from_matrix((&q + q.adjoint()).scale(0.5));
    let p = AlgebraElement::from_matrix(p);
    c.bench_function("connect_projections/6", |b| {
        b.iter(|| connect_projections(black_box(&p), black_box(&q), 0.2, tol).unwrap())
    });
}

fn covers(c: &mut Criterion) {
    let mut group = c.benchmark_group("strict_refinement");
    for n in [50, 100, 200] {
        let space = FiniteMetricSpace::circle_grid(n).unwrap();
        let u = ball_cover(&space, 0.3 * space.diameter()).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| strict_refinement(&space, black_box(&u)).unwrap())
        });
    }
    group.finish();

    let space = FiniteMetricSpace::torus_grid(8, 8).unwrap();
    let u = ball_cover(&space, 0.25 * space.diameter()).unwrap();
    c.bench_function("cover_strict_order/torus8x8", |b| {
        b.iter(|| cover_strict_order(black_box(&u)))
    });
}

fn approximations(c: &mut Criterion) {
    let mut group = c.benchmark_group("build_cp_approx");
    for n in [51, 101, 201] {
        let space = FiniteMetricSpace::interval_grid(n).unwrap();
        let probes = FunctionSystem::coordinates(&space);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| build_cp_approx(&space, black_box(&probes), 0.1, 0).unwrap())
        });
    }
    group.finish();

    let space = FiniteMetricSpace::interval_grid(101).unwrap();
    let built = build_cp_approx(&space, &FunctionSystem::coordinates(&space), 0.05, 0).unwrap();
    c.bench_function("strict_order_abelian/interval101", |b| {
        b.iter(|| strict_order_abelian(black_box(&built.approx.phi), ORTHOGONALITY_TOL).unwrap())
    });
}

fn extraction(c: &mut Criterion) {
    let space = FiniteMetricSpace::interval_grid(201).unwrap();
    let u = Cover::new(vec![
        (0..=100).collect(),
        (60..=160).collect(),
        (120..=200).collect(),
    ]);
    let plan = extraction_plan(&space, &u, 1, 0).unwrap();
    let approx = approx_from_cover(&space, &plan.v).unwrap().0;
    let mut group = c.benchmark_group("extract_cover");
    group.sample_size(10);
    group.bench_function("interval201", |b| {
        b.iter(|| extract_cover(&space, black_box(&u), 1, &approx, 0).unwrap())
    });
    group.finish();
}

criterion_group!(benches, projections, covers, approximations, extraction);
criterion_main!(benches);
