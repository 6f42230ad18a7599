use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use glocal::homogenize::{solve_cell_problem, CellBc, CellProblemSpec};
use glocal::linalg::SolverOptions;
use glocal::mesh::{build_locally_refined_mesh, DefectGeometry, MeshSpec};
use glocal::metrics::transfer_to_fine;
use glocal::{
    assemble_mass, assemble_stiffness, build_structured_mesh, cg_solve, hybrid,
    two_scale_coefficient, two_scale_effective, FeFunction, RhoMode,
};
use std::sync::Arc;

fn bench_mesh_build(c: &mut Criterion) {
    let mut group = c.benchmark_group("mesh");
    group.bench_function("locally_refined_well_h256", |b| {
        let spec = MeshSpec::new(1.0 / 16.0, 1.0 / 256.0, DefectGeometry::well());
        b.iter(|| build_locally_refined_mesh(&spec).unwrap())
    });
    group.finish();
}

fn bench_assembly(c: &mut Criterion) {
    let mut group = c.benchmark_group("assembly");
    for n in [32usize, 64] {
        let mesh = Arc::new(glocal::tag_regions(
            build_structured_mesh(n).unwrap(),
            &DefectGeometry::well(),
        ).unwrap());
        let micro = Arc::new(two_scale_coefficient(0.04, 2.5, 1.5).unwrap());
        let macro_f = Arc::new(two_scale_effective(2.5, 1.5).unwrap());
        let b_coeff = hybrid(
            micro,
            macro_f,
            &mesh,
            &DefectGeometry::well(),
            RhoMode::Indicator,
        )
        .unwrap();
        group.bench_with_input(BenchmarkId::new("stiffness_hybrid", n), &n, |b, _| {
            b.iter(|| assemble_stiffness(&mesh, &b_coeff).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("mass", n), &n, |b, _| {
            b.iter(|| assemble_mass(&mesh).unwrap())
        });
    }
    group.finish();
}

fn bench_cg(c: &mut Criterion) {
    let mesh = Arc::new(build_structured_mesh(64).unwrap());
    let coeff = two_scale_effective(2.5, 1.5).unwrap();
    let mass = assemble_mass(&mesh).unwrap();
    let stiffness = assemble_stiffness(&mesh, &coeff).unwrap();
    let system = mass
        .add_scaled(&stiffness, 0.02)
        .unwrap()
        .eliminate_dirichlet(mesh.boundary_flags())
        .unwrap();
    let mut rhs = glocal::assemble_load(&mesh, |_| 1.0);
    glocal::fem::zero_dirichlet(&mesh, &mut rhs);
    c.bench_function("cg/backward_euler_step_n64", |b| {
        b.iter(|| cg_solve(&system, &rhs, None, &SolverOptions::default()).unwrap())
    });
}

fn bench_cell_problem(c: &mut Criterion) {
    let micro = two_scale_coefficient(0.04, 2.5, 1.5).unwrap();
    let spec = CellProblemSpec {
        center: [0.25, 0.25],
        delta: 0.04,
        bc: CellBc::Periodic,
        cell_n: 32,
    };
    c.bench_function("hmm/cell_problem_n32", |b| {
        b.iter(|| solve_cell_problem(&spec, &micro).unwrap())
    });
}

fn bench_transfer(c: &mut Criterion) {
    let coarse = Arc::new(build_structured_mesh(32).unwrap());
    let fine = Arc::new(build_structured_mesh(128).unwrap());
    let f = FeFunction::interpolate(coarse, |x| (x[0] * x[1]).sin(), None);
    c.bench_function("transfer/32_to_128", |b| {
        b.iter(|| transfer_to_fine(&f, &fine).unwrap())
    });
}

criterion_group!(
    benches,
    bench_mesh_build,
    bench_assembly,
    bench_cg,
    bench_cell_problem,
    bench_transfer
);
criterion_main!(benches);
