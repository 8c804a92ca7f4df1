use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use mfgmpc::{
    empirical, integrate_brs, mfg_fixed_point, nash_sweep, solve_kinetic, w1, DensityGrid, EmpiricalMeasure,
    ModelSpec, MpcScheme, ParticleEnsemble, PicardParams, SpaceGrid, SweepParams,
};

fn spread(n: usize) -> ParticleEnsemble {
    // Deterministic, irregular positions in [0, 1].
    let xs = (0..n).map(|i| (i as f64 * 0.618_033_988_749_895) % 1.0).collect();
    ParticleEnsemble::initial(xs).unwrap()
}

fn bump(cells: usize) -> DensityGrid {
    let grid = SpaceGrid::covering(0.0, 1.0, cells).unwrap();
    DensityGrid::from_density_fn(grid, 4, |x| if (0.0..=1.0).contains(&x) { (-(x - 0.5).powi(2) / 0.045).exp() } else { 0.0 })
        .unwrap()
}

fn particles(c: &mut Criterion) {
    let mut group = c.benchmark_group("integrate_brs");
    group.sample_size(10);
    for n in [128usize, 512, 2048] {
        let model = ModelSpec::consensus(n, 0.5).unwrap();
        let x0 = spread(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| integrate_brs(&model, &x0, 1.0 / 640.0, MpcScheme::Taylor).unwrap())
        });
    }
    group.finish();
}

fn kinetic(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_kinetic");
    group.sample_size(10);
    let model = ModelSpec::consensus(2, 0.5).unwrap();
    for cells in [128usize, 512] {
        let m0 = bump(cells);
        group.bench_with_input(BenchmarkId::from_parameter(cells), &cells, |b, _| {
            b.iter(|| solve_kinetic(&model, &m0, 1.0 / 640.0).unwrap())
        });
    }
    group.finish();
}

fn games(c: &mut Criterion) {
    let mut group = c.benchmark_group("games");
    group.sample_size(10);
    let model = ModelSpec::consensus(4, 1.0).unwrap();
    let x0 = ParticleEnsemble::initial(vec![0.0, 0.0, 1.0, 1.0]).unwrap();
    group.bench_function("nash_sweep_n4", |b| b.iter(|| nash_sweep(&model, &x0, 1.0 / 200.0, SweepParams::default()).unwrap()));
    let mfg_model = ModelSpec::consensus(2, 0.5).unwrap();
    let m0 = bump(128);
    group.bench_function("mfg_fixed_point_m128", |b| {
        b.iter(|| mfg_fixed_point(&mfg_model, &m0, 1.0 / 200.0, PicardParams::default()).unwrap())
    });
    group.finish();
}

fn metric(c: &mut Criterion) {
    let a = empirical(&spread(4096));
    let b = EmpiricalMeasure::new(spread(3000).positions().iter().map(|x| x * x).collect()).unwrap();
    let m = bump(512);
    c.bench_function("w1_atoms_4096_3000", |bench| bench.iter(|| w1(black_box(&a), black_box(&b)).unwrap()));
    c.bench_function("w1_atoms_vs_density_512", |bench| bench.iter(|| w1(black_box(&a), black_box(&m)).unwrap()));
}

criterion_group!(benches, particles, kinetic, games, metric);
criterion_main!(benches);
