use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use softlimb::cosserat::{
    solve_statics, LimbGeometry, MaterialProperties, SolverOptions, TendonForces,
};
use softlimb::dataset::{generate_dataset, GeneratorConfig, Normalizer};
use softlimb::evaluation::ForcePredictor;
use softlimb::ffnn::{FfnnConfig, FfnnModel};
use softlimb::kt::{KtConfig, KtModel};
use softlimb::numerics::Rng;

fn statics(c: &mut Criterion) {
    let (g, m, o) = (
        LimbGeometry::default(),
        MaterialProperties::default(),
        SolverOptions::default(),
    );
    c.bench_function("solve_statics/rest", |b| {
        b.iter(|| solve_statics(&g, &m, black_box(&TendonForces::ZERO), &o).unwrap())
    });
    let pull = TendonForces([6.0, 1.0, 3.0, 0.5]);
    c.bench_function("solve_statics/loaded", |b| {
        b.iter(|| solve_statics(&g, &m, black_box(&pull), &o).unwrap())
    });
}

fn predictors(c: &mut Criterion) {
    let gen = GeneratorConfig {
        episodes: 4,
        steps_per_episode: 30,
        ..Default::default()
    };
    let episodes = generate_dataset(
        &LimbGeometry::default(),
        &MaterialProperties::default(),
        &SolverOptions::default(),
        &gen,
        1,
        Some(1),
    )
    .unwrap();
    let norm = Normalizer::fit(&episodes, 25, 25).unwrap();
    let context = &episodes[0];

    for (name, config) in [
        ("desk", KtConfig::desk_scale()),
        ("full", KtConfig::default()),
    ] {
        let kt = KtModel::new(config, norm.clone(), &mut Rng::new(2)).unwrap();
        c.bench_function(&format!("kt_predict/{name}"), |b| {
            b.iter(|| kt.predict_last(black_box(context)).unwrap())
        });
    }
    let ffnn = FfnnModel::new(FfnnConfig::default(), norm, &mut Rng::new(3)).unwrap();
    c.bench_function("ffnn_predict", |b| {
        b.iter(|| ffnn.predict_last(black_box(context)).unwrap())
    });
}

fn gemm(c: &mut Criterion) {
    let mut rng = Rng::new(4);
    let a = rng.uniform_tensor(&[256, 256], -1.0, 1.0);
    let b = rng.uniform_tensor(&[256, 256], -1.0, 1.0);
    c.bench_function("matmul/256", |bench| {
        bench.iter(|| black_box(&a).matmul(black_box(&b)).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = statics, predictors, gemm
}
criterion_main!(benches);
