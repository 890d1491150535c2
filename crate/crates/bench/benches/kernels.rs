use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use racesim_bench::{six_horse_grid, workload, RACE_DISTANCE};
use racesim_core::covariates::{spatial_covariates, Standardizer, N_FORWARD};
use racesim_core::inference::{value_and_gradient, ModelData, Priors, Vocabulary};
use racesim_core::{Basis, SimConfig, Simulator, SplineSpec, TrackPosition};

fn basis(c: &mut Criterion) {
    let basis = Basis::new(SplineSpec::default()).unwrap();
    let mut buf = [0.0; 4];
    c.bench_function("basis_eval_1000", |b| {
        b.iter(|| {
            for k in 0..1000 {
                black_box(basis.eval_into(black_box(k as f64 * 1.65), &mut buf).unwrap());
            }
        })
    });
}

fn covariates(c: &mut Criterion) {
    let field: Vec<TrackPosition> = (0..10)
        .map(|k| TrackPosition::new(400.0 + 1.7 * k as f64, 0.4 + 0.9 * (k % 4) as f64))
        .collect();
    c.bench_function("spatial_covariates_10", |b| {
        b.iter(|| {
            for me in 0..field.len() {
                black_box(spatial_covariates(black_box(&field), me));
            }
        })
    });
}

fn gradient(c: &mut Criterion) {
    let w = workload(4);
    let vocab = Vocabulary::from_rows(&w.rows);
    let basis = Basis::new(SplineSpec::default()).unwrap();
    let std = Standardizer::identity(N_FORWARD);
    let data = ModelData::forward(&w.rows, &vocab, &basis, &std, true).unwrap();
    let priors = Priors::default();
    let theta = data.layout.prior_mode(&priors);
    c.bench_function(&format!("forward_value_and_gradient_{}_rows", data.n_rows()), |b| {
        b.iter(|| black_box(value_and_gradient(black_box(&theta), &data, &priors).unwrap()))
    });
}

fn simulate(c: &mut Criterion) {
    let w = workload(2);
    let config = SimConfig {
        race_distance: RACE_DISTANCE,
        ..SimConfig::default()
    };
    let sim = Simulator::new(&w.truth, &w.data.track, config).unwrap();
    let start = six_horse_grid(&w);
    let draw = w.truth.map_draw();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("simulation");
    group.sample_size(20);
    group.bench_function("simulate_race_6_horses", |b| {
        b.iter(|| black_box(sim.simulate_race(&start, &draw, &mut rng).unwrap()))
    });
    group.bench_function("posterior_predictive_100", |b| {
        b.iter(|| black_box(sim.posterior_predictive(&start, 100, 5).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, basis, covariates, gradient, simulate);
criterion_main!(benches);
