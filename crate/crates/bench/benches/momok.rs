use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use momok_bench::{toy_config, toy_dataset, toy_model};
use momok_core::exid::{bivariate_gaussian, club_pair, QNet};
use momok_core::numeric::params::ParamStore;
use momok_core::{evaluate_split, EvalOptions, Modality, Rng, Split, Trainer};

fn training(c: &mut Criterion) {
    let data = toy_dataset();
    let cfg = toy_config();
    c.bench_function("train_epoch_latent50", |b| {
        b.iter_batched(
            || Trainer::new(&cfg, &data).unwrap(),
            |mut t| black_box(t.run_epoch().unwrap()),
            criterion::BatchSize::SmallInput,
        )
    });
}

fn evaluation(c: &mut Criterion) {
    let data = toy_dataset();
    let model = toy_model(&data);
    c.bench_function("evaluate_train_split_latent50", |b| {
        b.iter(|| black_box(evaluate_split(&model, &data, Split::Train, EvalOptions::default()).unwrap()))
    });
}

fn club(c: &mut Criterion) {
    let mut rng = Rng::new(7);
    let mut store = ParamStore::new();
    let dim = 32;
    let q = QNet::new(&mut store, Modality::Image, dim, dim, &mut rng);
    let (x1, _) = bivariate_gaussian(256 * dim, 0.5, &mut rng);
    let x = x1.into_shape_with_order((256, dim)).unwrap();
    let y = x.mapv(|v| v * 0.5);
    c.bench_function("club_pair_256x32", |b| {
        b.iter(|| black_box(club_pair(&q, store.values(), &x, &y, true).unwrap()))
    });
}

criterion_group!(benches, training, evaluation, club);
criterion_main!(benches);
