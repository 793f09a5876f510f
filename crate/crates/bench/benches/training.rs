use criterion::{criterion_group, criterion_main, Criterion};
use road_core::classifiers::{eval_accuracy, image_features, train_logistic, train_logistic_ensemble};
use road_core::toyworld::{experiment_train_config, sample_dataset, GpDatasetConfig};

fn training(c: &mut Criterion) {
    let cfg = GpDatasetConfig {
        n_samples: 600,
        ..GpDatasetConfig::default()
    };
    let ds = sample_dataset(&cfg).unwrap();
    let x = image_features(ds.images());
    let train = experiment_train_config();

    let mut group = c.benchmark_group("logistic_600x784");
    group.sample_size(10);
    group.bench_function("one_model", |b| {
        b.iter(|| train_logistic(&x, ds.labels(), 2, &train).unwrap())
    });
    group.bench_function("ensemble_of_4", |b| {
        b.iter(|| train_logistic_ensemble(&x, ds.labels(), 2, &train, &[0, 1, 2, 3]).unwrap())
    });
    let model = train_logistic(&x, ds.labels(), 2, &train).unwrap();
    group.bench_function("evaluate", |b| b.iter(|| eval_accuracy(&model, &x, ds.labels()).unwrap()));
    group.finish();
}

criterion_group!(benches, training);
criterion_main!(benches);
