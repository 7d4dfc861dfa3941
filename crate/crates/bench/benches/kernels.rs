use std::hint::black_box;

use alterlang_core::mlm::{EncoderModel, ModelConfig};
use alterlang_core::{
    alter, orthonormalize, project_nullspace_batch, train_classifier, ClassifierConfig, EmbeddingMatrix, PushSpec,
    Side, TokenDataset,
};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_rows(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn projection(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("project_nullspace_batch");
    for dim in [64, 768] {
        let basis = orthonormalize(&random_rows(&mut rng, 8, dim)).unwrap();
        let states = EmbeddingMatrix::from_rows(&random_rows(&mut rng, 1000, dim)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(dim), &dim, |b, _| {
            b.iter(|| project_nullspace_batch(black_box(&states), &basis).unwrap())
        });
    }
    group.finish();
}

fn alter_single(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let basis = orthonormalize(&random_rows(&mut rng, 16, 768)).unwrap();
    let h = random_rows(&mut rng, 1, 768).remove(0);
    let push = PushSpec::toward(Side::L2, 3.0).unwrap();
    c.bench_function("alter_768_m16", |b| b.iter(|| alter(black_box(&h), &basis, &push).unwrap()));
}

fn classifier(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rows = random_rows(&mut rng, 2000, 64);
    let labels: Vec<Side> = (0..rows.len()).map(|i| if i % 2 == 0 { Side::L1 } else { Side::L2 }).collect();
    for (row, side) in rows.iter_mut().zip(&labels) {
        row[0] += side.target();
    }
    let data = TokenDataset::new(EmbeddingMatrix::from_rows(&rows).unwrap(), labels).unwrap();
    let config = ClassifierConfig {
        epochs: 20,
        ..Default::default()
    };
    c.bench_function("train_classifier_2000x64_20ep", |b| {
        b.iter(|| train_classifier(black_box(&data), &config).unwrap())
    });
}

fn encoder(c: &mut Criterion) {
    let model = EncoderModel::new(ModelConfig::default(), 200, 4).unwrap();
    let ids: Vec<usize> = (0..20).map(|i| 3 + i * 7 % 190).collect();
    c.bench_function("encode_20_tokens", |b| b.iter(|| model.encode(black_box(&ids)).unwrap()));
}

criterion_group!(benches, projection, alter_single, classifier, encoder);
criterion_main!(benches);
