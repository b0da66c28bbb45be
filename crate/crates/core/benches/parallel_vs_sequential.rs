//! Sequential against rayon-parallel execution for each data-parallel stage.
//! Build with `--no-default-features` to see the parallel rows collapse onto
//! the sequential ones.

use std::hint::black_box;
use std::path::Path;

use cc_core::augment::{AugmentationPipeline, PairMode};
use cc_core::data::gaussian_blobs;
use cc_core::kmeans::{kmeans, KMeansConfig};
use cc_core::model::init_params;
use cc_core::{
    derive_seed, train_with, Execution, ExperimentConfig, Geometry, Matrix, ModelConfig,
};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const POLICIES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [64, 256] {
        let a = random(n, n, 1);
        let b = random(n, n, 2);
        for (name, exec) in POLICIES {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |bench, _| {
                bench.iter(|| a.matmul_with(black_box(&b), exec).unwrap())
            });
        }
    }
    group.finish();
}

fn augment(c: &mut Criterion) {
    let mut group = c.benchmark_group("augment_batch");
    let geometry = Geometry::Image {
        height: 28,
        width: 28,
    };
    let pipeline = AugmentationPipeline::default_for(geometry);
    let batch = random(256, 28 * 28, 3).map(|v| v.abs());
    let keys: Vec<u64> = (0..256).map(|i| derive_seed(7, &[i])).collect();
    for (name, exec) in POLICIES {
        group.bench_function(BenchmarkId::new(name, "256x28x28"), |bench| {
            bench.iter(|| {
                pipeline
                    .augment_batch(
                        black_box(&batch),
                        geometry,
                        PairMode::AugmentBoth,
                        &keys,
                        exec,
                    )
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn clustering(c: &mut Criterion) {
    let mut group = c.benchmark_group("kmeans");
    let data = gaussian_blobs(4, 128, 16, 10.0, 1.0, 0).unwrap();
    for (name, exec) in POLICIES {
        group.bench_function(BenchmarkId::new(name, "512x16_k4"), |bench| {
            bench.iter(|| {
                kmeans(
                    black_box(&data.samples),
                    4,
                    1,
                    &KMeansConfig::default(),
                    exec,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn predict(c: &mut Criterion) {
    let mut group = c.benchmark_group("predict_assignments");
    let params = init_params(&ModelConfig {
        input_dim: 16,
        encoder_widths: vec![64, 64],
        instance_dim: 128,
        head_hidden: None,
        cluster_count: 4,
        init_seed: 0,
    })
    .unwrap();
    let x = random(4096, 16, 4);
    for (name, exec) in POLICIES {
        group.bench_function(BenchmarkId::new(name, "4096x16"), |bench| {
            bench.iter(|| {
                params
                    .predict_assignments_with(black_box(&x), exec)
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn training_epoch(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_epoch");
    group.sample_size(10);
    let config = ExperimentConfig {
        epochs: 1,
        ..Default::default()
    };
    let data = config.prepare_dataset(Path::new(".")).unwrap();
    for (name, exec) in POLICIES {
        group.bench_function(BenchmarkId::new(name, "blobs_512"), |bench| {
            bench.iter(|| train_with(&config, black_box(&data), exec, |_| {}).unwrap())
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    matmul,
    augment,
    clustering,
    predict,
    training_epoch
);
criterion_main!(benches);
