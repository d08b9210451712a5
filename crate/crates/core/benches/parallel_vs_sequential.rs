use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taco_core::compressor::{compress_document, CompressOptions};
use taco_core::corpus::{Sample, TokenSequence};
use taco_core::evaluator::{evaluate, EvalMetric, EvalOptions, DEFAULT_RATES};
use taco_core::oracle::LocalOracle;
use taco_core::policy::{exact_expected_gradient, Dims, PolicyParameters};
use taco_core::rewards::CorpusStats;
use taco_core::toy::{keyword_corpus, toy_vocabulary, ToyConfig};
use taco_core::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn compress_long_document(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = PolicyParameters::init(1, Dims::new(1000, 32, 1).unwrap()).unwrap();
    let doc = TokenSequence::from_ids((0..8192).map(|_| rng.random_range(0..1000)).collect()).unwrap();
    let mut group = c.benchmark_group("compress_document_8192");
    for (name, exec) in MODES {
        let opts = CompressOptions {
            exec,
            ..CompressOptions::topk(0.33)
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| compress_document(black_box(&doc), &params, &opts).unwrap())
        });
    }
    group.finish();
}

fn exhaustive_gradient(c: &mut Criterion) {
    let params = PolicyParameters::init(2, Dims::new(50, 8, 1).unwrap()).unwrap();
    let seq = TokenSequence::from_ids((0..14).map(|i| i * 3 % 50).collect()).unwrap();
    let reward = |m: &taco_core::policy::ActionMask| m.kept() as f64 / 14.0;
    let mut group = c.benchmark_group("exact_expected_gradient_n14");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| exact_expected_gradient(&params, black_box(&seq), reward, exec).unwrap())
        });
    }
    group.finish();
}

fn batch_evaluation(c: &mut Criterion) {
    let prompts = keyword_corpus(&ToyConfig {
        prompts: 100,
        ..ToyConfig::default()
    });
    let data: Vec<Sample> = prompts.into_iter().map(|p| p.sample).collect();
    let vocab = toy_vocabulary();
    let params = PolicyParameters::init(3, Dims::new(vocab.len(), 16, 1).unwrap()).unwrap();
    let oracle = LocalOracle::new(Arc::new(CorpusStats::build(data.iter().map(|s| s.context.as_str()))));
    let mut group = c.benchmark_group("evaluate_100_samples");
    group.sample_size(10);
    for (name, exec) in MODES {
        let opts = EvalOptions {
            max_output_tokens: 5,
            exec,
            ..EvalOptions::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluate(&data, &vocab, &params, &DEFAULT_RATES, &oracle, &EvalMetric::ALL, &opts).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, compress_long_document, exhaustive_gradient, batch_evaluation);
criterion_main!(benches);
