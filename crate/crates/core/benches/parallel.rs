//! Parallel vs sequential throughput of a training step and batch decoding.
//!
//! With the `parallel` feature the sequential case runs inside a one-thread
//! rayon pool; without it only the sequential case is measured.

use avgout::avgout::AvgOutTracker;
use avgout::corpus::{self, DialogueExample, PaddedBatch};
use avgout::losses::{objective_step, RewardBaseline, Sampling, StepSpec};
use avgout::model::{ModelConfig, Seq2Seq};
use avgout::trainer::TrainConfig;
use avgout::Objective;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

struct Fixture {
    model: Seq2Seq,
    batch: PaddedBatch,
    sources: Vec<Vec<corpus::TokenId>>,
    tracker: AvgOutTracker,
}

fn fixture() -> Fixture {
    let text = corpus::synthetic_corpus_lines(64, 0.5, 1)
        .unwrap()
        .join("\n");
    let vocab = corpus::build_vocabulary_from_str(&text, 1, usize::MAX).unwrap();
    let examples = corpus::parse_examples(
        &text,
        &vocab,
        TrainConfig::new(Objective::Ml).load_options(),
    )
    .unwrap();
    let refs: Vec<&DialogueExample> = examples.iter().take(32).collect();
    let cfg = ModelConfig {
        vocab_size: vocab.len(),
        embedding_dim: 32,
        encoder_hidden: 32,
        decoder_hidden: 64,
        attention_dim: 32,
        diversity_label: false,
    };
    Fixture {
        model: Seq2Seq::new(cfg, 1).unwrap(),
        batch: PaddedBatch::from_examples(&refs),
        sources: examples.iter().map(|e| e.source.clone()).collect(),
        tracker: AvgOutTracker::for_vocab(vocab.len(), 0.01).unwrap(),
    }
}

fn step(f: &Fixture) {
    let spec = StepSpec {
        alpha: 50.0,
        beta: 50.0,
        sampling: Sampling::Draw {
            seed: 1,
            max_len: 12,
        },
    };
    let baseline = RewardBaseline::new(0.01);
    black_box(objective_step(&f.model, &f.batch, &f.tracker, &baseline, spec).unwrap());
}

fn decode(f: &Fixture) {
    black_box(f.model.decode_greedy_batch(&f.sources, None, 12));
}

fn bench(c: &mut Criterion) {
    let f = fixture();
    type Case = (&'static str, fn(&Fixture));
    let cases: [Case; 2] = [("hybrid_step", step), ("greedy_decode_64", decode)];
    for (name, work) in cases {
        let mut g = c.benchmark_group(name);
        g.sample_size(10);
        #[cfg(feature = "parallel")]
        {
            let single = rayon::ThreadPoolBuilder::new()
                .num_threads(1)
                .build()
                .unwrap();
            g.bench_function(BenchmarkId::new("sequential", 1), |b| {
                b.iter(|| single.install(|| work(&f)))
            });
            let n = rayon::current_num_threads();
            g.bench_function(BenchmarkId::new("parallel", n), |b| b.iter(|| work(&f)));
        }
        #[cfg(not(feature = "parallel"))]
        g.bench_function(BenchmarkId::new("sequential", 1), |b| b.iter(|| work(&f)));
        g.finish();
    }
}

criterion_group!(benches, bench);
criterion_main!(benches);
