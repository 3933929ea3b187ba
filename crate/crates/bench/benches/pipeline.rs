use std::hint::black_box;

use abintent_core::corpus::{clean_text, Segment, Source};
use abintent_core::ngram::{score_ngrams, NgramConfig, NgramIndex};
use abintent_core::sequence::{ModelConfig, SequenceModel};
use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 16] = [
    "we", "will", "make", "them", "pay", "the", "river", "flows", "north", "i", "am", "going", "to", "read", "quiet", "garden",
];

fn segments(n: usize) -> Vec<Segment> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..n)
        .map(|i| {
            let len = rng.random_range(5..20);
            let text: Vec<&str> = (0..len).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
            Segment {
                segment_id: format!("d{}:{}", i / 10, i % 10),
                doc_id: format!("d{}", i / 10),
                index_in_doc: i % 10,
                text: text.join(" "),
                token_count: len,
                source: Source::Stormfront,
                question: false,
            }
        })
        .collect()
}

fn cleaning(c: &mut Criterion) {
    let post = "[quote=Someone]They said THIS!!!![/quote] Check https://example.org/x?y=1 #MakeThemPayNow \
                sooooo many people... <b>we</b> will not stand for it &amp; more\u{2019}s coming :) "
        .repeat(20);
    c.bench_function("clean_text/forum_post", |b| b.iter(|| clean_text(black_box(&post), true)));
}

fn ngram_index(c: &mut Criterion) {
    let segs = segments(2000);
    c.bench_function("ngram_index/build_2000", |b| {
        b.iter(|| NgramIndex::build(black_box(&segs), NgramConfig::default()).unwrap())
    });
    let index = NgramIndex::build(&segs, NgramConfig::default()).unwrap();
    let labels: Vec<f64> = (0..segs.len()).map(|i| [0.0, 1.0, 0.5][i % 3]).collect();
    c.bench_function("ngram_index/score_2000", |b| {
        b.iter(|| score_ngrams(&index, black_box(&labels), None).unwrap())
    });
}

fn model_forward(c: &mut Criterion) {
    let config = ModelConfig {
        max_tokens: 50,
        embedding_dim: 50,
        recurrent_units: 32,
        attention_dim: 64,
        dense_units: 16,
        ..ModelConfig::default()
    };
    let model = SequenceModel::new(config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Array2::from_shape_fn((50, 50), |_| rng.random_range(-1.0..1.0));
    c.bench_function("sequence_model/forward_50x50", |b| b.iter(|| model.forward(black_box(x.view()))));
}

criterion_group!(benches, cleaning, ngram_index, model_forward);
criterion_main!(benches);
