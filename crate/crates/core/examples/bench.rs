//! Mean seconds per training epoch with and without character encoders.

use chartag::data::{generate_synthetic_corpus, SynthSpec};
use chartag::encoders::{CharEncoder, ModelConfig};
use chartag::trainer::{bench_table, benchmark_runtime, TrainConfig};

fn main() {
    let corpus = generate_synthetic_corpus(&SynthSpec {
        sentences: 100,
        ..Default::default()
    })
    .unwrap();
    let cfgs: Vec<TrainConfig> = [CharEncoder::None, CharEncoder::Cnn, CharEncoder::Lstm]
        .into_iter()
        .map(|char_encoder| TrainConfig {
            model: ModelConfig {
                char_encoder,
                ..Default::default()
            },
            ..Default::default()
        })
        .collect();
    let rows = benchmark_runtime(&cfgs, &corpus, 3).unwrap();
    print!("{}", bench_table(&rows));
}
