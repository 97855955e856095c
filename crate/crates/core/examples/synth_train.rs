//! Train on a synthetic corpus and score held-out sentences whose entity
//! words never appear in training.

use chartag::data::{generate_synthetic_corpus, SynthSpec};
use chartag::encoders::{CharEncoder, ModelConfig};
use chartag::trainer::{train, TrainConfig};

fn main() {
    env_logger::init();
    let train_set = generate_synthetic_corpus(&SynthSpec::default()).unwrap();
    let dev = generate_synthetic_corpus(&SynthSpec {
        sentences: 60,
        seed: 8,
        entity_seed: 23,
        ..Default::default()
    })
    .unwrap();
    let test = generate_synthetic_corpus(&SynthSpec {
        sentences: 60,
        seed: 9,
        entity_seed: 31,
        ..Default::default()
    })
    .unwrap();

    let char_encoder = match std::env::args().nth(1).as_deref() {
        Some("none") => CharEncoder::None,
        Some("lstm") => CharEncoder::Lstm,
        _ => CharEncoder::Cnn,
    };
    let cfg = TrainConfig {
        model: ModelConfig {
            char_encoder,
            layers: 1,
            hidden: 100,
            ..Default::default()
        },
        max_epochs: 15,
        patience: 5,
        ..Default::default()
    };
    let (_, report) = train(&cfg, &train_set, &dev, Some(&test), None).unwrap();
    println!("{}", report.table());
}
