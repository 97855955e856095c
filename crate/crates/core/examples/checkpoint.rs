//! Save a trained model, reload it, and tag new text.

use chartag::data::{generate_synthetic_corpus, SynthSpec};
use chartag::encoders::{CharEncoder, ModelConfig};
use chartag::trainer::{train, Checkpoint, TrainConfig};

fn main() {
    let corpus = generate_synthetic_corpus(&SynthSpec::default()).unwrap();
    let (train_set, dev) = corpus.split_at(176);
    let cfg = TrainConfig {
        model: ModelConfig {
            char_encoder: CharEncoder::Cnn,
            layers: 1,
            hidden: 64,
            ..Default::default()
        },
        max_epochs: 25,
        ..Default::default()
    };
    let (ckpt, report) = train(&cfg, train_set, dev, None, None).unwrap();
    println!("best dev F1 {:.3} at epoch {}", report.best_dev_f1, report.best_epoch);

    let path = std::env::temp_dir().join("chartag-example-checkpoint.json");
    ckpt.save(&path).unwrap();
    let tagger = Checkpoint::load(&path).unwrap().tagger();

    // familiar context words, entity words never seen in training
    let fresh = generate_synthetic_corpus(&SynthSpec {
        sentences: 20,
        seed: 40,
        entity_seed: 41,
        ..Default::default()
    })
    .unwrap();
    let tags = tagger.predict(&fresh).unwrap();
    let with_entities = fresh.iter().zip(&tags).filter(|(s, _)| s.tokens.iter().any(|t| t.label.as_deref() != Some("O")));
    for (s, pred) in with_entities.take(3) {
        for (tok, t) in s.tokens.iter().zip(pred) {
            println!("{:<20} {:<12} {t}", tok.surface, tok.label.as_deref().unwrap_or("-"));
        }
        println!();
    }
    std::fs::remove_file(&path).ok();
}
