//! Character-level word representations from the CNN and BiLSTM encoders.

use chartag::data::{build_vocab, Sentence, Token, VocabOptions};
use chartag::encoders::{cnn_char_encode, count_parameters, lstm_char_encode, names, CharEncoder, ModelConfig};
use chartag::{Graph, Tagger};

fn main() {
    let words = ["hepatitis", "aspirin", "nephrotoxicity"];
    let corpus = vec![Sentence::new(
        "demo",
        words.iter().map(|w| Token::new(*w).with_label("O")).collect(),
    )];
    let vocab = build_vocab(&corpus, None, &VocabOptions::default());

    for kind in [CharEncoder::Cnn, CharEncoder::Lstm] {
        let cfg = ModelConfig {
            char_encoder: kind,
            ..Default::default()
        };
        let tagger = Tagger::new(cfg.clone(), vocab.clone(), None, 3).unwrap();
        let scope = if kind == CharEncoder::Cnn { names::CHAR_CNN } else { names::CHAR_LSTM };
        println!("{} ({} parameters)", cfg.model_name(), count_parameters(&tagger.params, scope));
        for w in words {
            let ids = vocab.char_ids(w);
            let mut g = Graph::new(&tagger.params);
            let v = match kind {
                CharEncoder::Cnn => cnn_char_encode(&mut g, &cfg, &ids),
                _ => lstm_char_encode(&mut g, &cfg, &ids),
            }
            .unwrap();
            let t = g.value(v);
            println!("  {w:<16} dim {:>3}  first {:+.4?}", t.len(), &t.data()[..3]);
        }
    }
}
