//! BiLSTM-CRF sequence labelling with CNN- and LSTM-based character-level
//! word embeddings, built on a small reverse-mode autodiff engine.
//!
//! ```no_run
//! use chartag::data::{generate_synthetic_corpus, SynthSpec};
//! use chartag::encoders::CharEncoder;
//! use chartag::trainer::{train, TrainConfig};
//!
//! let corpus = generate_synthetic_corpus(&SynthSpec::default()).unwrap();
//! let (train_set, dev_set) = corpus.split_at(180);
//! let mut cfg = TrainConfig::default();
//! cfg.model.char_encoder = CharEncoder::Cnn;
//! cfg.max_epochs = 5;
//! let (ckpt, report) = train(&cfg, train_set, dev_set, None, None).unwrap();
//! println!("{}", report.table());
//! let tags = ckpt.tagger().predict(dev_set).unwrap();
//! ```

pub mod cli;
pub mod crf;
pub mod data;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use model::Tagger;
pub use tensor::{Graph, ParamStore, Tensor};
