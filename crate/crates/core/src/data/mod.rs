//! Corpus ingestion, vocabularies, pretrained vectors, gazetteer matching,
//! BIO validation, dataset splitting and synthetic corpora.

mod bio;
mod conll;
mod gazetteer;
mod synth;
mod vectors;
mod vocab;

pub use bio::{repair_bio, validate_bio, BioTag, BioViolation};
pub use conll::{parse_conll, write_conll, Column, ColumnSpec, Feature, ParsedCorpus, Sentence, Token};
pub use gazetteer::{apply_gazetteer, gazetteer_tag, Gazetteer};
pub use synth::{default_patterns, generate_synthetic_corpus, EntityPattern, SynthSpec};
pub use vectors::{load_pretrained_vectors, parse_pretrained_vectors, PretrainedVectors};
pub use vocab::{
    build_vocab, EncodedSentence, Index, VocabOptions, Vocabulary, PAD, PAD_SYMBOL, UNK, UNK_SYMBOL,
};

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub fn read_conll(path: impl AsRef<Path>, spec: &ColumnSpec) -> Result<ParsedCorpus> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    let parsed = parse_conll(&text, spec)?;
    if parsed.repaired_labels > 0 {
        log::warn!(
            "{}: repaired {} stray I- labels",
            path.as_ref().display(),
            parsed.repaired_labels
        );
    }
    Ok(parsed)
}

/// Document ids in order of first appearance.
pub fn document_ids(sentences: &[Sentence]) -> Vec<String> {
    let mut seen = HashSet::new();
    sentences
        .iter()
        .filter(|s| seen.insert(s.doc_id.as_str()))
        .map(|s| s.doc_id.clone())
        .collect()
}

/// Splits whole documents: `round(fraction·N)` documents (at least one, at
/// most N−1) are drawn by a seeded shuffle for development. Sentence order
/// within each side follows the input.
pub fn split_train_dev(sentences: &[Sentence], fraction: f64, seed: u64) -> Result<(Vec<Sentence>, Vec<Sentence>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("dev fraction {fraction} not in (0, 1)")));
    }
    let mut docs = document_ids(sentences);
    if docs.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 documents to split, found {}",
            docs.len()
        )));
    }
    let n_dev = ((fraction * docs.len() as f64).round() as usize).clamp(1, docs.len() - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    docs.shuffle(&mut rng);
    let dev_docs: HashSet<&str> = docs[..n_dev].iter().map(String::as_str).collect();
    let (dev, train): (Vec<Sentence>, Vec<Sentence>) = sentences
        .iter()
        .cloned()
        .partition(|s| dev_docs.contains(s.doc_id.as_str()));
    Ok((train, dev))
}
