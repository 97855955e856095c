//! Deterministic synthetic corpora whose entity types are recoverable from
//! word-internal character patterns (prefix/suffix families).

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conll::{Sentence, Token};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityPattern {
    pub label: String,
    /// Optional word-initial morphemes; an empty string means no prefix.
    #[serde(default)]
    pub prefixes: Vec<String>,
    pub suffixes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub sentences: usize,
    pub sentences_per_doc: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Probability that a free slot starts an entity.
    pub entity_rate: f64,
    /// Probability that an entity spans two tokens.
    pub multi_token_rate: f64,
    pub filler_words: usize,
    /// Entity words generated per pattern.
    pub entity_words: usize,
    pub patterns: Vec<EntityPattern>,
    /// Drives sentence composition.
    pub seed: u64,
    /// Drives the filler (non-entity) word list.
    pub lexicon_seed: u64,
    /// Drives the entity word lists. Corpora with different entity seeds
    /// share (almost surely) no entity words, so a held-out set can keep
    /// its context words familiar while every entity is unseen.
    pub entity_seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            sentences: 200,
            sentences_per_doc: 8,
            min_tokens: 6,
            max_tokens: 14,
            entity_rate: 0.2,
            multi_token_rate: 0.2,
            filler_words: 80,
            entity_words: 40,
            patterns: default_patterns(),
            seed: 7,
            lexicon_seed: 11,
            entity_seed: 11,
        }
    }
}

pub fn default_patterns() -> Vec<EntityPattern> {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    vec![
        EntityPattern {
            label: "Chemical".into(),
            prefixes: s(&["", "di", "tri", "meth", "eth"]),
            suffixes: s(&["ase", "ine", "ol", "ide", "ate"]),
        },
        EntityPattern {
            label: "Disease".into(),
            prefixes: s(&["", "neuro", "cardio", "hepato"]),
            suffixes: s(&["itis", "osis", "emia", "oma", "pathy"]),
        },
    ]
}

const CONSONANTS: &[u8] = b"bcdfghklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const FILLER_POS: &[&str] = &["DT", "JJ", "VBZ", "IN", "NN", "RB"];

fn syllables(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let n = rng.gen_range(min..=max);
    let mut w = String::new();
    for _ in 0..n {
        w.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
        w.push(VOWELS[rng.gen_range(0..VOWELS.len())] as char);
        if rng.gen_bool(0.3) {
            w.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
        }
    }
    w
}

struct Lexicon {
    fillers: Vec<String>,
    entities: Vec<Vec<String>>,
}

fn build_lexicon(spec: &SynthSpec) -> Lexicon {
    let suffixes: Vec<&str> = spec
        .patterns
        .iter()
        .flat_map(|p| p.suffixes.iter().map(String::as_str))
        .filter(|s| !s.is_empty())
        .collect();
    let mut used: HashSet<String> = HashSet::new();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.lexicon_seed);
    let mut fillers = Vec::with_capacity(spec.filler_words);
    while fillers.len() < spec.filler_words {
        let w = syllables(&mut rng, 1, 3);
        if suffixes.iter().any(|s| w.ends_with(s)) {
            continue;
        }
        if used.insert(w.clone()) {
            fillers.push(w);
        }
    }

    // separate stream so the entity lexicon can vary independently
    let mut rng = ChaCha8Rng::seed_from_u64(spec.entity_seed);
    rng.set_stream(1);
    let mut entities = Vec::with_capacity(spec.patterns.len());
    for p in &spec.patterns {
        let mut words = Vec::with_capacity(spec.entity_words);
        while words.len() < spec.entity_words {
            let prefix = if p.prefixes.is_empty() {
                ""
            } else {
                p.prefixes[rng.gen_range(0..p.prefixes.len())].as_str()
            };
            let suffix = if p.suffixes.is_empty() {
                ""
            } else {
                p.suffixes[rng.gen_range(0..p.suffixes.len())].as_str()
            };
            let w = format!("{prefix}{}{suffix}", syllables(&mut rng, 1, 3));
            if used.insert(w.clone()) {
                words.push(w);
            }
        }
        entities.push(words);
    }
    Lexicon { fillers, entities }
}

/// Generates `spec.sentences` labelled sentences. Entity spans are one or two
/// pattern words of one type; distinct entities are never adjacent.
pub fn generate_synthetic_corpus(spec: &SynthSpec) -> Result<Vec<Sentence>> {
    if spec.patterns.is_empty() {
        return Err(Error::Config("synthetic corpus needs at least one entity pattern".into()));
    }
    if spec.sentences == 0 {
        return Ok(Vec::new());
    }
    if spec.min_tokens == 0 || spec.min_tokens > spec.max_tokens || spec.filler_words == 0 || spec.entity_words == 0 {
        return Err(Error::Config("synthetic corpus sizes must be positive and min ≤ max".into()));
    }
    let lex = build_lexicon(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let per_doc = spec.sentences_per_doc.max(1);

    let mut out = Vec::with_capacity(spec.sentences);
    for i in 0..spec.sentences {
        let len = rng.gen_range(spec.min_tokens..=spec.max_tokens);
        let mut tokens: Vec<Token> = Vec::with_capacity(len + 1);
        let mut prev_entity = false;
        while tokens.len() < len {
            if !prev_entity && rng.gen_bool(spec.entity_rate) {
                let pi = rng.gen_range(0..spec.patterns.len());
                let label = &spec.patterns[pi].label;
                let n = if rng.gen_bool(spec.multi_token_rate) { 2 } else { 1 };
                for k in 0..n {
                    let words = &lex.entities[pi];
                    let w = &words[rng.gen_range(0..words.len())];
                    let tag = if k == 0 { "B" } else { "I" };
                    tokens.push(Token {
                        surface: w.clone(),
                        pos: Some("NN".into()),
                        chunk: Some(format!("{tag}-NP")),
                        gazetteer: Some("O".into()),
                        label: Some(format!("{tag}-{label}")),
                    });
                }
                prev_entity = true;
            } else {
                // skewed towards the head of the list so frequent fillers exist
                let u: f64 = rng.gen();
                let fi = ((u * u) * lex.fillers.len() as f64) as usize;
                let fi = fi.min(lex.fillers.len() - 1);
                let pos = FILLER_POS[fi % FILLER_POS.len()];
                tokens.push(Token {
                    surface: lex.fillers[fi].clone(),
                    pos: Some(pos.into()),
                    chunk: Some(if pos == "VBZ" { "B-VP" } else { "O" }.into()),
                    gazetteer: Some("O".into()),
                    label: Some("O".into()),
                });
                prev_entity = false;
            }
        }
        out.push(Sentence::new(
            format!("synth{}-{}", spec.seed, i / per_doc),
            tokens,
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::validate_bio;

    #[test]
    fn zero_sentences_is_empty() {
        let spec = SynthSpec {
            sentences: 0,
            ..Default::default()
        };
        assert!(generate_synthetic_corpus(&spec).unwrap().is_empty());
    }

    #[test]
    fn empty_patterns_rejected() {
        let spec = SynthSpec {
            patterns: vec![],
            ..Default::default()
        };
        assert!(generate_synthetic_corpus(&spec).is_err());
    }

    #[test]
    fn gold_is_valid_bio_and_deterministic() {
        let spec = SynthSpec::default();
        let a = generate_synthetic_corpus(&spec).unwrap();
        let b = generate_synthetic_corpus(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 200);
        for s in &a {
            assert!(validate_bio(&s.labels().unwrap()).unwrap().is_empty());
            assert!((spec.min_tokens..=spec.max_tokens + 1).contains(&s.len()));
        }
    }

    #[test]
    fn entity_words_carry_their_pattern() {
        let spec = SynthSpec::default();
        for s in generate_synthetic_corpus(&spec).unwrap() {
            for t in &s.tokens {
                let label = t.label.as_deref().unwrap();
                let suffix_owner = spec
                    .patterns
                    .iter()
                    .find(|p| p.suffixes.iter().any(|x| t.surface.ends_with(x.as_str())));
                match label {
                    "O" => assert!(suffix_owner.is_none(), "filler {} looks like an entity", t.surface),
                    l => assert!(l.ends_with(&suffix_owner.unwrap().label)),
                }
            }
        }
    }

    fn vocab(spec: &SynthSpec, entities: bool) -> HashSet<String> {
        generate_synthetic_corpus(spec)
            .unwrap()
            .into_iter()
            .flat_map(|s| s.tokens)
            .filter(|t| (t.label.as_deref() != Some("O")) == entities)
            .map(|t| t.surface)
            .collect()
    }

    #[test]
    fn entity_seed_changes_only_entity_words() {
        let a = SynthSpec::default();
        let b = SynthSpec {
            entity_seed: 99,
            seed: 3,
            ..Default::default()
        };
        assert_eq!(vocab(&a, true).intersection(&vocab(&b, true)).count(), 0);
        let (fa, fb) = (vocab(&a, false), vocab(&b, false));
        let shared = fa.intersection(&fb).count();
        assert!(shared * 10 > fb.len() * 9, "{shared} shared of {}", fb.len());
    }

    #[test]
    fn lexicon_seed_changes_filler_words() {
        let b = SynthSpec {
            lexicon_seed: 99,
            ..Default::default()
        };
        let shared = vocab(&SynthSpec::default(), false).intersection(&vocab(&b, false)).count();
        assert!(shared * 20 < vocab(&b, false).len());
    }
}
