use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::conll::{Feature, Sentence};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_SYMBOL: &str = "<PAD>";
pub const UNK_SYMBOL: &str = "<UNK>";

/// Bijective symbol ↔ id map. Indices built with [`Index::with_specials`]
/// reserve id 0 for PAD and id 1 for UNK.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Index {
    symbols: Vec<String>,
    ids: HashMap<String, usize>,
}

impl From<Vec<String>> for Index {
    fn from(symbols: Vec<String>) -> Self {
        let mut idx = Index::default();
        for s in symbols {
            idx.insert(&s);
        }
        idx
    }
}

impl From<Index> for Vec<String> {
    fn from(idx: Index) -> Self {
        idx.symbols
    }
}

impl Index {
    pub fn with_specials() -> Self {
        Index::from(vec![PAD_SYMBOL.to_string(), UNK_SYMBOL.to_string()])
    }

    pub fn insert(&mut self, symbol: &str) -> usize {
        if let Some(&id) = self.ids.get(symbol) {
            return id;
        }
        let id = self.symbols.len();
        self.symbols.push(symbol.to_string());
        self.ids.insert(symbol.to_string(), id);
        id
    }

    pub fn get(&self, symbol: &str) -> Option<usize> {
        self.ids.get(symbol).copied()
    }

    pub fn get_or_unk(&self, symbol: &str) -> usize {
        self.get(symbol).unwrap_or(UNK)
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocabOptions {
    /// Minimum training frequency for a word without a pretrained vector.
    pub threshold: usize,
    pub lowercase: bool,
}

impl Default for VocabOptions {
    fn default() -> Self {
        VocabOptions {
            threshold: 5,
            lowercase: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub words: Index,
    pub chars: Index,
    /// Label ids are the CRF label set; no PAD/UNK entries.
    pub labels: Index,
    pub pos: Index,
    pub chunk: Index,
    pub gazetteer: Index,
    pub word_freq: BTreeMap<String, usize>,
    pub lowercase: bool,
}

/// Token ids for one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSentence {
    pub words: Vec<usize>,
    pub chars: Vec<Vec<usize>>,
    /// One id list per enabled feature, in the requested order.
    pub features: Vec<Vec<usize>>,
    /// Present when every gold label is known to the vocabulary.
    pub labels: Option<Vec<usize>>,
}

impl EncodedSentence {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Builds all indices from the training sentences. A word gets its own row iff
/// it has a pretrained vector or occurs at least `threshold` times.
pub fn build_vocab(train: &[Sentence], pretrained: Option<&Index>, opts: &VocabOptions) -> Vocabulary {
    let norm = |w: &str| if opts.lowercase { w.to_lowercase() } else { w.to_string() };
    let mut freq: BTreeMap<String, usize> = BTreeMap::new();
    let mut first_seen: Vec<String> = Vec::new();
    for tok in train.iter().flat_map(|s| &s.tokens) {
        let w = norm(&tok.surface);
        let count = freq.entry(w.clone()).or_insert(0);
        if *count == 0 {
            first_seen.push(w);
        }
        *count += 1;
    }

    let mut words = Index::with_specials();
    if let Some(pre) = pretrained {
        for sym in pre.symbols() {
            if sym != PAD_SYMBOL && sym != UNK_SYMBOL {
                words.insert(&norm(sym));
            }
        }
    }
    for w in &first_seen {
        if freq[w] >= opts.threshold.max(1) {
            words.insert(w);
        }
    }

    let mut chars = Index::with_specials();
    let mut labels = Index::default();
    let mut pos = Index::with_specials();
    let mut chunk = Index::with_specials();
    let mut gazetteer = Index::with_specials();
    for tok in train.iter().flat_map(|s| &s.tokens) {
        let mut buf = [0u8; 4];
        for c in tok.surface.chars() {
            chars.insert(c.encode_utf8(&mut buf));
        }
        if let Some(l) = &tok.label {
            labels.insert(l);
        }
        if let Some(p) = &tok.pos {
            pos.insert(p);
        }
        if let Some(c) = &tok.chunk {
            chunk.insert(c);
        }
        if let Some(g) = &tok.gazetteer {
            gazetteer.insert(g);
        }
    }

    Vocabulary {
        words,
        chars,
        labels,
        pos,
        chunk,
        gazetteer,
        word_freq: freq,
        lowercase: opts.lowercase,
    }
}

impl Vocabulary {
    pub fn word_key(&self, surface: &str) -> String {
        if self.lowercase {
            surface.to_lowercase()
        } else {
            surface.to_string()
        }
    }

    pub fn word_id(&self, surface: &str) -> usize {
        self.words.get_or_unk(&self.word_key(surface))
    }

    pub fn char_ids(&self, surface: &str) -> Vec<usize> {
        let mut buf = [0u8; 4];
        surface
            .chars()
            .map(|c| self.chars.get_or_unk(c.encode_utf8(&mut buf)))
            .collect()
    }

    pub fn feature_index(&self, f: Feature) -> &Index {
        match f {
            Feature::Pos => &self.pos,
            Feature::Chunk => &self.chunk,
            Feature::Gazetteer => &self.gazetteer,
        }
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.symbol(id)
    }

    /// Resolves a sentence to ids. Unseen symbols map to UNK; a token lacking a
    /// column for an enabled feature is an error.
    pub fn encode(&self, s: &Sentence, features: &[Feature]) -> Result<EncodedSentence> {
        if s.tokens.is_empty() {
            return Err(Error::Data("empty sentence".into()));
        }
        let mut feats = Vec::with_capacity(features.len());
        for &f in features {
            let idx = self.feature_index(f);
            let ids = s
                .tokens
                .iter()
                .map(|t| {
                    t.feature(f).map(|tag| idx.get_or_unk(tag)).ok_or_else(|| {
                        Error::Data(format!("token `{}` has no {} tag", t.surface, f.name()))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            feats.push(ids);
        }
        let labels = s
            .tokens
            .iter()
            .map(|t| t.label.as_deref().and_then(|l| self.labels.get(l)))
            .collect();
        Ok(EncodedSentence {
            words: s.tokens.iter().map(|t| self.word_id(&t.surface)).collect(),
            chars: s.tokens.iter().map(|t| self.char_ids(&t.surface)).collect(),
            features: feats,
            labels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::conll::Token;

    fn sentence(words: &[&str]) -> Sentence {
        Sentence::new("d", words.iter().map(|w| Token::new(*w).with_label("O")).collect())
    }

    fn corpus(counts: &[(&str, usize)]) -> Vec<Sentence> {
        counts
            .iter()
            .flat_map(|(w, n)| std::iter::repeat_n(sentence(&[w]), *n))
            .collect()
    }

    #[test]
    fn threshold_rule() {
        let train = corpus(&[("five", 5), ("four", 4), ("once", 1)]);
        let mut pre = Index::with_specials();
        pre.insert("once");
        let v = build_vocab(&train, Some(&pre), &VocabOptions::default());
        assert!(v.words.get("five").unwrap() > UNK);
        assert_eq!(v.word_id("four"), UNK);
        assert!(v.words.get("once").is_some());
        assert_eq!(v.words.symbol(PAD), Some(PAD_SYMBOL));
        assert_eq!(v.words.symbol(UNK), Some(UNK_SYMBOL));
    }

    #[test]
    fn indices_are_bijective() {
        let train = corpus(&[("alpha", 6), ("beta", 7)]);
        let v = build_vocab(&train, None, &VocabOptions::default());
        for idx in [&v.words, &v.chars, &v.labels] {
            for (id, sym) in idx.symbols().iter().enumerate() {
                assert_eq!(idx.get(sym), Some(id));
            }
        }
        assert_eq!(v.labels.symbols(), &["O".to_string()]);
    }

    #[test]
    fn encode_unknowns_and_missing_features() {
        let train = corpus(&[("alpha", 6)]);
        let v = build_vocab(&train, None, &VocabOptions::default());
        let enc = v.encode(&sentence(&["alpha", "zeta"]), &[]).unwrap();
        assert_eq!(enc.words[1], UNK);
        assert_eq!(enc.chars[1][0], UNK); // 'z' unseen
        assert_eq!(enc.labels, Some(vec![0, 0]));
        assert!(v.encode(&sentence(&["alpha"]), &[Feature::Pos]).is_err());
        assert!(v.encode(&Sentence::new("d", vec![]), &[]).is_err());
    }

    #[test]
    fn lowercase_folds_keys() {
        let train = corpus(&[("Alpha", 3), ("alpha", 3)]);
        let opts = VocabOptions {
            threshold: 5,
            lowercase: true,
        };
        let v = build_vocab(&train, None, &opts);
        assert!(v.word_id("ALPHA") > UNK);
    }

    #[test]
    fn serde_roundtrip() {
        let train = corpus(&[("alpha", 6), ("beta", 2)]);
        let v = build_vocab(&train, None, &VocabOptions::default());
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocabulary>(&json).unwrap(), v);
    }
}
