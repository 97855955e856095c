use std::collections::HashSet;
use std::path::Path;

use super::conll::Sentence;
use crate::error::{Error, Result};

/// Dictionary of (possibly multi-token) entity terms.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gazetteer {
    terms: HashSet<Vec<String>>,
    max_len: usize,
    case_fold: bool,
}

impl Gazetteer {
    pub fn new<I, S>(terms: I, case_fold: bool) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut g = Gazetteer {
            case_fold,
            ..Default::default()
        };
        for term in terms {
            let toks: Vec<String> = term.as_ref().split_whitespace().map(|t| g.fold(t)).collect();
            if !toks.is_empty() {
                g.max_len = g.max_len.max(toks.len());
                g.terms.insert(toks);
            }
        }
        g
    }

    /// One term per line; blank lines are skipped.
    pub fn parse(text: &str, case_fold: bool) -> Self {
        Gazetteer::new(text.lines(), case_fold)
    }

    pub fn load(path: impl AsRef<Path>, case_fold: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Ok(Gazetteer::parse(&text, case_fold))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    fn fold(&self, t: &str) -> String {
        if self.case_fold {
            t.to_lowercase()
        } else {
            t.to_string()
        }
    }

    /// Greedy left-to-right longest match; matched spans become `B I …`,
    /// everything else `O`.
    pub fn tag<S: AsRef<str>>(&self, surfaces: &[S]) -> Vec<String> {
        let toks: Vec<String> = surfaces.iter().map(|s| self.fold(s.as_ref())).collect();
        let mut tags = vec!["O".to_string(); toks.len()];
        let mut i = 0;
        while i < toks.len() {
            let longest = (1..=self.max_len.min(toks.len() - i))
                .rev()
                .find(|&n| self.terms.contains(&toks[i..i + n]));
            match longest {
                Some(n) => {
                    tags[i] = "B".into();
                    for t in &mut tags[i + 1..i + n] {
                        *t = "I".into();
                    }
                    i += n;
                }
                None => i += 1,
            }
        }
        tags
    }
}

pub fn gazetteer_tag(s: &Sentence, g: &Gazetteer) -> Vec<String> {
    g.tag(&s.surfaces())
}

/// Overwrites the gazetteer column of every token.
pub fn apply_gazetteer(sentences: &mut [Sentence], g: &Gazetteer) {
    for s in sentences {
        let tags = gazetteer_tag(s, g);
        for (tok, tag) in s.tokens.iter_mut().zip(tags) {
            tok.gazetteer = Some(tag);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::validate_bio;

    #[test]
    fn single_exact_match() {
        let g = Gazetteer::new(["aspirin"], true);
        assert_eq!(g.tag(&["aspirin", "reduces", "fever"]), vec!["B", "O", "O"]);
    }

    #[test]
    fn empty_dictionary_is_all_outside() {
        let g = Gazetteer::new(Vec::<String>::new(), true);
        assert_eq!(g.tag(&["a", "b"]), vec!["O", "O"]);
    }

    #[test]
    fn longest_match_wins() {
        let g = Gazetteer::new(["vitamin", "vitamin d"], true);
        assert_eq!(g.tag(&["vitamin", "d", "helps"]), vec!["B", "I", "O"]);
        assert_eq!(g.tag(&["Vitamin", "D"]), vec!["B", "I"]);
        let cs = Gazetteer::new(["vitamin d"], false);
        assert_eq!(cs.tag(&["Vitamin", "D"]), vec!["O", "O"]);
    }

    #[test]
    fn adjacent_matches_do_not_overlap() {
        let g = Gazetteer::new(["a b", "b c", "c"], false);
        let tags = g.tag(&["a", "b", "c"]);
        assert_eq!(tags, vec!["B", "I", "B"]);
        assert!(validate_bio(&tags).unwrap().is_empty());
    }
}
