//! Whitespace-separated column corpora: one token per line, blank lines end
//! sentences, `-DOCSTART-` or `#doc <id>` lines start documents.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::bio::{repair_bio, BioTag};
use crate::error::{Error, Result};

/// Optional per-token input features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feature {
    Pos,
    Chunk,
    Gazetteer,
}

impl Feature {
    pub fn name(self) -> &'static str {
        match self {
            Feature::Pos => "pos",
            Feature::Chunk => "chunk",
            Feature::Gazetteer => "gazetteer",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub pos: Option<String>,
    pub chunk: Option<String>,
    pub gazetteer: Option<String>,
    pub label: Option<String>,
}

impl Token {
    pub fn new(surface: impl Into<String>) -> Self {
        Token {
            surface: surface.into(),
            ..Default::default()
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn feature(&self, f: Feature) -> Option<&str> {
        match f {
            Feature::Pos => self.pos.as_deref(),
            Feature::Chunk => self.chunk.as_deref(),
            Feature::Gazetteer => self.gazetteer.as_deref(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub doc_id: String,
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(doc_id: impl Into<String>, tokens: Vec<Token>) -> Self {
        Sentence {
            doc_id: doc_id.into(),
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surfaces(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.surface.as_str()).collect()
    }

    /// Gold labels, when every token carries one.
    pub fn labels(&self) -> Option<Vec<String>> {
        self.tokens.iter().map(|t| t.label.clone()).collect()
    }
}

/// Position of a column in a line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Column {
    At(usize),
    /// The final column, whatever the line width.
    Last,
}

impl Column {
    fn resolve(self, ncols: usize) -> Option<usize> {
        match self {
            Column::At(i) if i < ncols => Some(i),
            Column::Last if ncols > 0 => Some(ncols - 1),
            _ => None,
        }
    }
}

/// Which column holds which field.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub word: Column,
    pub pos: Option<Column>,
    pub chunk: Option<Column>,
    pub gazetteer: Option<Column>,
    pub label: Option<Column>,
}

impl Default for ColumnSpec {
    /// `word pos chunk gazetteer label`.
    fn default() -> Self {
        ColumnSpec {
            word: Column::At(0),
            pos: Some(Column::At(1)),
            chunk: Some(Column::At(2)),
            gazetteer: Some(Column::At(3)),
            label: Some(Column::At(4)),
        }
    }
}

impl ColumnSpec {
    /// Word in the first column, label in the last.
    pub fn word_and_last_label() -> Self {
        ColumnSpec {
            word: Column::At(0),
            pos: None,
            chunk: None,
            gazetteer: None,
            label: Some(Column::Last),
        }
    }
}

impl FromStr for ColumnSpec {
    type Err = Error;

    /// Comma-separated field names in column order, `_` for ignored columns,
    /// e.g. `word,pos,chunk,gazetteer,label` or `word,_,label`.
    fn from_str(s: &str) -> Result<Self> {
        let mut spec = ColumnSpec {
            word: Column::At(usize::MAX),
            pos: None,
            chunk: None,
            gazetteer: None,
            label: None,
        };
        for (i, name) in s.split(',').map(str::trim).enumerate() {
            let col = Some(Column::At(i));
            match name {
                "word" => spec.word = Column::At(i),
                "pos" => spec.pos = col,
                "chunk" => spec.chunk = col,
                "gaz" | "gazetteer" => spec.gazetteer = col,
                "label" => spec.label = col,
                "_" | "" => {}
                other => return Err(Error::Config(format!("unknown column name `{other}`"))),
            }
        }
        if spec.word == Column::At(usize::MAX) {
            return Err(Error::Config("column spec must name a `word` column".into()));
        }
        Ok(spec)
    }
}

/// Parsed sentences plus the number of labels repaired from stray `I-X` to `B-X`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParsedCorpus {
    pub sentences: Vec<Sentence>,
    pub repaired_labels: usize,
}

struct Pending {
    tokens: Vec<Token>,
    first_line: usize,
}

pub fn parse_conll(text: &str, spec: &ColumnSpec) -> Result<ParsedCorpus> {
    let mut out = ParsedCorpus::default();
    let mut ncols: Option<usize> = None;
    let mut doc: Option<String> = None;
    let mut docstarts = 0usize;
    let mut pending = Pending {
        tokens: Vec::new(),
        first_line: 0,
    };

    let flush = |pending: &mut Pending, doc: &Option<String>, out: &mut ParsedCorpus| -> Result<()> {
        if pending.tokens.is_empty() {
            return Ok(());
        }
        let tokens = std::mem::take(&mut pending.tokens);
        let doc_id = doc.clone().unwrap_or_else(|| format!("s{}", out.sentences.len()));
        let mut sentence = Sentence::new(doc_id, tokens);
        if let Some(mut labels) = sentence.labels() {
            let n = repair_bio(&mut labels).map_err(|e| Error::Parse {
                line: pending.first_line,
                message: e.to_string(),
            })?;
            if n > 0 {
                out.repaired_labels += n;
                for (tok, l) in sentence.tokens.iter_mut().zip(labels) {
                    tok.label = Some(l);
                }
            }
        }
        out.sentences.push(sentence);
        Ok(())
    };

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            flush(&mut pending, &doc, &mut out)?;
            continue;
        }
        if trimmed.starts_with("-DOCSTART-") {
            flush(&mut pending, &doc, &mut out)?;
            doc = Some(format!("doc{docstarts}"));
            docstarts += 1;
            continue;
        }
        if let Some(id) = trimmed.strip_prefix("#doc") {
            if id.is_empty() || id.starts_with(char::is_whitespace) {
                flush(&mut pending, &doc, &mut out)?;
                let id = id.trim();
                doc = Some(if id.is_empty() {
                    docstarts += 1;
                    format!("doc{}", docstarts - 1)
                } else {
                    id.to_string()
                });
                continue;
            }
        }

        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let expected = *ncols.get_or_insert(fields.len());
        if fields.len() != expected {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {expected} columns, found {}", fields.len()),
            });
        }
        let get = |col: Option<Column>| col.and_then(|c| c.resolve(expected)).map(|i| fields[i].to_string());
        let surface = get(Some(spec.word)).ok_or_else(|| Error::Parse {
            line: lineno,
            message: "no word column".into(),
        })?;
        let label = get(spec.label);
        if let Some(l) = &label {
            BioTag::parse(l).map_err(|_| Error::Parse {
                line: lineno,
                message: format!("malformed BIO label `{l}` on token `{surface}`"),
            })?;
        }
        if pending.tokens.is_empty() {
            pending.first_line = lineno;
        }
        pending.tokens.push(Token {
            surface,
            pos: get(spec.pos),
            chunk: get(spec.chunk),
            gazetteer: get(spec.gazetteer),
            label,
        });
    }
    flush(&mut pending, &doc, &mut out)?;
    Ok(out)
}

/// Writes sentences back in column format. Absent fields are written as `_`;
/// `extra` supplies one additional trailing column per token (e.g. predictions).
pub fn write_conll(sentences: &[Sentence], spec: &ColumnSpec, extra: Option<&[Vec<String>]>) -> String {
    let fixed = [spec.word]
        .into_iter()
        .chain([spec.pos, spec.chunk, spec.gazetteer, spec.label].into_iter().flatten())
        .filter_map(|c| match c {
            Column::At(i) => Some(i + 1),
            Column::Last => None,
        })
        .max()
        .unwrap_or(1);
    let has_last = [spec.pos, spec.chunk, spec.gazetteer, spec.label].contains(&Some(Column::Last));
    let ncols = fixed + usize::from(has_last);

    let mut out = String::new();
    let mut current_doc: Option<&str> = None;
    for (si, s) in sentences.iter().enumerate() {
        if current_doc != Some(s.doc_id.as_str()) {
            let _ = writeln!(out, "#doc {}", s.doc_id);
            current_doc = Some(&s.doc_id);
        }
        for (ti, tok) in s.tokens.iter().enumerate() {
            let mut cols = vec!["_"; ncols];
            let fields = [
                (Some(spec.word), Some(tok.surface.as_str())),
                (spec.pos, tok.pos.as_deref()),
                (spec.chunk, tok.chunk.as_deref()),
                (spec.gazetteer, tok.gazetteer.as_deref()),
                (spec.label, tok.label.as_deref()),
            ];
            for (col, v) in fields {
                if let Some(idx) = col.and_then(|c| c.resolve(ncols)) {
                    cols[idx] = v.unwrap_or("_");
                }
            }
            out.push_str(&cols.join("\t"));
            if let Some(extra) = extra {
                out.push('\t');
                out.push_str(&extra[si][ti]);
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_two_token_sentence() {
        let text = "aspirin NN B-NP B-Chem B-Chemical\nworks VBZ B-VP O O\n\n";
        let parsed = parse_conll(text, &ColumnSpec::default()).unwrap();
        let expected = Sentence::new(
            "s0",
            vec![
                Token {
                    surface: "aspirin".into(),
                    pos: Some("NN".into()),
                    chunk: Some("B-NP".into()),
                    gazetteer: Some("B-Chem".into()),
                    label: Some("B-Chemical".into()),
                },
                Token {
                    surface: "works".into(),
                    pos: Some("VBZ".into()),
                    chunk: Some("B-VP".into()),
                    gazetteer: Some("O".into()),
                    label: Some("O".into()),
                },
            ],
        );
        assert_eq!(parsed.sentences, vec![expected]);
    }

    #[test]
    fn empty_input_is_empty_corpus() {
        assert!(parse_conll("", &ColumnSpec::default()).unwrap().sentences.is_empty());
        assert!(parse_conll("\n\n  \n", &ColumnSpec::default()).unwrap().sentences.is_empty());
    }

    #[test]
    fn column_count_change_is_an_error_with_line() {
        let text = "a NN B-NP O O\n\nb NN B-NP O\n";
        match parse_conll(text, &ColumnSpec::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_label_names_token() {
        let err = parse_conll("aspirin NN B-NP O Chem-X\n", &ColumnSpec::default()).unwrap_err();
        assert!(err.to_string().contains("aspirin"), "{err}");
    }

    #[test]
    fn stray_inside_is_repaired_and_counted() {
        let text = "a I-Chem\nb I-Chem\nc O\nd I-Dis\n";
        let parsed = parse_conll(text, &"word,label".parse().unwrap()).unwrap();
        assert_eq!(parsed.repaired_labels, 2);
        assert_eq!(parsed.sentences[0].labels().unwrap(), vec!["B-Chem", "I-Chem", "O", "B-Dis"]);
    }

    #[test]
    fn document_markers() {
        let text = "-DOCSTART- -X- O O O\n\na x y z O\n\nb x y z O\n\n#doc 12345\nc x y z O\n\nd x y z O\n";
        let parsed = parse_conll(text, &ColumnSpec::default()).unwrap();
        let docs: Vec<&str> = parsed.sentences.iter().map(|s| s.doc_id.as_str()).collect();
        assert_eq!(docs, vec!["doc0", "doc0", "12345", "12345"]);
    }

    #[test]
    fn missing_optional_columns_are_absent() {
        let parsed = parse_conll("aspirin NN\n", &ColumnSpec::default()).unwrap();
        let tok = &parsed.sentences[0].tokens[0];
        assert_eq!(tok.pos.as_deref(), Some("NN"));
        assert_eq!(tok.chunk, None);
        assert_eq!(tok.label, None);
    }

    #[test]
    fn last_column_label() {
        let parsed = parse_conll("a x B-Chem\nb y I-Chem\n", &ColumnSpec::word_and_last_label()).unwrap();
        assert_eq!(parsed.sentences[0].labels().unwrap(), vec!["B-Chem", "I-Chem"]);
    }

    #[test]
    fn column_spec_parsing() {
        let spec: ColumnSpec = "word,_,label".parse().unwrap();
        assert_eq!(spec.word, Column::At(0));
        assert_eq!(spec.label, Some(Column::At(2)));
        assert!("pos,label".parse::<ColumnSpec>().is_err());
        assert!("word,lemma".parse::<ColumnSpec>().is_err());
    }

    #[test]
    fn write_appends_extra_column() {
        let s = Sentence::new("d", vec![Token::new("x").with_label("O")]);
        let text = write_conll(&[s], &"word,label".parse().unwrap(), Some(&[vec!["B-Chem".to_string()]]));
        assert_eq!(text, "#doc d\nx\tO\tB-Chem\n\n");
    }
}
