use std::path::Path;

use super::vocab::{Index, PAD, UNK};
use crate::encoders::EmbeddingTable;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pretrained vectors plus the number of duplicate words overwritten.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainedVectors {
    pub table: EmbeddingTable,
    pub duplicates: usize,
}

/// Parses word2vec-style text vectors: optional `V D` header, then
/// `word v₁ … v_D` per line. Row 0 is PAD (zeros), row 1 is UNK (mean of all
/// loaded rows). With `expected_dim = None` the dimension is taken from the
/// header or the first vector line.
pub fn parse_pretrained_vectors(text: &str, expected_dim: Option<usize>) -> Result<PretrainedVectors> {
    let mut dim = expected_dim;
    let mut index = Index::with_specials();
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(), Vec::new()];
    let mut duplicates = 0;

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if lineno == 1 && fields.len() == 2 {
            if let (Ok(_), Ok(d)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                match dim {
                    Some(want) if want != d => {
                        return Err(Error::Parse {
                            line: lineno,
                            message: format!("header declares dimension {d}, expected {want}"),
                        })
                    }
                    _ => dim = Some(d),
                }
                continue;
            }
        }
        let d = *dim.get_or_insert(fields.len() - 1);
        if fields.len() - 1 != d {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {d} values, found {}", fields.len() - 1),
            });
        }
        let values = fields[1..]
            .iter()
            .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| Error::Parse {
                line: lineno,
                message: "malformed number".into(),
            })?;
        let before = index.len();
        let id = index.insert(fields[0]);
        if id < before {
            duplicates += 1;
            rows[id] = values;
        } else {
            rows.push(values);
        }
    }

    let dim = dim.unwrap_or(50);
    let loaded = rows.len() - 2;
    let mut mean = vec![0.0; dim];
    for r in &rows[2..] {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    if loaded > 0 {
        mean.iter_mut().for_each(|m| *m /= loaded as f64);
    }
    rows[PAD] = vec![0.0; dim];
    rows[UNK] = mean;
    if duplicates > 0 {
        log::warn!("{duplicates} duplicate words in pretrained vectors; last occurrence kept");
    }
    let tensor = Tensor::new(vec![rows.len(), dim], rows.concat())?;
    Ok(PretrainedVectors {
        table: EmbeddingTable::new("word", index, tensor)?,
        duplicates,
    })
}

pub fn load_pretrained_vectors(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<PretrainedVectors> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    parse_pretrained_vectors(&text, expected_dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_words_dim_three() {
        let v = parse_pretrained_vectors("2 3\nfoo 1 2 3\nbar 3 4 5\n", Some(3)).unwrap();
        let t = &v.table;
        assert_eq!(t.rows.shape(), &[4, 3]);
        assert_eq!(t.rows.row(0), &[0.0, 0.0, 0.0]);
        assert_eq!(t.rows.row(1), &[2.0, 3.0, 4.0]);
        assert_eq!(t.rows.row(t.index.get("bar").unwrap()), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn short_line_is_an_error() {
        let mut text = String::from("foo");
        for i in 0..50 {
            text.push_str(&format!(" {i}"));
        }
        text.push_str("\nbar");
        for i in 0..49 {
            text.push_str(&format!(" {i}"));
        }
        match parse_pretrained_vectors(&text, Some(50)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_has_only_specials() {
        let v = parse_pretrained_vectors("", Some(50)).unwrap();
        assert_eq!(v.table.rows.shape(), &[2, 50]);
        assert!(v.table.rows.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn duplicates_last_wins() {
        let v = parse_pretrained_vectors("a 1 1\na 2 2\n", None).unwrap();
        assert_eq!(v.duplicates, 1);
        assert_eq!(v.table.rows.row(2), &[2.0, 2.0]);
        assert_eq!(v.table.rows.shape(), &[3, 2]);
    }

    #[test]
    fn header_dimension_mismatch() {
        assert!(parse_pretrained_vectors("1 4\na 1 2 3 4\n", Some(50)).is_err());
    }
}
