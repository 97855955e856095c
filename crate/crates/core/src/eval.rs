//! Exact-span precision/recall/F1 and word-level error comparison between
//! two taggers.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::BioTag;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    /// Inclusive.
    pub end: usize,
    pub category: String,
}

/// Maximal `B-X I-X*` runs. A stray `I-X` opens a new span, and `I-Y` after
/// an `X` span closes it and opens a `Y` span.
pub fn extract_spans<S: AsRef<str>>(tags: &[S]) -> Result<Vec<EntitySpan>> {
    let mut spans = Vec::new();
    let mut open: Option<EntitySpan> = None;
    for (i, t) in tags.iter().enumerate() {
        match BioTag::parse(t.as_ref())? {
            BioTag::Outside => spans.extend(open.take()),
            BioTag::Begin(c) => {
                spans.extend(open.take());
                open = Some(EntitySpan { start: i, end: i, category: c });
            }
            BioTag::Inside(c) => match open.as_mut() {
                Some(s) if s.category == c => s.end = i,
                _ => {
                    spans.extend(open.take());
                    open = Some(EntitySpan { start: i, end: i, category: c });
                }
            },
        }
    }
    spans.extend(open);
    Ok(spans)
}

/// Writes spans of a sentence of length `len` back as BIO tags.
pub fn spans_to_tags(spans: &[EntitySpan], len: usize) -> Result<Vec<String>> {
    let mut tags = vec!["O".to_string(); len];
    for s in spans {
        if s.start > s.end || s.end >= len {
            return Err(Error::Data(format!("span {}..={} outside sentence of {len}", s.start, s.end)));
        }
        tags[s.start] = format!("B-{}", s.category);
        for t in &mut tags[s.start + 1..=s.end] {
            *t = format!("I-{}", s.category);
        }
    }
    Ok(tags)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Score {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Score {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub categories: BTreeMap<String, Score>,
    /// Micro-average: counts pooled over categories.
    pub overall: Score,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<12} {:>6} {:>6} {:>6} {:>9} {:>9} {:>9}",
            "category", "TP", "FP", "FN", "P(%)", "R(%)", "F1(%)"
        )?;
        let rows = self.categories.iter().map(|(k, v)| (k.as_str(), v));
        for (name, s) in rows.chain(std::iter::once(("Overall", &self.overall))) {
            writeln!(
                f,
                "{:<12} {:>6} {:>6} {:>6} {:>9.2} {:>9.2} {:>9.2}",
                name,
                s.tp,
                s.fp,
                s.fn_,
                100.0 * s.precision,
                100.0 * s.recall,
                100.0 * s.f1
            )?;
        }
        Ok(())
    }
}

fn check_aligned<A: AsRef<[String]>, B: AsRef<[String]>>(gold: &[A], pred: &[B]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Alignment(format!(
            "{} gold sentences vs {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.as_ref().len() != p.as_ref().len() {
            return Err(Error::Alignment(format!(
                "sentence {i}: {} gold tokens vs {} predicted",
                g.as_ref().len(),
                p.as_ref().len()
            )));
        }
    }
    Ok(())
}

/// Exact-span scoring of a corpus.
pub fn score(gold: &[Vec<String>], pred: &[Vec<String>]) -> Result<EvalReport> {
    check_aligned(gold, pred)?;
    let mut counts: BTreeMap<String, [usize; 3]> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        let gs: HashSet<EntitySpan> = extract_spans(g)?.into_iter().collect();
        let ps: HashSet<EntitySpan> = extract_spans(p)?.into_iter().collect();
        for s in &gs {
            let c = counts.entry(s.category.clone()).or_default();
            if ps.contains(s) {
                c[0] += 1;
            } else {
                c[2] += 1;
            }
        }
        for s in ps.difference(&gs) {
            counts.entry(s.category.clone()).or_default()[1] += 1;
        }
    }
    let mut total = [0usize; 3];
    let categories = counts
        .into_iter()
        .map(|(k, c)| {
            (0..3).for_each(|i| total[i] += c[i]);
            (k, Score::from_counts(c[0], c[1], c[2]))
        })
        .collect();
    Ok(EvalReport {
        categories,
        overall: Score::from_counts(total[0], total[1], total[2]),
    })
}

/// Surface-length bucket boundaries: `[5, 10, 20]` gives 1–4, 5–9, 10–19, ≥20.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthBuckets {
    pub edges: Vec<usize>,
}

impl Default for LengthBuckets {
    fn default() -> Self {
        LengthBuckets { edges: vec![5, 10, 20] }
    }
}

impl LengthBuckets {
    pub fn bucket(&self, len: usize) -> usize {
        self.edges.iter().take_while(|&&e| len >= e).count()
    }

    pub fn labels(&self) -> Vec<String> {
        let mut lo = 1;
        let mut out = Vec::with_capacity(self.edges.len() + 1);
        for &e in &self.edges {
            out.push(format!("{lo}-{}", e - 1));
            lo = e;
        }
        out.push(format!(">={lo}"));
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelErrors {
    pub total: usize,
    /// Gold `O`, predicted an entity tag.
    pub false_positives: usize,
    /// Gold entity tag, predicted `O`.
    pub false_negatives: usize,
    pub by_length: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorComparison {
    pub bucket_labels: Vec<String>,
    pub a: ModelErrors,
    pub b: ModelErrors,
    pub common: usize,
    pub common_by_length: Vec<usize>,
}

impl fmt::Display for ErrorComparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>8} {:>8} {:>8}", "", "A", "B", "common")?;
        writeln!(f, "{:<10} {:>8} {:>8} {:>8}", "errors", self.a.total, self.b.total, self.common)?;
        writeln!(f, "{:<10} {:>8} {:>8}", "FP", self.a.false_positives, self.b.false_positives)?;
        writeln!(f, "{:<10} {:>8} {:>8}", "FN", self.a.false_negatives, self.b.false_negatives)?;
        for (i, l) in self.bucket_labels.iter().enumerate() {
            writeln!(
                f,
                "{:<10} {:>8} {:>8} {:>8}",
                format!("len {l}"),
                self.a.by_length[i],
                self.b.by_length[i],
                self.common_by_length[i]
            )?;
        }
        Ok(())
    }
}

/// Word-level error overlap of two predictions against the same gold.
pub fn compare_errors(
    gold: &[Vec<String>],
    pred_a: &[Vec<String>],
    pred_b: &[Vec<String>],
    surfaces: &[Vec<String>],
    buckets: &LengthBuckets,
) -> Result<ErrorComparison> {
    check_aligned(gold, pred_a)?;
    check_aligned(gold, pred_b)?;
    check_aligned(gold, surfaces)?;
    let n = buckets.edges.len() + 1;
    let fresh = || ModelErrors {
        by_length: vec![0; n],
        ..Default::default()
    };
    let (mut a, mut b) = (fresh(), fresh());
    let mut common = 0;
    let mut common_by_length = vec![0; n];
    let tally = |m: &mut ModelErrors, g: &str, p: &str, k: usize| {
        m.total += 1;
        m.by_length[k] += 1;
        match (g == "O", p == "O") {
            (true, false) => m.false_positives += 1,
            (false, true) => m.false_negatives += 1,
            _ => {}
        }
    };
    for s in 0..gold.len() {
        for t in 0..gold[s].len() {
            let g = gold[s][t].as_str();
            let k = buckets.bucket(surfaces[s][t].chars().count());
            let ea = pred_a[s][t] != g;
            let eb = pred_b[s][t] != g;
            if ea {
                tally(&mut a, g, &pred_a[s][t], k);
            }
            if eb {
                tally(&mut b, g, &pred_b[s][t], k);
            }
            if ea && eb {
                common += 1;
                common_by_length[k] += 1;
            }
        }
    }
    Ok(ErrorComparison {
        bucket_labels: buckets.labels(),
        a,
        b,
        common,
        common_by_length,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn span(start: usize, end: usize, c: &str) -> EntitySpan {
        EntitySpan {
            start,
            end,
            category: c.into(),
        }
    }

    #[test]
    fn span_examples() {
        assert_eq!(extract_spans(&tags("B-Chem I-Chem O")).unwrap(), vec![span(0, 1, "Chem")]);
        assert_eq!(
            extract_spans(&tags("B-Chem B-Chem")).unwrap(),
            vec![span(0, 0, "Chem"), span(1, 1, "Chem")]
        );
        assert_eq!(
            extract_spans(&tags("B-Chem I-Dis I-Dis")).unwrap(),
            vec![span(0, 0, "Chem"), span(1, 2, "Dis")]
        );
        assert!(extract_spans(&tags("X-Chem")).is_err());
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let gold = vec![tags("B-Chem I-Chem O B-Dis")];
        let r = score(&gold, &gold).unwrap();
        assert_eq!(r.overall.f1, 1.0);
        assert!(r.categories.values().all(|s| s.precision == 1.0 && s.recall == 1.0));
        let none = vec![tags("O O O O")];
        let r = score(&gold, &none).unwrap();
        assert_eq!((r.overall.precision, r.overall.recall, r.overall.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn alignment_mismatch() {
        assert!(score(&[tags("O O")], &[tags("O")]).is_err());
        assert!(score(&[tags("O")], &[]).is_err());
    }

    #[test]
    fn buckets() {
        let b = LengthBuckets::default();
        assert_eq!(b.labels(), vec!["1-4", "5-9", "10-19", ">=20"]);
        let got: Vec<usize> = [1, 4, 5, 9, 10, 19, 20, 40].iter().map(|&l| b.bucket(l)).collect();
        assert_eq!(got, vec![0, 0, 1, 1, 2, 2, 3, 3]);
    }

    #[test]
    fn identical_predictions_share_all_errors() {
        let gold = vec![tags("B-C O O")];
        let p = vec![tags("O B-C O")];
        let s = vec![tags("aa bbbbb c")];
        let c = compare_errors(&gold, &p, &p, &s, &LengthBuckets::default()).unwrap();
        assert_eq!((c.a.total, c.b.total, c.common), (2, 2, 2));
        assert_eq!((c.a.false_positives, c.a.false_negatives), (1, 1));
        assert_eq!(c.a.by_length, vec![1, 1, 0, 0]);
    }
}
