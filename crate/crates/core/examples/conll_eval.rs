//! Parse CoNLL text, score entity spans, and compare two systems' errors.

use chartag::data::{parse_conll, ColumnSpec};
use chartag::eval::{compare_errors, score, LengthBuckets};

const GOLD: &str = "\
Naloxone B-Chemical
reverses O
clonidine B-Chemical
induced O
hypotension B-Disease

acute B-Disease
renal I-Disease
failure I-Disease
";

fn main() {
    let spec = ColumnSpec::word_and_last_label();
    let gold = parse_conll(GOLD, &spec).unwrap().sentences;
    let labels: Vec<Vec<String>> = gold.iter().map(|s| s.labels().unwrap()).collect();
    let surfaces: Vec<Vec<String>> = gold.iter().map(|s| s.surfaces().iter().map(|w| w.to_string()).collect()).collect();

    let tags = |rows: &[&str]| rows.iter().map(|r| r.split_whitespace().map(String::from).collect()).collect::<Vec<Vec<String>>>();
    let a = tags(&["B-Chemical O B-Chemical O O", "B-Disease I-Disease I-Disease"]);
    let b = tags(&["B-Chemical O O O B-Disease", "B-Disease I-Disease O"]);

    println!("system A\n{}", score(&labels, &a).unwrap());
    println!("system B\n{}", score(&labels, &b).unwrap());
    println!("{}", compare_errors(&labels, &a, &b, &surfaces, &LengthBuckets::default()).unwrap());
}
