use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn chartag(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chartag"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const TINY: &str = r#"
max_epochs = 2
batch_size = 8
vocab_threshold = 1

[model]
char_encoder = "cnn"
layers = 1
hidden = 8
word_dim = 6
char_dim = 4
cnn_filters = 5

[data]
train = "corpus/synth.conll"
"#;

#[test]
fn synth_train_predict_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&chartag(d, &["synth", "--set", "sentences=40", "--out", "corpus"]));
    let corpus = fs::read_to_string(d.join("corpus/synth.conll")).unwrap();
    assert!(corpus.contains("B-Chemical") || corpus.contains("B-Disease"));
    assert!(d.join("corpus/manifest.json").exists());

    fs::write(d.join("tiny.toml"), TINY).unwrap();
    ok(&chartag(d, &["train", "--config", "tiny.toml", "--out", "model"]));
    for f in ["checkpoint.json", "report.json", "report.txt", "config.toml", "manifest.json"] {
        assert!(d.join("model").join(f).exists(), "missing {f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("model/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");

    ok(&chartag(
        d,
        &["predict", "--checkpoint", "model/checkpoint.json", "--input", "corpus/synth.conll", "--out", "pred"],
    ));
    let pred = fs::read_to_string(d.join("pred/predictions.conll")).unwrap();
    assert_eq!(pred.lines().count(), corpus.lines().count());

    ok(&chartag(
        d,
        &["eval", "--gold", "corpus/synth.conll", "--pred", "pred/predictions.conll", "--out", "eval"],
    ));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("eval/eval.json")).unwrap()).unwrap();
    let f1 = report["overall"]["f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));
}

#[test]
fn eval_of_gold_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&chartag(d, &["synth", "--set", "sentences=10", "--out", "c"]));
    ok(&chartag(
        d,
        &["eval", "--gold", "c/synth.conll", "--pred", "c/synth.conll", "--pred-b", "c/synth.conll", "--out", "e"],
    ));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("e/eval.json")).unwrap()).unwrap();
    assert_eq!(report["overall"]["f1"].as_f64(), Some(1.0));
    assert!(d.join("e/errors.json").exists());
}

#[test]
fn gazetteer_tag_marks_dictionary_terms() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("in.conll"), "Aspirin NN B-NP O B-Chemical\ninduced VBN O O O\nliver NN B-NP O B-Disease\ndamage NN I-NP O I-Disease\n\n").unwrap();
    fs::write(d.join("dict.txt"), "aspirin\nliver damage\n").unwrap();
    ok(&chartag(d, &["gazetteer-tag", "--dictionary", "dict.txt", "--input", "in.conll", "--out", "g"]));
    let tagged = fs::read_to_string(d.join("g/tagged.conll")).unwrap();
    let gaz: Vec<&str> = tagged
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| l.split_whitespace().nth(3).unwrap())
        .collect();
    assert_eq!(gaz, ["B", "O", "B", "I"]);
}

#[test]
fn bench_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let base = "batch_size = 8\n[model]\nlayers = 1\nhidden = 8\nword_dim = 6\n";
    fs::write(d.join("a.toml"), base).unwrap();
    fs::write(d.join("b.toml"), format!("{base}char_encoder = \"lstm\"\nchar_hidden = 4\nchar_dim = 4\n")).unwrap();
    fs::write(d.join("s.toml"), "sentences = 16\n").unwrap();
    ok(&chartag(
        d,
        &["bench", "--configs", "a.toml", "b.toml", "--epochs", "1", "--synth", "s.toml", "--out", "b"],
    ));
    let table = fs::read_to_string(d.join("b/bench.txt")).unwrap();
    assert!(table.contains("LSTM-char"), "{table}");
}

#[test]
fn usage_and_data_errors_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(chartag(d, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(chartag(d, &["synth", "--set", "no_such_key=3"]).status.code(), Some(1));
    assert_eq!(
        chartag(d, &["eval", "--gold", "missing.conll", "--pred", "missing.conll"]).status.code(),
        Some(2)
    );
    fs::write(d.join("a.conll"), "x O\n\n").unwrap();
    fs::write(d.join("b.conll"), "x O\ny O\n\n").unwrap();
    assert_eq!(
        chartag(d, &["eval", "--gold", "a.conll", "--pred", "b.conll", "--out", "e"]).status.code(),
        Some(2)
    );
}
