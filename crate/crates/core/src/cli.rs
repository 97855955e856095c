//! Command-line front end: `train`, `predict`, `eval`, `bench`,
//! `gazetteer-tag` and `synth`.
//!
//! Settings come from TOML files whose keys mirror [`TrainConfig`] and
//! [`SynthSpec`]; `--set key.path=value` overrides single keys. Every command
//! writes its outputs plus a `manifest.json` (argv, resolved config, input
//! digests) into `--out`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::data::{
    apply_gazetteer, generate_synthetic_corpus, load_pretrained_vectors, read_conll, repair_bio, split_train_dev,
    write_conll, ColumnSpec, Gazetteer, Sentence, SynthSpec,
};
use crate::error::Error;
use crate::eval::{compare_errors, score, LengthBuckets};
use crate::trainer::{bench_table, benchmark_runtime, gold_labels, train, Checkpoint, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "chartag", version, about = "BiLSTM-CRF sequence labelling with character-level word embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write its best checkpoint and report.
    Train(TrainArgs),
    /// Tag a corpus with a trained checkpoint.
    Predict(PredictArgs),
    /// Score predicted labels against gold labels.
    Eval(EvalArgs),
    /// Compare mean training seconds per epoch across configs.
    Bench(BenchArgs),
    /// Add dictionary-match BIO tags as a column.
    GazetteerTag(GazetteerArgs),
    /// Write a synthetic labelled corpus.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Output directory (created if missing).
    #[arg(long, default_value = "chartag-out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// TOML training config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `model.char_encoder="cnn"`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Column layout of the input, e.g. `word,pos,chunk,gazetteer,label`.
    #[arg(long, default_value = "word,pos,chunk,gazetteer,label")]
    columns: String,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// A second prediction file; adds a word-level error comparison.
    #[arg(long)]
    pred_b: Option<PathBuf>,
    /// Surface-length bucket edges for the error comparison.
    #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
    length_edges: Vec<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// One TOML config per model; the first is the baseline.
    #[arg(long, num_args = 1.., required = true)]
    configs: Vec<PathBuf>,
    /// Timed epochs per config.
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    /// Corpus to train on; a synthetic corpus is generated if absent.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value = "word,pos,chunk,gazetteer,label")]
    columns: String,
    /// TOML synthetic-corpus spec used when no corpus is given.
    #[arg(long)]
    synth: Option<PathBuf>,
    /// Override a key in every config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct GazetteerArgs {
    /// One term per line.
    #[arg(long)]
    dictionary: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "word,pos,chunk,gazetteer,label")]
    columns: String,
    #[arg(long)]
    case_sensitive: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// TOML synthetic-corpus spec.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Usage(m),
            other => Failure::Data(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code: 0 success, 1 usage error, 2 data error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a, &argv),
        Command::Predict(a) => cmd_predict(a, &argv),
        Command::Eval(a) => cmd_eval(a, &argv),
        Command::Bench(a) => cmd_bench(a, &argv),
        Command::GazetteerTag(a) => cmd_gazetteer(a, &argv),
        Command::Synth(a) => cmd_synth(a, &argv),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

// --------------------------------------------------------------- config

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets `a.b.c = value` inside `table`, creating intermediate tables.
fn apply_override(table: &mut toml::Table, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Failure::Usage(format!("override `{assignment}` is not KEY=VALUE")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = path.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Failure::Usage(format!("`{p}` in `{key}` is not a table")))?;
    }
    cur.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Reads an optional TOML file, applies overrides and deserializes, rejecting
/// unknown keys.
pub fn load_config<T: DeserializeOwned>(path: Option<&Path>, overrides: &[String]) -> crate::Result<T> {
    let mut table = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o).map_err(|f| match f {
            Failure::Usage(m) => Error::Config(m),
            Failure::Data(e) => e,
        })?;
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
}

// ------------------------------------------------------------- manifest

#[derive(Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    argv: &'a [String],
    version: &'a str,
    config: &'a C,
    inputs: Vec<InputDigest>,
}

fn digest(path: &Path) -> crate::Result<InputDigest> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

fn prepare_out(dir: &Path) -> crate::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> crate::Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn write_manifest<C: Serialize>(
    dir: &Path,
    command: &str,
    argv: &[String],
    config: &C,
    inputs: &[&Path],
) -> crate::Result<()> {
    let m = Manifest {
        command,
        argv,
        version: env!("CARGO_PKG_VERSION"),
        config,
        inputs: inputs.iter().map(|p| digest(p)).collect::<crate::Result<_>>()?,
    };
    write_file(dir, "manifest.json", serde_json::to_string_pretty(&m)?)?;
    Ok(())
}

// ------------------------------------------------------------- commands

fn cmd_train(a: TrainArgs, argv: &[String]) -> CliResult<()> {
    let cfg: TrainConfig = load_config(a.config.as_deref(), &a.set)?;
    cfg.validate()?;
    let out = &a.common.out;
    prepare_out(out)?;
    let spec: ColumnSpec = cfg.data.columns.as_deref().unwrap_or("word,pos,chunk,gazetteer,label").parse()?;
    let train_path = cfg
        .data
        .train
        .as_deref()
        .ok_or_else(|| Failure::Usage("config must set data.train".into()))?;
    let mut inputs = vec![train_path];

    let corpus = read_conll(train_path, &spec)?.sentences;
    let (mut train_set, mut dev_set) = match cfg.data.dev.as_deref() {
        Some(p) => {
            inputs.push(p);
            (corpus, read_conll(p, &spec)?.sentences)
        }
        None => split_train_dev(&corpus, cfg.dev_fraction, cfg.seed)?,
    };
    let mut test_set = match cfg.data.test.as_deref() {
        Some(p) => {
            inputs.push(p);
            Some(read_conll(p, &spec)?.sentences)
        }
        None => None,
    };
    if let Some(p) = cfg.data.gazetteer.as_deref() {
        inputs.push(p);
        let gaz = Gazetteer::load(p, true)?;
        apply_gazetteer(&mut train_set, &gaz);
        apply_gazetteer(&mut dev_set, &gaz);
        if let Some(t) = test_set.as_mut() {
            apply_gazetteer(t, &gaz);
        }
    }
    let vectors = match cfg.data.vectors.as_deref() {
        Some(p) => {
            inputs.push(p);
            Some(load_pretrained_vectors(p, Some(cfg.model.word_dim))?)
        }
        None => None,
    };

    let (ckpt, report) = train(&cfg, &train_set, &dev_set, test_set.as_deref(), vectors.as_ref())?;
    ckpt.save(out.join("checkpoint.json"))?;
    write_file(out, "report.json", report.to_json())?;
    let mut text = report.table();
    if let Some(t) = &report.test {
        text.push_str(&format!("\ntest set:\n{t}"));
    }
    write_file(out, "report.txt", &text)?;
    write_file(out, "config.toml", cfg.to_toml())?;
    write_manifest(out, "train", argv, &cfg, &inputs)?;
    print!("{text}");
    Ok(())
}

fn cmd_predict(a: PredictArgs, argv: &[String]) -> CliResult<()> {
    let spec: ColumnSpec = a.columns.parse()?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let tagger = ckpt.tagger();
    let sentences = read_conll(&a.input, &spec)?.sentences;
    let mut preds = tagger.predict(&sentences)?;
    let mut repaired = 0;
    for p in &mut preds {
        repaired += repair_bio(p)?;
    }
    if repaired > 0 {
        log::warn!("repaired {repaired} predicted I- tags without a matching B-");
    }
    prepare_out(&a.common.out)?;
    let path = write_file(&a.common.out, "predictions.conll", write_conll(&sentences, &spec, Some(&preds)))?;
    write_manifest(
        &a.common.out,
        "predict",
        argv,
        &ckpt.config,
        &[a.checkpoint.as_path(), a.input.as_path()],
    )?;
    println!("wrote {} sentences to {}", sentences.len(), path.display());
    Ok(())
}

fn read_labels(path: &Path) -> CliResult<(Vec<Sentence>, Vec<Vec<String>>)> {
    let sentences = read_conll(path, &ColumnSpec::word_and_last_label())?.sentences;
    let labels = gold_labels(&sentences)?;
    Ok((sentences, labels))
}

fn cmd_eval(a: EvalArgs, argv: &[String]) -> CliResult<()> {
    let (sentences, gold) = read_labels(&a.gold)?;
    let (_, pred) = read_labels(&a.pred)?;
    let report = score(&gold, &pred)?;
    let out = &a.common.out;
    prepare_out(out)?;
    let mut text = report.to_string();
    write_file(out, "eval.json", report.to_json())?;
    let mut inputs = vec![a.gold.as_path(), a.pred.as_path()];
    if let Some(pb) = a.pred_b.as_deref() {
        inputs.push(pb);
        let (_, pred_b) = read_labels(pb)?;
        let surfaces: Vec<Vec<String>> = sentences
            .iter()
            .map(|s| s.tokens.iter().map(|t| t.surface.clone()).collect())
            .collect();
        let buckets = LengthBuckets { edges: a.length_edges.clone() };
        if buckets.edges.is_empty() || buckets.edges.windows(2).any(|w| w[0] >= w[1]) || buckets.edges[0] < 2 {
            return Err(Failure::Usage("length edges must be increasing and at least 2".into()));
        }
        let cmp = compare_errors(&gold, &pred, &pred_b, &surfaces, &buckets)?;
        text.push_str(&format!("\nword-level errors (A = --pred, B = --pred-b):\n{cmp}"));
        write_file(out, "errors.json", serde_json::to_string_pretty(&cmp).map_err(Error::from)?)?;
    }
    write_file(out, "eval.txt", &text)?;
    write_manifest(out, "eval", argv, &a.length_edges, &inputs)?;
    print!("{text}");
    Ok(())
}

fn cmd_bench(a: BenchArgs, argv: &[String]) -> CliResult<()> {
    let cfgs = a
        .configs
        .iter()
        .map(|p| {
            let c: TrainConfig = load_config(Some(p), &a.set)?;
            c.validate()?;
            Ok(c)
        })
        .collect::<crate::Result<Vec<_>>>()?;
    let mut inputs: Vec<&Path> = a.configs.iter().map(PathBuf::as_path).collect();
    let corpus = match a.corpus.as_deref() {
        Some(p) => {
            inputs.push(p);
            read_conll(p, &a.columns.parse()?)?.sentences
        }
        None => {
            if let Some(s) = a.synth.as_deref() {
                inputs.push(s);
            }
            let spec: SynthSpec = load_config(a.synth.as_deref(), &[])?;
            generate_synthetic_corpus(&spec)?
        }
    };
    let rows = benchmark_runtime(&cfgs, &corpus, a.epochs)?;
    let out = &a.common.out;
    prepare_out(out)?;
    let table = bench_table(&rows);
    write_file(out, "bench.txt", &table)?;
    write_file(out, "bench.json", serde_json::to_string_pretty(&rows).map_err(Error::from)?)?;
    write_manifest(out, "bench", argv, &cfgs, &inputs)?;
    print!("{table}");
    Ok(())
}

fn cmd_gazetteer(a: GazetteerArgs, argv: &[String]) -> CliResult<()> {
    let spec: ColumnSpec = a.columns.parse()?;
    let gaz = Gazetteer::load(&a.dictionary, !a.case_sensitive)?;
    let mut sentences = read_conll(&a.input, &spec)?.sentences;
    apply_gazetteer(&mut sentences, &gaz);
    let tags: Vec<Vec<String>> = sentences
        .iter()
        .map(|s| s.tokens.iter().map(|t| t.gazetteer.clone().unwrap_or_default()).collect())
        .collect();
    let out = &a.common.out;
    prepare_out(out)?;
    let extra = spec.gazetteer.is_none().then_some(tags.as_slice());
    write_file(out, "tagged.conll", write_conll(&sentences, &spec, extra))?;
    write_manifest(
        out,
        "gazetteer-tag",
        argv,
        &a.case_sensitive,
        &[a.dictionary.as_path(), a.input.as_path()],
    )?;
    println!("tagged {} sentences with {} dictionary terms", sentences.len(), gaz.len());
    Ok(())
}

fn cmd_synth(a: SynthArgs, argv: &[String]) -> CliResult<()> {
    let spec: SynthSpec = load_config(a.config.as_deref(), &a.set)?;
    let corpus = generate_synthetic_corpus(&spec)?;
    let out = &a.common.out;
    prepare_out(out)?;
    let path = write_file(out, "synth.conll", write_conll(&corpus, &ColumnSpec::default(), None))?;
    let inputs: Vec<&Path> = a.config.as_deref().into_iter().collect();
    write_manifest(out, "synth", argv, &spec, &inputs)?;
    println!("wrote {} sentences to {}", corpus.len(), path.display());
    Ok(())
}
