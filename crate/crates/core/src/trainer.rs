//! Mini-batch training with dev-based model selection, checkpoints, and the
//! epoch-runtime benchmark.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{build_vocab, EncodedSentence, PretrainedVectors, Sentence, VocabOptions, Vocabulary};
use crate::encoders::ModelConfig;
use crate::error::{Error, Result};
use crate::eval::{score, EvalReport};
use crate::model::Tagger;
use crate::optim::{clip_by_norm, nadam_step, ClipConfig, NadamConfig, NadamState};
use crate::tensor::{Graph, ParamStore};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Input files. Relative paths are resolved by the caller.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
    pub gazetteer: Option<PathBuf>,
    /// Column layout of the corpus files, e.g. `word,pos,chunk,gazetteer,label`.
    pub columns: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub optimizer: NadamConfig,
    pub clip: ClipConfig,
    /// Minimum training frequency for a word without a pretrained vector.
    pub vocab_threshold: usize,
    /// Count dev occurrences towards the frequency threshold too.
    pub threshold_counts_dev: bool,
    /// Fraction of documents held out when no dev file is given.
    pub dev_fraction: f64,
    pub data: DataPaths,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            seed: 1,
            optimizer: NadamConfig::default(),
            clip: ClipConfig::default(),
            vocab_threshold: 5,
            threshold_counts_dev: false,
            dev_fraction: 0.1,
            data: DataPaths::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optimizer.validate()?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if self.vocab_threshold == 0 {
            return bad("vocab_threshold must be at least 1");
        }
        if self.clip.tau <= 0.0 {
            return bad("clip.tau must be positive");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Shuffled index batches for one epoch; the order depends only on
/// `(seed, epoch)`.
pub fn make_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::Data("cannot batch an empty corpus".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Patience-based stopping on a score that must strictly improve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_score: f64,
    /// 1-based; 0 before any epoch.
    pub best_epoch: usize,
    pub epochs_without_improvement: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best_score: f64::NEG_INFINITY,
            best_epoch: 0,
            epochs_without_improvement: 0,
        }
    }

    /// Records an epoch's score; returns whether it is a new best.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        if score > self.best_score {
            self.best_score = score;
            self.best_epoch = epoch;
            self.epochs_without_improvement = 0;
            true
        } else {
            self.epochs_without_improvement += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.epochs_without_improvement >= self.patience
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_f1: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
    pub test: Option<EvalReport>,
}

impl TrainReport {
    /// The report with wall-clock times zeroed, for run-to-run comparison.
    pub fn without_timing(&self) -> TrainReport {
        let mut r = self.clone();
        r.epochs.iter_mut().for_each(|e| e.seconds = 0.0);
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:>5} {:>12} {:>9} {:>9}\n", "epoch", "train loss", "dev F1", "seconds");
        for e in &self.epochs {
            let mark = if e.epoch == self.best_epoch { " *" } else { "" };
            s.push_str(&format!(
                "{:>5} {:>12.4} {:>9.4} {:>9.2}{mark}\n",
                e.epoch, e.train_loss, e.dev_f1, e.seconds
            ));
        }
        if let Some(t) = &self.test {
            s.push_str(&format!("\ntest set, best-dev checkpoint (epoch {})\n{t}", self.best_epoch));
        }
        s
    }
}

/// Position of the dropout stream, enough to resume it exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSnapshot {
    pub seed: u64,
    pub stream: u64,
    /// 128-bit word position, as a decimal string.
    pub word_pos: String,
}

impl RngSnapshot {
    pub fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        RngSnapshot {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Data(format!("bad rng position `{}`", self.word_pos)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Everything needed to predict with, or resume, a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    pub optimizer: NadamState,
    pub rng: RngSnapshot,
    /// Epochs completed when this checkpoint was taken.
    pub epoch: usize,
}

impl Checkpoint {
    pub fn tagger(&self) -> Tagger {
        Tagger {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            params: self.params.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "checkpoint format version {} is not supported (expected {CHECKPOINT_VERSION})",
                c.version
            )));
        }
        c.config.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_json()?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Checkpoint::from_json(&text)
    }
}

fn dropout_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// A model, its optimizer, and the encoded training data.
pub struct Trainer {
    pub tagger: Tagger,
    pub optimizer: NadamState,
    config: TrainConfig,
    data: Vec<EncodedSentence>,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, tagger: Tagger, train: &[Sentence]) -> Result<Self> {
        config.validate()?;
        let data = train
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| tagger.encode(s))
            .collect::<Result<Vec<_>>>()?;
        if data.is_empty() {
            return Err(Error::Data("training corpus is empty".into()));
        }
        if data.iter().any(|s| s.labels.is_none()) {
            return Err(Error::Data("training corpus has unlabelled sentences".into()));
        }
        let rng = ChaCha8Rng::seed_from_u64(dropout_seed(config.seed));
        Ok(Trainer {
            tagger,
            optimizer: NadamState::new(),
            config,
            data,
            rng,
            epoch: 0,
        })
    }

    /// Rebuilds a trainer from a checkpoint, continuing where it stopped.
    pub fn resume(config: TrainConfig, ckpt: &Checkpoint, train: &[Sentence]) -> Result<Self> {
        let mut t = Trainer::new(config, ckpt.tagger(), train)?;
        t.optimizer = ckpt.optimizer.clone();
        t.rng = ckpt.rng.restore()?;
        t.epoch = ckpt.epoch;
        Ok(t)
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.tagger.config.clone(),
            vocab: self.tagger.vocab.clone(),
            params: self.tagger.params.clone(),
            optimizer: self.optimizer.clone(),
            rng: RngSnapshot::capture(dropout_seed(self.config.seed), &self.rng),
            epoch: self.epoch,
        }
    }

    /// One pass over the shuffled training data; returns the mean batch loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        let epoch = self.epoch + 1;
        let batches = make_batches(self.data.len(), self.config.batch_size, self.config.seed, epoch)?;
        let mut total = 0.0;
        for (bi, idx) in batches.iter().enumerate() {
            let batch: Vec<&EncodedSentence> = idx.iter().map(|&i| &self.data[i]).collect();
            let diverged = |reason: String| Error::Divergence {
                epoch,
                batch: bi + 1,
                reason,
            };
            let grads = {
                let mut g = Graph::new(&self.tagger.params);
                let loss = self.tagger.batch_loss(&mut g, &batch, Some(&mut self.rng)).map_err(|e| match e {
                    Error::Tensor(t) => diverged(t.to_string()),
                    other => other,
                })?;
                let value = g.value(loss).item();
                if !value.is_finite() {
                    return Err(diverged(format!("loss is {value}")));
                }
                total += value;
                g.backward(loss)?
            };
            let grads = clip_by_norm(grads, &self.config.clip);
            nadam_step(&mut self.tagger.params, &grads, &mut self.optimizer, &self.config.optimizer).map_err(
                |e| match e {
                    Error::NonFiniteGradient(n) => diverged(format!("non-finite gradient for `{n}`")),
                    other => other,
                },
            )?;
        }
        self.epoch = epoch;
        Ok(total / batches.len() as f64)
    }
}

/// Gold label sequences of a labelled corpus.
pub fn gold_labels(sentences: &[Sentence]) -> Result<Vec<Vec<String>>> {
    sentences
        .iter()
        .map(|s| {
            s.labels()
                .ok_or_else(|| Error::Data(format!("sentence in `{}` has no gold labels", s.doc_id)))
        })
        .collect()
}

pub fn evaluate(tagger: &Tagger, sentences: &[Sentence]) -> Result<EvalReport> {
    let gold = gold_labels(sentences)?;
    let pred = tagger.predict(sentences)?;
    score(&gold, &pred)
}

/// Vocabulary per the config's frequency rule.
pub fn vocab_for(
    cfg: &TrainConfig,
    train: &[Sentence],
    dev: &[Sentence],
    pretrained: Option<&PretrainedVectors>,
) -> Vocabulary {
    let opts = VocabOptions {
        threshold: cfg.vocab_threshold,
        lowercase: cfg.model.lowercase,
    };
    let pre = pretrained.map(|p| &p.table.index);
    if cfg.threshold_counts_dev {
        let all: Vec<Sentence> = train.iter().chain(dev).cloned().collect();
        build_vocab(&all, pre, &opts)
    } else {
        build_vocab(train, pre, &opts)
    }
}

/// Trains until patience runs out or `max_epochs`; returns the checkpoint of
/// the best dev epoch and the report (with test scores of that checkpoint).
pub fn train(
    cfg: &TrainConfig,
    train: &[Sentence],
    dev: &[Sentence],
    test: Option<&[Sentence]>,
    pretrained: Option<&PretrainedVectors>,
) -> Result<(Checkpoint, TrainReport)> {
    cfg.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Data("training and development sets must be non-empty".into()));
    }
    let vocab = vocab_for(cfg, train, dev, pretrained);
    let tagger = Tagger::new(cfg.model.clone(), vocab, pretrained.map(|p| &p.table), cfg.seed)?;
    let mut trainer = Trainer::new(cfg.clone(), tagger, train)?;
    let mut stop = EarlyStopping::new(cfg.patience);
    let mut epochs = Vec::new();
    let mut best = trainer.checkpoint();

    while trainer.epochs_done() < cfg.max_epochs {
        let t0 = Instant::now();
        let loss = trainer.run_epoch()?;
        let seconds = t0.elapsed().as_secs_f64();
        let dev_f1 = evaluate(&trainer.tagger, dev)?.overall.f1;
        let epoch = trainer.epochs_done();
        log::info!("epoch {epoch}: loss {loss:.4}, dev F1 {dev_f1:.4} ({seconds:.1}s)");
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss,
            dev_f1,
            seconds,
        });
        if stop.observe(epoch, dev_f1) {
            best = trainer.checkpoint();
        }
        if stop.should_stop() {
            break;
        }
    }

    let test = match test {
        Some(t) => Some(evaluate(&best.tagger(), t)?),
        None => None,
    };
    let report = TrainReport {
        model: cfg.model.model_name(),
        epochs,
        best_epoch: stop.best_epoch,
        best_dev_f1: stop.best_score,
        test,
    };
    Ok((best, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub model: String,
    pub epoch_seconds: Vec<f64>,
    pub mean_seconds: f64,
    /// Relative to the first row, in percent.
    pub delta_percent: f64,
}

pub fn delta_percent(baseline: f64, value: f64) -> f64 {
    (value - baseline) / baseline * 100.0
}

pub fn bench_table(rows: &[BenchRow]) -> String {
    let mut s = format!("{:<28} {:>14} {:>8}\n", "model", "s/epoch", "delta");
    for r in rows {
        s.push_str(&format!(
            "{:<28} {:>14.3} {:>+7.0}%\n",
            r.model, r.mean_seconds, r.delta_percent
        ));
    }
    s
}

/// Mean training seconds per epoch for each config on the same corpus. Each
/// model gets one untimed warm-up epoch; timed epochs are then interleaved
/// across models so drift in machine load affects all of them alike.
pub fn benchmark_runtime(cfgs: &[TrainConfig], corpus: &[Sentence], epochs: usize) -> Result<Vec<BenchRow>> {
    if epochs < 1 {
        return Err(Error::Config("benchmark needs at least one timed epoch".into()));
    }
    let Some(first) = cfgs.first() else {
        return Err(Error::Config("benchmark needs at least one config".into()));
    };
    if cfgs.iter().any(|c| c.batch_size != first.batch_size) {
        return Err(Error::Config("benchmarked configs must share the batch size".into()));
    }
    let mut trainers = cfgs
        .iter()
        .map(|c| {
            let vocab = vocab_for(c, corpus, &[], None);
            let tagger = Tagger::new(c.model.clone(), vocab, None, c.seed)?;
            Trainer::new(c.clone(), tagger, corpus)
        })
        .collect::<Result<Vec<_>>>()?;
    for t in &mut trainers {
        t.run_epoch()?;
    }
    let mut times = vec![Vec::with_capacity(epochs); trainers.len()];
    for _ in 0..epochs {
        for (t, row) in trainers.iter_mut().zip(&mut times) {
            let t0 = Instant::now();
            t.run_epoch()?;
            row.push(t0.elapsed().as_secs_f64());
        }
    }
    let means: Vec<f64> = times.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
    Ok(cfgs
        .iter()
        .zip(times)
        .zip(&means)
        .map(|((c, epoch_seconds), &mean)| BenchRow {
            model: c.model.model_name(),
            epoch_seconds,
            mean_seconds: mean,
            delta_percent: delta_percent(means[0], mean),
        })
        .collect())
}
