//! Token representations and the stacked bidirectional LSTM sentence encoder.
//!
//! A token is represented by `word ‖ char ‖ features…`, where the character
//! part comes from either a CNN (embed → same-padded conv → activation →
//! max over time) or a BiLSTM over the word's characters (final forward and
//! backward states). Batches are laid out time-major: row `t·B + b` holds
//! position `t` of sentence `b`, and positions past a sentence's length are
//! padding that never reaches the loss.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{EncodedSentence, Feature, Index, Vocabulary, PAD, UNK};
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

pub mod names {
    pub const WORD_EMB: &str = "word.emb";
    pub const CHAR_EMB: &str = "char.emb";
    pub const CHAR_CNN: &str = "char-cnn";
    pub const CHAR_CNN_KERNEL: &str = "char-cnn.kernel";
    pub const CHAR_CNN_BIAS: &str = "char-cnn.bias";
    pub const CHAR_LSTM: &str = "char-lstm";
    pub const CHAR_LSTM_FWD: &str = "char-lstm.fwd";
    pub const CHAR_LSTM_BWD: &str = "char-lstm.bwd";
    pub const OUTPUT_WEIGHT: &str = "output.weight";
    pub const OUTPUT_BIAS: &str = "output.bias";
    pub const CRF_TRANSITIONS: &str = "crf.transitions";
    pub const CRF_START: &str = "crf.start";
    pub const CRF_END: &str = "crf.end";

    pub fn feature_emb(f: crate::data::Feature) -> String {
        format!("feature.{}.emb", f.name())
    }

    pub fn bilstm(layer: usize, backward: bool) -> String {
        format!("bilstm.{layer}.{}", if backward { "bwd" } else { "fwd" })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CharEncoder {
    #[default]
    None,
    Cnn,
    Lstm,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoder {
    Softmax,
    #[default]
    Crf,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub char_encoder: CharEncoder,
    pub decoder: Decoder,
    /// Stacked BiLSTM layers, 1 or 2.
    pub layers: usize,
    /// LSTM hidden size per direction.
    pub hidden: usize,
    pub features: Vec<Feature>,
    /// (input-to-BiLSTM, BiLSTM-output) dropout rates, applied per layer.
    pub dropout: [f64; 2],
    pub word_dim: usize,
    pub char_dim: usize,
    pub cnn_window: usize,
    pub cnn_filters: usize,
    pub cnn_activation: Activation,
    pub char_hidden: usize,
    pub feature_dim: usize,
    pub lowercase: bool,
    /// Restrict Viterbi decoding to BIO-valid transitions.
    pub constrained_decoding: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            char_encoder: CharEncoder::None,
            decoder: Decoder::Crf,
            layers: 2,
            hidden: 250,
            features: Vec::new(),
            dropout: [0.25, 0.25],
            word_dim: 50,
            char_dim: 30,
            cnn_window: 3,
            cnn_filters: 30,
            cnn_activation: Activation::Tanh,
            char_hidden: 25,
            feature_dim: 10,
            lowercase: false,
            constrained_decoding: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(1..=2).contains(&self.layers) {
            return bad(format!("layers must be 1 or 2, got {}", self.layers));
        }
        if let Some(r) = self.dropout.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return bad(format!("dropout rate {r} not in [0, 1)"));
        }
        if self.cnn_window.is_multiple_of(2) {
            return bad(format!("cnn_window must be odd, got {}", self.cnn_window));
        }
        let dims = [
            ("hidden", self.hidden),
            ("word_dim", self.word_dim),
            ("char_dim", self.char_dim),
            ("cnn_filters", self.cnn_filters),
            ("char_hidden", self.char_hidden),
            ("feature_dim", self.feature_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, d)| *d == 0) {
            return bad(format!("{name} must be positive"));
        }
        let mut seen = self.features.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.features.len() {
            return bad("duplicate feature".into());
        }
        Ok(())
    }

    pub fn char_output_dim(&self) -> usize {
        match self.char_encoder {
            CharEncoder::None => 0,
            CharEncoder::Cnn => self.cnn_filters,
            CharEncoder::Lstm => 2 * self.char_hidden,
        }
    }

    /// Width of the per-token input to the first BiLSTM layer.
    pub fn input_dim(&self) -> usize {
        self.word_dim + self.char_output_dim() + self.features.len() * self.feature_dim
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    /// Short human-readable name, e.g. `BiLSTM-CRF+CNN-char`.
    pub fn model_name(&self) -> String {
        let mut name = String::from("BiLSTM");
        if self.decoder == Decoder::Crf {
            name.push_str("-CRF");
        }
        for f in &self.features {
            name.push_str(&format!("+{}", f.name()));
        }
        match self.char_encoder {
            CharEncoder::None => {}
            CharEncoder::Cnn => name.push_str("+CNN-char"),
            CharEncoder::Lstm => name.push_str("+LSTM-char"),
        }
        name
    }
}

/// Rows of embedding vectors with their symbol index.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub name: String,
    pub dim: usize,
    pub rows: Tensor,
    pub index: Index,
}

impl EmbeddingTable {
    pub fn new(name: impl Into<String>, index: Index, rows: Tensor) -> Result<Self> {
        let dim = rows.cols();
        if rows.shape().len() != 2 || rows.rows() != index.len() || index.len() < 2 {
            return Err(Error::Data(format!(
                "embedding table with {} symbols has shape {:?}",
                index.len(),
                rows.shape()
            )));
        }
        Ok(EmbeddingTable {
            name: name.into(),
            dim,
            rows,
            index,
        })
    }

    pub fn row_of(&self, symbol: &str) -> &[f64] {
        self.rows.row(self.index.get_or_unk(symbol))
    }
}

pub fn lstm_cell_param_count(input: usize, hidden: usize) -> usize {
    4 * (hidden * (input + hidden) + hidden)
}

pub fn cnn_param_count(window: usize, c_in: usize, c_out: usize) -> usize {
    window * c_in * c_out + c_out
}

/// Learnable scalars in tensors named `scope` or `scope.*`.
pub fn count_parameters(params: &ParamStore, scope: &str) -> usize {
    params.count_parameters(scope)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], limit: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

fn glorot(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    uniform(rng, shape, (6.0 / (fan_in + fan_out) as f64).sqrt())
}

fn insert_lstm_cell(p: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, input: usize, hidden: usize) {
    let g4 = 4 * hidden;
    p.insert(format!("{prefix}.w_in"), glorot(rng, &[g4, input], input, g4));
    p.insert(format!("{prefix}.w_rec"), glorot(rng, &[g4, hidden], hidden, g4));
    let mut bias = vec![0.0; g4];
    // forget gate (second block) starts open
    bias[hidden..2 * hidden].fill(1.0);
    p.insert(format!("{prefix}.bias"), Tensor::from_parts(vec![g4], bias));
}

/// Initializes every learnable tensor. Word rows with a pretrained vector are
/// copied from `pretrained`; the character table is uniform in ±0.5/char_dim;
/// everything else uses Glorot-uniform ranges, with zero biases except the
/// LSTM forget gate (1.0).
pub fn init_params(
    cfg: &ModelConfig,
    vocab: &Vocabulary,
    pretrained: Option<&EmbeddingTable>,
    rng: &mut ChaCha8Rng,
) -> Result<ParamStore> {
    cfg.validate()?;
    if vocab.labels.is_empty() {
        return Err(Error::Data("label set is empty".into()));
    }
    let mut p = ParamStore::new();

    let v = vocab.words.len();
    let mut words = glorot(rng, &[v, cfg.word_dim], v, cfg.word_dim);
    if let Some(pre) = pretrained {
        if pre.dim != cfg.word_dim {
            return Err(Error::Config(format!(
                "pretrained vectors have dimension {}, model expects {}",
                pre.dim, cfg.word_dim
            )));
        }
        let folded: HashMap<String, usize> = if vocab.lowercase {
            let mut m = HashMap::new();
            for (id, sym) in pre.index.symbols().iter().enumerate().skip(UNK + 1) {
                m.entry(sym.to_lowercase()).or_insert(id);
            }
            m
        } else {
            HashMap::new()
        };
        let d = cfg.word_dim;
        let data = words.data_mut();
        for (id, sym) in vocab.words.symbols().iter().enumerate().skip(UNK) {
            let src = if id == UNK {
                Some(UNK)
            } else {
                pre.index.get(sym).or_else(|| folded.get(sym).copied())
            };
            if let Some(src) = src {
                data[id * d..(id + 1) * d].copy_from_slice(pre.rows.row(src));
            }
        }
    }
    let d = cfg.word_dim;
    words.data_mut()[PAD * d..(PAD + 1) * d].fill(0.0);
    p.insert(names::WORD_EMB, words);

    match cfg.char_encoder {
        CharEncoder::None => {}
        CharEncoder::Cnn | CharEncoder::Lstm => {
            let c = vocab.chars.len();
            let mut table = uniform(rng, &[c, cfg.char_dim], 0.5 / cfg.char_dim as f64);
            table.data_mut()[..cfg.char_dim].fill(0.0);
            p.insert(names::CHAR_EMB, table);
        }
    }
    match cfg.char_encoder {
        CharEncoder::None => {}
        CharEncoder::Cnn => {
            let (w, ci, co) = (cfg.cnn_window, cfg.char_dim, cfg.cnn_filters);
            p.insert(names::CHAR_CNN_KERNEL, glorot(rng, &[w, ci, co], w * ci, w * co));
            p.insert(names::CHAR_CNN_BIAS, Tensor::zeros(&[co]));
        }
        CharEncoder::Lstm => {
            insert_lstm_cell(&mut p, rng, names::CHAR_LSTM_FWD, cfg.char_dim, cfg.char_hidden);
            insert_lstm_cell(&mut p, rng, names::CHAR_LSTM_BWD, cfg.char_dim, cfg.char_hidden);
        }
    }

    for &f in &cfg.features {
        let n = vocab.feature_index(f).len();
        p.insert(names::feature_emb(f), glorot(rng, &[n, cfg.feature_dim], n, cfg.feature_dim));
    }

    let mut input = cfg.input_dim();
    for layer in 0..cfg.layers {
        for backward in [false, true] {
            insert_lstm_cell(&mut p, rng, &names::bilstm(layer, backward), input, cfg.hidden);
        }
        input = cfg.output_dim();
    }

    let l = vocab.labels.len();
    p.insert(names::OUTPUT_WEIGHT, glorot(rng, &[l, input], input, l));
    p.insert(names::OUTPUT_BIAS, Tensor::zeros(&[l]));
    if cfg.decoder == Decoder::Crf {
        p.insert(names::CRF_TRANSITIONS, glorot(rng, &[l, l], l, l));
        p.insert(names::CRF_START, Tensor::zeros(&[l]));
        p.insert(names::CRF_END, Tensor::zeros(&[l]));
    }
    Ok(p)
}

// ------------------------------------------------------------------ lookups

/// Stacks the rows `ids` of an embedding table node.
pub fn embed_lookup(g: &mut Graph, table: Var, ids: &[usize]) -> Result<Var> {
    let idx: Vec<Option<usize>> = ids.iter().map(|&i| Some(i)).collect();
    Ok(g.gather_rows(table, &idx)?)
}

fn dropout(g: &mut Graph, x: Var, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
    let Some(rng) = rng else { return Ok(x) };
    if rate <= 0.0 {
        return Ok(x);
    }
    let shape = g.value(x).shape().to_vec();
    let keep = 1.0 - rate;
    let n = shape.iter().product();
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let m = g.constant(Tensor::from_parts(shape, mask));
    Ok(g.mul(x, m)?)
}

// ----------------------------------------------------------- character CNN

/// CNN character embeddings of several words, one row each (`[N×filters]`).
/// Each word is convolved on its own, so no padding character ever enters the
/// window or the pooling.
pub fn cnn_char_encode_words(g: &mut Graph, cfg: &ModelConfig, words: &[&[usize]]) -> Result<Var> {
    if words.iter().any(|w| w.is_empty()) || words.is_empty() {
        return Err(Error::Data("empty character sequence".into()));
    }
    let table = g.param(names::CHAR_EMB)?;
    let kernel = g.param(names::CHAR_CNN_KERNEL)?;
    let bias = g.param(names::CHAR_CNN_BIAS)?;
    let mut rows = Vec::with_capacity(words.len());
    for w in words {
        let x = embed_lookup(g, table, w)?;
        let conv = g.conv1d_same(x, kernel, bias)?;
        let act = match cfg.cnn_activation {
            Activation::Tanh => g.tanh(conv)?,
            Activation::Relu => g.relu(conv)?,
        };
        rows.push(g.max_over_time_segments(act, &[w.len()])?);
    }
    Ok(g.concat_rows(&rows)?)
}

/// CNN character embedding of one word, shape `[filters]`.
pub fn cnn_char_encode(g: &mut Graph, cfg: &ModelConfig, chars: &[usize]) -> Result<Var> {
    let v = cnn_char_encode_words(g, cfg, &[chars])?;
    Ok(g.reshape(v, &[cfg.cnn_filters])?)
}

// -------------------------------------------------------------------- LSTM

struct CellVars {
    w_in: Var,
    w_rec: Var,
    bias: Var,
    hidden: usize,
}

fn cell_vars(g: &mut Graph, prefix: &str) -> Result<CellVars> {
    let w_in = g.param(&format!("{prefix}.w_in"))?;
    let w_rec = g.param(&format!("{prefix}.w_rec"))?;
    let bias = g.param(&format!("{prefix}.bias"))?;
    let hidden = g.value(w_rec).cols();
    Ok(CellVars {
        w_in,
        w_rec,
        bias,
        hidden,
    })
}

/// Gate nonlinearities from pre-activations `[B×4H]` in (input, forget, cell,
/// output) order. `c_prev = None` means a zero previous cell state.
fn gates(g: &mut Graph, pre: Var, c_prev: Option<Var>, h: usize) -> Result<(Var, Var)> {
    let i_pre = g.slice_cols(pre, 0, h)?;
    let i = g.sigmoid(i_pre)?;
    let cand_pre = g.slice_cols(pre, 2 * h, h)?;
    let cand = g.tanh(cand_pre)?;
    let o_pre = g.slice_cols(pre, 3 * h, h)?;
    let o = g.sigmoid(o_pre)?;
    let ig = g.mul(i, cand)?;
    let c = match c_prev {
        Some(c_prev) => {
            let f_pre = g.slice_cols(pre, h, h)?;
            let f = g.sigmoid(f_pre)?;
            let fc = g.mul(f, c_prev)?;
            g.add(fc, ig)?
        }
        None => ig,
    };
    let tc = g.tanh(c)?;
    let h_new = g.mul(o, tc)?;
    Ok((h_new, c))
}

/// One LSTM step on a batch: `x [B×I]`, `h, c [B×H]` → `(h', c')`.
pub fn lstm_cell_step(g: &mut Graph, prefix: &str, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let cell = cell_vars(g, prefix)?;
    let xi = g.matmul_t(x, cell.w_in)?;
    let hr = g.matmul_t(h, cell.w_rec)?;
    let sum = g.add(xi, hr)?;
    let pre = g.add_bias(sum, cell.bias)?;
    gates(g, pre, Some(c), cell.hidden)
}

/// Runs one LSTM direction over a time-major batch `x [T·B × I]`, returning
/// hidden states `[T·B × H]` in the same layout.
fn run_lstm(g: &mut Graph, prefix: &str, x: Var, batch: usize, steps: usize) -> Result<Var> {
    let cell = cell_vars(g, prefix)?;
    let proj = g.matmul_t(x, cell.w_in)?;
    let proj = g.add_bias(proj, cell.bias)?;
    let mut outputs = Vec::with_capacity(steps);
    let mut state: Option<(Var, Var)> = None;
    for t in 0..steps {
        let mut pre = g.slice_rows(proj, t * batch, batch)?;
        if let Some((h, _)) = state {
            let rec = g.matmul_t(h, cell.w_rec)?;
            pre = g.add(pre, rec)?;
        }
        let (h, c) = gates(g, pre, state.map(|s| s.1), cell.hidden)?;
        outputs.push(h);
        state = Some((h, c));
    }
    Ok(g.concat_rows(&outputs)?)
}

/// Row permutation reversing each sequence within its own length; padding
/// rows map to themselves. It is its own inverse.
fn reversal(lengths: &[usize], steps: usize) -> Vec<Option<usize>> {
    let b = lengths.len();
    let mut idx = Vec::with_capacity(steps * b);
    for t in 0..steps {
        for (s, &len) in lengths.iter().enumerate() {
            idx.push(Some(if t < len { (len - 1 - t) * b + s } else { t * b + s }));
        }
    }
    idx
}

/// Bidirectional LSTM over a time-major batch; returns the forward and
/// backward hidden states, both in original time order.
fn bilstm(g: &mut Graph, fwd: &str, bwd: &str, x: Var, lengths: &[usize]) -> Result<(Var, Var)> {
    let batch = lengths.len();
    let steps = lengths.iter().copied().max().unwrap_or(0);
    let out_f = run_lstm(g, fwd, x, batch, steps)?;
    let rev = reversal(lengths, steps);
    let x_rev = g.gather_rows(x, &rev)?;
    let out_rev = run_lstm(g, bwd, x_rev, batch, steps)?;
    let out_b = g.gather_rows(out_rev, &rev)?;
    Ok((out_f, out_b))
}

/// BiLSTM character embeddings of several words, `[N × 2·char_hidden]`:
/// the forward state after the last character next to the backward state
/// after the first. Words run one at a time, unpadded.
pub fn lstm_char_encode_words(g: &mut Graph, words: &[&[usize]]) -> Result<Var> {
    if words.iter().any(|w| w.is_empty()) || words.is_empty() {
        return Err(Error::Data("empty character sequence".into()));
    }
    let table = g.param(names::CHAR_EMB)?;
    let mut rows = Vec::with_capacity(words.len());
    for w in words {
        let x = embed_lookup(g, table, w)?;
        let (out_f, out_b) = bilstm(g, names::CHAR_LSTM_FWD, names::CHAR_LSTM_BWD, x, &[w.len()])?;
        let last = g.slice_rows(out_f, w.len() - 1, 1)?;
        let first = g.slice_rows(out_b, 0, 1)?;
        rows.push(g.concat_cols(&[last, first])?);
    }
    Ok(g.concat_rows(&rows)?)
}

/// BiLSTM character embedding of one word, shape `[2·char_hidden]`.
pub fn lstm_char_encode(g: &mut Graph, cfg: &ModelConfig, chars: &[usize]) -> Result<Var> {
    let v = lstm_char_encode_words(g, &[chars])?;
    Ok(g.reshape(v, &[2 * cfg.char_hidden])?)
}

// ------------------------------------------------------------ sentence level

/// Shape of a padded, time-major batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchLayout {
    pub lengths: Vec<usize>,
    pub max_len: usize,
}

impl BatchLayout {
    pub fn new(lengths: Vec<usize>) -> Self {
        let max_len = lengths.iter().copied().max().unwrap_or(0);
        BatchLayout { lengths, max_len }
    }

    pub fn batch(&self) -> usize {
        self.lengths.len()
    }

    pub fn rows(&self) -> usize {
        self.batch() * self.max_len
    }

    pub fn row(&self, t: usize, b: usize) -> usize {
        t * self.batch() + b
    }

    /// Rows of sentence `b`, in time order.
    pub fn sentence_rows(&self, b: usize) -> Vec<Option<usize>> {
        (0..self.lengths[b]).map(|t| Some(self.row(t, b))).collect()
    }
}

/// Encodes a batch into `[T·B × 2·hidden]`. Passing an RNG turns on training
/// mode (dropout); `None` is inference.
pub fn encode_batch(
    g: &mut Graph,
    cfg: &ModelConfig,
    batch: &[&EncodedSentence],
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(Var, BatchLayout)> {
    if batch.is_empty() || batch.iter().any(|s| s.is_empty()) {
        return Err(Error::Data("empty sentence".into()));
    }
    if let Some(s) = batch.iter().find(|s| s.features.len() != cfg.features.len()) {
        return Err(Error::Config(format!(
            "sentence carries {} feature columns, model expects {}",
            s.features.len(),
            cfg.features.len()
        )));
    }
    let layout = BatchLayout::new(batch.iter().map(|s| s.len()).collect());
    let at = |t: usize, b: usize| (t < layout.lengths[b]).then_some((t, b));
    let positions: Vec<Option<(usize, usize)>> = (0..layout.max_len)
        .flat_map(|t| (0..layout.batch()).map(move |b| (t, b)))
        .map(|(t, b)| at(t, b))
        .collect();

    let mut parts = Vec::with_capacity(2 + cfg.features.len());
    let words = g.param(names::WORD_EMB)?;
    let word_ids: Vec<Option<usize>> = positions.iter().map(|p| p.map(|(t, b)| batch[b].words[t])).collect();
    parts.push(g.gather_rows(words, &word_ids)?);

    if cfg.char_encoder != CharEncoder::None {
        let tokens: Vec<&[usize]> = positions
            .iter()
            .flatten()
            .map(|&(t, b)| batch[b].chars[t].as_slice())
            .collect();
        let encoded = match cfg.char_encoder {
            CharEncoder::Cnn => cnn_char_encode_words(g, cfg, &tokens)?,
            CharEncoder::Lstm => lstm_char_encode_words(g, &tokens)?,
            CharEncoder::None => unreachable!(),
        };
        let mut next = 0;
        let spread: Vec<Option<usize>> = positions
            .iter()
            .map(|p| {
                p.map(|_| {
                    next += 1;
                    next - 1
                })
            })
            .collect();
        parts.push(g.gather_rows(encoded, &spread)?);
    }

    for (k, &f) in cfg.features.iter().enumerate() {
        let table = g.param(&names::feature_emb(f))?;
        let ids: Vec<Option<usize>> = positions.iter().map(|p| p.map(|(t, b)| batch[b].features[k][t])).collect();
        parts.push(g.gather_rows(table, &ids)?);
    }

    let mut x = if parts.len() == 1 { parts[0] } else { g.concat_cols(&parts)? };
    for layer in 0..cfg.layers {
        x = dropout(g, x, cfg.dropout[0], rng.as_deref_mut())?;
        let (f, b) = bilstm(g, &names::bilstm(layer, false), &names::bilstm(layer, true), x, &layout.lengths)?;
        x = g.concat_cols(&[f, b])?;
        x = dropout(g, x, cfg.dropout[1], rng.as_deref_mut())?;
    }
    Ok((x, layout))
}

/// Encodes one sentence into `[T × 2·hidden]`.
pub fn encode_sentence(
    g: &mut Graph,
    cfg: &ModelConfig,
    s: &EncodedSentence,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let (x, _) = encode_batch(g, cfg, &[s], rng)?;
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_vocab, Sentence, Token, VocabOptions};
    use crate::tensor::sigmoid;

    fn corpus() -> Vec<Sentence> {
        let tok = |w: &str, l: &str| {
            let mut t = Token::new(w).with_label(l);
            t.pos = Some("NN".into());
            t.chunk = Some("B-NP".into());
            t.gazetteer = Some("O".into());
            t
        };
        vec![
            Sentence::new("d", vec![tok("aspirin", "B-Chemical"), tok("works", "O")]),
            Sentence::new("d", vec![tok("fever", "B-Disease")]),
        ]
    }

    fn setup(cfg: &ModelConfig) -> (Vocabulary, ParamStore) {
        let vocab = build_vocab(&corpus(), None, &VocabOptions { threshold: 1, lowercase: false });
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = init_params(cfg, &vocab, None, &mut rng).unwrap();
        (vocab, p)
    }

    use rand::SeedableRng;

    fn table_cfg(kind: CharEncoder) -> ModelConfig {
        ModelConfig {
            char_encoder: kind,
            hidden: 8,
            layers: 1,
            ..Default::default()
        }
    }

    #[test]
    fn char_parameter_counts() {
        let (_, p) = setup(&table_cfg(CharEncoder::Cnn));
        assert_eq!(count_parameters(&p, names::CHAR_CNN), 2730);
        let (_, p) = setup(&table_cfg(CharEncoder::Lstm));
        assert_eq!(count_parameters(&p, names::CHAR_LSTM), 11200);
        assert_eq!(count_parameters(&p, "no-such-scope"), 0);
        assert_eq!(lstm_cell_param_count(30, 25) * 2, 11200);
        assert_eq!(cnn_param_count(3, 30, 30), 2730);
    }

    #[test]
    fn embed_lookup_examples() {
        let mut store = ParamStore::new();
        let rows = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        store.insert("t", rows.clone());
        let mut g = Graph::new(&store);
        let t = g.param("t").unwrap();
        let v = embed_lookup(&mut g, t, &[2, 0]).unwrap();
        assert_eq!(g.value(v).to_rows(), vec![rows.row(2).to_vec(), rows.row(0).to_vec()]);
        let unk = embed_lookup(&mut g, t, &[UNK, UNK]).unwrap();
        assert_eq!(g.value(unk).row(0), g.value(unk).row(1));
        let empty = embed_lookup(&mut g, t, &[]).unwrap();
        assert_eq!(g.value(empty).shape(), &[0, 2]);
        assert!(embed_lookup(&mut g, t, &[3]).is_err());
    }

    #[test]
    fn cnn_zero_kernel_gives_tanh_bias() {
        let cfg = table_cfg(CharEncoder::Cnn);
        let (_, mut p) = setup(&cfg);
        p.get_mut(names::CHAR_CNN_KERNEL).unwrap().data_mut().fill(0.0);
        let bias: Vec<f64> = (0..30).map(|i| i as f64 / 10.0 - 1.5).collect();
        p.get_mut(names::CHAR_CNN_BIAS).unwrap().assign(&bias).unwrap();
        let mut g = Graph::new(&p);
        for word in [&[2usize][..], &[2, 3, 4, 5]] {
            let v = cnn_char_encode(&mut g, &cfg, word).unwrap();
            let want: Vec<f64> = bias.iter().map(|b| b.tanh()).collect();
            assert_eq!(g.value(v).data(), want.as_slice());
        }
        assert!(cnn_char_encode(&mut g, &cfg, &[]).is_err());
    }

    #[test]
    fn cnn_matches_nested_loop_oracle() {
        let cfg = table_cfg(CharEncoder::Cnn);
        let (vocab, p) = setup(&cfg);
        let word = vocab.char_ids("aspir");
        assert_eq!(word.len(), 5);
        let table = p.get(names::CHAR_EMB).unwrap();
        let k = p.get(names::CHAR_CNN_KERNEL).unwrap().data();
        let b = p.get(names::CHAR_CNN_BIAS).unwrap().data();
        let (ci, co) = (30, 30);
        let mut want = vec![f64::NEG_INFINITY; co];
        for t in 0..word.len() {
            for o in 0..co {
                let mut acc = b[o];
                for d in 0..3 {
                    let src = t as isize + d as isize - 1;
                    if src < 0 || src >= word.len() as isize {
                        continue;
                    }
                    for c in 0..ci {
                        acc += table.at(word[src as usize], c) * k[(d * ci + c) * co + o];
                    }
                }
                want[o] = want[o].max(acc.tanh());
            }
        }
        let mut g = Graph::new(&p);
        let v = cnn_char_encode(&mut g, &cfg, &word).unwrap();
        for (a, w) in g.value(v).data().iter().zip(&want) {
            assert!((a - w).abs() < 1e-12);
        }
    }

    fn one_cell(i: usize, h: usize, values: &[f64]) -> ParamStore {
        let mut p = ParamStore::new();
        let (w_in, rest) = values.split_at(4 * h * i);
        let (w_rec, bias) = rest.split_at(4 * h * h);
        p.insert("cell.w_in", Tensor::matrix(4 * h, i, w_in.to_vec()).unwrap());
        p.insert("cell.w_rec", Tensor::matrix(4 * h, h, w_rec.to_vec()).unwrap());
        p.insert("cell.bias", Tensor::vector(bias.to_vec()).unwrap());
        p
    }

    fn step(p: &ParamStore, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut g = Graph::new(p);
        let x = g.constant(Tensor::matrix(1, x.len(), x.to_vec()).unwrap());
        let h = g.constant(Tensor::matrix(1, h.len(), h.to_vec()).unwrap());
        let c = g.constant(Tensor::matrix(1, c.len(), c.to_vec()).unwrap());
        let (h2, c2) = lstm_cell_step(&mut g, "cell", x, h, c).unwrap();
        (g.value(h2).data().to_vec(), g.value(c2).data().to_vec())
    }

    #[test]
    fn cell_zero_params_and_state() {
        let p = one_cell(2, 3, &vec![0.0; lstm_cell_param_count(2, 3)]);
        let (h, c) = step(&p, &[0.0, 0.0], &[0.0; 3], &[0.0; 3]);
        assert_eq!(h, vec![0.0; 3]);
        assert_eq!(c, vec![0.0; 3]);
    }

    #[test]
    fn cell_open_forget_gate_keeps_memory() {
        let mut v = vec![0.0; lstm_cell_param_count(1, 1)];
        let n = v.len();
        v[n - 4 + 1] = 10.0;
        let p = one_cell(1, 1, &v);
        let (_, c) = step(&p, &[0.0], &[0.0], &[1.0]);
        assert!((c[0] - 0.999_954_602_131_297_6).abs() < 1e-15);
    }

    /// Scalar LSTM cell written out gate by gate.
    fn scalar_cell(w: &[f64], x: f64, h: f64, c: f64) -> (f64, f64) {
        let pre = |k: usize| w[k] * x + w[4 + k] * h + w[8 + k];
        let i = sigmoid(pre(0));
        let f = sigmoid(pre(1));
        let g = pre(2).tanh();
        let o = sigmoid(pre(3));
        let c2 = f * c + i * g;
        (o * c2.tanh(), c2)
    }

    #[test]
    fn scalar_cell_matches_formulas() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let w: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (x, h, c) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let p = one_cell(1, 1, &w);
            let (h2, c2) = step(&p, &[x], &[h], &[c]);
            let (wh, wc) = scalar_cell(&w, x, h, c);
            assert!((h2[0] - wh).abs() < 1e-12 && (c2[0] - wc).abs() < 1e-12);
        }
    }

    #[test]
    fn char_lstm_matches_stepwise_oracle() {
        let cfg = ModelConfig {
            char_hidden: 1,
            char_dim: 1,
            ..table_cfg(CharEncoder::Lstm)
        };
        let (vocab, p) = setup(&cfg);
        let word = vocab.char_ids("abc");
        let emb = |id: usize| p.get(names::CHAR_EMB).unwrap().at(id, 0);
        let weights = |dir: &str| -> Vec<f64> {
            ["w_in", "w_rec", "bias"]
                .iter()
                .flat_map(|k| p.get(&format!("{dir}.{k}")).unwrap().data().to_vec())
                .collect()
        };
        let (wf, wb) = (weights(names::CHAR_LSTM_FWD), weights(names::CHAR_LSTM_BWD));
        let (mut hf, mut cf) = (0.0, 0.0);
        for &ch in &word {
            (hf, cf) = scalar_cell(&wf, emb(ch), hf, cf);
        }
        let (mut hb, mut cb) = (0.0, 0.0);
        for &ch in word.iter().rev() {
            (hb, cb) = scalar_cell(&wb, emb(ch), hb, cb);
        }
        let mut g = Graph::new(&p);
        let v = lstm_char_encode(&mut g, &cfg, &word).unwrap();
        let got = g.value(v).data();
        assert!((got[0] - hf).abs() < 1e-12 && (got[1] - hb).abs() < 1e-12);
    }

    #[test]
    fn char_lstm_mirror_symmetry() {
        let cfg = table_cfg(CharEncoder::Lstm);
        let (vocab, mut p) = setup(&cfg);
        for k in ["w_in", "w_rec", "bias"] {
            let fwd = p.get(&format!("{}.{k}", names::CHAR_LSTM_FWD)).unwrap().clone();
            *p.get_mut(&format!("{}.{k}", names::CHAR_LSTM_BWD)).unwrap() = fwd;
        }
        let w = vocab.char_ids("aspirin");
        let rev: Vec<usize> = w.iter().rev().copied().collect();
        let mut g = Graph::new(&p);
        let a = lstm_char_encode(&mut g, &cfg, &w).unwrap();
        let b = lstm_char_encode(&mut g, &cfg, &rev).unwrap();
        assert_eq!(g.value(a).data().len(), 50);
        assert_eq!(&g.value(a).data()[..25], &g.value(b).data()[25..]);
    }

    #[test]
    fn sentence_dimensions() {
        let cfg = ModelConfig {
            char_encoder: CharEncoder::Cnn,
            features: vec![Feature::Pos, Feature::Chunk, Feature::Gazetteer],
            ..Default::default()
        };
        assert_eq!(cfg.input_dim(), 110);
        let plain = ModelConfig::default();
        assert_eq!((plain.input_dim(), plain.output_dim()), (50, 500));

        let (vocab, p) = setup(&cfg);
        let s = vocab.encode(&corpus()[1], &cfg.features).unwrap();
        let mut g = Graph::new(&p);
        let out = encode_sentence(&mut g, &cfg, &s, None).unwrap();
        assert_eq!(g.value(out).shape(), &[1, 500]);
    }

    #[test]
    fn batch_rows_match_single_sentences() {
        let cfg = ModelConfig {
            hidden: 6,
            char_encoder: CharEncoder::Lstm,
            ..Default::default()
        };
        let (vocab, p) = setup(&cfg);
        let enc: Vec<EncodedSentence> = corpus().iter().map(|s| vocab.encode(s, &[]).unwrap()).collect();
        let mut g = Graph::new(&p);
        let (all, layout) = encode_batch(&mut g, &cfg, &[&enc[0], &enc[1]], None).unwrap();
        for (b, s) in enc.iter().enumerate() {
            let single = encode_sentence(&mut g, &cfg, s, None).unwrap();
            for t in 0..s.len() {
                let (x, y) = (g.value(all).row(layout.row(t, b)), g.value(single).row(t));
                assert!(x.iter().zip(y).all(|(a, b)| (a - b).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn zero_dropout_train_equals_inference() {
        let cfg = ModelConfig {
            hidden: 5,
            dropout: [0.0, 0.0],
            char_encoder: CharEncoder::Cnn,
            ..Default::default()
        };
        let (vocab, p) = setup(&cfg);
        let s = vocab.encode(&corpus()[0], &[]).unwrap();
        let mut g = Graph::new(&p);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = encode_sentence(&mut g, &cfg, &s, Some(&mut rng)).unwrap();
        let b = encode_sentence(&mut g, &cfg, &s, None).unwrap();
        assert_eq!(g.value(a), g.value(b));
    }

    #[test]
    fn config_validation() {
        let bad = [
            ModelConfig { layers: 3, ..Default::default() },
            ModelConfig { dropout: [1.0, 0.0], ..Default::default() },
            ModelConfig { cnn_window: 4, ..Default::default() },
            ModelConfig { features: vec![Feature::Pos, Feature::Pos], ..Default::default() },
        ];
        assert!(bad.iter().all(|c| c.validate().is_err()));
        assert!(ModelConfig::default().validate().is_ok());
    }
}
