//! The complete tagger: sentence encoder, linear emission layer, and either a
//! CRF or a per-position softmax on top.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::crf::{softmax_decode, viterbi_decode, viterbi_decode_constrained, CrfParams, TransitionConstraints};
use crate::data::{EncodedSentence, Sentence, Vocabulary};
use crate::encoders::{encode_batch, init_params, names, BatchLayout, Decoder, EmbeddingTable, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

/// Sentences per inference batch.
const PREDICT_CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Tagger {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
}

impl Tagger {
    pub fn new(
        config: ModelConfig,
        vocab: Vocabulary,
        pretrained: Option<&EmbeddingTable>,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_params(&config, &vocab, pretrained, &mut rng)?;
        Ok(Tagger { config, vocab, params })
    }

    pub fn num_labels(&self) -> usize {
        self.vocab.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        self.vocab.labels.symbols()
    }

    pub fn encode(&self, s: &Sentence) -> Result<EncodedSentence> {
        self.vocab.encode(s, &self.config.features)
    }

    fn emissions_var(
        &self,
        g: &mut Graph,
        batch: &[&EncodedSentence],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, BatchLayout)> {
        let (h, layout) = encode_batch(g, &self.config, batch, rng)?;
        let w = g.param(names::OUTPUT_WEIGHT)?;
        let b = g.param(names::OUTPUT_BIAS)?;
        let proj = g.matmul_t(h, w)?;
        Ok((g.add_bias(proj, b)?, layout))
    }

    /// Mean per-sentence loss of a labelled batch: CRF negative
    /// log-likelihood or summed per-token cross-entropy.
    pub fn batch_loss(
        &self,
        g: &mut Graph,
        batch: &[&EncodedSentence],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let (e, layout) = self.emissions_var(g, batch, rng)?;
        let crf = match self.config.decoder {
            Decoder::Crf => Some((
                g.param(names::CRF_TRANSITIONS)?,
                g.param(names::CRF_START)?,
                g.param(names::CRF_END)?,
            )),
            Decoder::Softmax => None,
        };
        let mut terms = Vec::with_capacity(batch.len() * 2);
        for (b, s) in batch.iter().enumerate() {
            let gold = s
                .labels
                .as_deref()
                .ok_or_else(|| Error::Data("training sentence has no gold labels".into()))?;
            let es = if batch.len() == 1 {
                e
            } else {
                g.gather_rows(e, &layout.sentence_rows(b))?
            };
            match crf {
                Some((trans, start, end)) => {
                    let z = g.crf_log_partition(es, trans, start, end)?;
                    let gold_score = g.crf_path_score(es, trans, start, end, gold)?;
                    terms.push(z);
                    terms.push(g.scale(gold_score, -1.0)?);
                }
                None => terms.push(g.cross_entropy(es, gold)?),
            }
        }
        let total = g.add_n(&terms)?;
        Ok(g.scale(total, 1.0 / batch.len() as f64)?)
    }

    /// Emission scores `[T×L]` for each sentence of a batch, in inference mode.
    pub fn emissions_batch(&self, batch: &[&EncodedSentence]) -> Result<Vec<Tensor>> {
        let mut g = Graph::new(&self.params);
        let (e, layout) = self.emissions_var(&mut g, batch, None)?;
        let all = g.value(e);
        let l = all.cols();
        Ok((0..batch.len())
            .map(|b| {
                let mut data = Vec::with_capacity(layout.lengths[b] * l);
                for t in 0..layout.lengths[b] {
                    data.extend_from_slice(all.row(layout.row(t, b)));
                }
                Tensor::from_parts(vec![layout.lengths[b], l], data)
            })
            .collect())
    }

    pub fn emissions(&self, s: &EncodedSentence) -> Result<Tensor> {
        Ok(self.emissions_batch(&[s])?.remove(0))
    }

    pub fn crf_params(&self) -> Option<CrfParams> {
        let get = |n: &str| self.params.get(n).cloned();
        Some(CrfParams {
            transitions: get(names::CRF_TRANSITIONS)?,
            start: get(names::CRF_START)?,
            end: get(names::CRF_END)?,
        })
    }

    /// Label ids for one emission matrix under this model's decoder.
    pub fn decode(&self, e: &Tensor) -> Result<Vec<usize>> {
        match (self.config.decoder, self.crf_params()) {
            (Decoder::Crf, Some(p)) => {
                if self.config.constrained_decoding {
                    let c = TransitionConstraints::bio(self.labels())?;
                    Ok(viterbi_decode_constrained(e, &p, &c)?.0)
                } else {
                    Ok(viterbi_decode(e, &p)?.0)
                }
            }
            (Decoder::Crf, None) => Err(Error::Config("CRF parameters missing".into())),
            (Decoder::Softmax, _) => Ok(softmax_decode(e)),
        }
    }

    /// Label ids for encoded sentences. Work is split into fixed chunks so
    /// results do not depend on the thread count.
    pub fn predict_encoded(&self, sentences: &[EncodedSentence]) -> Result<Vec<Vec<usize>>> {
        let run = || {
            sentences
                .par_chunks(PREDICT_CHUNK)
                .map(|chunk| {
                    let refs: Vec<&EncodedSentence> = chunk.iter().collect();
                    self.emissions_batch(&refs)?
                        .iter()
                        .map(|e| self.decode(e))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        };
        let chunks = match thread_cap() {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?
                .install(run)?,
            None => run()?,
        };
        Ok(chunks.into_iter().flatten().collect())
    }

    /// Predicted BIO label strings for raw sentences. Empty sentences get an
    /// empty prediction.
    pub fn predict(&self, sentences: &[Sentence]) -> Result<Vec<Vec<String>>> {
        let nonempty: Vec<usize> = (0..sentences.len()).filter(|&i| !sentences[i].is_empty()).collect();
        let encoded = nonempty
            .iter()
            .map(|&i| self.encode(&sentences[i]))
            .collect::<Result<Vec<_>>>()?;
        let ids = self.predict_encoded(&encoded)?;
        let mut out = vec![Vec::new(); sentences.len()];
        for (&i, tags) in nonempty.iter().zip(ids) {
            out[i] = tags.iter().map(|&t| self.labels()[t].clone()).collect();
        }
        Ok(out)
    }
}

/// Worker cap from `CHARTAG_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var("CHARTAG_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}
