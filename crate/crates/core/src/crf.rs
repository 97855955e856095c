//! Linear-chain CRF over emission scores, and the per-position softmax baseline.
//!
//! Emissions are `T×L` tensors. A tag path `y` scores
//! `start[y₀] + Σ e[t][yₜ] + Σ trans[yₜ][yₜ₊₁] + end[y_{T−1}]`.

use serde::{Deserialize, Serialize};

use crate::data::BioTag;
use crate::error::{Error, Result};
use crate::tensor::{lse, Tensor, TensorError};

/// Learnable label-transition scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrfParams {
    /// `transitions[i][j]`: score of label `j` following label `i`.
    pub transitions: Tensor,
    pub start: Tensor,
    pub end: Tensor,
}

impl CrfParams {
    pub fn new(transitions: Tensor, start: Tensor, end: Tensor) -> Result<Self> {
        let l = start.len();
        if start.shape() != [l] || end.shape() != [l] || transitions.shape() != [l, l] {
            return Err(TensorError::ShapeMismatch {
                op: "crf_params",
                left: transitions.shape().to_vec(),
                right: start.shape().to_vec(),
            }
            .into());
        }
        Ok(CrfParams {
            transitions,
            start,
            end,
        })
    }

    pub fn zeros(num_labels: usize) -> Self {
        CrfParams {
            transitions: Tensor::zeros(&[num_labels, num_labels]),
            start: Tensor::zeros(&[num_labels]),
            end: Tensor::zeros(&[num_labels]),
        }
    }

    pub fn num_labels(&self) -> usize {
        self.start.len()
    }

    fn check(&self, e: &Tensor) -> Result<(usize, usize)> {
        let (t, l) = match e.shape() {
            [t, l] => (*t, *l),
            other => {
                return Err(TensorError::ShapeMismatch {
                    op: "crf",
                    left: other.to_vec(),
                    right: vec![0, self.num_labels()],
                }
                .into())
            }
        };
        if l != self.num_labels() {
            return Err(TensorError::ShapeMismatch {
                op: "crf",
                left: e.shape().to_vec(),
                right: self.transitions.shape().to_vec(),
            }
            .into());
        }
        if t == 0 {
            return Err(TensorError::Empty { op: "crf" }.into());
        }
        Ok((t, l))
    }
}

pub fn path_score(e: &Tensor, p: &CrfParams, tags: &[usize]) -> Result<f64> {
    let (t, l) = p.check(e)?;
    if tags.len() != t {
        return Err(Error::LengthMismatch {
            expected: t,
            got: tags.len(),
        });
    }
    if let Some(&bad) = tags.iter().find(|&&y| y >= l) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            num_labels: l,
        });
    }
    raw_path_score(e, &p.transitions, &p.start, &p.end, tags).map_err(|_| Error::LengthMismatch {
        expected: t,
        got: tags.len(),
    })
}

/// `log Σ_y exp(score(y))` by the log-space forward algorithm.
pub fn log_partition(e: &Tensor, p: &CrfParams) -> Result<f64> {
    p.check(e)?;
    Ok(forward_log_partition(e, &p.transitions, &p.start, &p.end))
}

/// Negative log-likelihood of the gold path: `log Z − score(gold)`.
pub fn crf_nll(e: &Tensor, p: &CrfParams, gold: &[usize]) -> Result<f64> {
    let score = path_score(e, p, gold)?;
    let lz = log_partition(e, p)?;
    // rounding can leave a tiny negative value when one path holds all the mass
    Ok((lz - score).max(0.0))
}

/// Highest-scoring tag path and its score. Ties go to the lowest label id at
/// every backtrack step.
pub fn viterbi_decode(e: &Tensor, p: &CrfParams) -> Result<(Vec<usize>, f64)> {
    p.check(e)?;
    Ok(viterbi(e, p, None))
}

/// Viterbi restricted to transitions permitted by `constraints`.
pub fn viterbi_decode_constrained(
    e: &Tensor,
    p: &CrfParams,
    constraints: &TransitionConstraints,
) -> Result<(Vec<usize>, f64)> {
    let (_, l) = p.check(e)?;
    if constraints.start.len() != l {
        return Err(Error::Config(format!(
            "constraints cover {} labels, CRF has {l}",
            constraints.start.len()
        )));
    }
    Ok(viterbi(e, p, Some(constraints)))
}

fn viterbi(e: &Tensor, p: &CrfParams, constraints: Option<&TransitionConstraints>) -> (Vec<usize>, f64) {
    let (t, l) = (e.rows(), e.cols());
    let trans = p.transitions.data();
    let allowed_start = |j: usize| constraints.is_none_or(|c| c.start[j]);
    let allowed = |i: usize, j: usize| constraints.is_none_or(|c| c.pairs[i * l + j]);

    let mut delta: Vec<f64> = (0..l)
        .map(|j| {
            if allowed_start(j) {
                p.start.data()[j] + e.at(0, j)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let mut back = vec![0usize; t * l];
    let mut next = vec![0.0; l];
    for pos in 1..t {
        for j in 0..l {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for i in 0..l {
                if !allowed(i, j) {
                    continue;
                }
                let s = delta[i] + trans[i * l + j];
                if s > best {
                    best = s;
                    arg = i;
                }
            }
            next[j] = best + e.at(pos, j);
            back[pos * l + j] = arg;
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut best = f64::NEG_INFINITY;
    let mut last = 0;
    for j in 0..l {
        let s = delta[j] + p.end.data()[j];
        if s > best {
            best = s;
            last = j;
        }
    }
    if best == f64::NEG_INFINITY && constraints.is_some() {
        return viterbi(e, p, None);
    }
    let mut path = vec![0; t];
    path[t - 1] = last;
    for pos in (1..t).rev() {
        path[pos - 1] = back[pos * l + path[pos]];
    }
    (path, best)
}

/// Per-position argmax of the emission scores; ties go to the lowest label id.
pub fn softmax_decode(e: &Tensor) -> Vec<usize> {
    (0..e.rows())
        .map(|r| {
            let row = e.row(r);
            let mut arg = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[arg] {
                    arg = j;
                }
            }
            arg
        })
        .collect()
}

/// Label transitions permitted by the BIO scheme: `I-X` may only follow `B-X`
/// or `I-X`, and no path may start with `I-X`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionConstraints {
    pub start: Vec<bool>,
    /// Row-major `L×L`: `pairs[i*L + j]` allows label `j` after label `i`.
    pub pairs: Vec<bool>,
}

impl TransitionConstraints {
    pub fn bio(labels: &[String]) -> Result<Self> {
        let tags = labels.iter().map(|l| BioTag::parse(l)).collect::<Result<Vec<_>>>()?;
        let l = tags.len();
        let start = tags.iter().map(|t| !matches!(t, BioTag::Inside(_))).collect();
        let mut pairs = vec![true; l * l];
        for (i, prev) in tags.iter().enumerate() {
            for (j, cur) in tags.iter().enumerate() {
                if let BioTag::Inside(x) = cur {
                    pairs[i * l + j] = match prev {
                        BioTag::Begin(y) | BioTag::Inside(y) => x == y,
                        BioTag::Outside => false,
                    };
                }
            }
        }
        Ok(TransitionConstraints { start, pairs })
    }
}

pub(crate) fn raw_path_score(
    e: &Tensor,
    trans: &Tensor,
    start: &Tensor,
    end: &Tensor,
    tags: &[usize],
) -> std::result::Result<f64, ()> {
    let (t, l) = (e.rows(), e.cols());
    if tags.len() != t || t == 0 || tags.iter().any(|&y| y >= l) {
        return Err(());
    }
    let mut score = start.data()[tags[0]] + end.data()[tags[t - 1]];
    for (pos, &y) in tags.iter().enumerate() {
        score += e.at(pos, y);
    }
    for w in tags.windows(2) {
        score += trans.data()[w[0] * l + w[1]];
    }
    Ok(score)
}

fn forward_table(e: &Tensor, trans: &Tensor, start: &Tensor) -> Vec<f64> {
    let (t, l) = (e.rows(), e.cols());
    let tr = trans.data();
    let mut alpha = vec![0.0; t * l];
    for j in 0..l {
        alpha[j] = start.data()[j] + e.at(0, j);
    }
    let mut scratch = vec![0.0; l];
    for pos in 1..t {
        for j in 0..l {
            for i in 0..l {
                scratch[i] = alpha[(pos - 1) * l + i] + tr[i * l + j];
            }
            alpha[pos * l + j] = lse(&scratch) + e.at(pos, j);
        }
    }
    alpha
}

pub(crate) fn forward_log_partition(e: &Tensor, trans: &Tensor, start: &Tensor, end: &Tensor) -> f64 {
    let (t, l) = (e.rows(), e.cols());
    let alpha = forward_table(e, trans, start);
    let last: Vec<f64> = (0..l).map(|j| alpha[(t - 1) * l + j] + end.data()[j]).collect();
    lse(&last)
}

/// Posterior marginals, i.e. the gradient of `log Z` with respect to each input.
pub(crate) struct Marginals {
    pub unary: Vec<f64>,
    pub pairwise: Vec<f64>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

pub(crate) fn marginals(e: &Tensor, trans: &Tensor, start: &Tensor, end: &Tensor) -> Marginals {
    let (t, l) = (e.rows(), e.cols());
    let tr = trans.data();
    let alpha = forward_table(e, trans, start);
    let mut beta = vec![0.0; t * l];
    beta[(t - 1) * l..].copy_from_slice(end.data());
    let mut scratch = vec![0.0; l];
    for pos in (0..t - 1).rev() {
        for i in 0..l {
            for j in 0..l {
                scratch[j] = tr[i * l + j] + e.at(pos + 1, j) + beta[(pos + 1) * l + j];
            }
            beta[pos * l + i] = lse(&scratch);
        }
    }
    let last: Vec<f64> = (0..l).map(|j| alpha[(t - 1) * l + j] + end.data()[j]).collect();
    let lz = lse(&last);

    let unary: Vec<f64> = alpha.iter().zip(&beta).map(|(a, b)| (a + b - lz).exp()).collect();
    let mut pairwise = vec![0.0; l * l];
    for pos in 0..t - 1 {
        for i in 0..l {
            let a = alpha[pos * l + i];
            for j in 0..l {
                pairwise[i * l + j] += (a + tr[i * l + j] + e.at(pos + 1, j) + beta[(pos + 1) * l + j] - lz).exp();
            }
        }
    }
    Marginals {
        start: unary[..l].to_vec(),
        end: unary[(t - 1) * l..].to_vec(),
        unary,
        pairwise,
    }
}
