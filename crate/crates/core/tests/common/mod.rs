//! Reference implementations used only by tests.
#![allow(dead_code)]

use chartag::data::{EncodedSentence, Feature, Sentence, Token};
use chartag::tensor::{Graph, Tensor};
use chartag::Tagger;

/// Dense row-major score tables for a small CRF instance.
#[derive(Clone, Debug)]
pub struct CrfCase {
    pub emissions: Vec<Vec<f64>>,
    pub transitions: Vec<Vec<f64>>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl CrfCase {
    pub fn score(&self, path: &[usize]) -> f64 {
        let mut s = self.start[path[0]] + self.end[path[path.len() - 1]];
        for (t, &y) in path.iter().enumerate() {
            s += self.emissions[t][y];
            if t > 0 {
                s += self.transitions[path[t - 1]][y];
            }
        }
        s
    }

    /// Every label sequence, in lexicographic order.
    pub fn paths(&self) -> Vec<Vec<usize>> {
        let (t_len, l) = (self.emissions.len(), self.start.len());
        let total = l.pow(t_len as u32);
        (0..total)
            .map(|mut code| {
                let mut p = vec![0; t_len];
                for slot in p.iter_mut().rev() {
                    *slot = code % l;
                    code /= l;
                }
                p
            })
            .collect()
    }

    /// `(log Z, argmax path, its score)` by enumeration; the first
    /// lexicographic path wins ties.
    pub fn brute_force(&self) -> (f64, Vec<usize>, f64) {
        let scores: Vec<(Vec<usize>, f64)> = self.paths().into_iter().map(|p| {
            let s = self.score(&p);
            (p, s)
        }).collect();
        let max = scores.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
        let z = max + scores.iter().map(|x| (x.1 - max).exp()).sum::<f64>().ln();
        let mut best = &scores[0];
        for s in &scores {
            if s.1 > best.1 {
                best = s;
            }
        }
        (z, best.0.clone(), best.1)
    }

    pub fn tensors(&self) -> (Tensor, Tensor, Tensor, Tensor) {
        (
            Tensor::from_rows(&self.emissions).unwrap(),
            Tensor::from_rows(&self.transitions).unwrap(),
            Tensor::vector(self.start.clone()).unwrap(),
            Tensor::vector(self.end.clone()).unwrap(),
        )
    }
}

/// Largest relative error between analytic and central-difference gradients
/// over every scalar of every parameter, counting entries whose absolute
/// difference is below `abs_floor` as exact.
pub struct GradCheck {
    pub worst_relative: f64,
    pub worst_absolute: f64,
    /// Entries over the relative tolerance but under the absolute floor.
    pub near_zero: usize,
    /// Entries over both tolerances.
    pub failures: usize,
    pub worst_param: String,
    pub checked: usize,
}

fn nudge(t: &mut Tagger, name: &str, i: usize, v: f64) {
    let mut d = t.params.get(name).unwrap().data().to_vec();
    d[i] = v;
    t.params.get_mut(name).unwrap().assign(&d).unwrap();
}

pub fn gradient_check(tagger: &Tagger, batch: &[EncodedSentence], h: f64, rel_tol: f64, abs_floor: f64) -> GradCheck {
    let refs: Vec<&EncodedSentence> = batch.iter().collect();
    let loss_at = |t: &Tagger| {
        let mut g = Graph::new(&t.params);
        let l = t.batch_loss(&mut g, &refs, None).unwrap();
        g.value(l).item()
    };
    let analytic = {
        let mut g = Graph::new(&tagger.params);
        let l = tagger.batch_loss(&mut g, &refs, None).unwrap();
        g.backward(l).unwrap()
    };
    let mut probe = tagger.clone();
    let mut out = GradCheck {
        worst_relative: 0.0,
        worst_absolute: 0.0,
        near_zero: 0,
        failures: 0,
        worst_param: String::new(),
        checked: 0,
    };
    let names: Vec<String> = tagger.params.names().map(String::from).collect();
    for name in names {
        let grad = analytic.get(&name).expect("every parameter has a gradient").data().to_vec();
        let n = grad.len();
        for i in 0..n {
            let orig = probe.params.get(&name).unwrap().data()[i];
            nudge(&mut probe, &name, i, orig + h);
            let up = loss_at(&probe);
            nudge(&mut probe, &name, i, orig - h);
            let down = loss_at(&probe);
            nudge(&mut probe, &name, i, orig);
            let numeric = (up - down) / (2.0 * h);
            let diff = (numeric - grad[i]).abs();
            let scale = numeric.abs().max(grad[i].abs());
            let rel = if scale == 0.0 { 0.0 } else { diff / scale };
            out.worst_absolute = out.worst_absolute.max(diff);
            if rel >= rel_tol {
                if diff < abs_floor {
                    out.near_zero += 1;
                } else {
                    out.failures += 1;
                }
            }
            if rel > out.worst_relative {
                out.worst_relative = rel;
                out.worst_param = format!("{name}[{i}]");
            }
            out.checked += 1;
        }
    }
    out
}

pub fn token(surface: &str, pos: &str, chunk: &str, gaz: &str, label: &str) -> Token {
    let mut t = Token::new(surface).with_label(label);
    t.pos = Some(pos.into());
    t.chunk = Some(chunk.into());
    t.gazetteer = Some(gaz.into());
    t
}

/// Three labelled sentences of lengths 1, 3 and 4.
pub fn toy_batch() -> Vec<Sentence> {
    vec![
        Sentence::new("toy", vec![token("aspirin", "NN", "B-NP", "B", "B-Chemical")]),
        Sentence::new(
            "toy",
            vec![
                token("acute", "JJ", "B-NP", "O", "B-Disease"),
                token("hepatitis", "NN", "I-NP", "O", "I-Disease"),
                token("recurs", "VBZ", "B-VP", "O", "O"),
            ],
        ),
        Sentence::new(
            "toy",
            vec![
                token("the", "DT", "B-NP", "O", "O"),
                token("methanol", "NN", "I-NP", "B", "B-Chemical"),
                token("dose", "NN", "I-NP", "O", "O"),
                token("rose", "VBD", "B-VP", "O", "O"),
            ],
        ),
    ]
}

pub const ALL_FEATURES: [Feature; 3] = [Feature::Pos, Feature::Chunk, Feature::Gazetteer];
