//! Viterbi decoding with and without BIO transition constraints.

use chartag::crf::{log_partition, softmax_decode, viterbi_decode, viterbi_decode_constrained, CrfParams, TransitionConstraints};
use chartag::Tensor;

fn main() {
    let labels: Vec<String> = ["O", "B-Disease", "I-Disease"].iter().map(|s| s.to_string()).collect();
    // position 0 prefers I-Disease on its own, which BIO forbids
    let e = Tensor::from_rows(&[
        vec![0.2, 0.9, 1.0],
        vec![0.1, 0.3, 1.2],
        vec![1.5, 0.0, 0.2],
    ])
    .unwrap();
    let p = CrfParams::zeros(labels.len());
    let show = |path: &[usize]| path.iter().map(|&i| labels[i].as_str()).collect::<Vec<_>>().join(" ");

    println!("log Z        {:.6}", log_partition(&e, &p).unwrap());
    println!("softmax      {}", show(&softmax_decode(&e)));
    let (path, score) = viterbi_decode(&e, &p).unwrap();
    println!("viterbi      {} ({score:.3})", show(&path));
    let c = TransitionConstraints::bio(&labels).unwrap();
    let (path, score) = viterbi_decode_constrained(&e, &p, &c).unwrap();
    println!("constrained  {} ({score:.3})", show(&path));
}
