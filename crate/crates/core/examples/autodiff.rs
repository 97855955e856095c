//! Build a small graph, backpropagate, and compare against central differences.

use chartag::{Graph, ParamStore, Tensor};

fn loss(store: &ParamStore) -> (f64, Vec<f64>) {
    let mut g = Graph::new(store);
    let w = g.param("w").unwrap();
    let b = g.param("b").unwrap();
    let x = g.constant(Tensor::matrix(2, 3, vec![0.5, -1.0, 0.25, 1.5, 0.0, -0.5]).unwrap());
    let h = g.matmul_t(x, w).unwrap();
    let h = g.add_bias(h, b).unwrap();
    let h = g.tanh(h).unwrap();
    let l = g.sum(h).unwrap();
    let grads = g.backward(l).unwrap();
    (g.value(l).item(), grads.get("w").unwrap().data().to_vec())
}

fn main() {
    let mut store = ParamStore::new();
    store.insert("w", Tensor::matrix(2, 3, vec![0.1, 0.2, -0.3, 0.4, -0.5, 0.6]).unwrap());
    store.insert("b", Tensor::vector(vec![0.05, -0.05]).unwrap());
    let (value, grad) = loss(&store);
    println!("loss = {value:.6}");

    let h = 1e-5;
    for i in 0..grad.len() {
        let shifted = |d: f64| {
            let mut s = store.clone();
            let mut w = s.get("w").unwrap().data().to_vec();
            w[i] += d;
            s.get_mut("w").unwrap().assign(&w).unwrap();
            loss(&s).0
        };
        let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
        println!("dL/dw[{i}]  analytic {:+.8}  numeric {:+.8}", grad[i], numeric);
    }
}
