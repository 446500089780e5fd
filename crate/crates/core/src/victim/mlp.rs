//! Minimal dense MLP with manual backprop, shared by the neural victim
//! families. ReLU on hidden layers, linear output.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// Row-major, out x in.
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl Dense {
    fn new(n_in: usize, n_out: usize, rng: &mut impl Rng) -> Dense {
        let bound = (6.0 / (n_in + n_out) as f64).sqrt();
        let w = (0..n_out)
            .map(|_| (0..n_in).map(|_| rng.gen_range(-bound..bound)).collect())
            .collect();
        Dense { w, b: vec![0.0; n_out] }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.w
            .iter()
            .zip(&self.b)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `sizes` includes input and output dimensions.
    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Mlp {
        assert!(sizes.len() >= 2);
        let layers = sizes
            .windows(2)
            .map(|pair| Dense::new(pair[0], pair[1], rng))
            .collect();
        Mlp { layers }
    }

    /// Post-activation values per layer; index 0 is the input, the last
    /// entry is the linear output.
    pub fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let n = self.layers.len();
        let mut acts = Vec::with_capacity(n + 1);
        acts.push(x.to_vec());
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(acts.last().unwrap());
            if idx + 1 < n {
                for v in z.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            acts.push(z);
        }
        acts
    }

    pub fn output(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).pop().unwrap()
    }

    /// One SGD step; returns the gradient with respect to the input.
    pub fn backward_update(&mut self, acts: &[Vec<f64>], grad_out: &[f64], lr: f64) -> Vec<f64> {
        let n = self.layers.len();
        let mut grad = grad_out.to_vec();
        for idx in (0..n).rev() {
            let input = &acts[idx];
            let output = &acts[idx + 1];
            // ReLU mask for hidden layers.
            if idx + 1 < n {
                for (g, o) in grad.iter_mut().zip(output) {
                    if *o <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let layer = &mut self.layers[idx];
            let mut grad_in = vec![0.0; input.len()];
            for (j, row) in layer.w.iter_mut().enumerate() {
                let g = grad[j];
                if g != 0.0 {
                    for (k, w) in row.iter_mut().enumerate() {
                        grad_in[k] += *w * g;
                        *w -= lr * g * input[k];
                    }
                    layer.b[j] -= lr * g;
                }
            }
            grad = grad_in;
        }
        grad
    }
}
