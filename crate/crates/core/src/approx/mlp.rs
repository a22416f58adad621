//! Two-layer perceptron `input → hidden (ReLU) → outputs` with hand-written backpropagation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::RngStream;

/// Parameters are stored flat as `w1[hidden][in], b1[hidden], w2[out][hidden], b2[out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
    pub params: Vec<f64>,
}

impl Mlp {
    pub fn n_params(n_in: usize, n_hidden: usize, n_out: usize) -> usize {
        n_hidden * n_in + n_hidden + n_out * n_hidden + n_out
    }

    pub fn zeros(n_in: usize, n_hidden: usize, n_out: usize) -> Self {
        Mlp { n_in, n_hidden, n_out, params: vec![0.0; Self::n_params(n_in, n_hidden, n_out)] }
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn glorot(n_in: usize, n_hidden: usize, n_out: usize, rng: &mut RngStream) -> Self {
        let mut m = Self::zeros(n_in, n_hidden, n_out);
        let l1 = (6.0 / (n_in + n_hidden) as f64).sqrt();
        let l2 = (6.0 / (n_hidden + n_out) as f64).sqrt();
        let (o_b1, o_w2, _) = m.offsets();
        for w in &mut m.params[..o_b1] {
            *w = rng.random_range(-l1..=l1);
        }
        for w in &mut m.params[o_w2..o_w2 + n_out * n_hidden] {
            *w = rng.random_range(-l2..=l2);
        }
        m
    }

    /// Offsets of `b1`, `w2`, `b2` in the flat parameter vector.
    fn offsets(&self) -> (usize, usize, usize) {
        let o_b1 = self.n_hidden * self.n_in;
        let o_w2 = o_b1 + self.n_hidden;
        let o_b2 = o_w2 + self.n_out * self.n_hidden;
        (o_b1, o_w2, o_b2)
    }

    fn hidden(&self, x: &[f64], z: &mut [f64]) {
        let p = &self.params;
        let (o_b1, _, _) = self.offsets();
        for (j, zj) in z.iter_mut().enumerate() {
            let row = &p[j * self.n_in..(j + 1) * self.n_in];
            let mut s = p[o_b1 + j];
            for (w, xi) in row.iter().zip(x) {
                s += w * xi;
            }
            *zj = s;
        }
    }

    /// All outputs for one input.
    pub fn forward(&self, x: &[f64], out: &mut [f64]) {
        let mut z = vec![0.0; self.n_hidden];
        self.hidden(x, &mut z);
        let (_, o_w2, o_b2) = self.offsets();
        for (k, o) in out.iter_mut().enumerate().take(self.n_out) {
            let row = &self.params[o_w2 + k * self.n_hidden..o_w2 + (k + 1) * self.n_hidden];
            let mut s = self.params[o_b2 + k];
            for (w, zj) in row.iter().zip(&z) {
                s += w * zj.max(0.0);
            }
            *o = s;
        }
    }

    /// A single output for one input.
    pub fn forward_one(&self, x: &[f64], k: usize, z: &mut [f64]) -> f64 {
        self.hidden(x, z);
        let (_, o_w2, o_b2) = self.offsets();
        let row = &self.params[o_w2 + k * self.n_hidden..o_w2 + (k + 1) * self.n_hidden];
        let mut s = self.params[o_b2 + k];
        for (w, zj) in row.iter().zip(z.iter()) {
            s += w * zj.max(0.0);
        }
        s
    }

    /// Mean over the listed rows of `(f(x_i)[a_i] - y_i)^2`; accumulates its gradient into `grad`
    /// (which is overwritten).
    pub fn loss_and_grad(&self, x: &[f64], a: &[usize], y: &[f64], rows: &[usize], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let (o_b1, o_w2, o_b2) = self.offsets();
        let nh = self.n_hidden;
        let ni = self.n_in;
        let scale = 1.0 / rows.len() as f64;
        let mut z = vec![0.0; nh];
        let mut loss = 0.0;
        for &i in rows {
            let xi = &x[i * ni..(i + 1) * ni];
            let k = a[i];
            let pred = self.forward_one(xi, k, &mut z);
            let err = pred - y[i];
            loss += err * err;
            let d = 2.0 * err * scale;
            grad[o_b2 + k] += d;
            let w2 = &self.params[o_w2 + k * nh..o_w2 + (k + 1) * nh];
            for j in 0..nh {
                if z[j] > 0.0 {
                    grad[o_w2 + k * nh + j] += d * z[j];
                    let dz = d * w2[j];
                    grad[o_b1 + j] += dz;
                    let g_row = &mut grad[j * ni..(j + 1) * ni];
                    for (g, xv) in g_row.iter_mut().zip(xi) {
                        *g += dz * xv;
                    }
                }
            }
        }
        loss * scale
    }

    /// Mean squared error of selected outputs over all rows.
    pub fn mse(&self, x: &[f64], a: &[usize], y: &[f64]) -> f64 {
        let mut z = vec![0.0; self.n_hidden];
        let n = y.len();
        let mut s = 0.0;
        for i in 0..n {
            let e = self.forward_one(&x[i * self.n_in..(i + 1) * self.n_in], a[i], &mut z) - y[i];
            s += e * e;
        }
        s / n as f64
    }
}
