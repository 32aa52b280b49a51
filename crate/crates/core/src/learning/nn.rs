//! Rectifier MLPs over flat parameter vectors, and Adam.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::autodiff::{Grads, Tape, Tensor, Var};
use crate::fmath;

/// Fully connected network with ReLU hidden layers and a linear output.
///
/// Parameters live in one flat vector; layer `l` stores its `in x out` weight
/// matrix row-major followed by its `out` biases.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

impl Mlp {
    /// He-uniform weights, zero biases; the output layer is scaled by `out_scale`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], out_scale: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let mut params = Vec::new();
        let layers = sizes.len() - 1;
        for (l, w) in sizes.windows(2).enumerate() {
            let bound = fmath::sqrt(6.0 / w[0] as f64);
            let scale = if l + 1 == layers { out_scale } else { 1.0 };
            params.extend((0..w[0] * w[1]).map(|_| rng.gen_range(-bound..bound) * scale));
            params.extend(core::iter::repeat(0.0).take(w[1]));
        }
        Self {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn layer_offsets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut off = 0;
        self.sizes.windows(2).map(move |w| {
            let start = off;
            off += w[0] * w[1] + w[1];
            (start, w[0], w[1])
        })
    }

    /// Places the parameters on `tape` as leaves.
    pub fn bind(&self, tape: &mut Tape) -> BoundMlp {
        let mut layers = Vec::new();
        let mut shapes = Vec::new();
        for (o, i, n) in self.layer_offsets() {
            let w = tape.leaf(Tensor::new(i, n, self.params[o..o + i * n].to_vec()));
            let b = tape.leaf(Tensor::new(1, n, self.params[o + i * n..o + i * n + n].to_vec()));
            layers.push((w, b));
            shapes.push((w, i * n));
            shapes.push((b, n));
        }
        BoundMlp {
            layers,
            shapes,
            n_params: self.params.len(),
        }
    }

    /// Single-row forward pass without a tape.
    pub fn forward_plain(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let last = self.sizes.len() - 2;
        for (l, (o, i, n)) in self.layer_offsets().enumerate() {
            let mut out = self.params[o + i * n..o + i * n + n].to_vec();
            for (k, xk) in h.iter().enumerate() {
                let row = &self.params[o + k * n..o + (k + 1) * n];
                out.iter_mut().zip(row).for_each(|(y, w)| *y += xk * w);
            }
            if l < last {
                out.iter_mut().for_each(|y| *y = y.max(0.0));
            }
            h = out;
        }
        h
    }
}

/// Parameter leaves of one [`Mlp`] on a tape.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    layers: Vec<(Var, Var)>,
    shapes: Vec<(Var, usize)>,
    n_params: usize,
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let mut h = x;
        for (l, (w, b)) in self.layers.iter().enumerate() {
            h = tape.matmul(h, *w);
            h = tape.add_row(h, *b);
            if l + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        h
    }

    /// Flat gradient in the network's parameter layout (zero where unused).
    pub fn gradient(&self, grads: &Grads) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params);
        for (w, b) in &self.layers {
            for (v, len) in [(w, self.len_of(*w)), (b, self.len_of(*b))] {
                match grads.get(*v) {
                    Some(g) => out.extend_from_slice(&g.data),
                    None => out.extend(core::iter::repeat(0.0).take(len)),
                }
            }
        }
        out
    }

    fn len_of(&self, v: Var) -> usize {
        self.shapes
            .iter()
            .find(|(var, _)| *var == v)
            .map(|(_, n)| *n)
            .unwrap_or(0)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - fmath::powi(self.beta1, self.t.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - fmath::powi(self.beta2, self.t.min(i32::MAX as u64) as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (fmath::sqrt(vh) + self.eps);
        }
    }
}
