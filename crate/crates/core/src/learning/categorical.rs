//! Opponent model over a finite action grid, trained by exact KL to the
//! posterior `softmax_b Q(s, a, b)`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::agent::LossEval;
use super::autodiff::{Tape, Tensor};
use super::nn::{Adam, Mlp};
use crate::reasoning::softmax;
use crate::{Error, Result};

/// ρ_φ(b | a) for `own_actions` conditioning actions and `grid` opponent actions.
#[derive(Debug, Clone)]
pub struct CategoricalOpponentModel {
    pub net: Mlp,
    own_actions: usize,
    grid: usize,
    opt: Adam,
}

impl CategoricalOpponentModel {
    pub fn new<R: Rng + ?Sized>(own_actions: usize, grid: usize, hidden: &[usize], lr: f64, rng: &mut R) -> Self {
        let mut sizes = vec![own_actions + 1];
        sizes.extend_from_slice(hidden);
        sizes.push(grid);
        let net = Mlp::new(&sizes, 0.1, rng);
        let opt = Adam::new(net.n_params(), lr);
        Self {
            net,
            own_actions,
            grid,
            opt,
        }
    }

    fn inputs(&self) -> Tensor {
        let w = self.own_actions + 1;
        let mut data = vec![0.0; self.own_actions * w];
        for a in 0..self.own_actions {
            data[a * w] = 1.0;
            data[a * w + 1 + a] = 1.0;
        }
        Tensor::new(self.own_actions, w, data)
    }

    /// Model probabilities over the grid, one row per own action.
    pub fn probs(&self) -> Vec<Vec<f64>> {
        let x = self.inputs();
        x.data
            .chunks(x.cols)
            .map(|row| softmax(&self.net.forward_plain(row)).expect("finite logits"))
            .collect()
    }

    fn check(&self, q: &[Vec<f64>]) -> Result<()> {
        if q.len() != self.own_actions || q.iter().any(|r| r.len() != self.grid) {
            return Err(Error::shape("joint-Q table does not match the model's grid"));
        }
        Ok(())
    }

    /// Mean over own actions of `KL(ρ_φ(·|a) || softmax(Q(a, ·)))`, with its gradient.
    pub fn loss(&self, q: &[Vec<f64>]) -> Result<LossEval> {
        self.check(q)?;
        let mut tape = Tape::new();
        let bound = self.net.bind(&mut tape);
        let x = tape.leaf(self.inputs());
        let logits = bound.forward(&mut tape, x);
        let log_rho = tape.log_softmax_rows(logits);
        let qt = tape.leaf(Tensor::new(self.own_actions, self.grid, q.concat()));
        let log_p = tape.log_softmax_rows(qt);
        let rho = tape.exp(log_rho);
        let d = tape.sub(log_rho, log_p);
        let kl = tape.mul(rho, d);
        let kl = tape.sum(kl);
        let loss = tape.scale(kl, 1.0 / self.own_actions as f64);
        let value = tape.scalar(loss);
        let g = tape.backward(loss);
        Ok(LossEval {
            value,
            grad: bound.gradient(&g),
        })
    }

    /// One Adam step on the KL; returns the loss before the step.
    pub fn train_step(&mut self, q: &[Vec<f64>]) -> Result<f64> {
        let l = self.loss(q)?;
        let mut p = self.net.params().to_vec();
        self.opt.step(&mut p, &l.grad);
        self.net.params_mut().copy_from_slice(&p);
        Ok(l.value)
    }

    /// Largest per-action KL to the exact posterior, computed without the tape.
    pub fn max_kl(&self, q: &[Vec<f64>]) -> Result<f64> {
        self.check(q)?;
        let mut worst: f64 = 0.0;
        for (rho, row) in self.probs().iter().zip(q) {
            let p = softmax(row)?;
            let kl: f64 = rho
                .iter()
                .zip(&p)
                .filter(|(r, _)| **r > 0.0)
                .map(|(r, p)| r * (crate::fmath::ln(*r) - crate::fmath::ln(*p)))
                .sum();
            worst = worst.max(kl);
        }
        Ok(worst)
    }
}
