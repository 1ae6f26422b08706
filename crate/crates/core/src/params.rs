//! Named parameter tensors and the Adam optimizer that updates them.

use std::collections::BTreeSet;

use crate::error::{contract, Result};

/// A fixed, ordered collection of named flat tensors.
///
/// The visit order is part of the checkpoint format and must not change for a
/// given configuration.
pub trait Parameters {
    fn tensors(&self) -> Vec<(String, &[f64])>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])>;

    fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn zero(&mut self) {
        for (_, t) in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    /// `self += other`, tensor by tensor. Shapes must agree.
    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Tensor names left untouched by updates and weight decay.
    pub frozen: BTreeSet<String>,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            frozen: BTreeSet::new(),
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every tensor in `params` from the matching tensor in `grads`.
    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P, lr: f64) -> Result<()> {
        self.step_many(&mut [params], &[grads], lr)
    }

    /// One update over several parameter groups that share a step counter.
    pub fn step_many<P: Parameters + ?Sized>(
        &mut self,
        params: &mut [&mut P],
        grads: &[&P],
        lr: f64,
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(contract("parameter and gradient group counts differ"));
        }
        self.step += 1;
        let bias1 = 1.0 - self.beta1.powi(self.step as i32);
        let bias2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut slot = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            let gt = g.tensors();
            for ((name, pt), (_, gt)) in p.tensors_mut().into_iter().zip(gt) {
                if pt.len() != gt.len() {
                    return Err(contract("parameter and gradient shapes differ"));
                }
                if self.first.len() <= slot {
                    self.first.push(vec![0.0; pt.len()]);
                    self.second.push(vec![0.0; pt.len()]);
                }
                if self.frozen.contains(&name) {
                    slot += 1;
                    continue;
                }
                let m = &mut self.first[slot];
                let v = &mut self.second[slot];
                for i in 0..pt.len() {
                    let grad = gt[i] + self.weight_decay * pt[i];
                    m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad;
                    v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad * grad;
                    let mh = m[i] / bias1;
                    let vh = v[i] / bias2;
                    pt[i] -= lr * mh / (vh.sqrt() + self.eps);
                }
                slot += 1;
            }
        }
        Ok(())
    }
}
