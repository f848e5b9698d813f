//! Minimal dense network with hand-written backpropagation.
//!
//! All math is f64 and single-threaded so gradients stay auditable and runs
//! stay bit-reproducible. Used by both the relevance model backbone and the
//! actor/critic networks.

use crate::error::{Error, Result};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation value.
    fn grad(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One dense layer, weights row-major `(out_dim x in_dim)`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
    pub act: Activation,
}

impl Dense {
    fn forward_into(&self, x: &[f64], pre: &mut Vec<f64>, out: &mut Vec<f64>) {
        pre.clear();
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let z = crate::math::dot(row, x) + self.b[o];
            pre.push(z);
            out.push(self.act.apply(z));
        }
    }
}

/// Fully-connected network.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Per-layer inputs and pre-activations cached during a forward pass.
#[derive(Debug, Clone, Default)]
pub struct Cache {
    inputs: Vec<Vec<f64>>,
    pres: Vec<Vec<f64>>,
}

/// Gradients with the same shape as the network parameters.
#[derive(Debug, Clone)]
pub struct Grads {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Grads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Grads {
            layers: mlp
                .layers
                .iter()
                .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
                .collect(),
        }
    }

    pub fn scale(&mut self, c: f64) {
        for (w, b) in &mut self.layers {
            w.iter_mut().for_each(|v| *v *= c);
            b.iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn add(&mut self, other: &Grads) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.iter_mut().zip(ow).for_each(|(v, o)| *v += o);
            b.iter_mut().zip(ob).for_each(|(v, o)| *v += o);
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

impl Mlp {
    /// Build a network with the given layer widths and activations.
    /// Weights use Kaiming-uniform initialization (`bound = sqrt(6 / fan_in)`).
    pub fn new<R: Rng>(dims: &[usize], acts: &[Activation], rng: &mut R) -> Self {
        assert!(dims.len() >= 2);
        assert_eq!(acts.len(), dims.len() - 1);
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[i], dims[i + 1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            let b = vec![0.0; fan_out];
            layers.push(Dense {
                w,
                b,
                in_dim: fan_in,
                out_dim: fan_out,
                act: acts[i],
            });
        }
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut pre = Vec::new();
        let mut out = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&cur, &mut pre, &mut out);
            std::mem::swap(&mut cur, &mut out);
        }
        cur
    }

    /// Forward pass that records what `backward` needs.
    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, Cache) {
        let mut cache = Cache::default();
        let mut cur = x.to_vec();
        for layer in &self.layers {
            cache.inputs.push(cur.clone());
            let mut pre = Vec::new();
            let mut out = Vec::new();
            layer.forward_into(&cur, &mut pre, &mut out);
            cache.pres.push(pre);
            cur = out;
        }
        (cur, cache)
    }

    /// Backpropagate `grad_out` (dL/d output) through the cached pass.
    /// Accumulates parameter gradients into `grads` and returns dL/d input.
    pub fn backward(&self, cache: &Cache, grad_out: &[f64], grads: &mut Grads) -> Vec<f64> {
        let mut delta = grad_out.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pres[li];
            let input = &cache.inputs[li];
            // Through the activation.
            for (d, &p) in delta.iter_mut().zip(pre) {
                *d *= layer.act.grad(p);
            }
            let (gw, gb) = &mut grads.layers[li];
            let mut grad_in = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let d = delta[o];
                gb[o] += d;
                let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                let wrow = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                for i in 0..layer.in_dim {
                    row[i] += d * input[i];
                    grad_in[i] += d * wrow[i];
                }
            }
            delta = grad_in;
        }
        delta
    }

    /// Input gradient only, without accumulating parameter gradients.
    /// Used where a network acts as a fixed differentiable function (e.g.
    /// the critic inside the policy-gradient step).
    pub fn backward_input(&self, cache: &Cache, grad_out: &[f64]) -> Vec<f64> {
        let mut delta = grad_out.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pres[li];
            for (d, &p) in delta.iter_mut().zip(pre) {
                *d *= layer.act.grad(p);
            }
            let mut grad_in = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let d = delta[o];
                let wrow = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                for i in 0..layer.in_dim {
                    grad_in[i] += d * wrow[i];
                }
            }
            delta = grad_in;
        }
        delta
    }

    /// Plain SGD step: `theta -= lr * grad`.
    pub fn sgd_step(&mut self, grads: &Grads, lr: f64) {
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(&grads.layers) {
            layer.w.iter_mut().zip(gw).for_each(|(v, g)| *v -= lr * g);
            layer.b.iter_mut().zip(gb).for_each(|(v, g)| *v -= lr * g);
        }
    }

    /// Soft update toward `online`: `theta = tau * online + (1 - tau) * theta`.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) {
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            t.w.iter_mut()
                .zip(&o.w)
                .for_each(|(tv, ov)| *tv = tau * ov + (1.0 - tau) * *tv);
            t.b.iter_mut()
                .zip(&o.b)
                .for_each(|(tv, ov)| *tv = tau * ov + (1.0 - tau) * *tv);
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Invalid(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut idx = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&params[idx..idx + nw]);
            idx += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&params[idx..idx + nb]);
            idx += nb;
        }
        Ok(())
    }
}

/// Max relative error between an analytic gradient and central finite
/// differences of `loss` over a flat parameter vector.
pub fn finite_difference_check<F>(
    params: &[f64],
    analytic: &[f64],
    epsilon: f64,
    mut loss: F,
) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len());
    let mut work = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + epsilon;
        let up = loss(&work);
        work[i] = orig - epsilon;
        let down = loss(&work);
        work[i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let denom = analytic[i].abs().max(numeric.abs()).max(1.0);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}
