//! Minimal dense neural substrate: two-layer perceptrons with hand-derived
//! backprop, sigmoid focal loss, smooth-L1 loss and seeded SGD.
//!
//! No autodiff dependency; every gradient here is checked against central
//! finite differences in the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two affine layers with an optional rectifier between them.
///
/// Weights are stored row-major: `w1` is `hidden_dim x in_dim`, `w2` is
/// `out_dim x hidden_dim`. Forward is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp2 {
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    /// Apply a rectifier between the layers.
    pub relu: bool,
}

/// Intermediate activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct Mlp2Cache {
    input: Vec<f64>,
    pre1: Vec<f64>,
    hidden: Vec<f64>,
}

/// Parameter gradients, same shapes as the net.
#[derive(Debug, Clone)]
pub struct Mlp2Grads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Mlp2 {
    /// Seeded init: uniform in +-1/sqrt(fan_in) per layer.
    pub fn seeded(in_dim: usize, hidden_dim: usize, out_dim: usize, seed: u64) -> Mlp2 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lim1 = 1.0 / (in_dim as f64).sqrt();
        let lim2 = 1.0 / (hidden_dim as f64).sqrt();
        Mlp2 {
            in_dim,
            hidden_dim,
            out_dim,
            w1: (0..hidden_dim * in_dim)
                .map(|_| rng.gen_range(-lim1..lim1))
                .collect(),
            b1: vec![0.0; hidden_dim],
            w2: (0..out_dim * hidden_dim)
                .map(|_| rng.gen_range(-lim2..lim2))
                .collect(),
            b2: vec![0.0; out_dim],
            relu: true,
        }
    }

    pub fn zeros(in_dim: usize, hidden_dim: usize, out_dim: usize) -> Mlp2 {
        Mlp2 {
            in_dim,
            hidden_dim,
            out_dim,
            w1: vec![0.0; hidden_dim * in_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; out_dim * hidden_dim],
            b2: vec![0.0; out_dim],
            relu: true,
        }
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, Mlp2Cache) {
        assert_eq!(x.len(), self.in_dim, "input shape mismatch");
        let mut pre1 = vec![0.0; self.hidden_dim];
        for h in 0..self.hidden_dim {
            let row = &self.w1[h * self.in_dim..(h + 1) * self.in_dim];
            let mut acc = self.b1[h];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            pre1[h] = acc;
        }
        let hidden: Vec<f64> = if self.relu {
            pre1.iter().map(|&v| v.max(0.0)).collect()
        } else {
            pre1.clone()
        };
        let mut out = vec![0.0; self.out_dim];
        for o in 0..self.out_dim {
            let row = &self.w2[o * self.hidden_dim..(o + 1) * self.hidden_dim];
            let mut acc = self.b2[o];
            for (wi, hi) in row.iter().zip(&hidden) {
                acc += wi * hi;
            }
            out[o] = acc;
        }
        (
            out,
            Mlp2Cache {
                input: x.to_vec(),
                pre1,
                hidden,
            },
        )
    }

    /// Backward pass for one sample. Accumulates parameter gradients into
    /// `grads` and returns the gradient with respect to the input.
    pub fn backward(&self, cache: &Mlp2Cache, d_out: &[f64], grads: &mut Mlp2Grads) -> Vec<f64> {
        assert_eq!(d_out.len(), self.out_dim, "output gradient shape mismatch");
        let mut d_hidden = vec![0.0; self.hidden_dim];
        for o in 0..self.out_dim {
            grads.b2[o] += d_out[o];
            let row = &self.w2[o * self.hidden_dim..(o + 1) * self.hidden_dim];
            let grow = &mut grads.w2[o * self.hidden_dim..(o + 1) * self.hidden_dim];
            for h in 0..self.hidden_dim {
                grow[h] += d_out[o] * cache.hidden[h];
                d_hidden[h] += d_out[o] * row[h];
            }
        }
        if self.relu {
            for h in 0..self.hidden_dim {
                if cache.pre1[h] <= 0.0 {
                    d_hidden[h] = 0.0;
                }
            }
        }
        let mut d_in = vec![0.0; self.in_dim];
        for h in 0..self.hidden_dim {
            grads.b1[h] += d_hidden[h];
            let row = &self.w1[h * self.in_dim..(h + 1) * self.in_dim];
            let grow = &mut grads.w1[h * self.in_dim..(h + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += d_hidden[h] * cache.input[i];
                d_in[i] += d_hidden[h] * row[i];
            }
        }
        d_in
    }

    /// Flattened parameter view in a fixed order (w1, b1, w2, b2); used by
    /// checkpoint serialization and finite-difference harnesses.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(&self.w1);
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.extend_from_slice(&self.b2);
        v
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "parameter count mismatch");
        let mut off = 0;
        for dst in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            dst.copy_from_slice(&flat[off..off + dst.len()]);
            off += dst.len();
        }
    }
}

impl Mlp2Grads {
    pub fn zeros_like(net: &Mlp2) -> Mlp2Grads {
        Mlp2Grads {
            w1: vec![0.0; net.w1.len()],
            b1: vec![0.0; net.b1.len()],
            w2: vec![0.0; net.w2.len()],
            b2: vec![0.0; net.b2.len()],
        }
    }

    pub fn scale(&mut self, f: f64) {
        for v in self
            .w1
            .iter_mut()
            .chain(&mut self.b1)
            .chain(&mut self.w2)
            .chain(&mut self.b2)
        {
            *v *= f;
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend_from_slice(&self.w1);
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.extend_from_slice(&self.b2);
        v
    }
}

/// SGD with classical momentum. Updates are sequential and bitwise
/// reproducible for a fixed seed and batch order.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    vel: Option<Mlp2Grads>,
}

impl SgdMomentum {
    pub fn new(lr: f64, momentum: f64) -> SgdMomentum {
        SgdMomentum {
            lr,
            momentum,
            vel: None,
        }
    }

    pub fn step(&mut self, net: &mut Mlp2, grads: &Mlp2Grads) {
        let vel = self
            .vel
            .get_or_insert_with(|| Mlp2Grads::zeros_like(net));
        let apply = |p: &mut [f64], g: &[f64], v: &mut [f64], lr: f64, mu: f64| {
            for i in 0..p.len() {
                v[i] = mu * v[i] + g[i];
                p[i] -= lr * v[i];
            }
        };
        apply(&mut net.w1, &grads.w1, &mut vel.w1, self.lr, self.momentum);
        apply(&mut net.b1, &grads.b1, &mut vel.b1, self.lr, self.momentum);
        apply(&mut net.w2, &grads.w2, &mut vel.w2, self.lr, self.momentum);
        apply(&mut net.b2, &grads.b2, &mut vel.b2, self.lr, self.momentum);
    }
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid focal loss for a single logit with a hard 0/1 label.
///
/// Returns `(loss, dloss/dlogit)`. With `gamma = 0` and `alpha = 0.5` this
/// reduces to half the binary cross-entropy.
pub fn focal_loss(logit: f64, label: f64, alpha: f64, gamma: f64) -> (f64, f64) {
    assert!(label == 0.0 || label == 1.0, "label must be 0 or 1");
    let p = sigmoid(logit);
    if label == 1.0 {
        let log_p = log_sigmoid(logit);
        let loss = -alpha * (1.0 - p).powf(gamma) * log_p;
        let grad = alpha * (1.0 - p).powf(gamma) * (gamma * p * log_p - (1.0 - p));
        (loss, grad)
    } else {
        let log_q = log_sigmoid(-logit); // log(1 - p)
        let loss = -(1.0 - alpha) * p.powf(gamma) * log_q;
        let grad = (1.0 - alpha) * p.powf(gamma) * (p - gamma * (1.0 - p) * log_q);
        (loss, grad)
    }
}

/// Binary cross-entropy on a logit; `(loss, dloss/dlogit)`.
pub fn bce_loss(logit: f64, label: f64) -> (f64, f64) {
    assert!(label == 0.0 || label == 1.0, "label must be 0 or 1");
    // softplus(logit) - label * logit, stable for large |logit|
    let softplus = if logit >= 0.0 {
        logit + (-logit).exp().ln_1p()
    } else {
        logit.exp().ln_1p()
    };
    (softplus - label * logit, sigmoid(logit) - label)
}

/// Smooth-L1 on a single residual `d = pred - target`.
///
/// Quadratic (`0.5 d^2 / beta`) inside `|d| < beta`, linear outside; value
/// and derivative are continuous at the joint.
pub fn smooth_l1_scalar(d: f64, beta: f64) -> (f64, f64) {
    debug_assert!(beta > 0.0);
    if d.abs() < beta {
        (0.5 * d * d / beta, d / beta)
    } else {
        (d.abs() - 0.5 * beta, d.signum())
    }
}

/// Elementwise smooth-L1 summed over a slice pair; returns the summed loss
/// and the per-element gradient with respect to `pred`.
pub fn smooth_l1(pred: &[f64], target: &[f64], beta: f64) -> (f64, Vec<f64>) {
    assert_eq!(pred.len(), target.len(), "shape mismatch");
    let mut total = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for i in 0..pred.len() {
        let (l, g) = smooth_l1_scalar(pred[i] - target[i], beta);
        total += l;
        grad[i] = g;
    }
    (total, grad)
}
