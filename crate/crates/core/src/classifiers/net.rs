//! Differentiable models mapping one prepared sample to a logit.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub len: usize,
    pub fan_in: usize,
}

impl Block {
    pub fn new(name: impl Into<String>, len: usize, fan_in: usize) -> Self {
        Self {
            name: name.into(),
            len,
            fan_in,
        }
    }
}

pub trait Network: Send + Sync {
    /// Parameter blocks in storage order. The last block is the scalar
    /// output bias.
    fn layout(&self) -> Vec<Block>;

    /// Length of a prepared input sample.
    fn input_len(&self) -> usize;

    fn logit(&self, params: &[f64], x: &[f64]) -> f64;

    /// Computes the logit `z`, then adds `dloss(z) * dz/dparams` to `grad`.
    fn backprop(&self, params: &[f64], x: &[f64], dloss: &mut dyn FnMut(f64) -> f64, grad: &mut [f64]) -> f64;

    fn n_params(&self) -> usize {
        self.layout().iter().map(|b| b.len).sum()
    }

    /// Uniform in `±1/sqrt(fan_in)` per block.
    fn init(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut params = Vec::with_capacity(self.n_params());
        for block in self.layout() {
            let s = 1.0 / (block.fan_in.max(1) as f64).sqrt();
            params.extend((0..block.len).map(|_| rng.random_range(-s..=s)));
        }
        params
    }
}

/// Splits `params` into consecutive slices of the given lengths.
pub(crate) fn split<'a>(mut params: &'a [f64], lens: &[usize]) -> Vec<&'a [f64]> {
    lens.iter()
        .map(|&n| {
            let (head, tail) = params.split_at(n);
            params = tail;
            head
        })
        .collect()
}

pub(crate) fn split_mut<'a>(mut params: &'a mut [f64], lens: &[usize]) -> Vec<&'a mut [f64]> {
    lens.iter()
        .map(|&n| {
            let (head, tail) = std::mem::take(&mut params).split_at_mut(n);
            params = tail;
            head
        })
        .collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut tail = 0.0;
    for k in 4 * chunks..a.len() {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y += alpha * x;
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Affine map of the flattened sample.
pub struct Logistic {
    pub n_features: usize,
}

impl Network for Logistic {
    fn layout(&self) -> Vec<Block> {
        vec![
            Block::new("weights", self.n_features, self.n_features),
            Block::new("bias", 1, self.n_features),
        ]
    }

    fn input_len(&self) -> usize {
        self.n_features
    }

    fn logit(&self, params: &[f64], x: &[f64]) -> f64 {
        dot(&params[..self.n_features], x) + params[self.n_features]
    }

    fn backprop(&self, params: &[f64], x: &[f64], dloss: &mut dyn FnMut(f64) -> f64, grad: &mut [f64]) -> f64 {
        let z = self.logit(params, x);
        let dz = dloss(z);
        axpy(dz, x, &mut grad[..self.n_features]);
        grad[self.n_features] += dz;
        z
    }
}
