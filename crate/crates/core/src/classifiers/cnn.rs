//! 1-D convolutional network: blocks of (same-padded convolution, ReLU,
//! max-pool) over time, then a dense readout of the flattened feature maps.

use serde::{Deserialize, Serialize};

use super::net::{axpy, dot, split, split_mut, Block, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub filters: usize,
    pub kernel: usize,
    pub pool: usize,
}

pub struct Cnn {
    pub inputs: usize,
    pub length: usize,
    pub blocks: Vec<ConvBlock>,
}

/// `(in_channels, in_len)` for each block, then the flattened dense width.
struct Shapes {
    layers: Vec<(usize, usize)>,
    dense_in: usize,
}

struct Trace {
    /// Post-ReLU conv output of each block, `(filters, in_len)`.
    activations: Vec<Vec<f64>>,
    /// Index into the activation for every pooled value.
    argmax: Vec<Vec<usize>>,
    /// Pooled output of each block, the next block's input.
    pooled: Vec<Vec<f64>>,
}

impl Cnn {
    fn shapes(&self) -> Shapes {
        let mut layers = Vec::with_capacity(self.blocks.len());
        let (mut c, mut l) = (self.inputs, self.length);
        for b in &self.blocks {
            layers.push((c, l));
            c = b.filters;
            l /= b.pool;
        }
        Shapes {
            layers,
            dense_in: c * l,
        }
    }

    fn lens(&self) -> Vec<usize> {
        let s = self.shapes();
        let mut lens = Vec::new();
        for (b, &(c, _)) in self.blocks.iter().zip(&s.layers) {
            lens.push(b.filters * c * b.kernel);
            lens.push(b.filters);
        }
        lens.push(s.dense_in);
        lens.push(1);
        lens
    }

    fn trace(&self, params: &[f64], x: &[f64]) -> Trace {
        let shapes = self.shapes();
        let p = split(params, &self.lens());
        let mut tr = Trace {
            activations: Vec::new(),
            argmax: Vec::new(),
            pooled: Vec::new(),
        };
        for (n, (b, &(c, len))) in self.blocks.iter().zip(&shapes.layers).enumerate() {
            let input = if n == 0 { x } else { &tr.pooled[n - 1] };
            let (w, bias) = (p[2 * n], p[2 * n + 1]);
            let pad = b.kernel / 2;
            let mut out = vec![0.0; b.filters * len];
            for o in 0..b.filters {
                let y = &mut out[o * len..(o + 1) * len];
                y.iter_mut().for_each(|v| *v = bias[o]);
                for i in 0..c {
                    let xi = &input[i * len..(i + 1) * len];
                    for k in 0..b.kernel {
                        let s = k as isize - pad as isize;
                        let (t0, t1) = valid_range(s, len);
                        if t0 < t1 {
                            let xs = &xi[(t0 as isize + s) as usize..(t1 as isize + s) as usize];
                            axpy(w[(o * c + i) * b.kernel + k], xs, &mut y[t0..t1]);
                        }
                    }
                }
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            let out_len = len / b.pool;
            let mut pooled = vec![0.0; b.filters * out_len];
            let mut argmax = vec![0; b.filters * out_len];
            for o in 0..b.filters {
                for j in 0..out_len {
                    let start = o * len + j * b.pool;
                    let mut best = start;
                    for t in start + 1..start + b.pool {
                        if out[t] > out[best] {
                            best = t;
                        }
                    }
                    pooled[o * out_len + j] = out[best];
                    argmax[o * out_len + j] = best;
                }
            }
            tr.activations.push(out);
            tr.argmax.push(argmax);
            tr.pooled.push(pooled);
        }
        tr
    }

    fn features<'a>(&self, tr: &'a Trace, x: &'a [f64]) -> &'a [f64] {
        tr.pooled.last().map_or(x, Vec::as_slice)
    }
}

/// Output positions `t` for which `t + s` indexes into `0..len`.
fn valid_range(s: isize, len: usize) -> (usize, usize) {
    let t0 = (-s).max(0) as usize;
    let t1 = (len as isize - s).clamp(0, len as isize) as usize;
    (t0.min(len), t1)
}

impl Network for Cnn {
    fn layout(&self) -> Vec<Block> {
        let shapes = self.shapes();
        let mut blocks = Vec::new();
        for (n, (b, &(c, _))) in self.blocks.iter().zip(&shapes.layers).enumerate() {
            let fan = c * b.kernel;
            blocks.push(Block::new(format!("conv{n}_weights"), b.filters * c * b.kernel, fan));
            blocks.push(Block::new(format!("conv{n}_bias"), b.filters, fan));
        }
        blocks.push(Block::new("dense_weights", shapes.dense_in, shapes.dense_in));
        blocks.push(Block::new("dense_bias", 1, shapes.dense_in));
        blocks
    }

    fn input_len(&self) -> usize {
        self.inputs * self.length
    }

    fn logit(&self, params: &[f64], x: &[f64]) -> f64 {
        let tr = self.trace(params, x);
        let p = split(params, &self.lens());
        let n = p.len();
        dot(p[n - 2], self.features(&tr, x)) + p[n - 1][0]
    }

    fn backprop(&self, params: &[f64], x: &[f64], dloss: &mut dyn FnMut(f64) -> f64, grad: &mut [f64]) -> f64 {
        let shapes = self.shapes();
        let tr = self.trace(params, x);
        let lens = self.lens();
        let p = split(params, &lens);
        let n = p.len();
        let feats = self.features(&tr, x);
        let z = dot(p[n - 2], feats) + p[n - 1][0];
        let dz = dloss(z);

        let mut g = split_mut(grad, &lens);
        axpy(dz, feats, g[n - 2]);
        g[n - 1][0] += dz;

        // Gradient w.r.t. the current block's pooled output.
        let mut d_pooled: Vec<f64> = p[n - 2].iter().map(|v| dz * v).collect();
        for (layer, b) in self.blocks.iter().enumerate().rev() {
            let (c, len) = shapes.layers[layer];
            let act = &tr.activations[layer];
            let mut dy = vec![0.0; b.filters * len];
            for (q, &idx) in tr.argmax[layer].iter().enumerate() {
                if act[idx] > 0.0 {
                    dy[idx] += d_pooled[q];
                }
            }
            let input = if layer == 0 { x } else { &tr.pooled[layer - 1] };
            let need_dx = layer > 0;
            let mut dx = if need_dx { vec![0.0; c * len] } else { Vec::new() };
            let pad = b.kernel / 2;
            let w = p[2 * layer];
            for o in 0..b.filters {
                let dyo = &dy[o * len..(o + 1) * len];
                g[2 * layer + 1][o] += dyo.iter().sum::<f64>();
                for i in 0..c {
                    let xi = &input[i * len..(i + 1) * len];
                    for k in 0..b.kernel {
                        let s = k as isize - pad as isize;
                        let (t0, t1) = valid_range(s, len);
                        if t0 >= t1 {
                            continue;
                        }
                        let lo = (t0 as isize + s) as usize;
                        let hi = (t1 as isize + s) as usize;
                        let widx = (o * c + i) * b.kernel + k;
                        g[2 * layer][widx] += dot(&dyo[t0..t1], &xi[lo..hi]);
                        if need_dx {
                            axpy(w[widx], &dyo[t0..t1], &mut dx[i * len + lo..i * len + hi]);
                        }
                    }
                }
            }
            d_pooled = dx;
        }
        z
    }
}
