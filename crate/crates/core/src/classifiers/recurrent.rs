//! Single-layer recurrent networks read out from the final hidden state.
//!
//! Inputs arrive channel-major `(inputs, steps)`; each time step feeds one
//! column of `inputs` values.

use super::net::{axpy, dot, sigmoid, split, split_mut, Block, Network};

fn time_major(x: &[f64], inputs: usize, steps: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for c in 0..inputs {
        for t in 0..steps {
            out[t * inputs + c] = x[c * steps + t];
        }
    }
    out
}

/// `h_t = tanh(W_x x_t + W_h h_{t-1} + b)`
pub struct Rnn {
    pub inputs: usize,
    pub hidden: usize,
    pub steps: usize,
}

impl Rnn {
    fn lens(&self) -> [usize; 5] {
        let (i, h) = (self.inputs, self.hidden);
        [h * i, h * h, h, h, 1]
    }

    /// Hidden states `h_0..=h_T`, flattened.
    fn states(&self, params: &[f64], xt: &[f64]) -> Vec<f64> {
        let p = split(params, &self.lens());
        let (wx, wh, b) = (p[0], p[1], p[2]);
        let (ni, nh) = (self.inputs, self.hidden);
        let mut hs = vec![0.0; (self.steps + 1) * nh];
        for t in 0..self.steps {
            let x = &xt[t * ni..(t + 1) * ni];
            let (prev, next) = hs.split_at_mut((t + 1) * nh);
            let prev = &prev[t * nh..];
            for j in 0..nh {
                let a = b[j] + dot(&wx[j * ni..(j + 1) * ni], x) + dot(&wh[j * nh..(j + 1) * nh], prev);
                next[j] = a.tanh();
            }
        }
        hs
    }
}

impl Network for Rnn {
    fn layout(&self) -> Vec<Block> {
        let fan = self.inputs + self.hidden;
        let l = self.lens();
        vec![
            Block::new("input_weights", l[0], fan),
            Block::new("recurrent_weights", l[1], fan),
            Block::new("bias", l[2], fan),
            Block::new("readout_weights", l[3], self.hidden),
            Block::new("readout_bias", l[4], self.hidden),
        ]
    }

    fn input_len(&self) -> usize {
        self.inputs * self.steps
    }

    fn logit(&self, params: &[f64], x: &[f64]) -> f64 {
        let hs = self.states(params, &time_major(x, self.inputs, self.steps));
        let p = split(params, &self.lens());
        dot(p[3], &hs[self.steps * self.hidden..]) + p[4][0]
    }

    fn backprop(&self, params: &[f64], x: &[f64], dloss: &mut dyn FnMut(f64) -> f64, grad: &mut [f64]) -> f64 {
        let xt = time_major(x, self.inputs, self.steps);
        let hs = self.states(params, &xt);
        let p = split(params, &self.lens());
        let (ni, nh, steps) = (self.inputs, self.hidden, self.steps);
        let last = &hs[steps * nh..];
        let z = dot(p[3], last) + p[4][0];
        let dz = dloss(z);

        let g = split_mut(grad, &self.lens());
        let [gwx, gwh, gb, gv, gc]: [&mut [f64]; 5] = g.try_into().ok().unwrap();
        axpy(dz, last, gv);
        gc[0] += dz;

        let mut dh: Vec<f64> = p[3].iter().map(|v| dz * v).collect();
        let mut da = vec![0.0; nh];
        for t in (0..steps).rev() {
            let h = &hs[(t + 1) * nh..(t + 2) * nh];
            let prev = &hs[t * nh..(t + 1) * nh];
            let x = &xt[t * ni..(t + 1) * ni];
            for j in 0..nh {
                da[j] = dh[j] * (1.0 - h[j] * h[j]);
            }
            dh.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..nh {
                let d = da[j];
                axpy(d, x, &mut gwx[j * ni..(j + 1) * ni]);
                axpy(d, prev, &mut gwh[j * nh..(j + 1) * nh]);
                gb[j] += d;
                axpy(d, &p[1][j * nh..(j + 1) * nh], &mut dh);
            }
        }
        z
    }
}

/// Input, forget and output gates with a tanh cell candidate.
pub struct Lstm {
    pub inputs: usize,
    pub hidden: usize,
    pub steps: usize,
}

struct LstmTrace {
    /// Post-activation gates per step, `[i, f, g, o]` each of `hidden`.
    gates: Vec<f64>,
    /// Cell states `c_0..=c_T`.
    cells: Vec<f64>,
    /// `tanh(c_t)` for `t = 1..=T`.
    cell_tanh: Vec<f64>,
    /// Hidden states `h_0..=h_T`.
    hidden: Vec<f64>,
}

impl Lstm {
    fn lens(&self) -> [usize; 5] {
        let (i, h) = (self.inputs, self.hidden);
        [4 * h * i, 4 * h * h, 4 * h, h, 1]
    }

    fn trace(&self, params: &[f64], xt: &[f64]) -> LstmTrace {
        let p = split(params, &self.lens());
        let (w, u, b) = (p[0], p[1], p[2]);
        let (ni, nh, steps) = (self.inputs, self.hidden, self.steps);
        let mut tr = LstmTrace {
            gates: vec![0.0; steps * 4 * nh],
            cells: vec![0.0; (steps + 1) * nh],
            cell_tanh: vec![0.0; steps * nh],
            hidden: vec![0.0; (steps + 1) * nh],
        };
        for t in 0..steps {
            let x = &xt[t * ni..(t + 1) * ni];
            let gates = &mut tr.gates[t * 4 * nh..(t + 1) * 4 * nh];
            {
                let h_prev = &tr.hidden[t * nh..(t + 1) * nh];
                for r in 0..4 * nh {
                    let a = b[r] + dot(&w[r * ni..(r + 1) * ni], x) + dot(&u[r * nh..(r + 1) * nh], h_prev);
                    gates[r] = if (2 * nh..3 * nh).contains(&r) { a.tanh() } else { sigmoid(a) };
                }
            }
            for j in 0..nh {
                let (i, f, g, o) = (gates[j], gates[nh + j], gates[2 * nh + j], gates[3 * nh + j]);
                let c = f * tr.cells[t * nh + j] + i * g;
                let tc = c.tanh();
                tr.cells[(t + 1) * nh + j] = c;
                tr.cell_tanh[t * nh + j] = tc;
                tr.hidden[(t + 1) * nh + j] = o * tc;
            }
        }
        tr
    }
}

impl Network for Lstm {
    fn layout(&self) -> Vec<Block> {
        let fan = self.inputs + self.hidden;
        let l = self.lens();
        vec![
            Block::new("input_weights", l[0], fan),
            Block::new("recurrent_weights", l[1], fan),
            Block::new("bias", l[2], fan),
            Block::new("readout_weights", l[3], self.hidden),
            Block::new("readout_bias", l[4], self.hidden),
        ]
    }

    fn input_len(&self) -> usize {
        self.inputs * self.steps
    }

    fn logit(&self, params: &[f64], x: &[f64]) -> f64 {
        let tr = self.trace(params, &time_major(x, self.inputs, self.steps));
        let p = split(params, &self.lens());
        dot(p[3], &tr.hidden[self.steps * self.hidden..]) + p[4][0]
    }

    fn backprop(&self, params: &[f64], x: &[f64], dloss: &mut dyn FnMut(f64) -> f64, grad: &mut [f64]) -> f64 {
        let xt = time_major(x, self.inputs, self.steps);
        let tr = self.trace(params, &xt);
        let p = split(params, &self.lens());
        let (ni, nh, steps) = (self.inputs, self.hidden, self.steps);
        let last = &tr.hidden[steps * nh..];
        let z = dot(p[3], last) + p[4][0];
        let dz = dloss(z);

        let g = split_mut(grad, &self.lens());
        let [gw, gu, gb, gv, gc]: [&mut [f64]; 5] = g.try_into().ok().unwrap();
        axpy(dz, last, gv);
        gc[0] += dz;

        let mut dh: Vec<f64> = p[3].iter().map(|v| dz * v).collect();
        let mut dc = vec![0.0; nh];
        let mut da = vec![0.0; 4 * nh];
        for t in (0..steps).rev() {
            let gates = &tr.gates[t * 4 * nh..(t + 1) * 4 * nh];
            let c_prev = &tr.cells[t * nh..(t + 1) * nh];
            let tc = &tr.cell_tanh[t * nh..(t + 1) * nh];
            for j in 0..nh {
                let (i, f, g, o) = (gates[j], gates[nh + j], gates[2 * nh + j], gates[3 * nh + j]);
                let dct = dc[j] + dh[j] * o * (1.0 - tc[j] * tc[j]);
                da[j] = dct * g * i * (1.0 - i);
                da[nh + j] = dct * c_prev[j] * f * (1.0 - f);
                da[2 * nh + j] = dct * i * (1.0 - g * g);
                da[3 * nh + j] = dh[j] * tc[j] * o * (1.0 - o);
                dc[j] = dct * f;
            }
            let x = &xt[t * ni..(t + 1) * ni];
            let h_prev = &tr.hidden[t * nh..(t + 1) * nh];
            dh.iter_mut().for_each(|v| *v = 0.0);
            for r in 0..4 * nh {
                let d = da[r];
                axpy(d, x, &mut gw[r * ni..(r + 1) * ni]);
                axpy(d, h_prev, &mut gu[r * nh..(r + 1) * nh]);
                gb[r] += d;
                axpy(d, &p[1][r * nh..(r + 1) * nh], &mut dh);
            }
        }
        z
    }
}
