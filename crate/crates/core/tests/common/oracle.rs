//! Independent double-double forward pass used as the finite-difference
//! reference. Written from the cell equations, sharing no code with the crate.

use sser::event_io::TensorizedWindow;
use sser::rnn_core::{Autoencoder, CandidateBias, CellKind};
use sser::train::LossConfig;
use twofloat::TwoFloat as F;

struct LayerShape {
    kind: CellKind,
    gated_bias: bool,
    d_in: usize,
    d_out: usize,
}

pub struct Oracle {
    enc: Vec<LayerShape>,
    dec: Vec<LayerShape>,
    pub tensors: Vec<Vec<F>>,
}

fn sigmoid(x: F) -> F {
    F::from(1.0) / (F::from(1.0) + (-x).exp())
}

fn tanh(x: F) -> F {
    // stable for both signs: tanh(x) = sign(x) (1 - e^{-2|x|}) / (1 + e^{-2|x|})
    let e = (F::from(-2.0) * x.abs()).exp();
    let t = (F::from(1.0) - e) / (F::from(1.0) + e);
    if x.hi() < 0.0 {
        -t
    } else {
        t
    }
}

/// `sum_j m[row, j] v[j]` for block `g` of a gate-stacked matrix.
fn row_dot(m: &[F], g: usize, d_out: usize, row: usize, v: &[F]) -> F {
    let cols = v.len();
    let start = (g * d_out + row) * cols;
    let mut acc = F::from(0.0);
    for j in 0..cols {
        acc += m[start + j] * v[j];
    }
    acc
}

impl Oracle {
    pub fn new(model: &Autoencoder) -> Self {
        let shape = |l: &sser::rnn_core::CellParams| LayerShape {
            kind: l.kind,
            gated_bias: l.candidate_bias == CandidateBias::Gated,
            d_in: l.d_in,
            d_out: l.d_out,
        };
        Self {
            enc: model.encoder.layers.iter().map(shape).collect(),
            dec: model.decoder.layers.iter().map(shape).collect(),
            tensors: model.tensors().iter().map(|t| t.iter().map(|&v| F::from(v)).collect()).collect(),
        }
    }

    fn cell(&self, s: &LayerShape, base: usize, x: &[F], h: &[F], c: &[F]) -> (Vec<F>, Vec<F>) {
        let (w, u, b) = (&self.tensors[base], &self.tensors[base + 1], &self.tensors[base + 2]);
        let d = s.d_out;
        assert_eq!(x.len(), s.d_in);
        let pre = |g: usize, i: usize| row_dot(w, g, d, i, x) + row_dot(u, g, d, i, h) + b[g * d + i];
        let mut h_new = vec![F::from(0.0); d];
        let mut c_new = Vec::new();
        match s.kind {
            CellKind::Rnn => {
                for i in 0..d {
                    h_new[i] = tanh(pre(0, i));
                }
            }
            CellKind::Lstm => {
                c_new = vec![F::from(0.0); d];
                for i in 0..d {
                    let f = sigmoid(pre(0, i));
                    let ig = sigmoid(pre(1, i));
                    let o = sigmoid(pre(2, i));
                    let ct = tanh(pre(3, i));
                    c_new[i] = f * c[i] + ig * ct;
                    h_new[i] = o * tanh(c_new[i]);
                }
            }
            CellKind::Gru | CellKind::Mgu => {
                let cand_gate = if s.kind == CellKind::Gru { 2 } else { 1 };
                for i in 0..d {
                    let update = sigmoid(pre(0, i));
                    let reset = if s.kind == CellKind::Gru { sigmoid(pre(1, i)) } else { update };
                    let wx = row_dot(w, cand_gate, d, i, x);
                    let uh = row_dot(u, cand_gate, d, i, h);
                    let bh = b[cand_gate * d + i];
                    let a = if s.gated_bias { wx + reset * (uh + bh) } else { wx + bh + reset * uh };
                    let cand = tanh(a);
                    h_new[i] = (F::from(1.0) - update) * h[i] + update * cand;
                }
            }
        }
        (h_new, c_new)
    }

    fn linear(&self, idx: usize, x: &[F]) -> Vec<F> {
        let (w, b) = (&self.tensors[idx], &self.tensors[idx + 1]);
        (0..b.len()).map(|i| row_dot(w, 0, 0, i, x) + b[i]).collect()
    }

    pub fn loss(&self, tw: &TensorizedWindow, cfg: &LossConfig) -> F {
        let pixels = tw.pixels();
        let inv_n = F::from(1.0) / F::from((tw.z * pixels) as f64);
        let ne = self.enc.len();
        let dec_base = 3 * ne;
        let head_out = dec_base + 3 * self.dec.len();
        let head_in = head_out + 2;
        let mut total = F::from(0.0);
        for w in 0..pixels {
            let events: Vec<[f64; 2]> = (0..tw.z).filter(|&z| tw.mask[z * pixels + w] != 0).map(|z| tw.values[z * pixels + w]).collect();
            if events.is_empty() {
                continue;
            }
            let mut hs: Vec<Vec<F>> = self.enc.iter().map(|s| vec![F::from(0.0); s.d_out]).collect();
            let mut cs: Vec<Vec<F>> = self.enc.iter().map(|s| vec![F::from(0.0); s.d_out]).collect();
            for e in &events {
                let mut x = vec![F::from(e[0]), F::from(e[1])];
                for (l, s) in self.enc.iter().enumerate() {
                    let (h, c) = self.cell(s, 3 * l, &x, &hs[l], &cs[l]);
                    hs[l] = h.clone();
                    cs[l] = c;
                    x = h;
                }
            }
            let mut x = hs[ne - 1].clone();
            let mut dh: Vec<Vec<F>> = self.dec.iter().map(|s| vec![F::from(0.0); s.d_out]).collect();
            for e in &events {
                for (l, s) in self.dec.iter().enumerate() {
                    let (h, _) = self.cell(s, dec_base + 3 * l, &x, &dh[l], &[]);
                    dh[l] = h.clone();
                    x = h;
                }
                let d = self.linear(head_out, &x);
                let et = d[0] - e[0];
                let ep = d[1] - e[1];
                total += inv_n * (F::from(cfg.alpha) * et * et + F::from(cfg.beta) * ep * ep);
                x = self.linear(head_in, &d);
            }
        }
        total
    }

    /// Central difference of the loss in one parameter, in double-double.
    pub fn central_difference(&mut self, tensor: usize, entry: usize, eps: f64, tw: &TensorizedWindow, cfg: &LossConfig) -> f64 {
        let orig = self.tensors[tensor][entry];
        self.tensors[tensor][entry] = orig + eps;
        let up = self.loss(tw, cfg);
        self.tensors[tensor][entry] = orig - eps;
        let down = self.loss(tw, cfg);
        self.tensors[tensor][entry] = orig;
        ((up - down) / (2.0 * eps)).hi()
    }
}
