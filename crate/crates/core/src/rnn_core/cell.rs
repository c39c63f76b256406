//! Recurrent cells. Gate blocks are stacked row-wise in one matrix per input
//! kind, which is also the combined multiplier layout of the hardware path:
//!
//! | kind | gate order        |
//! |------|-------------------|
//! | RNN  | h                 |
//! | LSTM | f, i, o, c~       |
//! | GRU  | z, r, h~          |
//! | MGU  | f, h~             |

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matvec_acc, matvec_t_acc, outer_acc, sigmoid};
use crate::train::ActFakeQuant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Rnn,
    Lstm,
    Gru,
    Mgu,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Rnn => 1,
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
            CellKind::Mgu => 2,
        }
    }

    pub fn id(self) -> u8 {
        match self {
            CellKind::Rnn => 0,
            CellKind::Lstm => 1,
            CellKind::Gru => 2,
            CellKind::Mgu => 3,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Some(match id {
            0 => CellKind::Rnn,
            1 => CellKind::Lstm,
            2 => CellKind::Gru,
            3 => CellKind::Mgu,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Rnn => "rnn",
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
            CellKind::Mgu => "mgu",
        }
    }

    pub fn has_cell_state(self) -> bool {
        self == CellKind::Lstm
    }

    /// GRU and MGU share the gated candidate `tanh(W x + g * (U h + b))`.
    fn gated_candidate(self) -> bool {
        matches!(self, CellKind::Gru | CellKind::Mgu)
    }
}

impl std::str::FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rnn" => Ok(CellKind::Rnn),
            "lstm" => Ok(CellKind::Lstm),
            "gru" => Ok(CellKind::Gru),
            "mgu" => Ok(CellKind::Mgu),
            other => Err(Error::Config(format!("unknown cell kind {other:?}"))),
        }
    }
}

/// Where the candidate bias `b_h` of GRU/MGU sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateBias {
    /// `tanh(W_h x + r * (U_h h + b_h))`, bias inside the gated term.
    #[default]
    Gated,
    /// `tanh(W_h x + b_h + r * (U_h h))`, the common library variant.
    Ungated,
}

/// Weights of one recurrent layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    pub kind: CellKind,
    pub d_in: usize,
    pub d_out: usize,
    pub candidate_bias: CandidateBias,
    /// `gates * d_out x d_in`, row-major
    pub w: Vec<f64>,
    /// `gates * d_out x d_out`, row-major
    pub u: Vec<f64>,
    /// `gates * d_out`
    pub b: Vec<f64>,
}

/// Hidden state of one layer; `c` only for LSTM.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVec {
    pub h: Vec<f64>,
    pub c: Option<Vec<f64>>,
}

impl StateVec {
    pub fn zeros(kind: CellKind, d: usize) -> Self {
        Self { h: vec![0.0; d], c: kind.has_cell_state().then(|| vec![0.0; d]) }
    }
}

/// Activations of one forward step, kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct StepTrace {
    /// post-activation gate values, `gates * d_out`
    pub gates: Vec<f64>,
    /// `U_h h (+ b_h)` of the gated candidate (GRU/MGU)
    pub cand: Vec<f64>,
    pub c_new: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h_new: Vec<f64>,
}

impl CellParams {
    pub fn zeros(kind: CellKind, d_in: usize, d_out: usize) -> Self {
        let g = kind.gates();
        Self {
            kind,
            d_in,
            d_out,
            candidate_bias: CandidateBias::Gated,
            w: vec![0.0; g * d_out * d_in],
            u: vec![0.0; g * d_out * d_out],
            b: vec![0.0; g * d_out],
        }
    }

    /// Uniform init in `[-1/sqrt(d_out), 1/sqrt(d_out)]`.
    pub fn random<R: Rng>(kind: CellKind, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(kind, d_in, d_out);
        let k = 1.0 / (d_out as f64).sqrt();
        for v in p.w.iter_mut().chain(p.u.iter_mut()).chain(p.b.iter_mut()) {
            *v = rng.gen_range(-k..k);
        }
        p
    }

    pub fn with_candidate_bias(mut self, cb: CandidateBias) -> Self {
        self.candidate_bias = cb;
        self
    }

    pub fn gates(&self) -> usize {
        self.kind.gates()
    }

    pub fn w_gate(&self, g: usize) -> &[f64] {
        let n = self.d_out * self.d_in;
        &self.w[g * n..(g + 1) * n]
    }

    pub fn u_gate(&self, g: usize) -> &[f64] {
        let n = self.d_out * self.d_out;
        &self.u[g * n..(g + 1) * n]
    }

    pub fn b_gate(&self, g: usize) -> &[f64] {
        &self.b[g * self.d_out..(g + 1) * self.d_out]
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.gates();
        if self.d_in == 0 || self.d_out == 0 {
            return Err(Error::dim(format!("{} layer with zero dimension", self.kind.name())));
        }
        if self.w.len() != g * self.d_out * self.d_in
            || self.u.len() != g * self.d_out * self.d_out
            || self.b.len() != g * self.d_out
        {
            return Err(Error::dim(format!(
                "{} layer {}->{} has inconsistent tensor sizes",
                self.kind.name(),
                self.d_in,
                self.d_out
            )));
        }
        if !self.w.iter().chain(&self.u).chain(&self.b).all(|v| v.is_finite()) {
            return Err(Error::Config("non-finite weight".into()));
        }
        Ok(())
    }

    fn check_dims(&self, x: &[f64], s: &StateVec) -> Result<()> {
        if x.len() != self.d_in {
            return Err(Error::dim(format!("input has {} entries, layer expects {}", x.len(), self.d_in)));
        }
        if s.h.len() != self.d_out {
            return Err(Error::dim(format!("state has {} entries, layer expects {}", s.h.len(), self.d_out)));
        }
        match (&s.c, self.kind.has_cell_state()) {
            (Some(c), true) if c.len() == self.d_out => Ok(()),
            (None, false) => Ok(()),
            _ => Err(Error::dim(format!("cell state does not match {} layer", self.kind.name()))),
        }
    }

    /// One update `s' = f(x, s)`.
    pub fn step(&self, x: &[f64], s: &StateVec) -> Result<StateVec> {
        self.check_dims(x, s)?;
        let mut tr = StepTrace::default();
        self.forward(x, &s.h, s.c.as_deref(), None, &mut tr);
        Ok(StateVec { h: tr.h_new, c: self.kind.has_cell_state().then_some(tr.c_new) })
    }

    /// Unchecked in-place update used on hot paths; `tr` is reusable scratch.
    #[inline]
    pub fn step_in_place(&self, x: &[f64], h: &mut [f64], c: Option<&mut [f64]>, tr: &mut StepTrace) {
        self.forward(x, h, c.as_deref(), None, tr);
        h.copy_from_slice(&tr.h_new);
        if let Some(c) = c {
            c.copy_from_slice(&tr.c_new);
        }
    }

    /// Forward step filling `tr`. With `fq` set, gate and state outputs are
    /// fake-quantized (training-time simulation of the integer datapath).
    pub(crate) fn forward(&self, x: &[f64], h: &[f64], c: Option<&[f64]>, fq: Option<&ActFakeQuant>, tr: &mut StepTrace) {
        let d = self.d_out;
        let g = self.gates();
        tr.gates.clear();
        tr.gates.extend_from_slice(&self.b);
        tr.h_new.resize(d, 0.0);
        if self.kind.gated_candidate() {
            // every gate except the candidate: full pre-activation
            let sig_rows = (g - 1) * d;
            let (sig, cand) = tr.gates.split_at_mut(sig_rows);
            matvec_acc(sig, &self.w[..sig_rows * self.d_in], x);
            matvec_acc(sig, &self.u[..sig_rows * d], h);
            for v in sig.iter_mut() {
                *v = sigmoid(*v);
            }
            if let Some(q) = fq {
                q.gate_slice(sig);
            }
            // candidate: W_h x (+ b_h) + gate * (U_h h (+ b_h))
            tr.cand.clear();
            match self.candidate_bias {
                CandidateBias::Gated => {
                    tr.cand.extend_from_slice(cand);
                    cand.fill(0.0);
                }
                CandidateBias::Ungated => tr.cand.resize(d, 0.0),
            }
            matvec_acc(cand, self.w_gate(g - 1), x);
            matvec_acc(&mut tr.cand, self.u_gate(g - 1), h);
            // the gate multiplying the candidate's recurrent term: r for GRU, f for MGU
            let reset = if self.kind == CellKind::Gru { &sig[d..2 * d] } else { &sig[..d] };
            for i in 0..d {
                cand[i] = (cand[i] + reset[i] * tr.cand[i]).tanh();
            }
            if let Some(q) = fq {
                q.state_slice(cand);
            }
            let update = &sig[..d];
            for i in 0..d {
                tr.h_new[i] = (1.0 - update[i]) * h[i] + update[i] * cand[i];
            }
        } else {
            matvec_acc(&mut tr.gates, &self.w, x);
            matvec_acc(&mut tr.gates, &self.u, h);
            match self.kind {
                CellKind::Rnn => {
                    for (o, a) in tr.h_new.iter_mut().zip(tr.gates.iter_mut()) {
                        *a = a.tanh();
                        *o = *a;
                    }
                }
                CellKind::Lstm => {
                    for v in tr.gates[..3 * d].iter_mut() {
                        *v = sigmoid(*v);
                    }
                    for v in tr.gates[3 * d..].iter_mut() {
                        *v = v.tanh();
                    }
                    if let Some(q) = fq {
                        q.gate_slice(&mut tr.gates[..3 * d]);
                        q.state_slice(&mut tr.gates[3 * d..]);
                    }
                    let c = c.expect("LSTM step needs a cell state");
                    tr.c_new.resize(d, 0.0);
                    tr.tanh_c.resize(d, 0.0);
                    let (f, rest) = tr.gates.split_at(d);
                    let (i_g, rest) = rest.split_at(d);
                    let (o, ct) = rest.split_at(d);
                    for k in 0..d {
                        tr.c_new[k] = f[k] * c[k] + i_g[k] * ct[k];
                        tr.tanh_c[k] = tr.c_new[k].tanh();
                        tr.h_new[k] = o[k] * tr.tanh_c[k];
                    }
                }
                CellKind::Gru | CellKind::Mgu => unreachable!(),
            }
        }
        if let Some(q) = fq {
            q.state_slice(&mut tr.h_new);
        }
    }

    /// Reverse-mode step. Accumulates parameter gradients into `grad` and
    /// adds input / previous-state gradients into `dx`, `dh_prev`, `dc_prev`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward(
        &self,
        x: &[f64],
        h: &[f64],
        c: Option<&[f64]>,
        tr: &StepTrace,
        dh: &[f64],
        dc: Option<&[f64]>,
        grad: &mut CellParams,
        dx: &mut [f64],
        dh_prev: &mut [f64],
        dc_prev: Option<&mut [f64]>,
    ) {
        let d = self.d_out;
        let g = self.gates();
        // pre-activation gradient per gate, and the vector that multiplies h
        // in the recurrent product of that gate
        let mut da = vec![0.0; g * d];
        let mut dcand = Vec::new();
        match self.kind {
            CellKind::Rnn => {
                for k in 0..d {
                    da[k] = dh[k] * (1.0 - tr.h_new[k] * tr.h_new[k]);
                }
            }
            CellKind::Lstm => {
                let c = c.expect("LSTM backward needs a cell state");
                let gt = &tr.gates;
                let mut dcp = dc_prev;
                for k in 0..d {
                    let (f, i, o, ct) = (gt[k], gt[d + k], gt[2 * d + k], gt[3 * d + k]);
                    let tc = tr.tanh_c[k];
                    let d_o = dh[k] * tc;
                    let dcn = dc.map_or(0.0, |v| v[k]) + dh[k] * o * (1.0 - tc * tc);
                    da[k] = dcn * c[k] * f * (1.0 - f);
                    da[d + k] = dcn * ct * i * (1.0 - i);
                    da[2 * d + k] = d_o * o * (1.0 - o);
                    da[3 * d + k] = dcn * i * (1.0 - ct * ct);
                    if let Some(dcp) = dcp.as_deref_mut() {
                        dcp[k] += dcn * f;
                    }
                }
            }
            CellKind::Gru | CellKind::Mgu => {
                let gt = &tr.gates;
                let (reset_off, cand_off) = if self.kind == CellKind::Gru { (d, 2 * d) } else { (0, d) };
                dcand.resize(d, 0.0);
                for k in 0..d {
                    let zf = gt[k];
                    let ht = gt[cand_off + k];
                    let r = gt[reset_off + k];
                    dh_prev[k] += dh[k] * (1.0 - zf);
                    let dz = dh[k] * (ht - h[k]);
                    let da_h = dh[k] * zf * (1.0 - ht * ht);
                    let dr = da_h * tr.cand[k];
                    dcand[k] = da_h * r;
                    da[cand_off + k] = da_h;
                    if self.kind == CellKind::Gru {
                        da[k] = dz * zf * (1.0 - zf);
                        da[d + k] = dr * r * (1.0 - r);
                    } else {
                        da[k] = (dz + dr) * zf * (1.0 - zf);
                    }
                }
            }
        }

        // input side: every gate
        outer_acc(&mut grad.w, &da, x);
        matvec_t_acc(dx, &self.w, &da);
        if self.kind.gated_candidate() {
            let rows = (g - 1) * d;
            let cand_u = (g - 1) * d * d;
            outer_acc(&mut grad.u[..cand_u], &da[..rows], h);
            matvec_t_acc(dh_prev, &self.u[..cand_u], &da[..rows]);
            outer_acc(&mut grad.u[cand_u..], &dcand, h);
            matvec_t_acc(dh_prev, &self.u[cand_u..], &dcand);
            for k in 0..rows {
                grad.b[k] += da[k];
            }
            let bias_src = match self.candidate_bias {
                CandidateBias::Gated => &dcand,
                CandidateBias::Ungated => &da[rows..],
            };
            for k in 0..d {
                grad.b[rows + k] += bias_src[k];
            }
        } else {
            outer_acc(&mut grad.u, &da, h);
            matvec_t_acc(dh_prev, &self.u, &da);
            for (gb, v) in grad.b.iter_mut().zip(&da) {
                *gb += v;
            }
        }
    }
}

fn expect_kind(p: &CellParams, kind: CellKind) -> Result<()> {
    if p.kind != kind {
        return Err(Error::dim(format!("expected a {} layer, got {}", kind.name(), p.kind.name())));
    }
    Ok(())
}

/// `h' = tanh(W x + U h + b)`
pub fn rnn_step(p: &CellParams, x: &[f64], s: &StateVec) -> Result<StateVec> {
    expect_kind(p, CellKind::Rnn)?;
    p.step(x, s)
}

pub fn lstm_step(p: &CellParams, x: &[f64], s: &StateVec) -> Result<StateVec> {
    expect_kind(p, CellKind::Lstm)?;
    p.step(x, s)
}

pub fn gru_step(p: &CellParams, x: &[f64], s: &StateVec) -> Result<StateVec> {
    expect_kind(p, CellKind::Gru)?;
    p.step(x, s)
}

pub fn mgu_step(p: &CellParams, x: &[f64], s: &StateVec) -> Result<StateVec> {
    expect_kind(p, CellKind::Mgu)?;
    p.step(x, s)
}
