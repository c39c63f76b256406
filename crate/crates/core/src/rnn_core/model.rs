use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::cell::{CandidateBias, CellKind, CellParams, StateVec, StepTrace};
use crate::error::{Error, Result};
use crate::event_io::TensorizedWindow;
use crate::linalg::matvec_acc;

/// Affine map `y = W x + b` with `W` of shape `rows x cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, w: vec![0.0; rows * cols], b: vec![0.0; rows] }
    }

    pub fn random<R: rand::Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let k = 1.0 / (cols as f64).sqrt();
        let mut l = Self::zeros(rows, cols);
        for v in l.w.iter_mut().chain(l.b.iter_mut()) {
            *v = rng.gen_range(-k..k);
        }
        l
    }

    pub fn apply_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&self.b);
        matvec_acc(out, &self.w, x);
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows);
        self.apply_into(x, &mut out);
        out
    }
}

/// Stack of recurrent layers mapping `(t_norm, p)` inputs to a `C`-vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub layers: Vec<CellParams>,
}

/// Dense `pixels x channels` output, pixel-major (`y * width + x`).
#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    pub width: u16,
    pub height: u16,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Representation {
    pub fn zeros(width: u16, height: u16, channels: usize) -> Self {
        Self { width, height, channels, data: vec![0.0; width as usize * height as usize * channels] }
    }

    pub fn pixel(&self, w: usize) -> &[f64] {
        &self.data[w * self.channels..(w + 1) * self.channels]
    }
}

impl EncoderModel {
    pub fn new(layers: Vec<CellParams>) -> Result<Self> {
        let m = Self { layers };
        m.validate()?;
        Ok(m)
    }

    /// Randomly initialised stack with widths `dims` (layer 0 input is 2).
    pub fn random(kind: CellKind, dims: &[usize], candidate_bias: CandidateBias, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d_in = 2;
        let mut layers = Vec::with_capacity(dims.len());
        for &d in dims {
            layers.push(CellParams::random(kind, d_in, d, &mut rng).with_candidate_bias(candidate_bias));
            d_in = d;
        }
        Self::new(layers)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::dim("encoder needs at least one layer"));
        }
        let mut d_in = 2;
        for (i, l) in self.layers.iter().enumerate() {
            l.validate()?;
            if l.d_in != d_in {
                return Err(Error::dim(format!("encoder layer {i} expects input {}, chain gives {d_in}", l.d_in)));
            }
            d_in = l.d_out;
        }
        Ok(())
    }

    /// Representation channels `C`.
    pub fn channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.d_out)
    }

    pub fn zero_states(&self) -> Vec<StateVec> {
        self.layers.iter().map(|l| StateVec::zeros(l.kind, l.d_out)).collect()
    }

    /// Floats of state one pixel needs across all layers (`h`, plus `c` for LSTM).
    pub fn state_width(&self) -> usize {
        self.layers.iter().map(|l| if l.kind.has_cell_state() { 2 * l.d_out } else { l.d_out }).sum()
    }

    /// Folds time-ordered inputs through the stack; returns final per-layer states.
    pub fn encode_sequence(&self, inputs: &[[f64; 2]], init: &[StateVec]) -> Result<Vec<StateVec>> {
        if init.len() != self.layers.len() {
            return Err(Error::dim(format!("{} init states for {} layers", init.len(), self.layers.len())));
        }
        let mut states = init.to_vec();
        let mut buf = vec![0.0; self.state_width()];
        let mut off = 0;
        for (l, s) in self.layers.iter().zip(&states) {
            if s.h.len() != l.d_out || s.c.as_ref().map(|c| c.len()) != l.kind.has_cell_state().then_some(l.d_out) {
                return Err(Error::dim("init state shape does not match layer"));
            }
            buf[off..off + l.d_out].copy_from_slice(&s.h);
            if let Some(c) = &s.c {
                buf[off + l.d_out..off + 2 * l.d_out].copy_from_slice(c);
            }
            off += if l.kind.has_cell_state() { 2 * l.d_out } else { l.d_out };
        }
        let mut scratch = EncodeScratch::default();
        for u in inputs {
            self.step_pixel(u, &mut buf, &mut scratch);
        }
        let mut off = 0;
        for (l, s) in self.layers.iter().zip(states.iter_mut()) {
            s.h.copy_from_slice(&buf[off..off + l.d_out]);
            if let Some(c) = &mut s.c {
                c.copy_from_slice(&buf[off + l.d_out..off + 2 * l.d_out]);
            }
            off += if l.kind.has_cell_state() { 2 * l.d_out } else { l.d_out };
        }
        Ok(states)
    }

    /// Applies one input to a pixel's packed state (`[h0 (c0) h1 (c1) ...]`).
    /// Shared by the batch encoder and the streaming engine.
    #[inline]
    pub fn step_pixel(&self, u: &[f64; 2], state: &mut [f64], scratch: &mut EncodeScratch) {
        scratch.x.clear();
        scratch.x.extend_from_slice(u);
        let mut off = 0;
        for l in &self.layers {
            let d = l.d_out;
            if l.kind.has_cell_state() {
                let (h, c) = state[off..off + 2 * d].split_at_mut(d);
                l.step_in_place(&scratch.x, h, Some(c), &mut scratch.trace);
                off += 2 * d;
            } else {
                l.step_in_place(&scratch.x, &mut state[off..off + d], None, &mut scratch.trace);
                off += d;
            }
            scratch.x.clear();
            scratch.x.extend_from_slice(&scratch.trace.h_new);
        }
    }

    /// Offset of the last layer's `h` inside a packed pixel state.
    pub fn output_offset(&self) -> usize {
        self.state_width() - self.layers.last().map_or(0, |l| if l.kind.has_cell_state() { 2 * l.d_out } else { l.d_out })
    }

    /// Encodes every pixel column of a tensorized window from zero state.
    /// Masked steps are skipped; pixels are independent.
    pub fn encode_window(&self, tw: &TensorizedWindow) -> Representation {
        let c = self.channels();
        let mut rep = Representation::zeros(tw.width, tw.height, c);
        let sw = self.state_width();
        let out_off = self.output_offset();
        rep.data.par_chunks_mut(c).enumerate().for_each_init(
            || (vec![0.0; sw], EncodeScratch::default()),
            |(state, scratch), (w, out)| {
                state.fill(0.0);
                for z in 0..tw.z {
                    if !tw.is_valid(z, w) {
                        break;
                    }
                    self.step_pixel(&tw.value(z, w), state, scratch);
                }
                out.copy_from_slice(&state[out_off..out_off + c]);
            },
        );
        rep
    }
}

#[derive(Debug, Default, Clone)]
pub struct EncodeScratch {
    x: Vec<f64>,
    trace: StepTrace,
}

/// GRU stack plus the two linear heads of the rolling decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderModel {
    pub layers: Vec<CellParams>,
    /// `C -> 2`, reconstructs `(t, p)`
    pub head_out: Linear,
    /// `2 -> C`, feeds the next decoding step
    pub head_in: Linear,
}

impl DecoderModel {
    pub fn random(channels: usize, depth: usize, candidate_bias: CandidateBias, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..depth)
            .map(|_| CellParams::random(CellKind::Gru, channels, channels, &mut rng).with_candidate_bias(candidate_bias))
            .collect();
        Self { layers, head_out: Linear::random(2, channels, &mut rng), head_in: Linear::random(channels, 2, &mut rng) }
    }

    pub fn zeros(channels: usize, depth: usize) -> Self {
        Self {
            layers: (0..depth).map(|_| CellParams::zeros(CellKind::Gru, channels, channels)).collect(),
            head_out: Linear::zeros(2, channels),
            head_in: Linear::zeros(channels, 2),
        }
    }

    pub fn channels(&self) -> usize {
        self.head_out.cols
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            l.validate()?;
            if l.kind != CellKind::Gru || l.d_in != channels || l.d_out != channels {
                return Err(Error::dim(format!("decoder layer {i} must be GRU {channels}->{channels}")));
            }
        }
        if (self.head_out.rows, self.head_out.cols) != (2, channels)
            || (self.head_in.rows, self.head_in.cols) != (channels, 2)
            || self.head_out.w.len() != 2 * channels
            || self.head_in.w.len() != 2 * channels
            || self.head_out.b.len() != 2
            || self.head_in.b.len() != channels
        {
            return Err(Error::dim(format!("decoder heads do not match C = {channels}")));
        }
        Ok(())
    }

    /// Rolling reconstruction of `steps` events from one representation row.
    ///
    /// Decoder states start at zero; `e_row` is the first input; each output
    /// `d_z = head_out(top)` is mapped back through `head_in` as the next input.
    pub fn decode(&self, e_row: &[f64], steps: usize) -> Result<Vec<[f64; 2]>> {
        let c = self.channels();
        if e_row.len() != c {
            return Err(Error::dim(format!("representation row has {} entries, decoder expects {c}", e_row.len())));
        }
        if steps == 0 {
            return Err(Error::Config("decode needs at least one step".into()));
        }
        let mut hs: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.d_out]).collect();
        let mut tr = StepTrace::default();
        let mut x = e_row.to_vec();
        let mut d = Vec::with_capacity(2);
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            for (l, h) in self.layers.iter().zip(hs.iter_mut()) {
                l.step_in_place(&x, h, None, &mut tr);
                x.copy_from_slice(h);
            }
            self.head_out.apply_into(&x, &mut d);
            out.push([d[0], d[1]]);
            self.head_in.apply_into(&d, &mut x);
        }
        Ok(out)
    }
}

/// Encoder plus decoder, the unit that is trained and checkpointed.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub encoder: EncoderModel,
    pub decoder: DecoderModel,
}

impl Autoencoder {
    pub fn new(encoder: EncoderModel, decoder: DecoderModel) -> Result<Self> {
        encoder.validate()?;
        decoder.validate(encoder.channels())?;
        Ok(Self { encoder, decoder })
    }

    pub fn random(kind: CellKind, dims: &[usize], decoder_depth: usize, candidate_bias: CandidateBias, seed: u64) -> Result<Self> {
        let encoder = EncoderModel::random(kind, dims, candidate_bias, seed)?;
        let decoder = DecoderModel::random(encoder.channels(), decoder_depth, candidate_bias, seed ^ 0x9e37_79b9_7f4a_7c15);
        Self::new(encoder, decoder)
    }

    /// Same shapes, all zeros. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Every parameter tensor in a fixed order: encoder layers (w, u, b),
    /// decoder layers (w, u, b), head_out (w, b), head_in (w, b).
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        for l in self.encoder.layers.iter().chain(&self.decoder.layers) {
            v.extend([l.w.as_slice(), &l.u, &l.b]);
        }
        v.extend([self.decoder.head_out.w.as_slice(), &self.decoder.head_out.b]);
        v.extend([self.decoder.head_in.w.as_slice(), &self.decoder.head_in.b]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        for l in self.encoder.layers.iter_mut().chain(self.decoder.layers.iter_mut()) {
            v.push(&mut l.w);
            v.push(&mut l.u);
            v.push(&mut l.b);
        }
        let Linear { w, b, .. } = &mut self.decoder.head_out;
        v.push(w);
        v.push(b);
        let Linear { w, b, .. } = &mut self.decoder.head_in;
        v.push(w);
        v.push(b);
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_io::{tensorize, Event, EventSequence, Polarity};
    use rand::Rng;

    #[test]
    fn empty_input_keeps_init() {
        let m = EncoderModel::random(CellKind::Lstm, &[3, 2], CandidateBias::Gated, 1).unwrap();
        let mut init = m.zero_states();
        init[0].h[1] = 0.25;
        init[1].c.as_mut().unwrap()[0] = -0.5;
        assert_eq!(m.encode_sequence(&[], &init).unwrap(), init);
    }

    #[test]
    fn single_input_is_chained_step() {
        for kind in [CellKind::Rnn, CellKind::Lstm, CellKind::Gru, CellKind::Mgu] {
            let m = EncoderModel::random(kind, &[3, 4], CandidateBias::Gated, 2).unwrap();
            let u = [0.3, -1.0];
            let out = m.encode_sequence(&[u], &m.zero_states()).unwrap();
            let s0 = m.layers[0].step(&u, &StateVec::zeros(kind, 3)).unwrap();
            let s1 = m.layers[1].step(&s0.h, &StateVec::zeros(kind, 4)).unwrap();
            assert_eq!(out, vec![s0, s1]);
        }
    }

    #[test]
    fn three_layer_gru_matches_manual_unrolling() {
        let m = EncoderModel::random(CellKind::Gru, &[4, 4, 4], CandidateBias::Gated, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let inputs: Vec<[f64; 2]> = (0..5).map(|_| [rng.gen::<f64>(), if rng.gen() { 1.0 } else { -1.0 }]).collect();
        let got = m.encode_sequence(&inputs, &m.zero_states()).unwrap();
        // oracle: gru_step per layer per input, written out directly
        let mut hs = vec![vec![0.0; 4]; 3];
        for u in &inputs {
            let mut x = u.to_vec();
            for (l, h) in m.layers.iter().zip(hs.iter_mut()) {
                *h = super::super::gru_step(l, &x, &StateVec { h: h.clone(), c: None }).unwrap().h;
                x = h.clone();
            }
        }
        for (s, h) in got.iter().zip(&hs) {
            for (a, b) in s.h.iter().zip(h) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    fn window() -> (EventSequence, u64, u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut events = Vec::new();
        for t in 0..60u64 {
            let x = rng.gen_range(0..4);
            let y = rng.gen_range(0..3);
            events.push(Event::new(t * 3, x, y, if rng.gen() { Polarity::Positive } else { Polarity::Negative }));
        }
        (EventSequence::new(4, 3, events).unwrap(), 0, 200)
    }

    #[test]
    fn encode_window_equals_per_pixel_sequence() {
        let (seq, t0, len) = window();
        let tw = tensorize(&seq, t0, len, 100).unwrap();
        for kind in [CellKind::Rnn, CellKind::Lstm, CellKind::Gru, CellKind::Mgu] {
            let m = EncoderModel::random(kind, &[5, 3], CandidateBias::Gated, 7).unwrap();
            let rep = m.encode_window(&tw);
            for w in 0..tw.pixels() {
                let states = m.encode_sequence(&tw.column(w), &m.zero_states()).unwrap();
                assert_eq!(rep.pixel(w), states.last().unwrap().h.as_slice());
            }
        }
    }

    #[test]
    fn empty_mask_gives_initial_state() {
        let tw = tensorize(&EventSequence::empty(3, 3), 0, 10, 4).unwrap();
        let m = EncoderModel::random(CellKind::Gru, &[4], CandidateBias::Gated, 1).unwrap();
        assert!(m.encode_window(&tw).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_active_pixel_changes_one_row() {
        let seq = EventSequence::new(3, 3, vec![Event::new(5, 1, 2, Polarity::Positive)]).unwrap();
        let tw = tensorize(&seq, 0, 10, 4).unwrap();
        let m = EncoderModel::random(CellKind::Mgu, &[4], CandidateBias::Gated, 1).unwrap();
        let rep = m.encode_window(&tw);
        for w in 0..9 {
            let nonzero = rep.pixel(w).iter().any(|&v| v != 0.0);
            assert_eq!(nonzero, w == 7);
        }
    }

    #[test]
    fn decoder_zero_params_emit_bias() {
        let mut dec = DecoderModel::zeros(4, 3);
        dec.head_out.b = vec![0.25, -0.75];
        let out = dec.decode(&[0.1, 0.2, 0.3, 0.4], 5).unwrap();
        assert_eq!(out, vec![[0.25, -0.75]; 5]);
        assert_eq!(dec.decode(&[0.1, 0.2, 0.3, 0.4], 1).unwrap().len(), 1);
        assert!(dec.decode(&[0.0; 3], 2).is_err());
    }

    #[test]
    fn decoder_matches_hand_unrolled_three_steps() {
        let dec = DecoderModel::random(3, 3, CandidateBias::Gated, 11);
        let e = [0.3, -0.2, 0.7];
        let got = dec.decode(&e, 3).unwrap();

        let lin = |l: &Linear, x: &[f64]| -> Vec<f64> {
            (0..l.rows).map(|i| l.b[i] + (0..l.cols).map(|j| l.w[i * l.cols + j] * x[j]).sum::<f64>()).collect()
        };
        let step = |p: &CellParams, x: &[f64], h: &[f64]| p.step(x, &StateVec { h: h.to_vec(), c: None }).unwrap().h;
        let (l0, l1, l2) = (&dec.layers[0], &dec.layers[1], &dec.layers[2]);
        let z = vec![0.0; 3];
        // step 0
        let a0 = step(l0, &e, &z);
        let b0 = step(l1, &a0, &z);
        let c0 = step(l2, &b0, &z);
        let d0 = lin(&dec.head_out, &c0);
        // step 1
        let x1 = lin(&dec.head_in, &d0);
        let a1 = step(l0, &x1, &a0);
        let b1 = step(l1, &a1, &b0);
        let c1 = step(l2, &b1, &c0);
        let d1 = lin(&dec.head_out, &c1);
        // step 2
        let x2 = lin(&dec.head_in, &d1);
        let a2 = step(l0, &x2, &a1);
        let b2 = step(l1, &a2, &b1);
        let c2 = step(l2, &b2, &c1);
        let d2 = lin(&dec.head_out, &c2);
        for (g, want) in got.iter().zip([d0, d1, d2]) {
            assert!((g[0] - want[0]).abs() < 1e-12 && (g[1] - want[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn chain_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bad = EncoderModel::new(vec![
            CellParams::random(CellKind::Gru, 2, 4, &mut rng),
            CellParams::random(CellKind::Gru, 3, 4, &mut rng),
        ]);
        assert!(matches!(bad, Err(Error::Dimension(_))));
        assert!(EncoderModel::new(vec![]).is_err());
        let enc = EncoderModel::random(CellKind::Gru, &[4], CandidateBias::Gated, 0).unwrap();
        assert!(Autoencoder::new(enc, DecoderModel::zeros(5, 3)).is_err());
    }
}
