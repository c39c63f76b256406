//! Integer inference path: symmetric weight quantization, activation
//! look-up tables and bit-exact GRU/MGU kernels in combined-block layout.

mod file;
mod kernel;
mod lut;

pub use file::{read_quantized_model, write_quantized_model, QUANT_VERSION};
pub use kernel::{div_round, q_gru_step, q_mgu_step, shift_round, Multipliers, QuantizedLayer, REQUANT_SHIFT};
pub use lut::{build_activation_lut, Activation, ActivationLUT};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_io::TensorizedWindow;
use crate::linalg::sigmoid;
use crate::rnn_core::{CandidateBias, CellKind, CellParams, EncoderModel, Representation, StateVec};

/// Input codes span `0..=65535` (16 bits, unsigned time; polarity is `±65535`).
pub const INPUT_BITS: u32 = 16;
pub const INPUT_LEVELS: i32 = (1 << INPUT_BITS) - 1;
/// Pre-activations never map beyond this magnitude onto a LUT; sigmoid and
/// tanh are saturated to within a 12-bit quantum past it.
pub const LUT_RANGE_CAP: f64 = 8.0;
/// Narrowest LUT input range, so calibration that saw only small
/// pre-activations does not saturate unseen ones early.
const LUT_RANGE_FLOOR: f64 = 4.0;

/// Largest gate code: gates live on `k / (2^bits - 1)`, so 1.0 is exact.
pub fn gate_levels(bits: u32) -> i32 {
    (1 << bits) - 1
}

/// Largest state code: states live on `k / (2^(bits-1) - 1)`.
pub fn state_levels(bits: u32) -> i32 {
    (1 << (bits - 1)) - 1
}

/// Symmetric max-abs scale; an all-zero tensor gets scale 1.
pub fn symmetric_scale(max_abs: f64, bits: u32) -> f64 {
    if max_abs > 0.0 {
        max_abs / state_levels(bits) as f64
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    #[default]
    Arbitrary,
    /// Weight scales rounded up to the next power of two.
    PowerOfTwo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantScheme {
    pub weight_bits: u32,
    pub act_bits: u32,
    /// Width of the requantized LUT address.
    pub lut_in_bits: u32,
    pub scale_mode: ScaleMode,
}

impl QuantScheme {
    pub fn new(weight_bits: u32, act_bits: u32) -> Self {
        Self { weight_bits, act_bits, lut_in_bits: 12, scale_mode: ScaleMode::Arbitrary }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("weight_bits", self.weight_bits), ("act_bits", self.act_bits)] {
            if !(2..=12).contains(&b) {
                return Err(Error::Config(format!("{name} must be in 2..=12, got {b}")));
            }
        }
        if !(4..=16).contains(&self.lut_in_bits) {
            return Err(Error::Config(format!("lut_in_bits must be in 4..=16, got {}", self.lut_in_bits)));
        }
        Ok(())
    }

    /// Accumulator width that makes overflow impossible for a layer.
    pub fn accumulator_bits(&self, d_in: usize, d_out: usize) -> u32 {
        INPUT_BITS + self.weight_bits + ((d_in + d_out) as f64).log2().ceil() as u32 + 1
    }

    fn weight_scale(&self, max_abs: f64) -> f64 {
        let s = symmetric_scale(max_abs, self.weight_bits);
        match self.scale_mode {
            ScaleMode::Arbitrary => s,
            ScaleMode::PowerOfTwo => 2f64.powi(s.log2().ceil() as i32),
        }
    }
}

/// Integer encoder plus the scheme that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub scheme: QuantScheme,
    pub layers: Vec<QuantizedLayer>,
    /// Notes produced while quantizing (e.g. all-zero tensors given scale 1).
    pub warnings: Vec<String>,
}

/// Last-layer state codes of every pixel, pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantRepresentation {
    pub width: u16,
    pub height: u16,
    pub channels: usize,
    pub scale: f64,
    pub codes: Vec<i32>,
}

pub fn dequantize_representation(q: &QuantRepresentation) -> Representation {
    Representation {
        width: q.width,
        height: q.height,
        channels: q.channels,
        data: q.codes.iter().map(|&c| c as f64 * q.scale).collect(),
    }
}

/// Round half away from zero and clamp onto `±(2^(bits-1))`.
pub fn quantize_value(v: f64, scale: f64, bits: u32) -> i32 {
    let lo = -(1i64 << (bits - 1));
    let hi = (1i64 << (bits - 1)) - 1;
    ((v / scale).round() as i64).clamp(lo, hi) as i32
}

fn quantize_block(block: &[f64], scheme: &QuantScheme, what: &str, warnings: &mut Vec<String>) -> (Vec<i32>, f64) {
    let max_abs = block.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs == 0.0 {
        warnings.push(format!("{what} is all zero; using scale 1"));
    }
    let scale = scheme.weight_scale(max_abs);
    (block.iter().map(|&v| quantize_value(v, scale, scheme.weight_bits)).collect(), scale)
}

fn fixed(v: f64) -> i64 {
    (v * (1u64 << REQUANT_SHIFT) as f64).round() as i64
}

/// Max-abs pre-activations of one layer over calibration data: (sigmoid gates, candidate).
#[derive(Debug, Clone, Copy, Default)]
struct PreactRange {
    gate: f64,
    cand: f64,
}

/// Runs the float encoder over the calibration windows and records the
/// largest pre-activation magnitude entering each LUT.
fn calibrate(model: &EncoderModel, calib: &[TensorizedWindow]) -> Vec<PreactRange> {
    let nl = model.layers.len();
    let per_window: Vec<Vec<PreactRange>> = calib
        .par_iter()
        .map(|tw| {
            let mut ranges = vec![PreactRange::default(); nl];
            let mut pre = Vec::new();
            for w in tw.active_columns() {
                let mut hs: Vec<Vec<f64>> = model.layers.iter().map(|l| vec![0.0; l.d_out]).collect();
                for u in tw.column(w) {
                    let mut x = u.to_vec();
                    for (l, p) in model.layers.iter().enumerate() {
                        preactivations(p, &x, &hs[l], &mut pre);
                        let d = p.d_out;
                        let sig_rows = (p.gates() - 1) * d;
                        for &v in &pre[..sig_rows] {
                            ranges[l].gate = ranges[l].gate.max(v.abs());
                        }
                        for &v in &pre[sig_rows..] {
                            ranges[l].cand = ranges[l].cand.max(v.abs());
                        }
                        let s = StateVec { h: std::mem::take(&mut hs[l]), c: None };
                        hs[l] = p.step(&x, &s).map(|s| s.h).unwrap_or_else(|_| s.h);
                        x.clone_from(&hs[l]);
                    }
                }
            }
            ranges
        })
        .collect();
    let mut out = vec![PreactRange::default(); nl];
    for r in per_window {
        for (o, v) in out.iter_mut().zip(r) {
            o.gate = o.gate.max(v.gate);
            o.cand = o.cand.max(v.cand);
        }
    }
    out
}

/// Real pre-activations of a GRU/MGU step, gate rows first, candidate last.
fn preactivations(p: &CellParams, x: &[f64], h: &[f64], pre: &mut Vec<f64>) {
    let d = p.d_out;
    let g = p.gates();
    let sig_rows = (g - 1) * d;
    pre.clear();
    for row in 0..sig_rows {
        pre.push(p.b[row] + dot(&p.w[row * p.d_in..(row + 1) * p.d_in], x) + dot(&p.u[row * d..(row + 1) * d], h));
    }
    for i in 0..d {
        let row = sig_rows + i;
        let reset = sigmoid(if p.kind == CellKind::Gru { pre[d + i] } else { pre[i] });
        let wx = dot(&p.w[row * p.d_in..(row + 1) * p.d_in], x);
        let uh = dot(&p.u[row * d..(row + 1) * d], h);
        pre.push(match p.candidate_bias {
            CandidateBias::Gated => wx + reset * (uh + p.b[row]),
            CandidateBias::Ungated => wx + p.b[row] + reset * uh,
        });
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn lut_scale(max_abs: f64, in_bits: u32) -> f64 {
    max_abs.clamp(LUT_RANGE_FLOOR, LUT_RANGE_CAP) / (1i64 << (in_bits - 1)) as f64
}

/// Freezes weights, biases and LUTs of a trained GRU or MGU encoder.
pub fn quantize_model(model: &EncoderModel, scheme: &QuantScheme, calib: &[TensorizedWindow]) -> Result<QuantizedModel> {
    scheme.validate()?;
    model.validate()?;
    if calib.is_empty() {
        return Err(Error::Config("quantization needs at least one calibration window".into()));
    }
    if let Some(l) = model.layers.iter().find(|l| !matches!(l.kind, CellKind::Gru | CellKind::Mgu)) {
        return Err(Error::Config(format!("integer kernels cover gru and mgu layers only, got {}", l.kind.name())));
    }
    let ranges = calibrate(model, calib);
    let h_scale = 1.0 / state_levels(scheme.act_bits) as f64;
    let mut warnings = Vec::new();
    let mut layers = Vec::with_capacity(model.layers.len());
    for (i, (p, range)) in model.layers.iter().zip(&ranges).enumerate() {
        let (w, w_scale) = quantize_block(&p.w, scheme, &format!("layer {i} input block"), &mut warnings);
        let (u, u_scale) = quantize_block(&p.u, scheme, &format!("layer {i} recurrent block"), &mut warnings);
        let x_scale = if i == 0 { 1.0 / INPUT_LEVELS as f64 } else { h_scale };
        let sig_in = lut_scale(range.gate, scheme.lut_in_bits);
        let tanh_in = lut_scale(range.cand, scheme.lut_in_bits);
        let d = p.d_out;
        let sig_rows = (p.gates() - 1) * d;
        layers.push(QuantizedLayer {
            kind: p.kind,
            candidate_bias: p.candidate_bias,
            d_in: p.d_in,
            d_out: d,
            w,
            u,
            w_scale,
            u_scale,
            x_scale,
            h_scale,
            mult: Multipliers {
                x_gate: fixed(w_scale * x_scale / sig_in),
                h_gate: fixed(u_scale * h_scale / sig_in),
                x_cand: fixed(w_scale * x_scale / tanh_in),
                h_cand: fixed(u_scale * h_scale / tanh_in),
            },
            bias_gate: p.b[..sig_rows].iter().map(|&b| fixed(b / sig_in)).collect(),
            bias_cand: p.b[sig_rows..].iter().map(|&b| fixed(b / tanh_in)).collect(),
            sigmoid: build_activation_lut(
                Activation::Sigmoid,
                scheme.lut_in_bits,
                scheme.act_bits,
                sig_in,
                Activation::Sigmoid.default_out_scale(scheme.act_bits),
            ),
            tanh: build_activation_lut(Activation::Tanh, scheme.lut_in_bits, scheme.act_bits, tanh_in, h_scale),
        });
    }
    Ok(QuantizedModel { scheme: *scheme, layers, warnings })
}

impl QuantizedModel {
    pub fn channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.d_out)
    }

    /// State codes one pixel carries across all layers.
    pub fn state_width(&self) -> usize {
        self.layers.iter().map(|l| l.d_out).sum()
    }

    pub fn output_offset(&self) -> usize {
        self.state_width() - self.channels()
    }

    pub fn state_scale(&self) -> f64 {
        1.0 / state_levels(self.scheme.act_bits) as f64
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        if self.layers.is_empty() {
            return Err(Error::dim("quantized model has no layers"));
        }
        let mut d_in = 2;
        for (i, l) in self.layers.iter().enumerate() {
            let rows = l.block_height();
            if l.d_in != d_in
                || l.w.len() != rows * l.d_in
                || l.u.len() != rows * l.d_out
                || l.bias_gate.len() != rows - l.d_out
                || l.bias_cand.len() != l.d_out
            {
                return Err(Error::dim(format!("quantized layer {i} has inconsistent shapes")));
            }
            if !matches!(l.kind, CellKind::Gru | CellKind::Mgu) {
                return Err(Error::format(format!("quantized layer {i} has unsupported kind {}", l.kind.name())));
            }
            for lut in [&l.sigmoid, &l.tanh] {
                if lut.table.len() != 1usize << lut.in_bits {
                    return Err(Error::dim(format!("quantized layer {i} has a truncated LUT")));
                }
            }
            d_in = l.d_out;
        }
        Ok(())
    }

    /// Layer-0 input codes: `round(t * 65535)` and `±65535`.
    pub fn input_codes(u: &[f64; 2]) -> [i32; 2] {
        let t = (u[0] * INPUT_LEVELS as f64).round() as i32;
        let p = if u[1] < 0.0 { -INPUT_LEVELS } else { INPUT_LEVELS };
        [t.clamp(0, INPUT_LEVELS), p]
    }

    /// Applies one input to a pixel's packed state codes (layer 0 first).
    pub fn step_pixel(&self, u: &[f64; 2], state: &mut [i32], scratch: &mut Vec<i32>) -> Result<()> {
        let codes = Self::input_codes(u);
        scratch.clear();
        scratch.extend_from_slice(&codes);
        let mut off = 0;
        for (i, l) in self.layers.iter().enumerate() {
            let d = l.d_out;
            let mut next = vec![0; d];
            l.step_into(scratch, &state[off..off + d], &mut next, i)?;
            state[off..off + d].copy_from_slice(&next);
            scratch.clear();
            scratch.extend_from_slice(&next);
            off += d;
        }
        Ok(())
    }

    /// Integer counterpart of `EncoderModel::encode_window`.
    pub fn encode_window(&self, tw: &TensorizedWindow) -> Result<QuantRepresentation> {
        let c = self.channels();
        let sw = self.state_width();
        let off = self.output_offset();
        let mut codes = vec![0; tw.pixels() * c];
        codes.par_chunks_mut(c).enumerate().try_for_each_init(
            || (vec![0; sw], Vec::new()),
            |(state, scratch), (w, out)| -> Result<()> {
                if !tw.is_valid(0, w) {
                    return Ok(());
                }
                state.fill(0);
                for u in tw.column(w) {
                    self.step_pixel(&u, state, scratch)?;
                }
                out.copy_from_slice(&state[off..]);
                Ok(())
            },
        )?;
        Ok(QuantRepresentation { width: tw.width, height: tw.height, channels: c, scale: self.state_scale(), codes })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rnn_core::{gru_step, mgu_step};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn calib_window() -> TensorizedWindow {
        TensorizedWindow { width: 2, height: 1, z: 2, values: vec![[0.2, 1.0], [0.5, -1.0], [0.7, -1.0], [0.0, 0.0]], mask: vec![1, 1, 1, 0] }
    }

    fn single_layer(p: CellParams, bits: u32) -> QuantizedModel {
        let enc = EncoderModel::new(vec![p]).unwrap();
        quantize_model(&enc, &QuantScheme::new(bits, bits), &[calib_window()]).unwrap()
    }

    #[test]
    fn symmetric_max_abs_example() {
        let s = symmetric_scale(1.0, 8);
        assert_eq!(s, 1.0 / 127.0);
        assert_eq!(quantize_value(-1.0, s, 8), -127);
        assert_eq!(quantize_value(0.5, s, 8), 64);
    }

    #[test]
    fn on_grid_weights_are_exact() {
        let mut p = CellParams::zeros(CellKind::Gru, 2, 2);
        let mut codes: Vec<i32> = (0..p.w.len() as i32).map(|i| (i * 29 % 255) - 127).collect();
        codes[0] = 127;
        let max = 127.0;
        for (v, &c) in p.w.iter_mut().zip(&codes) {
            *v = c as f64 * 0.75 / max;
        }
        let q = single_layer(p, 8);
        let l = &q.layers[0];
        assert_eq!(l.w, codes);
    }

    #[test]
    fn combined_block_heights() {
        let gru = EncoderModel::random(CellKind::Gru, &[12], CandidateBias::Gated, 1).unwrap();
        let q = quantize_model(&gru, &QuantScheme::new(8, 8), &[calib_window()]).unwrap();
        assert_eq!(q.layers[0].block_height(), 36);
        assert_eq!(q.layers[0].w.len(), 36 * 2);
        let mgu = EncoderModel::random(CellKind::Mgu, &[12], CandidateBias::Gated, 1).unwrap();
        let q = quantize_model(&mgu, &QuantScheme::new(8, 8), &[calib_window()]).unwrap();
        assert_eq!(q.layers[0].block_height(), 24);
    }

    #[test]
    fn rejects_lstm_and_bad_bits() {
        let lstm = EncoderModel::random(CellKind::Lstm, &[4], CandidateBias::Gated, 1).unwrap();
        assert!(quantize_model(&lstm, &QuantScheme::new(8, 8), &[calib_window()]).is_err());
        let gru = EncoderModel::random(CellKind::Gru, &[4], CandidateBias::Gated, 1).unwrap();
        assert!(quantize_model(&gru, &QuantScheme::new(1, 8), &[calib_window()]).is_err());
        assert!(quantize_model(&gru, &QuantScheme::new(8, 8), &[]).is_err());
    }

    #[test]
    fn zero_params_halve_the_state() {
        for kind in [CellKind::Gru, CellKind::Mgu] {
            let q = single_layer(CellParams::zeros(kind, 2, 1), 8);
            assert!(!q.warnings.is_empty());
            let h = quantize_value(0.8, 1.0 / 127.0, 8);
            let expect = quantize_value(0.4, 1.0 / 127.0, 8);
            let out = q.layers[0].step(&[1000, 65535], &[h]).unwrap();
            assert!((out[0] - expect).abs() <= 1, "{kind:?}: {} vs {expect}", out[0]);
            assert_eq!(q.layers[0].step(&[0, 0], &[0]).unwrap(), vec![0]);
            assert_eq!(q.layers[0].step(&[1000, 65535], &[h]).unwrap(), out);
        }
    }

    #[test]
    fn kernel_kind_is_checked() {
        let q = single_layer(CellParams::zeros(CellKind::Gru, 2, 1), 8);
        assert!(q_gru_step(&q.layers[0], &[0, 0], &[0]).is_ok());
        assert!(q_mgu_step(&q.layers[0], &[0, 0], &[0]).is_err());
    }

    #[test]
    fn tied_gru_matches_mgu() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let d = 3;
            let mgu = CellParams::random(CellKind::Mgu, 2, d, &mut rng);
            let mut gru = CellParams::zeros(CellKind::Gru, 2, d);
            // z and r both take the MGU forget weights
            for (dst, src) in [(0, 0), (1, 0), (2, 1)] {
                gru.w[dst * d * 2..(dst + 1) * d * 2].copy_from_slice(mgu.w_gate(src));
                gru.u[dst * d * d..(dst + 1) * d * d].copy_from_slice(mgu.u_gate(src));
                gru.b[dst * d..(dst + 1) * d].copy_from_slice(mgu.b_gate(src));
            }
            let qg = single_layer(gru, 8);
            let qm = single_layer(mgu, 8);
            let x = [rng.gen_range(0..65536), if rng.gen_bool(0.5) { 65535 } else { -65535 }];
            let h: Vec<i32> = (0..d).map(|_| rng.gen_range(-127..=127)).collect();
            let a = q_gru_step(&qg.layers[0], &x, &h).unwrap();
            let b = q_mgu_step(&qm.layers[0], &x, &h).unwrap();
            for (p, q) in a.iter().zip(&b) {
                assert!((p - q).abs() <= 2);
            }
        }
    }

    #[test]
    fn integer_step_tracks_float_step() {
        // error budget: input, gate and candidate requantization plus the final rounding
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [CellKind::Gru, CellKind::Mgu] {
            for _ in 0..50 {
                let p = CellParams::random(kind, 2, 3, &mut rng);
                let q = single_layer(p.clone(), 8);
                let l = &q.layers[0];
                let x = [rng.gen_range(0..65536), 65535];
                let h: Vec<i32> = (0..3).map(|_| rng.gen_range(-127..=127)).collect();
                let xf = [x[0] as f64 / 65535.0, 1.0];
                let hf: Vec<f64> = h.iter().map(|&c| c as f64 * l.h_scale).collect();
                let float = if kind == CellKind::Gru { gru_step(&p, &xf, &StateVec { h: hf, c: None }) } else { mgu_step(&p, &xf, &StateVec { h: hf, c: None }) }
                    .unwrap();
                let int = l.step(&x, &h).unwrap();
                for (a, b) in int.iter().zip(&float.h) {
                    assert!((*a as f64 * l.h_scale - b).abs() <= 6.0 * l.h_scale, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn dequantize_examples() {
        let q = QuantRepresentation { width: 1, height: 1, channels: 3, scale: 1.0 / 127.0, codes: vec![0, 127, -5] };
        let r = dequantize_representation(&q);
        assert_eq!(r.data[0], 0.0);
        assert_eq!(r.data[1], 1.0);
        for (c, v) in q.codes.iter().zip(&r.data) {
            assert_eq!(quantize_value(*v, q.scale, 8), *c);
        }
    }

    #[test]
    fn window_encoding_matches_per_pixel_steps() {
        let enc = EncoderModel::random(CellKind::Gru, &[4, 3], CandidateBias::Gated, 4).unwrap();
        let tw = calib_window();
        let q = quantize_model(&enc, &QuantScheme::new(6, 6), std::slice::from_ref(&tw)).unwrap();
        let rep = q.encode_window(&tw).unwrap();
        let mut scratch = Vec::new();
        for w in 0..2 {
            let mut state = vec![0; q.state_width()];
            for u in tw.column(w) {
                q.step_pixel(&u, &mut state, &mut scratch).unwrap();
            }
            assert_eq!(&rep.codes[w * 3..(w + 1) * 3], &state[4..]);
        }
        let empty = TensorizedWindow { width: 2, height: 1, z: 1, values: vec![[0.0; 2]; 2], mask: vec![0, 0] };
        assert_eq!(q.encode_window(&empty).unwrap().codes, vec![0; 6]);
    }
}
