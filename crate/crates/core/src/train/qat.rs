//! Fake quantization for quantization-aware training.

use serde::{Deserialize, Serialize};

use crate::quantize::{gate_levels, state_levels, symmetric_scale, INPUT_LEVELS};
use crate::rnn_core::Autoencoder;

/// Bit widths simulated during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QatConfig {
    pub weight_bits: u32,
    pub act_bits: u32,
}

/// `clamp(round(v / scale), -2^(bits-1), 2^(bits-1) - 1) * scale`
pub fn fake_quant(v: f64, bits: u32, scale: f64) -> f64 {
    let lo = -(1i64 << (bits - 1)) as f64;
    let hi = ((1i64 << (bits - 1)) - 1) as f64;
    (v / scale).round().clamp(lo, hi) * scale
}

/// Straight-through gradient factor: 1 inside the clamp range, 0 outside.
pub fn fake_quant_grad(v: f64, bits: u32, scale: f64) -> f64 {
    let lo = -(1i64 << (bits - 1)) as f64 - 0.5;
    let hi = ((1i64 << (bits - 1)) - 1) as f64 + 0.5;
    let q = v / scale;
    if q >= lo && q <= hi {
        1.0
    } else {
        0.0
    }
}

fn fake_quant_block(block: &mut [f64], bits: u32) {
    let max_abs = block.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = symmetric_scale(max_abs, bits);
    for v in block.iter_mut() {
        *v = fake_quant(*v, bits, scale);
    }
}

/// Copy of `model` whose encoder input and recurrent blocks sit on their
/// per-block symmetric grids (scale refreshed from the current max-abs).
pub fn fake_quant_model(model: &Autoencoder, weight_bits: u32) -> Autoencoder {
    let mut q = model.clone();
    for l in &mut q.encoder.layers {
        fake_quant_block(&mut l.w, weight_bits);
        fake_quant_block(&mut l.u, weight_bits);
    }
    q
}

/// Activation grids of the integer datapath, applied inside the float forward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActFakeQuant {
    gate: f64,
    state: f64,
}

impl ActFakeQuant {
    pub fn new(act_bits: u32) -> Self {
        Self { gate: gate_levels(act_bits) as f64, state: state_levels(act_bits) as f64 }
    }

    /// Sigmoid outputs onto `k / (2^bits - 1)`.
    pub fn gate_slice(&self, v: &mut [f64]) {
        for x in v {
            *x = ((*x * self.gate).round() / self.gate).clamp(0.0, 1.0);
        }
    }

    /// Tanh outputs and hidden states onto `k / (2^(bits-1) - 1)`.
    pub fn state_slice(&self, v: &mut [f64]) {
        for x in v {
            *x = ((*x * self.state).round() / self.state).clamp(-1.0, 1.0);
        }
    }

    /// Normalized timestamps onto the 16-bit input grid.
    pub fn input_time(t: f64) -> f64 {
        (t * INPUT_LEVELS as f64).round() / INPUT_LEVELS as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn on_grid_unchanged() {
        assert_eq!(fake_quant(0.75, 4, 0.25), 0.75);
        assert_eq!(fake_quant(-1.0, 8, 1.0 / 127.0), -1.0);
    }

    #[test]
    fn clamps_to_signed_range() {
        assert_eq!(fake_quant(5.0, 2, 1.0), 1.0);
        assert_eq!(fake_quant(-5.0, 2, 1.0), -2.0);
        assert_eq!(fake_quant_grad(5.0, 2, 1.0), 0.0);
        assert_eq!(fake_quant_grad(0.7, 2, 1.0), 1.0);
    }

    #[test]
    fn zero_stays_zero() {
        for bits in 2..=12 {
            for scale in [1e-3, 0.5, 3.0] {
                assert_eq!(fake_quant(0.0, bits, scale), 0.0);
            }
        }
    }

    #[test]
    fn act_grids() {
        let q = ActFakeQuant::new(8);
        let mut g = [0.5, 1.0, 0.0, 0.31];
        q.gate_slice(&mut g);
        assert_eq!(g, [128.0 / 255.0, 1.0, 0.0, 79.0 / 255.0]);
        let mut s = [0.8, -1.0, 0.999];
        q.state_slice(&mut s);
        assert_eq!(s, [102.0 / 127.0, -1.0, 1.0]);
    }
}
