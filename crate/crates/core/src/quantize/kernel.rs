//! Integer GRU/MGU datapath. All arithmetic is on integers; the only real
//! numbers live in the scales used to build the model.

use crate::error::{Error, Result};
use crate::rnn_core::{CandidateBias, CellKind};

use super::lut::ActivationLUT;

/// Fractional bits of the requantization multipliers and biases.
pub const REQUANT_SHIFT: u32 = 32;

/// Requantization multipliers into the two LUT input grids, as
/// `round(real_multiplier * 2^REQUANT_SHIFT)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Multipliers {
    pub x_gate: i64,
    pub h_gate: i64,
    pub x_cand: i64,
    pub h_cand: i64,
}

/// One quantized recurrent layer in combined-block layout.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub kind: CellKind,
    pub candidate_bias: CandidateBias,
    pub d_in: usize,
    pub d_out: usize,
    /// Input block, `gates * d_out` rows by `d_in` columns.
    pub w: Vec<i32>,
    /// Recurrent block, `gates * d_out` rows by `d_out` columns.
    pub u: Vec<i32>,
    pub w_scale: f64,
    pub u_scale: f64,
    /// Scale of the integer input vector (16-bit grid for layer 0).
    pub x_scale: f64,
    /// Scale of the hidden-state codes.
    pub h_scale: f64,
    pub mult: Multipliers,
    /// Sigmoid-gate biases on the sigmoid LUT input grid, `REQUANT_SHIFT` fractional bits.
    pub bias_gate: Vec<i64>,
    /// Candidate biases on the tanh LUT input grid, `REQUANT_SHIFT` fractional bits.
    pub bias_cand: Vec<i64>,
    pub sigmoid: ActivationLUT,
    pub tanh: ActivationLUT,
}

/// Right shift with rounding half away from zero.
#[inline]
pub fn shift_round(v: i128, shift: u32) -> i64 {
    let half = 1i128 << (shift - 1);
    let m = (v.abs() + half) >> shift;
    (if v < 0 { -m } else { m }) as i64
}

/// Integer division with rounding half away from zero (`den > 0`).
#[inline]
pub fn div_round(num: i64, den: i64) -> i64 {
    let m = (num.abs() + den / 2) / den;
    if num < 0 {
        -m
    } else {
        m
    }
}

impl QuantizedLayer {
    pub fn gates(&self) -> usize {
        self.kind.gates()
    }

    /// Height of the combined multiplier block (`3 d_out` GRU, `2 d_out` MGU).
    pub fn block_height(&self) -> usize {
        self.gates() * self.d_out
    }

    /// Largest gate code `G`; `1.0` is represented by `G`.
    pub fn gate_one(&self) -> i64 {
        self.sigmoid.code_range_hi()
    }

    /// Combined-block integer product `acc = M v` over all gate rows.
    pub fn block_matvec(m: &[i32], v: &[i32], rows: usize, layer: usize) -> Result<Vec<i64>> {
        let cols = v.len();
        let mut out = Vec::with_capacity(rows);
        for row in m.chunks_exact(cols.max(1)).take(rows) {
            let mut acc = 0i64;
            for (a, b) in row.iter().zip(v) {
                acc = acc.checked_add(*a as i64 * *b as i64).ok_or(Error::Overflow { layer })?;
            }
            out.push(acc);
        }
        out.resize(rows, 0);
        Ok(out)
    }

    /// One integer step. `qx` holds `d_in` input codes, `qh` the `d_out`
    /// state codes, both updated into `out`.
    pub fn step_into(&self, qx: &[i32], qh: &[i32], out: &mut [i32], layer: usize) -> Result<()> {
        if qx.len() != self.d_in || qh.len() != self.d_out || out.len() != self.d_out {
            return Err(Error::dim(format!(
                "quantized layer {layer}: expected input {} and state {}, got {} and {}",
                self.d_in,
                self.d_out,
                qx.len(),
                qh.len()
            )));
        }
        let d = self.d_out;
        let rows = self.block_height();
        let acc_x = Self::block_matvec(&self.w, qx, rows, layer)?;
        let acc_h = Self::block_matvec(&self.u, qh, rows, layer)?;
        let sig_rows = rows - d;
        let g_one = self.gate_one();
        let m = self.mult;

        let mut gate = [0i64; 2];
        for i in 0..d {
            // sigmoid gates: update (z or f) at row i, reset (r, GRU only) at row d + i
            for (k, slot) in gate.iter_mut().enumerate().take(sig_rows / d) {
                let r = k * d + i;
                let pre = m.x_gate as i128 * acc_x[r] as i128 + m.h_gate as i128 * acc_h[r] as i128 + self.bias_gate[r] as i128;
                *slot = self.sigmoid.lookup(shift_round(pre, REQUANT_SHIFT)) as i64;
            }
            let update = gate[0];
            let reset = if self.kind == CellKind::Gru { gate[1] } else { gate[0] };

            let r = sig_rows + i;
            let (bias_x, bias_h) = match self.candidate_bias {
                CandidateBias::Gated => (0i128, self.bias_cand[i] as i128),
                CandidateBias::Ungated => (self.bias_cand[i] as i128, 0i128),
            };
            let x_part = shift_round(m.x_cand as i128 * acc_x[r] as i128 + bias_x, REQUANT_SHIFT);
            let h_part = shift_round(m.h_cand as i128 * acc_h[r] as i128 + bias_h, REQUANT_SHIFT);
            let gated = div_round(reset.checked_mul(h_part).ok_or(Error::Overflow { layer })?, g_one);
            let cand = self.tanh.lookup(x_part.saturating_add(gated)) as i64;

            // h' = ((1 - z) h + z h~), with 1 - z realised as G - z
            let h = qh[i] as i64;
            out[i] = div_round((g_one - update) * h + update * cand, g_one) as i32;
        }
        Ok(())
    }

    pub fn step(&self, qx: &[i32], qh: &[i32]) -> Result<Vec<i32>> {
        let mut out = vec![0; self.d_out];
        self.step_into(qx, qh, &mut out, 0)?;
        Ok(out)
    }
}

impl ActivationLUT {
    fn code_range_hi(&self) -> i64 {
        self.func.code_range(self.out_bits).1 as i64
    }
}

fn expect_kind(layer: &QuantizedLayer, kind: CellKind) -> Result<()> {
    if layer.kind != kind {
        return Err(Error::Config(format!("expected a {} layer, got {}", kind.name(), layer.kind.name())));
    }
    Ok(())
}

/// Integer GRU step on state codes.
pub fn q_gru_step(layer: &QuantizedLayer, qx: &[i32], qh: &[i32]) -> Result<Vec<i32>> {
    expect_kind(layer, CellKind::Gru)?;
    layer.step(qx, qh)
}

/// Integer MGU step on state codes.
pub fn q_mgu_step(layer: &QuantizedLayer, qx: &[i32], qh: &[i32]) -> Result<Vec<i32>> {
    expect_kind(layer, CellKind::Mgu)?;
    layer.step(qx, qh)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(shift_round(3 << 31, 32), 2); // 1.5
        assert_eq!(shift_round(-(3 << 31), 32), -2);
        assert_eq!(shift_round(1 << 31, 32), 1); // 0.5
        assert_eq!(shift_round((1 << 31) - 1, 32), 0);
        assert_eq!(div_round(12954, 255), 51);
        assert_eq!(div_round(-12954, 255), -51);
        assert_eq!(div_round(5, 2), 3);
        assert_eq!(div_round(-5, 2), -3);
    }

    #[test]
    fn combined_block_split_equals_separate_gates() {
        let rows = 3 * 4;
        let m: Vec<i32> = (0..rows * 5).map(|i| (i as i32 * 37 % 255) - 127).collect();
        let v: Vec<i32> = (0..5).map(|i| i * 13 - 30).collect();
        let combined = QuantizedLayer::block_matvec(&m, &v, rows, 0).unwrap();
        for g in 0..3 {
            let block = &m[g * 4 * 5..(g + 1) * 4 * 5];
            let sep = QuantizedLayer::block_matvec(block, &v, 4, 0).unwrap();
            assert_eq!(&combined[g * 4..(g + 1) * 4], &sep[..]);
        }
    }
}
