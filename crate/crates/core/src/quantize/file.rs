//! Quantized model container, the float layout's sibling with version 2.
//!
//! ```text
//! b"SSER" | u8 version = 2 | u8 reserved = 0 | u16 layers
//! scheme: u8 weight_bits | u8 act_bits | u8 input_bits (16) | u8 lut_in_bits
//!         u8 rounding (0 = half away from zero) | u8 scale mode (0 arbitrary, 1 power of two)
//!         u8 requant shift
//! per layer:
//!     u8 kind (2 gru, 3 mgu) | u8 candidate bias | u32 d_in | u32 d_out
//!     f64 w_scale | f64 u_scale | f64 x_scale | f64 h_scale
//!     i64 mult x_gate | h_gate | x_cand | h_cand
//!     i16 W[gates*d_out*d_in] | i16 U[gates*d_out*d_out]
//!     i64 bias_gate[(gates-1)*d_out] | i64 bias_cand[d_out]
//!     two LUTs (sigmoid, tanh), each:
//!         u8 function | u8 in_bits | u8 out_bits | f64 in_scale | f64 out_scale
//!         u32 entries | i16 table[entries]
//! ```

use std::io::{Read, Write};

use super::kernel::{Multipliers, QuantizedLayer, REQUANT_SHIFT};
use super::lut::{Activation, ActivationLUT};
use super::{QuantScheme, QuantizedModel, ScaleMode, INPUT_BITS};
use crate::error::{Error, Result};
use crate::rnn_core::{CandidateBias, CellKind, MODEL_MAGIC};

pub const QUANT_VERSION: u8 = 2;

pub fn write_quantized_model<W: Write>(model: &QuantizedModel, sink: W) -> Result<()> {
    model.validate()?;
    let mut w = std::io::BufWriter::new(sink);
    let s = &model.scheme;
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&[QUANT_VERSION, 0])?;
    w.write_all(&(model.layers.len() as u16).to_le_bytes())?;
    let mode = match s.scale_mode {
        ScaleMode::Arbitrary => 0,
        ScaleMode::PowerOfTwo => 1,
    };
    w.write_all(&[s.weight_bits as u8, s.act_bits as u8, INPUT_BITS as u8, s.lut_in_bits as u8, 0, mode, REQUANT_SHIFT as u8])?;
    for l in &model.layers {
        let cb = match l.candidate_bias {
            CandidateBias::Gated => 0,
            CandidateBias::Ungated => 1,
        };
        w.write_all(&[l.kind.id(), cb])?;
        w.write_all(&(l.d_in as u32).to_le_bytes())?;
        w.write_all(&(l.d_out as u32).to_le_bytes())?;
        for v in [l.w_scale, l.u_scale, l.x_scale, l.h_scale] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in [l.mult.x_gate, l.mult.h_gate, l.mult.x_cand, l.mult.h_cand] {
            w.write_all(&v.to_le_bytes())?;
        }
        for &v in l.w.iter().chain(&l.u) {
            w.write_all(&(v as i16).to_le_bytes())?;
        }
        for v in l.bias_gate.iter().chain(&l.bias_cand) {
            w.write_all(&v.to_le_bytes())?;
        }
        for lut in [&l.sigmoid, &l.tanh] {
            w.write_all(&[lut.func.id(), lut.in_bits as u8, lut.out_bits as u8])?;
            w.write_all(&lut.in_scale.to_le_bytes())?;
            w.write_all(&lut.out_scale.to_le_bytes())?;
            w.write_all(&(lut.table.len() as u32).to_le_bytes())?;
            for &v in &lut.table {
                w.write_all(&(v as i16).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_quantized_model<R: Read>(source: R) -> Result<QuantizedModel> {
    let mut r = crate::rnn_core::file_reader(source);
    if &r.bytes::<4>()? != MODEL_MAGIC {
        return Err(Error::format("bad magic, expected SSER"));
    }
    let version = r.u8()?;
    if version != QUANT_VERSION {
        return Err(Error::format(format!("expected quantized model version {QUANT_VERSION}, found {version}")));
    }
    r.u8()?;
    let n = r.u16()? as usize;
    let [wb, ab, ib, lb, rounding, mode, shift] = r.bytes::<7>()?;
    if ib as u32 != INPUT_BITS || rounding != 0 || shift as u32 != REQUANT_SHIFT {
        return Err(Error::format("unsupported input width, rounding mode or requant shift"));
    }
    let scale_mode = match mode {
        0 => ScaleMode::Arbitrary,
        1 => ScaleMode::PowerOfTwo,
        m => return Err(Error::format(format!("unknown scale mode {m}"))),
    };
    let scheme = QuantScheme { weight_bits: wb as u32, act_bits: ab as u32, lut_in_bits: lb as u32, scale_mode };
    scheme.validate().map_err(|e| Error::format(e.to_string()))?;
    let mut layers = Vec::with_capacity(n);
    for i in 0..n {
        let kind = CellKind::from_id(r.u8()?).filter(|k| matches!(k, CellKind::Gru | CellKind::Mgu));
        let kind = kind.ok_or_else(|| Error::format(format!("layer {i}: not a gru/mgu layer")))?;
        let candidate_bias = match r.u8()? {
            0 => CandidateBias::Gated,
            1 => CandidateBias::Ungated,
            b => return Err(Error::format(format!("layer {i}: unknown candidate bias {b}"))),
        };
        let d_in = r.dim()?;
        let d_out = r.dim()?;
        let [w_scale, u_scale, x_scale, h_scale] = [r.f64()?, r.f64()?, r.f64()?, r.f64()?];
        let mult = Multipliers { x_gate: r.i64()?, h_gate: r.i64()?, x_cand: r.i64()?, h_cand: r.i64()? };
        let rows = kind.gates() * d_out;
        let w = (0..rows * d_in).map(|_| Ok(r.i16()? as i32)).collect::<Result<_>>()?;
        let u = (0..rows * d_out).map(|_| Ok(r.i16()? as i32)).collect::<Result<_>>()?;
        let bias_gate = (0..rows - d_out).map(|_| r.i64()).collect::<Result<_>>()?;
        let bias_cand = (0..d_out).map(|_| r.i64()).collect::<Result<_>>()?;
        let mut luts = Vec::with_capacity(2);
        for expect in [Activation::Sigmoid, Activation::Tanh] {
            let func = Activation::from_id(r.u8()?).filter(|f| *f == expect);
            let func = func.ok_or_else(|| Error::format(format!("layer {i}: LUT function out of order")))?;
            let in_bits = r.u8()? as u32;
            let out_bits = r.u8()? as u32;
            if !(4..=16).contains(&in_bits) || !(2..=12).contains(&out_bits) {
                return Err(Error::format(format!("layer {i}: bad LUT widths")));
            }
            let in_scale = r.f64()?;
            let out_scale = r.f64()?;
            let entries = r.u32()? as usize;
            if entries != 1 << in_bits {
                return Err(Error::format(format!("layer {i}: LUT has {entries} entries for {in_bits} input bits")));
            }
            let table = (0..entries).map(|_| Ok(r.i16()? as i32)).collect::<Result<_>>()?;
            luts.push(ActivationLUT { func, in_bits, out_bits, in_scale, out_scale, table });
        }
        let tanh = luts.pop().expect("two tables");
        let sigmoid = luts.pop().expect("two tables");
        layers.push(QuantizedLayer {
            kind,
            candidate_bias,
            d_in,
            d_out,
            w,
            u,
            w_scale,
            u_scale,
            x_scale,
            h_scale,
            mult,
            bias_gate,
            bias_cand,
            sigmoid,
            tanh,
        });
    }
    r.expect_eof()?;
    let model = QuantizedModel { scheme, layers, warnings: Vec::new() };
    model.validate().map_err(|e| Error::format(e.to_string()))?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_io::TensorizedWindow;
    use crate::quantize::quantize_model;
    use crate::rnn_core::EncoderModel;

    #[test]
    fn round_trip_and_corruption() {
        let tw = TensorizedWindow { width: 1, height: 1, z: 2, values: vec![[0.3, 1.0], [0.6, -1.0]], mask: vec![1, 1] };
        for kind in [CellKind::Gru, CellKind::Mgu] {
            for bits in [2, 8, 12] {
                let enc = EncoderModel::random(kind, &[5, 3], CandidateBias::Gated, bits as u64).unwrap();
                let q = quantize_model(&enc, &QuantScheme::new(bits, bits), std::slice::from_ref(&tw)).unwrap();
                let mut buf = Vec::new();
                write_quantized_model(&q, &mut buf).unwrap();
                let back = read_quantized_model(&buf[..]).unwrap();
                assert_eq!(back.layers, q.layers);
                assert_eq!(back.scheme, q.scheme);
                assert!(read_quantized_model(&buf[..buf.len() - 1]).is_err());
                let mut extra = buf.clone();
                extra.push(0);
                assert!(read_quantized_model(&extra[..]).is_err());
                let mut v1 = buf.clone();
                v1[4] = 1;
                assert!(read_quantized_model(&v1[..]).is_err());
            }
        }
    }
}
