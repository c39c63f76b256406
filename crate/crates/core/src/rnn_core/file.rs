//! Float model container.
//!
//! ```text
//! b"SSER" | u8 version = 1 | u8 reserved = 0 | u16 encoder layers | u16 decoder layers
//! per layer:
//!     u8 kind (0 rnn, 1 lstm, 2 gru, 3 mgu) | u8 candidate bias (0 gated, 1 ungated)
//!     u32 d_in | u32 d_out
//!     f32 W[gates*d_out*d_in] | f32 U[gates*d_out*d_out] | f32 b[gates*d_out]
//! if decoder layers > 0:
//!     head_out: u32 rows | u32 cols | f32 w[rows*cols] | f32 b[rows]
//!     head_in:  same layout
//! ```
//!
//! All integers and floats little-endian, matrices row-major. Weights are
//! stored as f32, so a saved f64 model reloads rounded to f32 precision.

use std::io::{Read, Write};

use super::cell::{CandidateBias, CellKind, CellParams};
use super::model::{Autoencoder, DecoderModel, EncoderModel, Linear};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"SSER";
pub const MODEL_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub encoder: EncoderModel,
    pub decoder: Option<DecoderModel>,
}

impl ModelFile {
    pub fn into_autoencoder(self) -> Result<Autoencoder> {
        let decoder = self.decoder.ok_or_else(|| Error::format("model file has no decoder"))?;
        Autoencoder::new(self.encoder, decoder)
    }
}

impl From<Autoencoder> for ModelFile {
    fn from(a: Autoencoder) -> Self {
        Self { encoder: a.encoder, decoder: Some(a.decoder) }
    }
}

pub fn write_model<W: Write>(model: &ModelFile, sink: W) -> Result<()> {
    let mut w = std::io::BufWriter::new(sink);
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&[MODEL_VERSION, 0])?;
    let dec_layers = model.decoder.as_ref().map_or(0, |d| d.layers.len());
    w.write_all(&(model.encoder.layers.len() as u16).to_le_bytes())?;
    w.write_all(&(dec_layers as u16).to_le_bytes())?;
    for l in model.encoder.layers.iter().chain(model.decoder.iter().flat_map(|d| &d.layers)) {
        write_layer(&mut w, l)?;
    }
    if let Some(d) = &model.decoder {
        if dec_layers == 0 {
            return Err(Error::format("decoder without recurrent layers cannot be stored"));
        }
        write_linear(&mut w, &d.head_out)?;
        write_linear(&mut w, &d.head_in)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_model<R: Read>(source: R) -> Result<ModelFile> {
    let mut r = Reader::new(source);
    let magic = r.bytes::<4>()?;
    if &magic != MODEL_MAGIC {
        return Err(Error::format("bad magic, expected SSER"));
    }
    let [version, _] = r.bytes::<2>()?;
    if version != MODEL_VERSION {
        return Err(Error::format(format!("unsupported float model version {version}")));
    }
    let n_enc = r.u16()? as usize;
    let n_dec = r.u16()? as usize;
    let enc = (0..n_enc).map(|_| read_layer(&mut r)).collect::<Result<Vec<_>>>()?;
    let encoder = EncoderModel::new(enc)?;
    let decoder = if n_dec > 0 {
        let layers = (0..n_dec).map(|_| read_layer(&mut r)).collect::<Result<Vec<_>>>()?;
        let head_out = read_linear(&mut r)?;
        let head_in = read_linear(&mut r)?;
        let d = DecoderModel { layers, head_out, head_in };
        d.validate(encoder.channels())?;
        Some(d)
    } else {
        None
    };
    r.expect_eof()?;
    Ok(ModelFile { encoder, decoder })
}

fn write_f32s<W: Write>(w: &mut W, v: &[f64]) -> Result<()> {
    for x in v {
        w.write_all(&(*x as f32).to_le_bytes())?;
    }
    Ok(())
}

fn write_layer<W: Write>(w: &mut W, l: &CellParams) -> Result<()> {
    let cb = match l.candidate_bias {
        CandidateBias::Gated => 0u8,
        CandidateBias::Ungated => 1,
    };
    w.write_all(&[l.kind.id(), cb])?;
    w.write_all(&(l.d_in as u32).to_le_bytes())?;
    w.write_all(&(l.d_out as u32).to_le_bytes())?;
    write_f32s(w, &l.w)?;
    write_f32s(w, &l.u)?;
    write_f32s(w, &l.b)
}

fn write_linear<W: Write>(w: &mut W, l: &Linear) -> Result<()> {
    w.write_all(&(l.rows as u32).to_le_bytes())?;
    w.write_all(&(l.cols as u32).to_le_bytes())?;
    write_f32s(w, &l.w)?;
    write_f32s(w, &l.b)
}

fn read_layer<R: Read>(r: &mut Reader<R>) -> Result<CellParams> {
    let [kind, cb] = r.bytes::<2>()?;
    let kind = CellKind::from_id(kind).ok_or_else(|| Error::format(format!("unknown cell kind id {kind}")))?;
    let candidate_bias = match cb {
        0 => CandidateBias::Gated,
        1 => CandidateBias::Ungated,
        _ => return Err(Error::format(format!("unknown candidate bias id {cb}"))),
    };
    let d_in = r.dim()?;
    let d_out = r.dim()?;
    let g = kind.gates();
    let w = r.f32s(g * d_out * d_in)?;
    let u = r.f32s(g * d_out * d_out)?;
    let b = r.f32s(g * d_out)?;
    let p = CellParams { kind, d_in, d_out, candidate_bias, w, u, b };
    p.validate()?;
    Ok(p)
}

fn read_linear<R: Read>(r: &mut Reader<R>) -> Result<Linear> {
    let rows = r.dim()?;
    let cols = r.dim()?;
    Ok(Linear { rows, cols, w: r.f32s(rows * cols)?, b: r.f32s(rows)? })
}

/// Little-endian reader that tracks its offset for error messages.
pub(crate) struct Reader<R> {
    inner: R,
    pub offset: u64,
}

impl<R: Read> Reader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    pub fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::format(format!("unexpected end of file at byte {}", self.offset)),
            _ => Error::Io(e),
        })?;
        self.offset += N as u64;
        Ok(buf)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    pub fn i16(&mut self) -> Result<i16> {
        Ok(i16::from_le_bytes(self.bytes()?))
    }

    pub fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.bytes()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    /// A u32 dimension, bounded so a corrupt header cannot request huge buffers.
    pub fn dim(&mut self) -> Result<usize> {
        let d = self.u32()?;
        if d == 0 || d > 1 << 16 {
            return Err(Error::format(format!("implausible dimension {d} at byte {}", self.offset - 4)));
        }
        Ok(d as usize)
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| Ok(f32::from_le_bytes(self.bytes()?) as f64)).collect()
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn expect_eof(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b)? {
            0 => Ok(()),
            _ => Err(Error::format(format!("trailing data at byte {}", self.offset))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn round_f32(mut a: Autoencoder) -> Autoencoder {
        for t in a.tensors_mut() {
            for v in t.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
        a
    }

    proptest! {
        #[test]
        fn model_round_trip(
            seed in any::<u64>(),
            kind in prop::sample::select(vec![CellKind::Rnn, CellKind::Lstm, CellKind::Gru, CellKind::Mgu]),
            dims in prop::collection::vec(1usize..6, 1..4),
            ungated in any::<bool>(),
        ) {
            let cb = if ungated { CandidateBias::Ungated } else { CandidateBias::Gated };
            let a = round_f32(Autoencoder::random(kind, &dims, 3, cb, seed).unwrap());
            let mut buf = Vec::new();
            write_model(&a.clone().into(), &mut buf).unwrap();
            let back = read_model(&buf[..]).unwrap().into_autoencoder().unwrap();
            prop_assert_eq!(back, a);
        }
    }

    #[test]
    fn encoder_only_and_corruption() {
        let a = Autoencoder::random(CellKind::Gru, &[4, 4], 3, CandidateBias::Gated, 1).unwrap();
        let mf = ModelFile { encoder: a.encoder.clone(), decoder: None };
        let mut buf = Vec::new();
        write_model(&mf, &mut buf).unwrap();
        let back = read_model(&buf[..]).unwrap();
        assert!(back.decoder.is_none());
        assert!(back.into_autoencoder().is_err());

        assert!(read_model(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[3] = b'X';
        assert!(read_model(&bad[..]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_model(&extra[..]).is_err());
    }
}
