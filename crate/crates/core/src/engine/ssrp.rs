//! Representation file.
//!
//! ```text
//! b"SSRP" | u8 version = 1 | u8 mode (0 f32, 1 i8, 2 i16) | u16 W | u16 H | u32 C
//! f64 scale (1.0 for f32 payloads; value = code * scale otherwise)
//! payload: W * H * C values, row-major (y, x), channel last, little-endian
//! ```

use std::io::{Read, Write};

use super::Emission;
use crate::error::{Error, Result};
use crate::rnn_core::Representation;

pub const SSRP_MAGIC: &[u8; 4] = b"SSRP";
const SSRP_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    I8(Vec<i8>),
    I16(Vec<i16>),
}

impl Payload {
    fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::I8(v) => v.len(),
            Payload::I16(v) => v.len(),
        }
    }

    fn mode(&self) -> u8 {
        match self {
            Payload::F32(_) => 0,
            Payload::I8(_) => 1,
            Payload::I16(_) => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationFile {
    pub width: u16,
    pub height: u16,
    pub channels: usize,
    pub scale: f64,
    pub payload: Payload,
}

impl RepresentationFile {
    pub fn from_emission(e: &Emission) -> Result<Self> {
        Ok(match e {
            Emission::Float(r) => Self {
                width: r.width,
                height: r.height,
                channels: r.channels,
                scale: 1.0,
                payload: Payload::F32(r.data.iter().map(|&v| v as f32).collect()),
            },
            Emission::Quantized(q) => {
                let max = q.codes.iter().map(|c| c.unsigned_abs()).max().unwrap_or(0);
                let levels = (1.0 / q.scale).round();
                let payload = if levels <= i8::MAX as f64 && max <= i8::MAX as u32 {
                    Payload::I8(q.codes.iter().map(|&c| c as i8).collect())
                } else if max <= i16::MAX as u32 {
                    Payload::I16(q.codes.iter().map(|&c| c as i16).collect())
                } else {
                    return Err(Error::format("state codes exceed 16 bits"));
                };
                Self { width: q.width, height: q.height, channels: q.channels, scale: q.scale, payload }
            }
        })
    }

    pub fn to_real(&self) -> Representation {
        let data = match &self.payload {
            Payload::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Payload::I8(v) => v.iter().map(|&x| x as f64 * self.scale).collect(),
            Payload::I16(v) => v.iter().map(|&x| x as f64 * self.scale).collect(),
        };
        Representation { width: self.width, height: self.height, channels: self.channels, data }
    }
}

pub fn write_representation<W: Write>(file: &RepresentationFile, sink: W) -> Result<()> {
    let n = file.width as usize * file.height as usize * file.channels;
    if file.payload.len() != n {
        return Err(Error::dim(format!("payload has {} values, header implies {n}", file.payload.len())));
    }
    let mut w = std::io::BufWriter::new(sink);
    w.write_all(SSRP_MAGIC)?;
    w.write_all(&[SSRP_VERSION, file.payload.mode()])?;
    w.write_all(&file.width.to_le_bytes())?;
    w.write_all(&file.height.to_le_bytes())?;
    w.write_all(&(file.channels as u32).to_le_bytes())?;
    w.write_all(&file.scale.to_le_bytes())?;
    match &file.payload {
        Payload::F32(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
        Payload::I8(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
        Payload::I16(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
    }
    w.flush()?;
    Ok(())
}

pub fn read_representation<R: Read>(source: R) -> Result<RepresentationFile> {
    let mut r = crate::rnn_core::file_reader(source);
    if &r.bytes::<4>()? != SSRP_MAGIC {
        return Err(Error::format("bad magic, expected SSRP"));
    }
    let version = r.u8()?;
    if version != SSRP_VERSION {
        return Err(Error::format(format!("unsupported SSRP version {version}")));
    }
    let mode = r.u8()?;
    let width = r.u16()?;
    let height = r.u16()?;
    let channels = r.dim()?;
    let scale = r.f64()?;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::format(format!("invalid scale {scale}")));
    }
    let n = width as usize * height as usize * channels;
    let payload = match mode {
        0 => Payload::F32((0..n).map(|_| Ok(f32::from_le_bytes(r.bytes()?))).collect::<Result<_>>()?),
        1 => Payload::I8((0..n).map(|_| Ok(r.u8()? as i8)).collect::<Result<_>>()?),
        2 => Payload::I16((0..n).map(|_| r.i16()).collect::<Result<_>>()?),
        m => return Err(Error::format(format!("unknown payload mode {m}"))),
    };
    r.expect_eof()?;
    Ok(RepresentationFile { width, height, channels, scale, payload })
}
