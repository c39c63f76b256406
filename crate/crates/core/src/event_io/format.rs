//! EVT-bin and CSV event files.
//!
//! EVT-bin layout (all little-endian):
//!
//! ```text
//! header (16 bytes): b"EVT1" | u16 width | u16 height | u64 event count
//! record (13 bytes): u64 t_us | u16 x | u16 y | i8 polarity (-1 / +1)
//! ```
//!
//! CSV: header line `t,x,y,p`, then one decimal-integer event per line.

use std::io::{BufRead, BufReader, Read, Write};

use super::{validate_bounds, Event, EventSequence, Polarity};
use crate::error::{Error, Result};

pub const EVT_MAGIC: &[u8; 4] = b"EVT1";
pub const EVT_HEADER_LEN: usize = 16;
pub const EVT_RECORD_LEN: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    EvtBin,
    Csv,
}

/// Reads an event file. `dims` is required for CSV (which carries no header
/// dimensions) and ignored for EVT-bin.
pub fn read_events<R: Read>(source: R, format: EventFormat, dims: Option<(u16, u16)>) -> Result<EventSequence> {
    match format {
        EventFormat::EvtBin => read_bin(source),
        EventFormat::Csv => {
            let (w, h) = dims.ok_or_else(|| Error::Config("CSV input needs sensor dimensions".into()))?;
            read_csv(source, w, h)
        }
    }
}

pub fn write_events<W: Write>(seq: &EventSequence, sink: W, format: EventFormat) -> Result<()> {
    match format {
        EventFormat::EvtBin => write_bin(seq, sink),
        EventFormat::Csv => write_csv(seq, sink),
    }
}

fn read_bin<R: Read>(source: R) -> Result<EventSequence> {
    let mut r = BufReader::new(source);
    let mut header = [0u8; EVT_HEADER_LEN];
    let got = read_full(&mut r, &mut header)?;
    if got == 0 {
        return Err(Error::Parse { offset: 0, message: "empty EVT-bin file (missing header)".into() });
    }
    if got < EVT_HEADER_LEN {
        return Err(Error::Parse { offset: got as u64, message: "truncated header".into() });
    }
    if &header[0..4] != EVT_MAGIC {
        return Err(Error::Parse { offset: 0, message: "bad magic, expected EVT1".into() });
    }
    let width = u16::from_le_bytes([header[4], header[5]]);
    let height = u16::from_le_bytes([header[6], header[7]]);
    let count = u64::from_le_bytes(header[8..16].try_into().unwrap());
    if width == 0 || height == 0 {
        return Err(Error::Parse { offset: 4, message: format!("zero sensor dimension {width}x{height}") });
    }

    let mut events = Vec::with_capacity(count.min(1 << 24) as usize);
    let mut rec = [0u8; EVT_RECORD_LEN];
    let mut prev_t = 0u64;
    for i in 0..count {
        let offset = EVT_HEADER_LEN as u64 + i * EVT_RECORD_LEN as u64;
        let got = read_full(&mut r, &mut rec)?;
        if got < EVT_RECORD_LEN {
            return Err(Error::Parse {
                offset: offset + got as u64,
                message: format!("truncated record {i} of {count}"),
            });
        }
        let t = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let x = u16::from_le_bytes([rec[8], rec[9]]);
        let y = u16::from_le_bytes([rec[10], rec[11]]);
        let p = Polarity::from_i8(rec[12] as i8).ok_or_else(|| Error::Parse {
            offset: offset + 12,
            message: format!("polarity byte {} is not -1 or +1", rec[12] as i8),
        })?;
        let e = Event { t, x, y, p };
        validate_bounds(&e, width, height, i as usize)?;
        if i > 0 && t < prev_t {
            return Err(Error::Validation {
                index: i as usize,
                message: format!("timestamp {t} precedes previous {prev_t}"),
            });
        }
        prev_t = t;
        events.push(e);
    }
    let mut extra = [0u8; 1];
    if read_full(&mut r, &mut extra)? != 0 {
        let offset = EVT_HEADER_LEN as u64 + count * EVT_RECORD_LEN as u64;
        return Err(Error::Parse { offset, message: "trailing bytes after declared records".into() });
    }
    EventSequence::new(width, height, events)
}

fn write_bin<W: Write>(seq: &EventSequence, sink: W) -> Result<()> {
    let mut w = std::io::BufWriter::new(sink);
    w.write_all(EVT_MAGIC)?;
    w.write_all(&seq.width().to_le_bytes())?;
    w.write_all(&seq.height().to_le_bytes())?;
    w.write_all(&(seq.len() as u64).to_le_bytes())?;
    for e in seq.events() {
        w.write_all(&e.t.to_le_bytes())?;
        w.write_all(&e.x.to_le_bytes())?;
        w.write_all(&e.y.to_le_bytes())?;
        w.write_all(&[e.p.as_i8() as u8])?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<R: Read>(source: R, width: u16, height: u16) -> Result<EventSequence> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(source);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if !headers.is_empty() && headers.iter().collect::<Vec<_>>() != ["t", "x", "y", "p"] {
        return Err(Error::Parse { offset: 0, message: format!("expected header t,x,y,p, got {:?}", headers) });
    }
    let mut events = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let offset = rec.position().map(|p| p.byte()).unwrap_or(0);
        if rec.len() != 4 {
            return Err(Error::Parse { offset, message: format!("expected 4 fields, got {}", rec.len()) });
        }
        let field = |k: usize| -> Result<i64> {
            rec[k].parse::<i64>().map_err(|_| Error::Parse {
                offset,
                message: format!("field {k} {:?} is not an integer", &rec[k]),
            })
        };
        let (t, x, y, p) = (field(0)?, field(1)?, field(2)?, field(3)?);
        if t < 0 {
            return Err(Error::Parse { offset, message: format!("negative timestamp {t}") });
        }
        let p = i8::try_from(p)
            .ok()
            .and_then(Polarity::from_i8)
            .ok_or_else(|| Error::Parse { offset, message: format!("polarity {p} is not -1 or +1") })?;
        if !(0..=u16::MAX as i64).contains(&x) || !(0..=u16::MAX as i64).contains(&y) {
            return Err(Error::Validation { index: i, message: format!("coordinate ({x}, {y}) out of range") });
        }
        events.push(Event { t: t as u64, x: x as u16, y: y as u16, p });
    }
    EventSequence::new(width, height, events)
}

fn write_csv<W: Write>(seq: &EventSequence, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["t", "x", "y", "p"]).map_err(csv_err)?;
    for e in seq.events() {
        w.write_record(&[e.t.to_string(), e.x.to_string(), e.y.to_string(), e.p.as_i8().to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    let offset = e.position().map(|p| p.byte()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { offset, message: format!("{other:?}") },
    }
}

fn read_full<R: BufRead>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(n)
}
