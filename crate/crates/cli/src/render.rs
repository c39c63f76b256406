//! Channel images from a representation: one binary graymap per channel.

use std::io::Write;
use std::path::{Path, PathBuf};

use sser::rnn_core::Representation;

/// `[-1, 1] -> [0, 255]`, linear, with 0 landing on 128.
pub fn gray_level(v: f64) -> u8 {
    if v.is_nan() {
        return 128;
    }
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// Blue for negative, white at zero, red for positive. Cosmetic only.
pub fn diverging(v: f64) -> [u8; 3] {
    let v = if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
    let fade = (255.0 * (1.0 - v.abs())).round() as u8;
    if v >= 0.0 {
        [255, fade, fade]
    } else {
        [fade, fade, 255]
    }
}

pub fn channel_name(c: usize, ext: &str) -> String {
    format!("ch{c:02}.{ext}")
}

/// Writes `ch00.pgm ..` (or `.ppm` when `diverging`) into `dir`.
pub fn render_channels(rep: &Representation, dir: &Path, palette_diverging: bool) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let (w, h) = (rep.width as usize, rep.height as usize);
    let mut paths = Vec::with_capacity(rep.channels);
    for c in 0..rep.channels {
        let values = (0..w * h).map(|p| rep.data[p * rep.channels + c]);
        let (ext, magic, body): (&str, &str, Vec<u8>) = if palette_diverging {
            ("ppm", "P6", values.flat_map(diverging).collect())
        } else {
            ("pgm", "P5", values.map(gray_level).collect())
        };
        let path = dir.join(channel_name(c, ext));
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
        write!(f, "{magic}\n{w} {h}\n255\n")?;
        f.write_all(&body)?;
        f.flush()?;
        paths.push(path);
    }
    Ok(paths)
}
