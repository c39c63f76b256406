use super::EventSequence;
use crate::error::{Error, Result};

/// Events with `t0 <= t < t0 + len`, order preserved.
pub fn slice_window(seq: &EventSequence, t0: u64, len: u64) -> EventSequence {
    let end = t0.saturating_add(len);
    let ev = seq.events();
    let lo = ev.partition_point(|e| e.t < t0);
    let hi = ev.partition_point(|e| e.t < end);
    EventSequence::from_valid(seq.width(), seq.height(), ev[lo..hi.max(lo)].to_vec())
}

/// Maps a timestamp inside `[t0, t0 + len)` onto the open interval (0, 1):
/// `(t - t0 + 1) / (len + 1)`. Zero stays reserved for padding.
#[inline]
pub fn normalized_time(t: u64, t0: u64, len: u64) -> f64 {
    (t - t0 + 1) as f64 / (len + 1) as f64
}

pub fn normalize_timestamps(window: &EventSequence, t0: u64, len: u64) -> Result<Vec<f64>> {
    window
        .events()
        .iter()
        .enumerate()
        .map(|(i, e)| {
            if e.t < t0 || e.t - t0 >= len {
                Err(Error::Validation {
                    index: i,
                    message: format!("timestamp {} outside window [{t0}, {})", e.t, t0 + len),
                })
            } else {
                Ok(normalized_time(e.t, t0, len))
            }
        })
        .collect()
}

/// Padded per-pixel event tensor.
///
/// `values[z * pixels + w]` is the `(t_norm, p)` pair of the z-th event at
/// pixel column `w` (row-major `y * width + x`); `mask` flags the valid
/// entries, which always form a prefix of each column.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorizedWindow {
    pub width: u16,
    pub height: u16,
    pub z: usize,
    pub values: Vec<[f64; 2]>,
    pub mask: Vec<u8>,
}

impl TensorizedWindow {
    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }

    #[inline]
    pub fn value(&self, z: usize, w: usize) -> [f64; 2] {
        self.values[z * self.pixels() + w]
    }

    #[inline]
    pub fn is_valid(&self, z: usize, w: usize) -> bool {
        self.mask[z * self.pixels() + w] != 0
    }

    /// Number of valid entries in column `w`.
    pub fn column_len(&self, w: usize) -> usize {
        (0..self.z).take_while(|&z| self.is_valid(z, w)).count()
    }

    /// The packed `(t_norm, p)` sequence of one pixel.
    pub fn column(&self, w: usize) -> Vec<[f64; 2]> {
        (0..self.column_len(w)).map(|z| self.value(z, w)).collect()
    }

    /// Columns holding at least one event.
    pub fn active_columns(&self) -> Vec<usize> {
        (0..self.pixels()).filter(|&w| self.is_valid(0, w)).collect()
    }

    /// Per-pixel sequences, the inverse of [`tensorize`] up to truncation.
    pub fn detensorize(&self) -> Vec<Vec<[f64; 2]>> {
        (0..self.pixels()).map(|w| self.column(w)).collect()
    }
}

/// Packs a window into a `Z x WH x 2` tensor plus mask.
///
/// `Z = max(1, min(z_cap, max per-pixel count))`. Per pixel the earliest
/// `Z` events are kept. `t0`/`len` describe the window for normalization.
pub fn tensorize(window: &EventSequence, t0: u64, len: u64, z_cap: usize) -> Result<TensorizedWindow> {
    if z_cap == 0 {
        return Err(Error::Config("z_cap must be at least 1".into()));
    }
    let t_norm = normalize_timestamps(window, t0, len)?;
    let pixels = window.pixels();
    let mut counts = vec![0usize; pixels];
    for e in window.events() {
        counts[window.pixel_index(e)] += 1;
    }
    let z = counts.iter().copied().max().unwrap_or(0).min(z_cap).max(1);
    let mut values = vec![[0.0; 2]; z * pixels];
    let mut mask = vec![0u8; z * pixels];
    let mut fill = vec![0usize; pixels];
    for (e, tn) in window.events().iter().zip(t_norm) {
        let w = window.pixel_index(e);
        let k = fill[w];
        if k < z {
            values[k * pixels + w] = [tn, e.p.as_f64()];
            mask[k * pixels + w] = 1;
            fill[w] += 1;
        }
    }
    Ok(TensorizedWindow { width: window.width(), height: window.height(), z, values, mask })
}
