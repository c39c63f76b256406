//! Event streams: the sensor event type, on-disk formats, the synthetic
//! brightness-threshold scene generator, temporal windowing and tensorization.

mod format;
mod synth;
mod window;

pub use format::{read_events, write_events, EventFormat, EVT_HEADER_LEN, EVT_MAGIC, EVT_RECORD_LEN};
pub use synth::{generate_synthetic, Pattern, SceneConfig};
pub use window::{normalize_timestamps, normalized_time, slice_window, tensorize, TensorizedWindow};

use std::collections::HashSet;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn from_i8(p: i8) -> Option<Self> {
        match p {
            -1 => Some(Polarity::Negative),
            1 => Some(Polarity::Positive),
            _ => None,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Polarity::Negative => -1,
            Polarity::Positive => 1,
        }
    }

    pub fn as_f64(self) -> f64 {
        self.as_i8() as f64
    }
}

/// One sensor event. `t` is in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, p: Polarity) -> Self {
        Self { t, x, y, p }
    }
}

/// A time-ordered event list on a `width x height` sensor.
///
/// Construction validates bounds, non-decreasing timestamps and rejects two
/// events at the same pixel with the same timestamp.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventSequence {
    width: u16,
    height: u16,
    events: Vec<Event>,
}

impl EventSequence {
    pub fn new(width: u16, height: u16, events: Vec<Event>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config(format!("sensor dims must be positive, got {width}x{height}")));
        }
        let mut same_t: HashSet<(u16, u16)> = HashSet::new();
        for (i, e) in events.iter().enumerate() {
            validate_bounds(e, width, height, i)?;
            if i > 0 {
                let prev = events[i - 1].t;
                if e.t < prev {
                    return Err(Error::Validation {
                        index: i,
                        message: format!("timestamp {} precedes previous {}", e.t, prev),
                    });
                }
                if e.t != prev {
                    same_t.clear();
                }
            }
            if !same_t.insert((e.x, e.y)) {
                return Err(Error::Validation {
                    index: i,
                    message: format!("duplicate timestamp {} at pixel ({}, {})", e.t, e.x, e.y),
                });
            }
        }
        Ok(Self { width, height, events })
    }

    pub fn empty(width: u16, height: u16) -> Self {
        Self { width, height, events: Vec::new() }
    }

    /// Caller guarantees the invariants (e.g. a sub-range of a valid sequence).
    pub(crate) fn from_valid(width: u16, height: u16, events: Vec<Event>) -> Self {
        Self { width, height, events }
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    /// Time span `[first.t, last.t]`, if any.
    pub fn time_range(&self) -> Option<(u64, u64)> {
        Some((self.events.first()?.t, self.events.last()?.t))
    }

    /// Events inside the rectangle, re-based to a `w x h` sensor at (x0, y0).
    pub fn crop(&self, x0: u16, y0: u16, w: u16, h: u16) -> Result<Self> {
        if w == 0 || h == 0 || x0 as u32 + w as u32 > self.width as u32 || y0 as u32 + h as u32 > self.height as u32 {
            return Err(Error::Config(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{} sensor",
                self.width, self.height
            )));
        }
        let events = self
            .events
            .iter()
            .filter(|e| e.x >= x0 && e.x < x0 + w && e.y >= y0 && e.y < y0 + h)
            .map(|e| Event { x: e.x - x0, y: e.y - y0, ..*e })
            .collect();
        Ok(Self::from_valid(w, h, events))
    }

    /// Row-major pixel index `y * width + x`.
    #[inline]
    pub fn pixel_index(&self, e: &Event) -> usize {
        e.y as usize * self.width as usize + e.x as usize
    }
}

pub(crate) fn validate_bounds(e: &Event, width: u16, height: u16, index: usize) -> Result<()> {
    if e.x >= width || e.y >= height {
        return Err(Error::Validation {
            index,
            message: format!("coordinate ({}, {}) outside {}x{} sensor", e.x, e.y, width, height),
        });
    }
    Ok(())
}
