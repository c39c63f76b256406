//! Streaming representation generator: a per-pixel hidden-state memory
//! updated event by event and snapshotted at window boundaries.

mod ssrp;

pub use ssrp::{read_representation, write_representation, Payload, RepresentationFile, SSRP_MAGIC};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_io::{normalized_time, Event, EventSequence};
use crate::quantize::{dequantize_representation, QuantRepresentation, QuantizedModel};
use crate::rnn_core::{EncodeScratch, EncoderModel, Representation};

#[derive(Debug, Clone, PartialEq)]
pub enum EngineModel {
    Float(EncoderModel),
    Quantized(QuantizedModel),
}

impl EngineModel {
    pub fn channels(&self) -> usize {
        match self {
            EngineModel::Float(m) => m.channels(),
            EngineModel::Quantized(q) => q.channels(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmissionPolicy {
    /// Snapshot at the end of every window, empty windows included.
    #[default]
    OnWindowBoundary,
    /// No automatic snapshots; `run_stream` returns only the final state.
    OnDemand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetPolicy {
    Persist,
    #[default]
    ZeroEachWindow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub model: EngineModel,
    pub width: u16,
    pub height: u16,
    pub window_us: u64,
    pub emission: EmissionPolicy,
    pub reset: ResetPolicy,
    /// Row bands processed concurrently; 1 runs single-threaded.
    pub shards: usize,
}

impl EngineConfig {
    pub fn new(model: EngineModel, width: u16, height: u16, window_us: u64) -> Self {
        Self {
            model,
            width,
            height,
            window_us,
            emission: EmissionPolicy::default(),
            reset: ResetPolicy::default(),
            shards: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_us == 0 {
            return Err(Error::Config("window length must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("sensor dimensions must be positive".into()));
        }
        if self.shards == 0 {
            return Err(Error::Config("shard count must be at least 1".into()));
        }
        match &self.model {
            EngineModel::Float(m) => m.validate(),
            EngineModel::Quantized(q) => q.validate(),
        }
    }
}

/// Packed per-pixel state of every layer, pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub enum HiddenStateMap {
    Float { width: u16, height: u16, state_width: usize, data: Vec<f64> },
    Quantized { width: u16, height: u16, state_width: usize, data: Vec<i32> },
}

impl HiddenStateMap {
    pub fn pixels(&self) -> usize {
        match self {
            HiddenStateMap::Float { width, height, .. } | HiddenStateMap::Quantized { width, height, .. } => {
                *width as usize * *height as usize
            }
        }
    }

    pub fn state_width(&self) -> usize {
        match self {
            HiddenStateMap::Float { state_width, .. } | HiddenStateMap::Quantized { state_width, .. } => *state_width,
        }
    }

    fn zero(&mut self) {
        match self {
            HiddenStateMap::Float { data, .. } => data.fill(0.0),
            HiddenStateMap::Quantized { data, .. } => data.fill(0),
        }
    }
}

/// Fresh state memory: zeros in float mode, code 0 in quantized mode.
pub fn init_state(cfg: &EngineConfig) -> HiddenStateMap {
    let (width, height) = (cfg.width, cfg.height);
    let pixels = width as usize * height as usize;
    match &cfg.model {
        EngineModel::Float(m) => {
            let state_width = m.state_width();
            HiddenStateMap::Float { width, height, state_width, data: vec![0.0; pixels * state_width] }
        }
        EngineModel::Quantized(q) => {
            let state_width = q.state_width();
            HiddenStateMap::Quantized { width, height, state_width, data: vec![0; pixels * state_width] }
        }
    }
}

/// State memory per layer in bits: `W * H * d_out * precision`.
///
/// Quantized layers use the activation width; float layers count 32-bit
/// words and include the LSTM cell state.
pub fn state_memory_bits(cfg: &EngineConfig) -> Vec<u64> {
    let pixels = cfg.width as u64 * cfg.height as u64;
    match &cfg.model {
        EngineModel::Float(m) => m
            .layers
            .iter()
            .map(|l| pixels * l.d_out as u64 * 32 * if l.kind.has_cell_state() { 2 } else { 1 })
            .collect(),
        EngineModel::Quantized(q) => q.layers.iter().map(|l| pixels * l.d_out as u64 * q.scheme.act_bits as u64).collect(),
    }
}

/// Snapshot of the last layer's states.
#[derive(Debug, Clone, PartialEq)]
pub enum Emission {
    Float(Representation),
    Quantized(QuantRepresentation),
}

impl Emission {
    pub fn to_real(&self) -> Representation {
        match self {
            Emission::Float(r) => r.clone(),
            Emission::Quantized(q) => dequantize_representation(q),
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            Emission::Float(r) => r.channels,
            Emission::Quantized(q) => q.channels,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventOutcome {
    Applied,
    OutOfBounds,
    TimeRegression,
    OutsideWindow,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineStats {
    pub applied: u64,
    pub rejected_bounds: u64,
    pub rejected_time: u64,
    pub rejected_window: u64,
}

enum Scratch {
    Float(EncodeScratch),
    Quantized(Vec<i32>),
}

pub struct Engine {
    cfg: EngineConfig,
    state: HiddenStateMap,
    window_start: Option<u64>,
    last_t: Option<u64>,
    stats: EngineStats,
    scratch: Scratch,
}

impl Engine {
    pub fn new(cfg: EngineConfig) -> Result<Self> {
        cfg.validate()?;
        let scratch = match cfg.model {
            EngineModel::Float(_) => Scratch::Float(EncodeScratch::default()),
            EngineModel::Quantized(_) => Scratch::Quantized(Vec::new()),
        };
        Ok(Self { state: init_state(&cfg), cfg, window_start: None, last_t: None, stats: EngineStats::default(), scratch })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn state(&self) -> &HiddenStateMap {
        &self.state
    }

    pub fn stats(&self) -> EngineStats {
        self.stats
    }

    pub fn memory_bits(&self) -> Vec<u64> {
        state_memory_bits(&self.cfg)
    }

    /// Starts a window at `t0`, applying the reset policy.
    pub fn begin_window(&mut self, t0: u64) {
        if self.cfg.reset == ResetPolicy::ZeroEachWindow {
            self.state.zero();
        }
        self.window_start = Some(t0);
    }

    pub fn reset(&mut self) {
        self.state.zero();
        self.window_start = None;
        self.last_t = None;
        self.stats = EngineStats::default();
    }

    /// Updates the state of the event's pixel. Without an open window the
    /// event's own time opens one.
    pub fn process_event(&mut self, e: &Event) -> Result<EventOutcome> {
        if e.x >= self.cfg.width || e.y >= self.cfg.height {
            self.stats.rejected_bounds += 1;
            return Ok(EventOutcome::OutOfBounds);
        }
        if self.last_t.is_some_and(|t| e.t < t) {
            self.stats.rejected_time += 1;
            return Ok(EventOutcome::TimeRegression);
        }
        let t0 = *self.window_start.get_or_insert(e.t);
        if e.t < t0 || e.t - t0 >= self.cfg.window_us {
            self.stats.rejected_window += 1;
            return Ok(EventOutcome::OutsideWindow);
        }
        let u = [normalized_time(e.t, t0, self.cfg.window_us), e.p.as_f64()];
        let w = e.y as usize * self.cfg.width as usize + e.x as usize;
        apply(&self.cfg.model, &mut self.state, w, &u, &mut self.scratch)?;
        self.last_t = Some(e.t);
        self.stats.applied += 1;
        Ok(EventOutcome::Applied)
    }

    pub fn emit_representation(&self) -> Emission {
        let c = self.cfg.model.channels();
        let (width, height) = (self.cfg.width, self.cfg.height);
        match (&self.cfg.model, &self.state) {
            (EngineModel::Float(m), HiddenStateMap::Float { state_width, data, .. }) => {
                let off = m.output_offset();
                let data = data.chunks_exact(*state_width).flat_map(|s| s[off..off + c].iter().copied()).collect();
                Emission::Float(Representation { width, height, channels: c, data })
            }
            (EngineModel::Quantized(q), HiddenStateMap::Quantized { state_width, data, .. }) => {
                let off = q.output_offset();
                let codes = data.chunks_exact(*state_width).flat_map(|s| s[off..off + c].iter().copied()).collect();
                Emission::Quantized(QuantRepresentation { width, height, channels: c, scale: q.state_scale(), codes })
            }
            _ => unreachable!("state storage always matches the model mode"),
        }
    }

    /// Processes the events of one window, in row bands when sharded.
    fn process_window(&mut self, t0: u64, events: &[Event]) -> Result<()> {
        self.begin_window(t0);
        let shards = self.cfg.shards.min(self.cfg.height as usize);
        if shards <= 1 {
            for e in events {
                self.process_event(e)?;
            }
            return Ok(());
        }
        // validation happens up front so every band sees only applicable events
        let mut accepted = Vec::with_capacity(events.len());
        for e in events {
            if e.x >= self.cfg.width || e.y >= self.cfg.height {
                self.stats.rejected_bounds += 1;
            } else if self.last_t.is_some_and(|t| e.t < t) {
                self.stats.rejected_time += 1;
            } else if e.t < t0 || e.t - t0 >= self.cfg.window_us {
                self.stats.rejected_window += 1;
            } else {
                self.last_t = Some(e.t);
                accepted.push(*e);
            }
        }
        let rows_per = (self.cfg.height as usize).div_ceil(shards);
        let width = self.cfg.width as usize;
        let mut bands: Vec<Vec<Event>> = vec![Vec::new(); shards];
        for e in &accepted {
            bands[e.y as usize / rows_per].push(*e);
        }
        let model = &self.cfg.model;
        let window_us = self.cfg.window_us;
        let sw = self.state.state_width();
        let chunk = rows_per * width * sw;
        macro_rules! run_bands {
            ($data:expr, $mk:expr) => {
                $data.par_chunks_mut(chunk).zip(bands.par_iter()).enumerate().try_for_each(|(b, (slab, evs))| -> Result<()> {
                    let mut scratch = $mk;
                    let base = b * rows_per * width;
                    for e in evs {
                        let u = [normalized_time(e.t, t0, window_us), e.p.as_f64()];
                        let w = e.y as usize * width + e.x as usize - base;
                        apply_slab(model, slab, sw, w, &u, &mut scratch)?;
                    }
                    Ok(())
                })
            };
        }
        match &mut self.state {
            HiddenStateMap::Float { data, .. } => run_bands!(data, Scratch::Float(EncodeScratch::default()))?,
            HiddenStateMap::Quantized { data, .. } => run_bands!(data, Scratch::Quantized(Vec::new()))?,
        }
        self.stats.applied += accepted.len() as u64;
        Ok(())
    }

    /// Splits `seq` into consecutive windows starting at its first event,
    /// feeds each window and emits per the emission policy. Returns
    /// `(window index, emission)` pairs in order.
    pub fn run_stream(&mut self, seq: &EventSequence) -> Result<Vec<(u64, Emission)>> {
        let events = seq.events();
        let Some(first) = events.first() else {
            return Ok(Vec::new());
        };
        let t_first = first.t;
        let last = events.last().expect("non-empty").t;
        let n_windows = (last - t_first) / self.cfg.window_us + 1;
        let mut out = Vec::new();
        let mut lo = 0;
        for k in 0..n_windows {
            let t0 = t_first + k * self.cfg.window_us;
            let end = t0 + self.cfg.window_us;
            let hi = lo + events[lo..].partition_point(|e| e.t < end);
            self.process_window(t0, &events[lo..hi])?;
            lo = hi;
            if self.cfg.emission == EmissionPolicy::OnWindowBoundary {
                out.push((k, self.emit_representation()));
            }
        }
        if self.cfg.emission == EmissionPolicy::OnDemand {
            out.push((n_windows - 1, self.emit_representation()));
        }
        Ok(out)
    }
}

fn apply(model: &EngineModel, state: &mut HiddenStateMap, w: usize, u: &[f64; 2], scratch: &mut Scratch) -> Result<()> {
    match state {
        HiddenStateMap::Float { state_width, data, .. } => apply_slab(model, data, *state_width, w, u, scratch),
        HiddenStateMap::Quantized { state_width, data, .. } => apply_slab(model, data, *state_width, w, u, scratch),
    }
}

trait Slab {
    fn step(model: &EngineModel, state: &mut [Self], u: &[f64; 2], scratch: &mut Scratch) -> Result<()>
    where
        Self: Sized;
}

impl Slab for f64 {
    fn step(model: &EngineModel, state: &mut [f64], u: &[f64; 2], scratch: &mut Scratch) -> Result<()> {
        match (model, scratch) {
            (EngineModel::Float(m), Scratch::Float(s)) => {
                m.step_pixel(u, state, s);
                Ok(())
            }
            _ => Err(Error::Config("float state with a quantized model".into())),
        }
    }
}

impl Slab for i32 {
    fn step(model: &EngineModel, state: &mut [i32], u: &[f64; 2], scratch: &mut Scratch) -> Result<()> {
        match (model, scratch) {
            (EngineModel::Quantized(q), Scratch::Quantized(s)) => q.step_pixel(u, state, s),
            _ => Err(Error::Config("integer state with a float model".into())),
        }
    }
}

fn apply_slab<T: Slab>(model: &EngineModel, data: &mut [T], sw: usize, w: usize, u: &[f64; 2], scratch: &mut Scratch) -> Result<()> {
    T::step(model, &mut data[w * sw..(w + 1) * sw], u, scratch)
}
