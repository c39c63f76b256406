//! Discrete-cycle model of the per-event datapath: fixed pipeline depth,
//! one issue per cycle, and the same-pixel hazard rule.

use std::collections::HashMap;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::event_io::EventSequence;
use crate::rnn_core::CellKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HazardPolicy {
    /// The hazarded event waits; younger events queue behind it.
    #[default]
    Stall,
    /// The hazarded event is dropped and counted.
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub clock_hz: u64,
    pub pipeline_depth: u64,
    /// Minimum issue gap between two events of one pixel.
    pub hazard_window: u64,
    pub kind: CellKind,
    /// `(d_in, d_out)` per layer.
    pub layers: Vec<(usize, usize)>,
    pub policy: HazardPolicy,
}

impl PipelineConfig {
    pub fn new(clock_hz: u64) -> Self {
        Self { clock_hz, pipeline_depth: 16, hazard_window: 16, kind: CellKind::Gru, layers: vec![(2, 12)], policy: HazardPolicy::Stall }
    }

    pub fn with_depth(mut self, depth: u64) -> Self {
        self.pipeline_depth = depth;
        self.hazard_window = depth;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.clock_hz == 0 || self.pipeline_depth == 0 {
            return Err(Error::Config("clock and pipeline depth must be positive".into()));
        }
        if !matches!(self.kind, CellKind::Gru | CellKind::Mgu) {
            return Err(Error::Config(format!("the datapath covers gru and mgu, not {}", self.kind.name())));
        }
        Ok(())
    }

    /// `depth / clock` in nanoseconds.
    pub fn latency_ns(&self) -> f64 {
        let num = self.pipeline_depth as u128 * 1_000_000_000;
        let clk = self.clock_hz as u128;
        if num.is_multiple_of(clk) {
            (num / clk) as f64
        } else {
            num as f64 / clk as f64
        }
    }
}

/// One event entering the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arrival {
    pub pixel: u32,
    pub cycle: u64,
}

/// Arrival cycles from event timestamps: `floor(t_us * clock_hz / 1e6)`.
pub fn arrivals_from_timestamps(seq: &EventSequence, clock_hz: u64) -> Vec<Arrival> {
    seq.events()
        .iter()
        .map(|e| Arrival {
            pixel: seq.pixel_index(e) as u32,
            cycle: (e.t as u128 * clock_hz as u128 / 1_000_000) as u64,
        })
        .collect()
}

/// Arrival cycles at a constant event rate: event `k` arrives at
/// `floor(k * clock_hz / rate)`.
pub fn arrivals_at_rate(seq: &EventSequence, clock_hz: u64, events_per_s: f64) -> Vec<Arrival> {
    let per = clock_hz as f64 / events_per_s;
    seq.events()
        .iter()
        .enumerate()
        .map(|(k, e)| Arrival { pixel: seq.pixel_index(e) as u32, cycle: (k as f64 * per).floor() as u64 })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledEvent {
    pub pixel: u32,
    pub arrival: u64,
    /// `None` when rejected.
    pub issue: Option<u64>,
    pub retire: Option<u64>,
}

fn integral_if_exact<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.fract() == 0.0 && v.abs() < 9.0e15 {
        s.serialize_u64(*v as u64)
    } else {
        s.serialize_f64(*v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleReport {
    pub clock_hz: u64,
    pub pipeline_depth: u64,
    pub hazard_window: u64,
    pub kind: CellKind,
    pub events: u64,
    pub issued: u64,
    /// Total cycles events waited beyond their earliest in-order slot.
    pub stall_cycles: u64,
    pub stalled_events: u64,
    pub rejected: u64,
    /// Last retire minus first arrival.
    pub makespan_cycles: u64,
    pub throughput_events_per_s: f64,
    #[serde(serialize_with = "integral_if_exact")]
    pub latency_ns: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub schedule: Vec<ScheduledEvent>,
}

impl CycleReport {
    pub fn summary(&self) -> String {
        format!(
            "{} events ({} issued, {} rejected), {} stall cycles over {} events, makespan {} cycles, \
             {:.3e} events/s, {} ns per event at {} MHz, depth {}",
            self.events,
            self.issued,
            self.rejected,
            self.stall_cycles,
            self.stalled_events,
            self.makespan_cycles,
            self.throughput_events_per_s,
            self.latency_ns,
            self.clock_hz as f64 / 1e6,
            self.pipeline_depth
        )
    }

    /// Issues per cycle between the first and last issue.
    pub fn steady_state_rate(&self) -> f64 {
        let issues: Vec<u64> = self.schedule.iter().filter_map(|e| e.issue).collect();
        match (issues.first(), issues.last()) {
            (Some(a), Some(b)) if b > a => (issues.len() - 1) as f64 / (b - a) as f64,
            _ => 0.0,
        }
    }
}

/// In-order issue, one event per cycle, with the same-pixel hazard window.
/// Arrivals must be non-decreasing.
pub fn schedule(trace: &[Arrival], cfg: &PipelineConfig) -> Result<CycleReport> {
    cfg.validate()?;
    if let Some(i) = trace.windows(2).position(|w| w[1].cycle < w[0].cycle) {
        return Err(Error::Validation { index: i + 1, message: "arrival cycles must be non-decreasing".into() });
    }
    let mut last_issue: HashMap<u32, u64> = HashMap::new();
    let mut prev_issue: Option<u64> = None;
    let mut out = Vec::with_capacity(trace.len());
    let (mut stall_cycles, mut stalled_events, mut rejected) = (0u64, 0u64, 0u64);
    for a in trace {
        let in_order = prev_issue.map_or(a.cycle, |p| a.cycle.max(p + 1));
        let hazard_free = last_issue.get(&a.pixel).map_or(0, |&li| li + cfg.hazard_window);
        let issue = if in_order >= hazard_free {
            Some(in_order)
        } else {
            match cfg.policy {
                HazardPolicy::Stall => {
                    stall_cycles += hazard_free - in_order;
                    stalled_events += 1;
                    Some(hazard_free)
                }
                HazardPolicy::Reject => {
                    rejected += 1;
                    None
                }
            }
        };
        if let Some(i) = issue {
            last_issue.insert(a.pixel, i);
            prev_issue = Some(i);
        }
        out.push(ScheduledEvent { pixel: a.pixel, arrival: a.cycle, issue, retire: issue.map(|i| i + cfg.pipeline_depth) });
    }
    let issued = trace.len() as u64 - rejected;
    let first_arrival = trace.first().map_or(0, |a| a.cycle);
    let last_retire = out.iter().filter_map(|e| e.retire).max();
    let makespan_cycles = last_retire.map_or(0, |r| r - first_arrival);
    let throughput = if makespan_cycles > 0 { issued as f64 * cfg.clock_hz as f64 / makespan_cycles as f64 } else { 0.0 };
    Ok(CycleReport {
        clock_hz: cfg.clock_hz,
        pipeline_depth: cfg.pipeline_depth,
        hazard_window: cfg.hazard_window,
        kind: cfg.kind,
        events: trace.len() as u64,
        issued,
        stall_cycles,
        stalled_events,
        rejected,
        makespan_cycles,
        throughput_events_per_s: throughput,
        latency_ns: cfg.latency_ns(),
        schedule: out,
    })
}

/// A same-pixel pair closer than one pipeline traversal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HazardViolation {
    pub pixel: u32,
    pub first: usize,
    pub second: usize,
    pub gap_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HazardCheck {
    pub safe: bool,
    pub required_gap_ns: f64,
    pub violations: Vec<HazardViolation>,
}

/// Checks that same-pixel events in a nanosecond-stamped trace are at least
/// `depth / clock` apart.
pub fn verify_hazard_safety(trace_ns: &[(u32, u64)], cfg: &PipelineConfig) -> Result<HazardCheck> {
    cfg.validate()?;
    let required = cfg.latency_ns();
    let mut last: HashMap<u32, (usize, u64)> = HashMap::new();
    let mut violations = Vec::new();
    for (i, &(pixel, t)) in trace_ns.iter().enumerate() {
        if let Some(&(j, prev)) = last.get(&pixel) {
            let gap = t.abs_diff(prev) as f64;
            if gap < required {
                violations.push(HazardViolation { pixel, first: j, second: i, gap_ns: gap });
            }
        }
        last.insert(pixel, (i, t));
    }
    Ok(HazardCheck { safe: violations.is_empty(), required_gap_ns: required, violations })
}

/// Nanosecond trace from a microsecond event sequence.
pub fn trace_ns(seq: &EventSequence) -> Vec<(u32, u64)> {
    seq.events().iter().map(|e| (seq.pixel_index(e) as u32, e.t * 1000)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerResources {
    pub d_in: usize,
    pub d_out: usize,
    /// Rows of the combined multiplier block.
    pub gate_height: usize,
    pub multiply_units: usize,
    pub state_bits: u64,
}

/// Synthesis results quoted for comparison; never computed by this model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportedConstant {
    pub clock_mhz: u32,
    pub model: &'static str,
    pub luts: u32,
    pub flip_flops: u32,
    pub dsp: u32,
    pub memory_luts: u32,
    pub memory_bram: u32,
    pub static_power_w: f64,
    pub dynamic_power_w: f64,
    pub latency_ns: u32,
}

pub const REPORTED_SYNTHESIS: [ReportedConstant; 4] = [
    ReportedConstant {
        clock_mhz: 100,
        model: "gru",
        luts: 26744,
        flip_flops: 5082,
        dsp: 108,
        memory_luts: 25862,
        memory_bram: 48,
        static_power_w: 0.599,
        dynamic_power_w: 1.344,
        latency_ns: 160,
    },
    ReportedConstant {
        clock_mhz: 100,
        model: "mgu",
        luts: 19156,
        flip_flops: 3677,
        dsp: 108,
        memory_luts: 17115,
        memory_bram: 48,
        static_power_w: 0.597,
        dynamic_power_w: 1.007,
        latency_ns: 160,
    },
    ReportedConstant {
        clock_mhz: 200,
        model: "gru",
        luts: 27441,
        flip_flops: 5082,
        dsp: 108,
        memory_luts: 27745,
        memory_bram: 48,
        static_power_w: 0.607,
        dynamic_power_w: 2.729,
        latency_ns: 80,
    },
    ReportedConstant {
        clock_mhz: 200,
        model: "mgu",
        luts: 19156,
        flip_flops: 3677,
        dsp: 108,
        memory_luts: 17115,
        memory_bram: 48,
        static_power_w: 0.603,
        dynamic_power_w: 1.986,
        latency_ns: 80,
    },
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResourceEstimate {
    pub kind: CellKind,
    pub precision_bits: u32,
    pub width: u16,
    pub height: u16,
    pub layers: Vec<LayerResources>,
    pub total_state_bits: u64,
    /// Bits saved per layer by dropping one bit of precision.
    pub bits_saved_per_precision_bit: Vec<u64>,
    /// Single-layer 128x128x12 ZCU104 synthesis, 8-bit (reported, not derived).
    pub reported_constants: &'static [ReportedConstant],
}

pub fn estimate_resources(layers: &[(usize, usize)], kind: CellKind, precision_bits: u32, width: u16, height: u16) -> Result<ResourceEstimate> {
    if !matches!(kind, CellKind::Gru | CellKind::Mgu) {
        return Err(Error::Config(format!("the datapath covers gru and mgu, not {}", kind.name())));
    }
    if layers.is_empty() || layers.iter().any(|&(i, o)| i == 0 || o == 0) || precision_bits == 0 || width == 0 || height == 0 {
        return Err(Error::Config("layer dims, precision and sensor size must be positive".into()));
    }
    let pixels = width as u64 * height as u64;
    let layers: Vec<LayerResources> = layers
        .iter()
        .map(|&(d_in, d_out)| {
            let gate_height = kind.gates() * d_out;
            LayerResources {
                d_in,
                d_out,
                gate_height,
                multiply_units: (d_in + d_out) * gate_height,
                state_bits: pixels * d_out as u64 * precision_bits as u64,
            }
        })
        .collect();
    Ok(ResourceEstimate {
        kind,
        precision_bits,
        width,
        height,
        total_state_bits: layers.iter().map(|l| l.state_bits).sum(),
        bits_saved_per_precision_bit: layers.iter().map(|l| pixels * l.d_out as u64).collect(),
        layers,
        reported_constants: &REPORTED_SYNTHESIS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arrivals(v: &[(u32, u64)]) -> Vec<Arrival> {
        v.iter().map(|&(pixel, cycle)| Arrival { pixel, cycle }).collect()
    }

    #[test]
    fn latency_examples() {
        let r = schedule(&arrivals(&[(0, 0)]), &PipelineConfig::new(100_000_000)).unwrap();
        assert_eq!(r.latency_ns, 160.0);
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["latency_ns"], serde_json::json!(160));
        assert!(json["latency_ns"].is_u64());
        assert_eq!(PipelineConfig::new(200_000_000).latency_ns(), 80.0);
        assert_eq!(PipelineConfig::new(100_000_000).with_depth(100).latency_ns(), 1000.0);
    }

    #[test]
    fn same_pixel_stall_arithmetic() {
        let r = schedule(&arrivals(&[(3, 0), (3, 5)]), &PipelineConfig::new(100_000_000)).unwrap();
        assert_eq!(r.schedule[1].issue, Some(16));
        assert_eq!(r.stall_cycles, 11);
        assert_eq!(r.schedule[1].retire, Some(32));
        let reject = PipelineConfig { policy: HazardPolicy::Reject, ..PipelineConfig::new(100_000_000) };
        let r = schedule(&arrivals(&[(3, 0), (3, 5), (4, 6)]), &reject).unwrap();
        assert_eq!(r.rejected, 1);
        assert_eq!(r.schedule[1].issue, None);
        assert_eq!(r.schedule[2].issue, Some(6));
    }

    #[test]
    fn back_to_back_distinct_pixels() {
        let n = 1000u64;
        let trace: Vec<Arrival> = (0..n).map(|k| Arrival { pixel: k as u32, cycle: k }).collect();
        let cfg = PipelineConfig::new(100_000_000);
        let r = schedule(&trace, &cfg).unwrap();
        assert_eq!(r.makespan_cycles, n - 1 + 16);
        assert_eq!(r.stall_cycles, 0);
        assert_eq!(r.steady_state_rate(), 1.0);
        assert!(r.throughput_events_per_s < 1e8 && r.throughput_events_per_s > 0.98e8);
    }

    #[test]
    fn stalled_event_blocks_younger_ones() {
        let r = schedule(&arrivals(&[(1, 0), (1, 1), (2, 2)]), &PipelineConfig::new(100_000_000)).unwrap();
        assert_eq!(r.schedule[1].issue, Some(16));
        assert_eq!(r.schedule[2].issue, Some(17));
    }

    #[test]
    fn rejects_unsorted_and_bad_config() {
        assert!(schedule(&arrivals(&[(0, 5), (1, 4)]), &PipelineConfig::new(1)).is_err());
        assert!(schedule(&[], &PipelineConfig::new(0)).is_err());
        assert!(schedule(&[], &PipelineConfig { kind: CellKind::Lstm, ..PipelineConfig::new(1) }).is_err());
        let empty = schedule(&[], &PipelineConfig::new(100)).unwrap();
        assert_eq!((empty.events, empty.makespan_cycles), (0, 0));
    }

    #[test]
    fn hazard_safety_examples() {
        let cfg = PipelineConfig::new(100_000_000);
        assert!(verify_hazard_safety(&[], &cfg).unwrap().safe);
        let pair = verify_hazard_safety(&[(7, 1000), (7, 1100)], &cfg).unwrap();
        assert!(!pair.safe);
        assert_eq!(pair.violations[0].gap_ns, 100.0);
        // microsecond stamps: same-pixel events are at least 1000 ns apart
        let us: Vec<(u32, u64)> = (0..50).map(|k| ((k % 3) as u32, (k / 3) * 1000 + 7)).collect();
        assert!(verify_hazard_safety(&us, &cfg).unwrap().safe);
    }

    #[test]
    fn resource_formulas() {
        let gru = estimate_resources(&[(2, 12)], CellKind::Gru, 8, 128, 128).unwrap();
        assert_eq!(gru.layers[0].gate_height, 36);
        assert_eq!(gru.layers[0].multiply_units, 14 * 36);
        assert_eq!(gru.total_state_bits, 1_572_864);
        assert_eq!(gru.bits_saved_per_precision_bit, vec![196_608]);
        let mgu = estimate_resources(&[(2, 12)], CellKind::Mgu, 8, 128, 128).unwrap();
        assert_eq!(mgu.layers[0].gate_height, 24);
        let seven = estimate_resources(&[(2, 12)], CellKind::Gru, 7, 128, 128).unwrap();
        assert_eq!(gru.total_state_bits - seven.total_state_bits, 196_608);
        assert!(estimate_resources(&[(2, 12)], CellKind::Rnn, 8, 128, 128).is_err());
    }
}
