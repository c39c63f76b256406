use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sser::rnn_core::CellKind;

#[derive(Debug, Parser)]
#[command(name = "sser", version, about = "Per-pixel recurrent event representations")]
#[command(after_help = "Pass --config FILE to read `key = value` defaults (flags override them).\n\
Relative output paths resolve against $SSER_OUT_DIR when it is set.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic scene into an event file.
    Gen(GenArgs),
    /// Train an encoder/decoder pair on an event file.
    Train(TrainArgs),
    /// Convert a trained float encoder to the integer kernel.
    Quantize(QuantizeArgs),
    /// Stream an event file through the engine and write representations.
    Encode(EncodeArgs),
    /// Cycle model of the pipelined datapath.
    Simulate(SimulateArgs),
    /// Measure engine throughput.
    Bench(BenchArgs),
    /// Write one image per channel of a representation file.
    Render(RenderArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellArg {
    Rnn,
    Lstm,
    Gru,
    Mgu,
}

impl From<CellArg> for CellKind {
    fn from(c: CellArg) -> Self {
        match c {
            CellArg::Rnn => CellKind::Rnn,
            CellArg::Lstm => CellKind::Lstm,
            CellArg::Gru => CellKind::Gru,
            CellArg::Mgu => CellKind::Mgu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternArg {
    /// A bar sweeping left to right.
    Bar,
    /// One blob crossing the sensor.
    Dot,
    /// Several blobs on random straight paths.
    Dots,
    /// A bar plus random blobs.
    Scene,
    /// One pixel brightening linearly.
    Ramp,
}

/// Bit widths from `8`, `2,4,6,8` or the inclusive range `2..8`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct BitList(pub Vec<u32>);

pub fn parse_bits(s: &str) -> Result<BitList, String> {
    let one = |t: &str| -> Result<u32, String> {
        let b: u32 = t.trim().parse().map_err(|_| format!("{t:?} is not a bit width"))?;
        if (2..=12).contains(&b) {
            Ok(b)
        } else {
            Err(format!("bit width {b} outside 2..=12"))
        }
    };
    let bits = if let Some((lo, hi)) = s.split_once("..") {
        let (lo, hi) = (one(lo)?, one(hi)?);
        if lo > hi {
            return Err(format!("empty range {s}"));
        }
        (lo..=hi).collect()
    } else {
        s.split(',').map(one).collect::<Result<Vec<_>, _>>()?
    };
    Ok(BitList(bits))
}

fn parse_single_bits(s: &str) -> Result<u32, String> {
    match parse_bits(s)?.0.as_slice() {
        [b] => Ok(*b),
        _ => Err("expected a single bit width".into()),
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct GenArgs {
    #[arg(long, value_enum, default_value_t = PatternArg::Bar)]
    pub pattern: PatternArg,
    #[arg(long, default_value_t = 64)]
    pub w: u16,
    #[arg(long, default_value_t = 64)]
    pub h: u16,
    #[arg(long = "dur-ms", default_value_t = 200)]
    pub dur_ms: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Contrast threshold on log-brightness.
    #[arg(long, default_value_t = 0.15)]
    pub threshold: f64,
    /// Per-pixel relative threshold mismatch.
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    /// Blob count for `dots` and `scene`.
    #[arg(long, default_value_t = 4)]
    pub dots: usize,
    /// Brightness sampling period.
    #[arg(long = "step-us", default_value_t = 50)]
    pub step_us: u64,
    /// Output event file; `.csv` writes CSV, anything else EVT-bin.
    #[arg(long)]
    pub out: PathBuf,
}

/// Input event file plus the sensor size CSV files need.
#[derive(Debug, Clone, Args, Serialize)]
pub struct EventInput {
    /// Sensor width (CSV input only).
    #[arg(long)]
    pub w: Option<u16>,
    /// Sensor height (CSV input only).
    #[arg(long)]
    pub h: Option<u16>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct WindowArgs {
    #[arg(long = "window-ms", default_value_t = 200.0)]
    pub window_ms: f64,
    /// Spatial crop side.
    #[arg(long, default_value_t = 64)]
    pub crop: u16,
    /// Events kept per pixel and window.
    #[arg(long = "z-cap", default_value_t = 100)]
    pub z_cap: usize,
    /// Windows per epoch (training) or for calibration (quantize).
    #[arg(long, default_value_t = 32)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepArg {
    /// Width of every encoder layer.
    Size,
    /// QAT weight and activation bits, scored with the integer encoder.
    Bits,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub input: EventInput,
    #[arg(long, value_enum, default_value_t = CellArg::Gru)]
    pub cell: CellArg,
    /// Encoder layer widths.
    #[arg(long, value_delimiter = ',', default_value = "12")]
    pub dims: Vec<usize>,
    #[arg(long = "decoder-depth", default_value_t = 3)]
    pub decoder_depth: usize,
    /// Put the GRU candidate bias outside the reset gate.
    #[arg(long = "ungated-bias")]
    pub ungated_bias: bool,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub wd: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    pub beta: f64,
    #[command(flatten)]
    pub window: WindowArgs,
    /// Train with fake quantization at this many bits.
    #[arg(long = "qat-bits", value_parser = parse_single_bits)]
    pub qat_bits: Option<u32>,
    /// Held-out windows scored after training; 0 skips.
    #[arg(long = "eval-samples", default_value_t = 8)]
    pub eval_samples: usize,
    /// Train one model per value of this axis and write a CSV instead of a checkpoint.
    #[arg(long, value_enum, requires = "sweep_values")]
    pub sweep: Option<SweepArg>,
    #[arg(long = "sweep-values", value_delimiter = ',')]
    pub sweep_values: Option<Vec<u32>>,
    /// Checkpoint (or sweep CSV) path.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss CSV; defaults to `<out>.loss.csv`.
    #[arg(long = "loss-csv")]
    pub loss_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct QuantizeArgs {
    /// Trained float checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Events for calibration (and evaluation when sweeping).
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub input: EventInput,
    /// Weight bits: `8`, or a list / range (`2,4,8`, `2..8`) for a sweep CSV.
    #[arg(long, value_parser = parse_bits, default_value = "8")]
    pub bits: BitList,
    /// Activation bits; defaults to the weight bits.
    #[arg(long = "act-bits", value_parser = parse_single_bits)]
    pub act_bits: Option<u32>,
    /// Restrict weight scales to powers of two.
    #[arg(long = "power-of-two")]
    pub power_of_two: bool,
    #[command(flatten)]
    pub window: WindowArgs,
    /// Quantized model path, or sweep CSV when several widths are given.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Float,
    Quant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResetArg {
    /// Zero the state map at every window start.
    Zero,
    /// Keep state across windows.
    Persist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmitArg {
    /// One representation per window.
    Window,
    /// Only the state after the last window.
    Final,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct EncodeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub sensor: EventInput,
    /// Float or quantized model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Must match the model file when given.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long = "window-ms", default_value_t = 50.0)]
    pub window_ms: f64,
    #[arg(long, value_enum, default_value_t = ResetArg::Zero)]
    pub reset: ResetArg,
    #[arg(long, value_enum, default_value_t = EmitArg::Window)]
    pub emit: EmitArg,
    /// Row bands updated concurrently.
    #[arg(long, default_value_t = 1)]
    pub shards: usize,
    /// Defaults to $SSER_OUT_DIR, else the working directory.
    #[arg(long = "out-dir")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyArg {
    Stall,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceArg {
    /// Every event on its own pixel.
    Distinct,
    /// Every event on pixel 0.
    Same,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct SimulateArgs {
    #[arg(long = "clock-mhz", default_value_t = 100.0)]
    pub clock_mhz: f64,
    /// Pipeline stages per event.
    #[arg(long, default_value_t = 16)]
    pub depth: u64,
    /// Same-pixel issue gap; defaults to the depth.
    #[arg(long = "hazard-window")]
    pub hazard_window: Option<u64>,
    #[arg(long, value_enum, default_value_t = CellArg::Gru)]
    pub cell: CellArg,
    #[arg(long, value_enum, default_value_t = PolicyArg::Stall)]
    pub policy: PolicyArg,
    /// Event file whose timestamps drive the arrivals.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub sensor: EventInput,
    /// Replace timestamps with a constant arrival rate (events/s).
    #[arg(long)]
    pub rate: Option<f64>,
    /// Synthetic trace length when no input is given; one event per cycle.
    #[arg(long, default_value_t = 1)]
    pub events: u64,
    #[arg(long, value_enum, default_value_t = TraceArg::Distinct)]
    pub trace: TraceArg,
    /// Encoder widths for the resource estimate.
    #[arg(long, value_delimiter = ',', default_value = "12")]
    pub dims: Vec<usize>,
    /// State precision for the resource estimate.
    #[arg(long, default_value_t = 8)]
    pub precision: u32,
    /// Sensor size for the resource estimate when no input is given.
    #[arg(long = "sensor-w", default_value_t = 128)]
    pub sensor_w: u16,
    #[arg(long = "sensor-h", default_value_t = 128)]
    pub sensor_h: u16,
    /// Include the per-event schedule.
    #[arg(long)]
    pub schedule: bool,
    /// JSON report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 64)]
    pub w: u16,
    #[arg(long, default_value_t = 64)]
    pub h: u16,
    #[arg(long = "dur-ms", default_value_t = 200)]
    pub dur_ms: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Float model to benchmark; a random one is built otherwise.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = CellArg::Gru)]
    pub cell: CellArg,
    #[arg(long, value_delimiter = ',', default_value = "12")]
    pub dims: Vec<usize>,
    #[arg(long, value_parser = parse_single_bits, default_value = "8")]
    pub bits: u32,
    /// Shard count for the parallel run.
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
    #[arg(long = "window-ms", default_value_t = 50.0)]
    pub window_ms: f64,
    /// Timed repetitions; the fastest counts.
    #[arg(long, default_value_t = 3)]
    pub repeat: usize,
    /// JSON report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PaletteArg {
    /// Binary graymaps, -1 black, 0 mid-gray, 1 white.
    Gray,
    /// Blue-white-red colour maps; cosmetic.
    Diverging,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct RenderArgs {
    /// SSRP representation file.
    #[arg(long)]
    pub input: PathBuf,
    /// Defaults to $SSER_OUT_DIR, else the working directory.
    #[arg(long = "out-dir")]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PaletteArg::Gray)]
    pub palette: PaletteArg,
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn bit_lists() {
        assert_eq!(parse_bits("8").unwrap().0, vec![8]);
        assert_eq!(parse_bits("2..5").unwrap().0, vec![2, 3, 4, 5]);
        assert_eq!(parse_bits("2,4,6,8").unwrap().0, vec![2, 4, 6, 8]);
        assert!(parse_bits("1").is_err());
        assert!(parse_bits("13").is_err());
        assert!(parse_bits("8..2").is_err());
    }
}
