//! Epoch loop: window sampling, forward/backward and optimizer steps.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::backprop::{backward, window_loss};
use super::loss::{loss_from_representation, LossConfig};
use super::qat::{fake_quant_model, ActFakeQuant, QatConfig};
use crate::error::{Error, Result};
use crate::event_io::{slice_window, tensorize, EventSequence, TensorizedWindow};
use crate::quantize::{dequantize_representation, QuantizedModel};
use crate::rnn_core::{Autoencoder, CandidateBias, CellKind, DecoderModel};

/// Seed offset separating held-out windows from training windows.
const HELDOUT_STREAM: u64 = 0x5e_ed0f_e7a1;

/// Architecture and initialisation of an autoencoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: CellKind,
    pub dims: Vec<usize>,
    pub decoder_depth: usize,
    pub candidate_bias: CandidateBias,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(kind: CellKind, dims: &[usize], seed: u64) -> Self {
        Self { kind, dims: dims.to_vec(), decoder_depth: 3, candidate_bias: CandidateBias::Gated, seed }
    }

    pub fn build(&self) -> Result<Autoencoder> {
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(Error::Config("encoder dims must be non-empty and positive".into()));
        }
        Autoencoder::random(self.kind, &self.dims, self.decoder_depth, self.candidate_bias, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub window_us: u64,
    pub crop: u16,
    pub z_cap: usize,
    pub samples_per_epoch: usize,
    pub seed: u64,
    pub quant: Option<QatConfig>,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 1e-3,
            weight_decay: 1e-4,
            window_us: 200_000,
            crop: 64,
            z_cap: 100,
            samples_per_epoch: 32,
            seed: 0,
            quant: None,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.window_us == 0 || self.crop == 0 || self.z_cap == 0 || self.samples_per_epoch == 0 {
            return Err(Error::Config("epochs, window, crop, z_cap and samples must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite() && self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("invalid lr {} or weight decay {}", self.lr, self.weight_decay)));
        }
        if let Some(q) = self.quant {
            for b in [q.weight_bits, q.act_bits] {
                if !(2..=12).contains(&b) {
                    return Err(Error::Config(format!("quantization bits must be in 2..=12, got {b}")));
                }
            }
        }
        self.loss.validate()
    }
}

/// One tensorized training window and where it was cut from.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub t0: u64,
    pub x0: u16,
    pub y0: u16,
    pub window: TensorizedWindow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Autoencoder,
    /// Mean training loss per epoch.
    pub losses: Vec<f64>,
    pub adam: AdamState,
}

/// Draws `count` windows of `window_us` x `crop` x `crop`.
///
/// Each window is anchored on a uniformly chosen event, then placed
/// uniformly among the positions that still contain it, so no sample is empty.
pub fn sample_windows(seq: &EventSequence, cfg: &TrainConfig, count: usize, seed: u64) -> Result<Vec<WindowSample>> {
    cfg.validate()?;
    if seq.is_empty() {
        return Err(Error::Config("dataset contains no events".into()));
    }
    if cfg.crop > seq.width() || cfg.crop > seq.height() {
        return Err(Error::Config(format!("crop {} exceeds sensor {}x{}", cfg.crop, seq.width(), seq.height())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let crop = cfg.crop;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let e = seq.events()[rng.gen_range(0..seq.len())];
        let t0 = e.t.saturating_sub(rng.gen_range(0..cfg.window_us));
        let place = |v: u16, extent: u16, rng: &mut ChaCha8Rng| {
            let lo = v.saturating_sub(crop - 1);
            let hi = v.min(extent - crop);
            rng.gen_range(lo..=hi)
        };
        let x0 = place(e.x, seq.width(), &mut rng);
        let y0 = place(e.y, seq.height(), &mut rng);
        let win = slice_window(seq, t0, cfg.window_us).crop(x0, y0, crop, crop)?;
        out.push(WindowSample { t0, x0, y0, window: tensorize(&win, t0, cfg.window_us, cfg.z_cap)? });
    }
    Ok(out)
}

/// Held-out windows from a stream disjoint from the training draw.
pub fn heldout_windows(seq: &EventSequence, cfg: &TrainConfig, count: usize) -> Result<Vec<WindowSample>> {
    sample_windows(seq, cfg, count, cfg.seed ^ HELDOUT_STREAM)
}

fn quantize_times(tw: &TensorizedWindow) -> TensorizedWindow {
    let mut q = tw.clone();
    for (v, &m) in q.values.iter_mut().zip(&tw.mask) {
        if m != 0 {
            v[0] = ActFakeQuant::input_time(v[0]);
        }
    }
    q
}

/// Builds the model from `spec`, draws the training windows and trains.
pub fn train_encoder(dataset: &EventSequence, spec: &ModelSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = spec.build()?;
    let samples = sample_windows(dataset, cfg, cfg.samples_per_epoch, cfg.seed)?;
    train_model(model, &samples, cfg, None)
}

/// Runs `cfg.epochs` passes over `samples`, one optimizer step per window,
/// in a per-epoch shuffled order. Epoch losses sum per-sample losses in
/// sample order, so they do not depend on the shuffle.
pub fn train_model(mut model: Autoencoder, samples: &[WindowSample], cfg: &TrainConfig, adam: Option<AdamState>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("no training windows".into()));
    }
    let windows: Vec<TensorizedWindow> = match cfg.quant {
        Some(_) => samples.iter().map(|s| quantize_times(&s.window)).collect(),
        None => samples.iter().map(|s| s.window.clone()).collect(),
    };
    let fq = cfg.quant.map(|q| ActFakeQuant::new(q.act_bits));
    let opt = AdamConfig::new(cfg.lr, cfg.weight_decay);
    let mut state = adam.unwrap_or_else(|| AdamState::new(&model));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut per_sample = vec![0.0; windows.len()];
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let result = match cfg.quant {
                Some(q) => backward(&fake_quant_model(&model, q.weight_bits), &windows[i], &cfg.loss, fq.as_ref()),
                None => backward(&model, &windows[i], &cfg.loss, None),
            };
            let (loss, grads) = result.map_err(|e| match e {
                Error::Training { message, .. } => Error::Training { step, message },
                other => other,
            })?;
            per_sample[i] = loss;
            adam_step(&mut model, &grads, &mut state, &opt)?;
            if model.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
                return Err(Error::Training { step, message: "parameters became non-finite".into() });
            }
            step += 1;
        }
        losses.push(per_sample.iter().sum::<f64>() / per_sample.len() as f64);
    }
    Ok(TrainOutcome { model, losses, adam: state })
}

/// Mean loss of a float model over windows.
pub fn evaluate(model: &Autoencoder, windows: &[WindowSample], cfg: &LossConfig) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Config("no evaluation windows".into()));
    }
    let mut sum = 0.0;
    for s in windows {
        sum += window_loss(model, &s.window, cfg)?;
    }
    Ok(sum / windows.len() as f64)
}

/// Mean loss of an integer encoder, its representation dequantized and
/// decoded by the float decoder.
pub fn evaluate_quantized(
    encoder: &QuantizedModel,
    decoder: &DecoderModel,
    windows: &[WindowSample],
    cfg: &LossConfig,
) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Config("no evaluation windows".into()));
    }
    let mut sum = 0.0;
    for s in windows {
        let rep = dequantize_representation(&encoder.encode_window(&s.window)?);
        sum += loss_from_representation(decoder, &rep, &s.window, cfg)?;
    }
    Ok(sum / windows.len() as f64)
}
