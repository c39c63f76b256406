//! One training run per swept value, everything else held fixed.

use serde::{Deserialize, Serialize};

use super::qat::QatConfig;
use super::trainer::{evaluate, evaluate_quantized, sample_windows, train_model, ModelSpec, TrainConfig, WindowSample};
use crate::error::{Error, Result};
use crate::event_io::{EventSequence, TensorizedWindow};
use crate::quantize::{quantize_model, QuantScheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Width of every encoder layer.
    OutputSize,
    /// Weight and activation bits; the loss is that of the integer encoder.
    Bits,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: u32,
    pub final_loss: f64,
}

/// Trains one model per value on the same windows and seeds and scores each
/// on `eval`.
pub fn ablation_sweep(
    dataset: &EventSequence,
    axis: SweepAxis,
    values: &[u32],
    spec: &ModelSpec,
    cfg: &TrainConfig,
    eval: &[WindowSample],
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let samples = sample_windows(dataset, cfg, cfg.samples_per_epoch, cfg.seed)?;
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let final_loss = match axis {
            SweepAxis::OutputSize => {
                let spec = ModelSpec { dims: vec![value as usize; spec.dims.len()], ..spec.clone() };
                let out = train_model(spec.build()?, &samples, cfg, None)?;
                evaluate(&out.model, eval, &cfg.loss)?
            }
            SweepAxis::Bits => {
                let cfg = TrainConfig { quant: Some(QatConfig { weight_bits: value, act_bits: value }), ..cfg.clone() };
                let out = train_model(spec.build()?, &samples, &cfg, None)?;
                let calib: Vec<TensorizedWindow> = samples.iter().map(|s| s.window.clone()).collect();
                let q = quantize_model(&out.model.encoder, &QuantScheme::new(value, value), &calib)?;
                evaluate_quantized(&q, &out.model.decoder, eval, &cfg.loss)?
            }
        };
        rows.push(SweepRow { value, final_loss });
    }
    Ok(rows)
}

/// `value,final_loss` table.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("value,final_loss\n");
    for r in rows {
        s.push_str(&format!("{},{}\n", r.value, r.final_loss));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_io::{generate_synthetic, Pattern, SceneConfig};
    use crate::rnn_core::CellKind;
    use crate::train::heldout_windows;

    #[test]
    fn single_value_gives_one_row() {
        let ds = generate_synthetic(&SceneConfig::new(12, 12, 0.25, 60_000, 1).with_pattern(Pattern::Bar {
            vertical: true,
            start: 0.0,
            speed: 150.0,
            width: 2.0,
            softness: 0.5,
            contrast: 1.2,
        }))
        .unwrap();
        let cfg = TrainConfig { epochs: 1, window_us: 30_000, crop: 8, z_cap: 5, samples_per_epoch: 2, ..Default::default() };
        let eval = heldout_windows(&ds, &cfg, 2).unwrap();
        let spec = ModelSpec::new(CellKind::Gru, &[3], 0);
        for axis in [SweepAxis::OutputSize, SweepAxis::Bits] {
            let rows = ablation_sweep(&ds, axis, &[4], &spec, &cfg, &eval).unwrap();
            assert_eq!(rows.len(), 1);
            assert_eq!(rows[0].value, 4);
            assert!(rows[0].final_loss.is_finite() && rows[0].final_loss >= 0.0);
            assert_eq!(sweep_csv(&rows).lines().count(), 2);
        }
        assert!(ablation_sweep(&ds, SweepAxis::Bits, &[], &spec, &cfg, &eval).is_err());
    }
}
