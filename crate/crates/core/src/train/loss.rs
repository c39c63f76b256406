use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_io::TensorizedWindow;
use crate::rnn_core::{DecoderModel, Representation};

/// Weights of the time and polarity reconstruction terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.1 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha + self.beta > 0.0) {
            return Err(Error::Config(format!("invalid loss weights alpha={} beta={}", self.alpha, self.beta)));
        }
        Ok(())
    }
}

/// Masked weighted MSE over a `Z x WH` window. The denominator is the full
/// `Z * W * H`, padded entries included.
pub fn masked_mse_loss(tw: &TensorizedWindow, decoded: &[[f64; 2]], cfg: &LossConfig) -> Result<f64> {
    if decoded.len() != tw.values.len() || tw.mask.len() != tw.values.len() {
        return Err(Error::dim(format!(
            "decoded tensor has {} entries, window has {} (mask {})",
            decoded.len(),
            tw.values.len(),
            tw.mask.len()
        )));
    }
    let (mut st, mut sp) = (0.0, 0.0);
    for ((v, d), &m) in tw.values.iter().zip(decoded).zip(&tw.mask) {
        if m != 0 {
            st += (v[0] - d[0]) * (v[0] - d[0]);
            sp += (v[1] - d[1]) * (v[1] - d[1]);
        }
    }
    let n = (tw.z * tw.pixels()) as f64;
    Ok(cfg.alpha * st / n + cfg.beta * sp / n)
}

/// Decodes every active pixel of `rep` and scores it against the window.
pub fn loss_from_representation(
    decoder: &DecoderModel,
    rep: &Representation,
    tw: &TensorizedWindow,
    cfg: &LossConfig,
) -> Result<f64> {
    let pixels = tw.pixels();
    if rep.data.len() != pixels * decoder.channels() {
        return Err(Error::dim("representation does not match window and decoder"));
    }
    let mut decoded = vec![[0.0; 2]; tw.values.len()];
    for w in tw.active_columns() {
        let k = tw.column_len(w);
        for (z, d) in decoder.decode(rep.pixel(w), k)?.into_iter().enumerate() {
            decoded[z * pixels + w] = d;
        }
    }
    masked_mse_loss(tw, &decoded, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tw(values: Vec<[f64; 2]>, mask: Vec<u8>, z: usize, w: u16) -> TensorizedWindow {
        TensorizedWindow { width: w, height: 1, z, values, mask }
    }

    #[test]
    fn perfect_reconstruction_is_zero() {
        let t = tw(vec![[0.2, 1.0], [0.4, -1.0], [0.6, 1.0], [0.0, 0.0]], vec![1, 1, 1, 0], 2, 2);
        assert_eq!(masked_mse_loss(&t, &t.values, &LossConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn hand_evaluated_single_entry() {
        let t = tw(vec![[1.0, 1.0]], vec![1], 1, 1);
        let l = masked_mse_loss(&t, &[[0.0, -1.0]], &LossConfig { alpha: 1.0, beta: 0.1 }).unwrap();
        assert!((l - 1.4).abs() < 1e-15);
    }

    #[test]
    fn zero_mask_annihilates() {
        let t = tw(vec![[0.5, 1.0], [0.3, -1.0]], vec![0, 0], 1, 2);
        assert_eq!(masked_mse_loss(&t, &[[9.0, 9.0], [-7.0, 3.0]], &LossConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn denominator_counts_padding() {
        // one valid entry among Z*WH = 4
        let t = tw(vec![[1.0, 1.0], [0.0; 2], [0.0; 2], [0.0; 2]], vec![1, 0, 0, 0], 2, 2);
        let l = masked_mse_loss(&t, &[[0.0, 1.0], [5.0; 2], [5.0; 2], [5.0; 2]], &LossConfig { alpha: 1.0, beta: 0.0 }).unwrap();
        assert_eq!(l, 0.25);
    }

    #[test]
    fn shape_mismatch() {
        let t = tw(vec![[1.0, 1.0]], vec![1], 1, 1);
        assert!(matches!(masked_mse_loss(&t, &[], &LossConfig::default()), Err(Error::Dimension(_))));
        assert!(LossConfig { alpha: 0.0, beta: 0.0 }.validate().is_err());
        assert!(LossConfig { alpha: -1.0, beta: 1.0 }.validate().is_err());
    }
}
