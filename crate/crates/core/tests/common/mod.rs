#![allow(dead_code)]

pub mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sser::event_io::TensorizedWindow;
use sser::rnn_core::{Autoencoder, CandidateBias, CellKind};
use sser::train::{backward, LossConfig};

pub const KINDS: [CellKind; 4] = [CellKind::Rnn, CellKind::Lstm, CellKind::Gru, CellKind::Mgu];

/// Window of `pixels` columns with per-column lengths in `0..=max_len`,
/// sorted normalized times and random polarities.
pub fn random_window(rng: &mut ChaCha8Rng, pixels: usize, max_len: usize) -> TensorizedWindow {
    let lens: Vec<usize> = (0..pixels).map(|_| rng.gen_range(0..=max_len)).collect();
    let z = lens.iter().copied().max().unwrap_or(0).max(1);
    let mut values = vec![[0.0; 2]; z * pixels];
    let mut mask = vec![0; z * pixels];
    for (w, &n) in lens.iter().enumerate() {
        let mut ts: Vec<f64> = (0..n).map(|_| rng.gen_range(0.001..0.999)).collect();
        ts.sort_by(f64::total_cmp);
        for (k, t) in ts.into_iter().enumerate() {
            values[k * pixels + w] = [t, if rng.gen_bool(0.5) { 1.0 } else { -1.0 }];
            mask[k * pixels + w] = 1;
        }
    }
    TensorizedWindow { width: pixels as u16, height: 1, z, values, mask }
}

pub struct GradCheck {
    pub entries: usize,
    pub worst: f64,
    pub worst_at: String,
}

/// Compares every analytic gradient entry against a central difference of
/// the double-double reference loss.
pub fn finite_difference_check(model: &Autoencoder, tw: &TensorizedWindow, cfg: &LossConfig, eps: f64) -> GradCheck {
    let (loss, grads) = backward(model, tw, cfg, None).unwrap();
    let mut oracle = oracle::Oracle::new(model);
    let reference = oracle.loss(tw, cfg).hi();
    assert!((reference - loss).abs() <= 1e-12 * (1.0 + loss.abs()), "oracle loss {reference} vs {loss}");
    let mut out = GradCheck { entries: 0, worst: 0.0, worst_at: String::new() };
    for (ti, a_t) in grads.tensors().iter().enumerate() {
        for (j, &a) in a_t.iter().enumerate() {
            let numeric = oracle.central_difference(ti, j, eps, tw, cfg);
            let rel = (a - numeric).abs() / (numeric.abs() + 1e-8);
            out.entries += 1;
            if rel > out.worst {
                out.worst = rel;
                out.worst_at = format!("tensor {ti} entry {j}: analytic {a} numeric {numeric}");
            }
        }
    }
    out
}

/// A small random autoencoder and window of the sizes used for gradient checks.
pub fn small_case(kind: CellKind, seed: u64) -> (Autoencoder, TensorizedWindow) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d1 = rng.gen_range(1..=4);
    let d2 = rng.gen_range(1..=4);
    let depth = rng.gen_range(1..=3);
    let cb = if rng.gen_bool(0.5) { CandidateBias::Gated } else { CandidateBias::Ungated };
    let model = Autoencoder::random(kind, &[d1, d2], depth, cb, rng.gen()).unwrap();
    let pixels = rng.gen_range(1..=3);
    let tw = random_window(&mut rng, pixels, 4);
    (model, tw)
}
