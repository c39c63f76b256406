//! Adam with bias correction and decoupled weight decay.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::backprop::GradientSet;
use crate::error::{Error, Result};
use crate::rnn_core::Autoencoder;

const ADAM_MAGIC: &[u8; 4] = b"SSEA";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self { lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moments per parameter tensor plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(model: &Autoencoder) -> Self {
        let m: Vec<Vec<f64>> = model.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self { t: 0, v: m.clone(), m }
    }
}

pub fn adam_step(model: &mut Autoencoder, grads: &GradientSet, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    let gs = grads.tensors();
    let mut ps = model.tensors_mut();
    if gs.len() != ps.len() || state.m.len() != ps.len() || state.v.len() != ps.len() {
        return Err(Error::dim("optimizer state does not match model"));
    }
    for (i, (p, g)) in ps.iter().zip(&gs).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() || p.len() != state.v[i].len() {
            return Err(Error::dim(format!("tensor {i}: optimizer state does not match model")));
        }
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for ((p, g), (m, v)) in ps.iter_mut().zip(gs).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for j in 0..p.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * p[j]);
        }
    }
    Ok(())
}

/// Sidecar layout: `b"SSEA" | u8 version = 1 | u64 t | u32 tensors |
/// per tensor: u32 len | f64 m[len] | f64 v[len]` (little-endian).
pub fn write_adam_state<W: Write>(state: &AdamState, sink: W) -> Result<()> {
    let mut w = std::io::BufWriter::new(sink);
    w.write_all(ADAM_MAGIC)?;
    w.write_all(&[1])?;
    w.write_all(&state.t.to_le_bytes())?;
    w.write_all(&(state.m.len() as u32).to_le_bytes())?;
    for (m, v) in state.m.iter().zip(&state.v) {
        w.write_all(&(m.len() as u32).to_le_bytes())?;
        for x in m.iter().chain(v) {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_adam_state<R: Read>(source: R) -> Result<AdamState> {
    let mut r = crate::rnn_core::file_reader(source);
    if &r.bytes::<4>()? != ADAM_MAGIC || r.u8()? != 1 {
        return Err(Error::format("not an optimizer sidecar (SSEA v1)"));
    }
    let t = r.u64()?;
    let n = r.u32()? as usize;
    let mut m = Vec::with_capacity(n.min(1024));
    let mut v = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let len = r.u32()? as usize;
        m.push(r.f64s(len)?);
        v.push(r.f64s(len)?);
    }
    r.expect_eof()?;
    Ok(AdamState { t, m, v })
}
