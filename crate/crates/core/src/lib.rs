//! Self-supervised per-pixel recurrent representations for event cameras.
//!
//! Every pixel of the sensor owns a small recurrent state that is updated
//! event-by-event. After a time window the stacked final-layer states form a
//! dense `W x H x C` tensor that downstream vision models can consume.
//!
//! The crate is split along the data path:
//!
//! * [`event_io`] - events, file formats, synthetic scenes, windowing and tensorization
//! * [`rnn_core`] - float reference cells (RNN, LSTM, GRU, MGU), encoder and rolling decoder
//! * [`train`] - masked reconstruction loss, BPTT, Adam, fake quantization, ablation sweeps
//! * [`quantize`] - integer GRU/MGU kernels with LUT activations
//! * [`engine`] - streaming hidden-state memory, float or integer
//! * [`hwsim`] - cycle model of the pipelined datapath and resource formulas

pub mod engine;
pub mod error;
pub mod event_io;
pub mod hwsim;
pub(crate) mod linalg;
pub mod quantize;
pub mod rnn_core;
pub mod train;

pub use error::{Error, Result};
