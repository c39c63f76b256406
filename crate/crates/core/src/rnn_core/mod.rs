//! Floating-point reference path: the four recurrent cells, the stacked
//! per-pixel encoder and the rolling decoder used for self-supervision.

mod cell;
mod file;
mod model;

pub use cell::{gru_step, lstm_step, mgu_step, rnn_step, CandidateBias, CellKind, CellParams, StateVec, StepTrace};
pub use file::{read_model, write_model, ModelFile, MODEL_MAGIC, MODEL_VERSION};
pub use model::{Autoencoder, DecoderModel, EncodeScratch, EncoderModel, Linear, Representation};

pub(crate) fn file_reader<R: std::io::Read>(r: R) -> file::Reader<R> {
    file::Reader::new(r)
}
