//! Self-supervised training of the encoder through the rolling decoder.

mod adam;
mod backprop;
mod loss;
mod qat;
mod sweep;
mod trainer;

pub use adam::{adam_step, read_adam_state, write_adam_state, AdamConfig, AdamState};
pub use backprop::{backward, reconstruct, window_loss, GradientSet};
pub use loss::{loss_from_representation, masked_mse_loss, LossConfig};
pub use qat::{fake_quant, fake_quant_grad, fake_quant_model, ActFakeQuant, QatConfig};
pub use sweep::{ablation_sweep, sweep_csv, SweepAxis, SweepRow};
pub use trainer::{
    evaluate, evaluate_quantized, heldout_windows, sample_windows, train_encoder, train_model, ModelSpec, TrainConfig, TrainOutcome,
    WindowSample,
};
