//! Conditional flow-matching synthesizer over codec latents.

mod flow;
mod mask;
mod model;
mod sample;
mod train;

pub use flow::{flow_interpolate, flow_interpolate_batch, target_vector_field, FlowConfig};
pub use mask::{make_mlm_mask, masked_count, MaskPolicy, MaskSpec};
pub use model::{zeros, ConditionProjector, DiffusionSynthesizer, Training, VectorField};
pub use sample::{cfg_vector_field, euler_integrate, euler_sample, standard_normal};
pub use train::{
    cfm_loss, cfm_loss_batch, cfm_loss_with, evaluate_flow, infill_mse, mask_tensor, pretrain_diffusion, train_flow_epoch,
    FlowExample, FlowTrainConfig,
};
