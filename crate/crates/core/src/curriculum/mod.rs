//! Staged training: optimizer, schedule, augmentation, task mixing and the
//! stage runner.

mod augment;
mod freeze;
mod mix;
mod optim;
mod plan;
mod runner;

pub use augment::{spec_augment, SpecAugmentConfig};
pub use freeze::{freeze_select, parse_selector, Partition};
pub use mix::{assign_tasks, mix_tasks, Task};
pub use optim::{adamw_first_step, clip_grad_norm, lr_on_plateau, AdamW, AdamWConfig, LrOnPlateau, Moments, PlateauConfig};
pub use plan::{LossKind, Stage, StagePlan};
pub use runner::{encode_latents, run_stage, EpochMetrics, RunOptions, StageOutcome, TrainingState};
