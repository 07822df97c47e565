//! Teacher-student continual unlearning: configuration, losses, replay,
//! the per-step loop, sequencing, checkpoints and ablation variants.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod losses;
pub mod pretrain;
pub mod replay;
pub mod step;

pub use ablation::{make_ablation_configs, make_reg_sweep, make_timestep_configs, Variant};
pub use checkpoint::{Checkpoint, Provenance, StepConfig};
pub use config::{GateConfig, LossWeights, PretrainConfig, UnlearnStepConfig};
pub use losses::{
    distill_loss, reg_loss, retain_batch_loss, total_step_loss, unlearn_batch_loss, DistillItem, LossBreakdown,
    LossContext, StepBatches, TermRngs,
};
pub use pretrain::{pretrain_base, BaseReport, PretrainOutcome};
pub use replay::ReplayCache;
pub use step::{run_sequence, run_sequence_with, run_unlearn_step, SequenceRun, StepLog, StepOutcome};
