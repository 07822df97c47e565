//! Oracle-judged metrics of sampled models: unlearning, retention and
//! context accuracy, Frechet distance to the base model, parameter drift
//! and concept revival.

pub mod accuracy;
pub mod drift;
pub mod frechet;
pub mod report;
pub mod revival;
pub mod sampler;

pub use accuracy::{cell_stats, context_alignment, retention_accuracy, unlearning_accuracy, CellStats};
pub use drift::{drift_from_params, drift_metrics, DriftMetrics};
pub use frechet::{frechet_between, frechet_distance, sqrtm_2x2, GaussianFit};
pub use report::{evaluate_checkpoint, evaluate_run, evaluate_step, EvalConfig, MetricsReport, StepMetrics, CSV_HEADER};
pub use revival::{revival_scan, RevivalEvent, RevivalMatrix, REVIVAL_THRESHOLD};
pub use sampler::{GroundTruthSampler, ModelSampler, Sampler};
