//! Composite-objective training: BPR sampling, loss assembly, Adam,
//! checkpoints and the ablation variants.

pub mod checkpoint;
pub mod config;
pub mod grad;
pub mod loss;
pub mod optim;
pub mod params;
pub mod run;
pub mod sampler;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{TrainConfig, Variant};
pub use grad::{compute_gradients, finite_difference_check, FdReport};
pub use loss::{evaluate_loss, evaluate_loss_weighted, representations, LossWeights, LossBreakdown, LossOutput, ModalityInput, ModelInputs, PlanSource};
pub use optim::Adam;
pub use params::{ModelParams, ModelShape};
pub use run::{inference_plans, train, EpochMetrics, TrainOutcome};
pub use sampler::{sample_bpr_triplets, BprSampler, Triplet};
