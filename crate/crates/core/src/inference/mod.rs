//! Variational objective, posterior sampling, training and checkpoints.

mod checkpoint;
mod kl;
mod model;
mod objective;
mod params;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use kl::{diffusion_mismatch_constant, kl_diagnose, transition_kl, KlRow, KlSetup};
pub use model::{softmax_rows, ForwardPass, InitConfig, ModelConfig, Prediction, Psdebnn};
pub use objective::{elbo, elbo_with_grad, u_theta, u_theta_value, ElboBreakdown, ElboRequest};
pub use params::{AdamConfig, BoundParams, Param, ParamStore};
pub use train::{evaluate, train, write_log_csv, EpochLog, EvalReport, TrainConfig, TrainOutcome};
