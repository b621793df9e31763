//! Loss, Adam, MCMC relocation, noise injection and the training loop.

pub mod adam;
pub mod loss;
pub mod mcmc;
pub mod ssim;
mod train;

pub use adam::{Adam, LearningRates};
pub use loss::{LossConfig, LossTerms, RegReduction};
pub use mcmc::{clone_opacity, noise_inject, relocate, McmcConfig, RelocationStats};
pub use ssim::{ssim, ssim_with_grad};
pub use train::{evaluate, train, train_with, EvalReport, MetricsRecord, TrainConfig, TrainOptions, TrainOutput, ViewMetrics};
