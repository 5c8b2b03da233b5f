//! Configuration, checkpoints, the training loop, BLEU and gradient checks.

pub mod bleu;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod gradcheck;
pub mod train;

pub use bleu::{bleu_stats, corpus_bleu, BleuStats};
pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use eval::{evaluate, growth_stats, translate_all, EvalReport};
pub use gradcheck::{run_gradcheck, LossCheck};
pub use train::{init_model, run_epoch, stage_checkpoint_name, train, EpochMetrics, METRICS_FILE};
