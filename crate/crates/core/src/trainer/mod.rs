//! SGD with warmup and step decay, the pair-batch training loop, and
//! checkpoints.

mod checkpoint;
mod optim;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, MAGIC, VERSION};
pub use optim::{learning_rate, sgd_step, sgd_update, OptimizerState, TrainConfig};
pub use train::{train, verification_accuracy, write_loss_history, LossRow, TrainOutcome, Trainer};
