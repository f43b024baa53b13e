//! Losses, the optimizer, the growth schedule and the training loop.

mod loss;
mod optim;
mod trainer;
#[cfg(test)]
mod tests;

pub use loss::{combined_loss, esr_loss, manet_loss, LossBreakdown, LossKind};
pub use optim::{sgd_step, OptimizerState};
pub use trainer::{
    evaluate, forward_loss, grows_at, pooled_lengths, EpochRecord, EvalReport, PooledLengths, StepTerms, TrainConfig,
    TrainOutcome, Trainer,
    EVAL_BATCH,
};
