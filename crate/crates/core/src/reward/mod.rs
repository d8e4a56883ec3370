//! Persona-conditioned reward model: head, configuration, training loop and
//! checkpoints.

mod checkpoint;
mod config;
mod head;
mod model;
mod train;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{LossMode, PersonaMode, TrainConfig};
pub use head::{HeadForward, RewardHead};
pub use model::{EpochMetrics, Model, PersonaState, TrainingMetadata, STREAM_HEAD, STREAM_SHUFFLE};
pub use train::{
    batch_loss, continue_training, example_loss, freeze_surrogate, nll_from_rewards, pass_stats, train, Example,
    LossTerms, PassStats, TrainingSet, UserTerm,
};
