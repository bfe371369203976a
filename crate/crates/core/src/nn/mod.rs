//! Dense multi-task networks for modeling attacks.

pub mod adam;
pub mod checkpoint;
pub mod data;
pub mod gradcheck;
pub mod matrix;
pub mod network;
pub mod spec;
pub mod train;

pub use adam::{adam_step, adam_step_params, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use data::{build_training_set, InputEncoding, TrainingSet};
pub use matrix::Matrix;
pub use network::{backward, forward, loss, Dense, Gradients, HeadTarget, LossValue, Parameters};
pub use spec::{
    build_architecture, Activation, AttackMode, HeadRole, HeadSpec, NetworkSpec, OutputKind,
};
pub use train::{
    evaluate, predict_responses, split_indices, train, write_history_csv, AttackResult,
    EpochRecord, Evaluation, Split, TrainConfig, TrainOutcome, SUCCESS_THRESHOLD,
};
