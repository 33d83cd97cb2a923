//! Feed-forward classifier: input batch norm, ReLU hidden layers with
//! inverted dropout, a sigmoid output unit, trained with momentum SGD on
//! binary cross-entropy.

pub mod io;
pub mod layers;
pub mod mlp;
pub mod train;

pub use io::{mlp_from_json, mlp_to_json, MlpDocument};
pub use mlp::{bce_loss, Architecture, Layer, MlpModel, Mode, Tape};
pub use train::{history_csv, train, train_matrices, EpochRecord, TrainConfig, TrainOutcome};
