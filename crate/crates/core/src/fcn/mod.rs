//! The routing network: configuration, stage stack, training and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod model;
pub mod train;

pub use config::{min_stages, FcnConfig};
pub use model::{score_comparator, Gradients, Network, Objective, Stage, Trace};
pub use train::{epoch_seed, train, EpochRecord, Evaluation, FcnModel, StepReport, TrainSettings, CSV_HEADER};
