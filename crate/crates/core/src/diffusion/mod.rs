//! Conditional trajectory diffusion: schedule, denoiser, data, training.

pub mod checkpoint;
pub mod dataset;
pub mod frame;
pub mod model;
pub mod normalizer;
pub mod schedule;
pub mod train;

pub use checkpoint::Checkpoint;
pub use dataset::{examples_from_records, read_dataset, write_dataset, DatasetRecord, Example, SceneCache, Split};
pub use frame::{gradient_to_local, to_local, to_world};
pub use model::{Arch, Denoiser, Layout};
pub use normalizer::Normalizer;
pub use schedule::NoiseSchedule;
pub use train::{train, train_with_callback, write_loss_curve, EpochLoss, TrainConfig, TrainOutcome};
