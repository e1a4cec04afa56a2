//! Pixel-wise cross-entropy, Adam, the training loop, learning-rate grid
//! search and checkpoints.

mod adam;
mod checkpoint;
mod config;
mod grid;
mod loss;
mod train;

pub use adam::{Adam, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION};
pub use config::{CropSize, TrainingConfig};
pub use grid::{lr_grid_search, select_learning_rate, GridSearchResult, DEFAULT_LEARNING_RATES};
pub use loss::{cross_entropy_loss, cross_entropy_with_grad, LOG_CLAMP};
pub use train::{initial_checkpoint, loss_csv, train, train_from, TrainOutcome};
