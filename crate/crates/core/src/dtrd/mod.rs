//! RGB-D transformer tracker: model, loss, cropping, inference and training.

pub mod config;
pub mod crop;
pub mod loss;
pub mod model;
pub mod tracker;
pub mod train;

pub use config::TrackerConfig;
pub use crop::CropWindow;
pub use loss::{box_loss, box_loss_value, LossWeights};
pub use model::{corners_to_box, DtrdModel};
pub use tracker::{init_track, track_step, DtrdTracker, TrackState};
pub use train::{mean_iou, train, train_step, PairSource, TrainConfig, TrainingPair};
