//! Mini encoder/decoder depth estimator with adaptive-bin or plain heads.

mod checkpoint;
mod config;
mod loss;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, HEADER_FILE, PAYLOAD_FILE};
pub use config::{
    bin_range, Head, LossConfig, NetConfig, Optimizer, TrainConfig, BIN_RANGE_MARGIN,
};
pub use loss::{bin_density_loss, silog_items, silog_loss};
pub use model::{
    BinState, BinVars, CueBatch, DepthModel, NetOutput, Prediction, Predictor, PLAIN_OFFSET,
    WIDTH_FLOOR,
};
pub use train::{
    evaluate_indices, loss_and_gradients, split_indices, train, EpochRecord, Evaluation, History,
    SampleSource,
};
