//! Sparse-conditioned monocular depth network: a three-level U-Net that reads
//! an RGB image plus a sparse depth channel and outputs log-depth.

mod checkpoint;
mod loss;
mod model;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use loss::{checked_scale_invariant_loss, scale_invariant_loss};
pub use model::{
    depth_from_log, empty_sparse_grid, normalize_sparse, normalize_sparse_slope, Architecture, DepthModel,
    ForwardCache, Network, TrainingMeta, SPARSE_FEATURES,
};
pub use train::{train, train_with_progress, EpochReport, TrainConfig, TrainingData};

pub(crate) use loss::sc_inv_from_logs;
pub(crate) use model::prepare_input;
