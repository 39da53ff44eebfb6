//! Procedural tube-interior scenes, sparse conditioning samplers and the dataset container.

mod dataset;
mod sampling;
mod scene;

pub use dataset::{
    build_dataset, ConditioningRecord, Dataset, DatasetConfig, Manifest, SamplingStrategy, SceneEntry, SparseEntry,
    Split, Splits, StoredScene, StretchConfig, StretchRecord, DATASET_FORMAT_VERSION, MANIFEST_FILE,
};
pub use sampling::{sample_sparse_bernoulli, sample_sparse_cluster, sample_sparse_random, stretch_depth, StretchMode};
pub use scene::{generate_scene, Scene, SceneParams};
