use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::sc_inv_with_grad;
use super::model::{prepare_input, Architecture, DepthModel, Network};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scenegen::{ConditioningRecord, Dataset, Split};
use crate::seed::{derive_seed, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Records drawn per epoch; `None` iterates over every training record.
    pub samples_per_epoch: Option<usize>,
    /// Cap on validation records (taken in dataset order).
    pub max_val_records: Option<usize>,
    /// Encoder widths; `None` picks them from the resolution.
    pub widths: Option<[usize; 3]>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 3e-4,
            batch_size: 16,
            seed: 0,
            samples_per_epoch: None,
            max_val_records: None,
            widths: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Parameter("epochs must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Parameter("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be at least 1".into()));
        }
        if self.samples_per_epoch == Some(0) {
            return Err(Error::Parameter("samples_per_epoch must be positive".into()));
        }
        Ok(())
    }
}

/// Progress line emitted after every epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

struct Sample {
    rgb: Tensor<f32>,
    sparse: Tensor<f32>,
    gt_log: Vec<f32>,
}

/// Preprocessed training and validation records for one architecture.
pub struct TrainingData {
    pub arch: Architecture,
    train: Vec<Sample>,
    val: Vec<Sample>,
}

impl TrainingData {
    pub fn new(arch: Architecture, train: &[ConditioningRecord], val: &[ConditioningRecord]) -> Result<Self> {
        arch.validate()?;
        let prep = |records: &[ConditioningRecord]| -> Result<Vec<Sample>> {
            records
                .iter()
                .map(|r| {
                    let input = prepare_input::<f32>(&arch, &r.rgb, r.sparse.grid())?;
                    if r.depth.dims() != (arch.resolution, arch.resolution) {
                        return Err(Error::shape((arch.resolution, arch.resolution), r.depth.dims()));
                    }
                    Ok(Sample {
                        rgb: input.rgb,
                        sparse: input.sparse,
                        gt_log: r.depth.values().iter().map(|d| d.ln() as f32).collect(),
                    })
                })
                .collect()
        };
        Ok(Self {
            train: prep(train)?,
            val: prep(val)?,
            arch,
        })
    }

    /// Loads the train and validation splits of a dataset.
    pub fn from_dataset(dataset: &Dataset, config: &TrainConfig) -> Result<Self> {
        let scene = &dataset.manifest.config.scene;
        let mut arch = Architecture::for_resolution(scene.resolution, scene.depth_range.0, scene.depth_range.1);
        if let Some(w) = config.widths {
            arch.widths = w;
        }
        let train = dataset.load_records(Split::Train)?;
        let mut val = dataset.load_records(Split::Val)?;
        if let Some(cap) = config.max_val_records {
            val.truncate(cap);
        }
        Self::new(arch, &train, &val)
    }

    pub fn train_len(&self) -> usize {
        self.train.len()
    }

    pub fn val_len(&self) -> usize {
        self.val.len()
    }
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(lr: f64, n: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn update(&mut self, params: &mut [f32], grads: &[f32]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..params.len() {
            let g = f64::from(grads[i]);
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] = (f64::from(params[i]) - self.lr * mhat / (vhat.sqrt() + self.eps)) as f32;
        }
    }
}

fn validation_loss(net: &Network, params: &[f32], val: &[Sample]) -> f64 {
    let mut total = 0.0;
    let mut scratch = vec![0.0f32; net.arch.resolution * net.arch.resolution];
    for s in val {
        let (out, _) = net.forward(params, &s.rgb, &s.sparse);
        total += sc_inv_with_grad(&out.data, &s.gt_log, &mut scratch);
    }
    total / val.len() as f64
}

/// Trains one ensemble member and returns the epoch with the lowest validation loss.
pub fn train(config: &TrainConfig, data: &TrainingData, init_seed: u64) -> Result<DepthModel> {
    train_with_progress(config, data, init_seed, |_| {})
}

pub fn train_with_progress(
    config: &TrainConfig,
    data: &TrainingData,
    init_seed: u64,
    mut progress: impl FnMut(&EpochReport),
) -> Result<DepthModel> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::Dataset("training split is empty".into()));
    }
    if data.val.is_empty() {
        return Err(Error::Dataset("validation split is empty".into()));
    }
    let mut model = DepthModel::new(data.arch.clone(), init_seed)?;
    let net = model.network().clone();
    let mut params = model.params().to_vec();
    let mut adam = Adam::new(config.learning_rate, params.len());
    let mut grads = vec![0.0f32; params.len()];
    let plane = data.arch.resolution * data.arch.resolution;
    let mut dout = Tensor::zeros(1, data.arch.resolution, data.arch.resolution);
    let shuffle_seed = derive_seed(config.seed ^ init_seed, stream::SHUFFLE, 0);

    let mut best: Option<(f64, usize, Vec<f32>)> = None;
    let mut last_train = f64::NAN;
    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(shuffle_seed, stream::SHUFFLE, epoch as u64));
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut rng);
        if let Some(n) = config.samples_per_epoch {
            // Cycle through reshuffles when asking for more than one pass.
            while order.len() < n {
                let mut extra: Vec<usize> = (0..data.train.len()).collect();
                extra.shuffle(&mut rng);
                order.extend(extra);
            }
            order.truncate(n);
        }

        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.fill(0.0);
            for &i in batch {
                let s = &data.train[i];
                let (out, cache) = net.forward(&params, &s.rgb, &s.sparse);
                let loss = sc_inv_with_grad(&out.data, &s.gt_log, &mut dout.data);
                if !loss.is_finite() {
                    return Err(Error::Training {
                        epoch,
                        reason: "non-finite training loss".into(),
                    });
                }
                epoch_loss += loss;
                net.backward(&params, &cache, &dout, &mut grads, false);
            }
            let scale = 1.0 / batch.len() as f32;
            for g in &mut grads {
                *g *= scale;
            }
            adam.update(&mut params, &grads);
        }
        debug_assert_eq!(dout.data.len(), plane);
        last_train = epoch_loss / order.len() as f64;
        let val_loss = validation_loss(&net, &params, &data.val);
        if !val_loss.is_finite() || !last_train.is_finite() {
            return Err(Error::Training {
                epoch,
                reason: "non-finite validation loss".into(),
            });
        }
        progress(&EpochReport {
            epoch,
            train_loss: last_train,
            val_loss,
        });
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, params.clone()));
        }
    }

    let (best_val, best_epoch, best_params) = best.expect("at least one epoch");
    model.set_params(best_params);
    model.meta.seed = init_seed;
    model.meta.epochs_trained = config.epochs;
    model.meta.best_epoch = best_epoch;
    model.meta.best_val_loss = best_val;
    model.meta.final_train_loss = last_train;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{DepthMap, Grid, RgbImage, SparseDepthMap};

    fn toy_records(n: usize, res: usize) -> Vec<ConditioningRecord> {
        (0..n)
            .map(|k| {
                let scale = 10.0 + 5.0 * k as f64;
                let depth = DepthMap::new(Grid::from_fn(res, res, |r, c| scale * (1.0 + (r + c) as f64 / res as f64))).unwrap();
                let rgb = RgbImage::new(res, res, (0..res * res * 3).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap();
                let mut sparse = SparseDepthMap::empty(res, res);
                let p = crate::grid::Pixel::new(k % res, (3 * k) % res);
                sparse.observe(p, depth.get(p)).unwrap();
                ConditioningRecord {
                    scene_id: k,
                    set_index: 0,
                    rgb,
                    depth,
                    sparse,
                }
            })
            .collect()
    }

    fn toy_data() -> TrainingData {
        let arch = Architecture {
            resolution: 8,
            widths: [2, 3, 4],
            sparse_features: 2,
            sparse_scale: 100.0,
            output_bias: 3.0,
        };
        let recs = toy_records(6, 8);
        TrainingData::new(arch, &recs[..4], &recs[4..]).unwrap()
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            learning_rate: 1e-2,
            batch_size: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy_data();
        let a = train(&cfg(3), &data, 1).unwrap();
        let b = train(&cfg(3), &data, 1).unwrap();
        assert_eq!(a.meta.best_val_loss, b.meta.best_val_loss);
        assert_eq!(a.params(), b.params());
        let c = train(&cfg(3), &data, 2).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn returns_best_validation_checkpoint() {
        let data = toy_data();
        let mut reports = Vec::new();
        let m = train_with_progress(&cfg(6), &data, 5, |r| reports.push(r.clone())).unwrap();
        assert_eq!(reports.len(), 6);
        let min = reports.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(m.meta.best_val_loss, min);
        assert!(m.meta.best_val_loss <= reports[0].val_loss);
        assert_eq!(m.meta.final_train_loss, reports[5].train_loss);
        // The returned weights really are the best epoch's weights.
        let again = validation_loss(m.network(), m.params(), &data.val);
        assert!((again - min).abs() < 1e-9);
    }

    #[test]
    fn empty_splits_are_dataset_errors() {
        let data = toy_data();
        let arch = data.arch.clone();
        let recs = toy_records(2, 8);
        let no_val = TrainingData::new(arch.clone(), &recs, &[]).unwrap();
        assert!(matches!(train(&cfg(1), &no_val, 0), Err(Error::Dataset(_))));
        let no_train = TrainingData::new(arch, &[], &recs).unwrap();
        assert!(matches!(train(&cfg(1), &no_train, 0), Err(Error::Dataset(_))));
    }

    #[test]
    fn divergence_reports_epoch() {
        let data = toy_data();
        let wild = TrainConfig {
            epochs: 30,
            learning_rate: 1e30,
            batch_size: 1,
            ..TrainConfig::default()
        };
        match train(&wild, &data, 0) {
            Err(Error::Training { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected training error, got {:?}", other.map(|m| m.meta)),
        }
    }
}
