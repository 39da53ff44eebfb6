//! On-disk dataset container: scenes, sparse conditioning sets and a JSON manifest.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! manifest.json
//! scene_0000_rgb.png            8-bit RGB
//! scene_0000_depth.pmde         ground truth
//! scene_0000_sparse_00.pmde     conditioning set 0 (sentinel -1)
//! scene_0000_depth_s03.pmde     stretched ground truth for set 3 (training only)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sampling::{
    sample_sparse_bernoulli, sample_sparse_cluster, sample_sparse_random, stretch_depth, StretchMode,
};
use super::scene::{generate_scene, log_uniform, SceneParams};
use crate::error::{Error, Result};
use crate::grid::{DepthMap, RgbImage, SparseDepthMap};
use crate::io::{read_raw_grid, read_rgb_png, write_raw_grid, write_rgb_png};
use crate::seed::{derive_seed, stream};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StretchConfig {
    /// Chance that a training conditioning set uses a stretched ground truth.
    pub probability: f64,
    pub linear_factor: (f64, f64),
    pub exponential_factor: (f64, f64),
}

impl Default for StretchConfig {
    fn default() -> Self {
        Self {
            probability: 0.3,
            linear_factor: (0.7, 1.4),
            exponential_factor: (0.92, 1.08),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub n_scenes: usize,
    pub sparse_sets_per_scene: usize,
    pub seed: u64,
    pub scene: SceneParams,
    pub val_fraction: f64,
    pub test_fraction: f64,
    /// Upper end of the log-uniform point-count schedule.
    pub max_points: usize,
    pub cluster_size: usize,
    pub cluster_sigma: f64,
    pub stretch: StretchConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_scenes: 100,
            sparse_sets_per_scene: 10,
            seed: 0,
            scene: SceneParams::default(),
            val_fraction: 0.1,
            test_fraction: 0.1,
            max_points: 256,
            cluster_size: 8,
            cluster_sigma: 2.0,
            stretch: StretchConfig::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if self.n_scenes == 0 {
            return Err(Error::Parameter("n_scenes must be at least 1".into()));
        }
        if self.sparse_sets_per_scene == 0 {
            return Err(Error::Parameter("sparse_sets_per_scene must be at least 1".into()));
        }
        let fractions_ok = (0.0..1.0).contains(&self.val_fraction)
            && (0.0..1.0).contains(&self.test_fraction)
            && self.val_fraction + self.test_fraction < 1.0;
        if !fractions_ok {
            return Err(Error::Parameter("split fractions must be in [0, 1) and sum below 1".into()));
        }
        if self.cluster_size == 0 || !(self.cluster_sigma >= 0.0) {
            return Err(Error::Parameter("invalid cluster schedule".into()));
        }
        if !(0.0..=1.0).contains(&self.stretch.probability) {
            return Err(Error::Parameter("stretch probability outside [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingStrategy {
    Random,
    Cluster,
    Bernoulli,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StretchRecord {
    pub mode: StretchMode,
    pub factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseEntry {
    pub file: String,
    pub strategy: SamplingStrategy,
    pub target_points: usize,
    pub observed_count: usize,
    pub stretch: Option<StretchRecord>,
    /// Stretched ground truth this set was sampled from, when stretched.
    pub depth: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub id: usize,
    pub seed: u64,
    pub split: Split,
    pub rgb: String,
    pub depth: String,
    pub sparse: Vec<SparseEntry>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: DatasetConfig,
    pub splits: Splits,
    pub scenes: Vec<SceneEntry>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let m: Manifest = serde_json::from_str(&text)?;
        m.check()?;
        Ok(m)
    }

    /// Structural validation of a parsed manifest.
    pub fn check(&self) -> Result<()> {
        if self.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::Dataset(format!(
                "unsupported dataset format version {}",
                self.format_version
            )));
        }
        if self.scenes.len() != self.config.n_scenes {
            return Err(Error::Dataset("scene count does not match config".into()));
        }
        let mut seen = vec![false; self.scenes.len()];
        for (split, ids) in [
            (Split::Train, &self.splits.train),
            (Split::Val, &self.splits.val),
            (Split::Test, &self.splits.test),
        ] {
            for &id in ids {
                let entry = self
                    .scenes
                    .get(id)
                    .ok_or_else(|| Error::Dataset(format!("split lists unknown scene {id}")))?;
                if entry.split != split || seen[id] {
                    return Err(Error::Dataset(format!("scene {id} has inconsistent split")));
                }
                seen[id] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Dataset("scene missing from splits".into()));
        }
        for (i, s) in self.scenes.iter().enumerate() {
            if s.id != i || s.sparse.len() != self.config.sparse_sets_per_scene {
                return Err(Error::Dataset(format!("scene entry {i} is malformed")));
            }
        }
        Ok(())
    }

    pub fn ids(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.splits.train,
            Split::Val => &self.splits.val,
            Split::Test => &self.splits.test,
        }
    }
}

fn split_counts(n: usize, val_fraction: f64, test_fraction: f64) -> (usize, usize) {
    let mut n_val = (n as f64 * val_fraction).round() as usize;
    let mut n_test = (n as f64 * test_fraction).round() as usize;
    while n_val + n_test >= n && (n_val > 0 || n_test > 0) {
        if n_test >= n_val && n_test > 0 {
            n_test -= 1;
        } else {
            n_val -= 1;
        }
    }
    (n_val, n_test)
}

/// Point count for conditioning set `j` of `sets`: log-uniform over
/// `[0, max_points]`, stratified so set 0 is empty-ish and the last set is dense.
fn scheduled_points(j: usize, sets: usize, max_points: usize, rng: &mut impl Rng) -> usize {
    let top = ((max_points + 1) as f64).ln();
    let lo = top * j as f64 / sets as f64;
    let hi = top * (j + 1) as f64 / sets as f64;
    let u = rng.random_range(lo..hi);
    ((u.exp().floor() as usize).saturating_sub(1)).min(max_points)
}

fn scene_file(id: usize, suffix: &str) -> String {
    format!("scene_{id:04}_{suffix}")
}

/// Generates scenes and conditioning sets under `dir` and writes the manifest.
pub fn build_dataset(dir: &Path, config: &DatasetConfig) -> Result<Manifest> {
    config.validate()?;
    fs::create_dir_all(dir)?;
    let n = config.n_scenes;
    let (n_val, n_test) = split_counts(n, config.val_fraction, config.test_fraction);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, stream::SPLIT, 0)));
    let mut splits = Splits {
        test: order[..n_test].to_vec(),
        val: order[n_test..n_test + n_val].to_vec(),
        train: order[n_test + n_val..].to_vec(),
    };
    splits.train.sort_unstable();
    splits.val.sort_unstable();
    splits.test.sort_unstable();
    let split_of = |id: usize| {
        if splits.test.binary_search(&id).is_ok() {
            Split::Test
        } else if splits.val.binary_search(&id).is_ok() {
            Split::Val
        } else {
            Split::Train
        }
    };

    let res = config.scene.resolution;
    let mut scenes = Vec::with_capacity(n);
    for id in 0..n {
        let scene_seed = derive_seed(config.seed, stream::SCENE, id as u64);
        let scene = generate_scene(scene_seed, &config.scene)?;
        let split = split_of(id);
        let rgb_name = scene_file(id, "rgb.png");
        let depth_name = scene_file(id, "depth.pmde");
        write_rgb_png(&dir.join(&rgb_name), &scene.rgb)?;
        write_raw_grid(&dir.join(&depth_name), scene.depth.grid())?;

        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, stream::SPARSE, id as u64));
        let mut sparse = Vec::with_capacity(config.sparse_sets_per_scene);
        for j in 0..config.sparse_sets_per_scene {
            let target = scheduled_points(j, config.sparse_sets_per_scene, config.max_points.min(res * res), &mut rng);
            let stretch = if split == Split::Train && rng.random::<f64>() < config.stretch.probability {
                let (mode, (lo, hi)) = if rng.random::<bool>() {
                    (StretchMode::Linear, config.stretch.linear_factor)
                } else {
                    (StretchMode::Exponential, config.stretch.exponential_factor)
                };
                Some(StretchRecord {
                    mode,
                    factor: log_uniform(&mut rng, lo, hi),
                })
            } else {
                None
            };
            let source = match stretch {
                Some(s) => {
                    let stretched = stretch_depth(&scene.depth, s.mode, s.factor)?;
                    // Round to the on-disk precision so sparse values and the
                    // stored ground truth agree exactly after reload.
                    DepthMap::new(stretched.grid().map(|d| f64::from(d as f32)))?
                }
                None => scene.depth.clone(),
            };
            let strategy = match j % 3 {
                0 => SamplingStrategy::Random,
                1 => SamplingStrategy::Cluster,
                _ => SamplingStrategy::Bernoulli,
            };
            let map = match strategy {
                SamplingStrategy::Random => sample_sparse_random(&source, target, &mut rng)?,
                SamplingStrategy::Cluster if target == 0 => SparseDepthMap::empty(res, res),
                SamplingStrategy::Cluster => {
                    let clusters = target.div_ceil(config.cluster_size);
                    sample_sparse_cluster(&source, clusters, config.cluster_size, config.cluster_sigma, &mut rng)?
                }
                SamplingStrategy::Bernoulli => {
                    sample_sparse_bernoulli(&source, target as f64 / (res * res) as f64, &mut rng)?
                }
            };
            let file = scene_file(id, &format!("sparse_{j:02}.pmde"));
            write_raw_grid(&dir.join(&file), map.grid())?;
            let depth = match stretch {
                Some(_) => {
                    let name = scene_file(id, &format!("depth_s{j:02}.pmde"));
                    write_raw_grid(&dir.join(&name), source.grid())?;
                    Some(name)
                }
                None => None,
            };
            sparse.push(SparseEntry {
                file,
                strategy,
                target_points: target,
                observed_count: map.observed_count(),
                stretch,
                depth,
            });
        }
        scenes.push(SceneEntry {
            id,
            seed: scene_seed,
            split,
            rgb: rgb_name,
            depth: depth_name,
            sparse,
        });
    }

    let manifest = Manifest {
        format_version: DATASET_FORMAT_VERSION,
        config: config.clone(),
        splits,
        scenes,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

/// A scene loaded back from disk.
#[derive(Clone, Debug)]
pub struct StoredScene {
    pub id: usize,
    pub rgb: RgbImage,
    pub depth: DepthMap,
}

/// One training example: image, the ground truth it was sampled from, and the sparse set.
#[derive(Clone, Debug)]
pub struct ConditioningRecord {
    pub scene_id: usize,
    pub set_index: usize,
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub sparse: SparseDepthMap,
}

/// Read access to a dataset directory.
#[derive(Clone, Debug)]
pub struct Dataset {
    dir: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = Manifest::read(dir)
            .map_err(|e| Error::Dataset(format!("cannot read dataset at {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn resolution(&self) -> usize {
        self.manifest.config.scene.resolution
    }

    pub fn load_scene(&self, id: usize) -> Result<StoredScene> {
        let entry = self
            .manifest
            .scenes
            .get(id)
            .ok_or_else(|| Error::Dataset(format!("no scene {id}")))?;
        let rgb = read_rgb_png(&self.dir.join(&entry.rgb))?;
        let depth = DepthMap::new(read_raw_grid(&self.dir.join(&entry.depth))?)?;
        if rgb.dims() != depth.dims() {
            return Err(Error::Dataset(format!("scene {id}: rgb and depth sizes differ")));
        }
        Ok(StoredScene { id, rgb, depth })
    }

    pub fn load_split_scenes(&self, split: Split) -> Result<Vec<StoredScene>> {
        self.manifest.ids(split).iter().map(|&id| self.load_scene(id)).collect()
    }

    /// All conditioning records for the scenes of `split`.
    pub fn load_records(&self, split: Split) -> Result<Vec<ConditioningRecord>> {
        let mut out = Vec::new();
        for &id in self.manifest.ids(split) {
            let scene = self.load_scene(id)?;
            for (j, entry) in self.manifest.scenes[id].sparse.iter().enumerate() {
                let sparse = SparseDepthMap::from_grid(read_raw_grid(&self.dir.join(&entry.file))?)?;
                let depth = match &entry.depth {
                    Some(name) => DepthMap::new(read_raw_grid(&self.dir.join(name))?)?,
                    None => scene.depth.clone(),
                };
                out.push(ConditioningRecord {
                    scene_id: id,
                    set_index: j,
                    rgb: scene.rgb.clone(),
                    depth,
                    sparse,
                });
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(n_scenes: usize, seed: u64) -> DatasetConfig {
        DatasetConfig {
            n_scenes,
            sparse_sets_per_scene: 10,
            seed,
            scene: SceneParams {
                resolution: 32,
                ..SceneParams::default()
            },
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn split_counts_keep_train_nonempty() {
        assert_eq!(split_counts(10, 0.1, 0.1), (1, 1));
        assert_eq!(split_counts(300, 0.1, 0.1), (30, 30));
        let (v, t) = split_counts(2, 0.5, 0.4);
        assert!(v + t < 2);
        assert_eq!(split_counts(1, 0.1, 0.1), (0, 0));
    }

    #[test]
    fn schedule_spans_density_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(scheduled_points(0, 10, 256, &mut rng), 0);
            assert!(scheduled_points(9, 10, 256, &mut rng) >= 146);
        }
    }

    #[test]
    fn build_is_deterministic_and_loadable() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = small_config(10, 3);
        let ma = build_dataset(a.path(), &cfg).unwrap();
        let mb = build_dataset(b.path(), &cfg).unwrap();
        assert_eq!(ma, mb);
        let bytes = |d: &Path, name: &str| fs::read(d.join(name)).unwrap();
        assert_eq!(bytes(a.path(), MANIFEST_FILE), bytes(b.path(), MANIFEST_FILE));
        for s in &ma.scenes {
            assert_eq!(bytes(a.path(), &s.rgb), bytes(b.path(), &s.rgb));
            for e in &s.sparse {
                assert_eq!(bytes(a.path(), &e.file), bytes(b.path(), &e.file));
            }
        }

        // 10 scenes x 10 sets = 100 conditioning records.
        let total: usize = ma.scenes.iter().map(|s| s.sparse.len()).sum();
        assert_eq!(total, 100);
        let counts: Vec<usize> = ma.scenes.iter().flat_map(|s| s.sparse.iter().map(|e| e.observed_count)).collect();
        assert_eq!(*counts.iter().min().unwrap(), 0);
        assert!(*counts.iter().max().unwrap() >= 100);

        let ds = Dataset::open(a.path()).unwrap();
        let train = ds.load_records(Split::Train).unwrap();
        assert_eq!(train.len(), ma.splits.train.len() * 10);
        for r in &train {
            // Sparse values are exactly the (possibly stretched) ground truth.
            for p in r.sparse.observed_pixels() {
                assert_eq!(r.sparse.get(p), Some(r.depth.get(p)));
            }
        }
        // Stretching never touches evaluation scenes.
        for s in ma.scenes.iter().filter(|s| s.split != Split::Train) {
            assert!(s.sparse.iter().all(|e| e.stretch.is_none()));
        }
    }

    #[test]
    fn rejects_empty_dataset() {
        let d = tempfile::tempdir().unwrap();
        assert!(matches!(build_dataset(d.path(), &small_config(0, 1)), Err(Error::Parameter(_))));
    }

    #[test]
    fn unwritable_destination_is_io_error() {
        let d = tempfile::tempdir().unwrap();
        let file = d.path().join("blocker");
        fs::write(&file, b"x").unwrap();
        let err = build_dataset(&file.join("sub"), &small_config(1, 1)).unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }
}
