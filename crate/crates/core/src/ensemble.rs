//! Deep ensemble of depth models: pixelwise predictive variance, its mean
//! (the total uncertainty) and the gradient of that total with respect to the
//! sparse depth input.
//!
//! Member outputs are log-depth maps; variance is taken in that space.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::depthnet::{
    load_checkpoint, normalize_sparse_slope, prepare_input, save_checkpoint, train_with_progress, Architecture,
    DepthModel, EpochReport, TrainConfig, TrainingData,
};
use crate::error::{Error, Result};
use crate::grid::{FieldRole, Grid, RgbImage, ScalarField, SparseDepthMap};
use crate::nn::Tensor;
use crate::seed::{derive_seed, stream};

pub const ENSEMBLE_FORMAT_VERSION: u32 = 1;

/// `K >= 2` independently initialized depth models sharing one architecture.
#[derive(Clone, Debug)]
pub struct DepthEnsemble {
    members: Vec<DepthModel>,
}

impl DepthEnsemble {
    pub fn new(members: Vec<DepthModel>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::Parameter(format!("ensemble needs K >= 2 members, got {}", members.len())));
        }
        let arch = members[0].architecture();
        if members.iter().any(|m| m.architecture() != arch) {
            return Err(Error::Parameter("ensemble members differ in architecture".into()));
        }
        for (i, a) in members.iter().enumerate() {
            if members[..i].iter().any(|b| b.meta.seed == a.meta.seed) {
                return Err(Error::Parameter(format!("duplicate member seed {}", a.meta.seed)));
            }
        }
        Ok(Self { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[DepthModel] {
        &self.members
    }

    pub fn architecture(&self) -> &Architecture {
        self.members[0].architecture()
    }

    pub fn resolution(&self) -> usize {
        self.architecture().resolution
    }

    /// One log-depth field per member, in member order.
    pub fn predict_all(&self, rgb: &RgbImage, sparse: &SparseDepthMap) -> Result<Vec<ScalarField>> {
        self.members.iter().map(|m| m.forward(rgb, sparse)).collect()
    }

    /// `∂U_total/∂S` at every pixel of the raw sparse map (sentinels included).
    pub fn uncertainty_gradient(&self, rgb: &RgbImage, sparse: &SparseDepthMap) -> Result<ScalarField> {
        Ok(self.analyze(rgb, sparse, true)?.gradient.expect("gradient requested"))
    }

    /// Predictions, variance, total uncertainty and optionally its input gradient
    /// from one set of forward passes.
    pub fn analyze(&self, rgb: &RgbImage, sparse: &SparseDepthMap, with_gradient: bool) -> Result<Analysis> {
        let arch = self.architecture();
        let r = arch.resolution;
        let input = prepare_input::<f64>(arch, rgb, sparse.grid())?;
        let mut outputs = Vec::with_capacity(self.len());
        let mut caches = Vec::with_capacity(self.len());
        for m in &self.members {
            let (out, cache) = m.network().forward(m.params_f64(), &input.rgb, &input.sparse);
            outputs.push(ScalarField::new(FieldRole::LogDepth, Grid::from_vec(r, r, out.data)?)?);
            if with_gradient {
                caches.push(cache);
            }
        }
        let mean = mean_map(&outputs)?;
        let variance = variance_map(&outputs)?;
        let total = total_uncertainty(&variance)?;

        let gradient = if with_gradient {
            let n = (r * r) as f64;
            let k = self.len() as f64;
            let mut grad = vec![0.0; r * r];
            for ((m, out), cache) in self.members.iter().zip(&outputs).zip(&caches) {
                // ∂U_total/∂D_k = 2 (D_k − D̄) / (N K); the mean's own dependence cancels.
                let dout: Vec<f64> = out
                    .values()
                    .iter()
                    .zip(mean.values())
                    .map(|(d, mu)| 2.0 * (d - mu) / (n * k))
                    .collect();
                let mut scratch = vec![0.0; m.params_f64().len()];
                let ds = m
                    .network()
                    .backward(m.params_f64(), cache, &Tensor::from_vec(1, r, r, dout), &mut scratch, true)
                    .expect("sparse gradient requested");
                for (g, d) in grad.iter_mut().zip(&ds.data) {
                    *g += d;
                }
            }
            for (g, raw) in grad.iter_mut().zip(sparse.values()) {
                *g *= normalize_sparse_slope(*raw, arch.sparse_scale);
            }
            if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::Numerical { row: i / r, col: i % r });
            }
            Some(ScalarField::new(FieldRole::Gradient, Grid::from_vec(r, r, grad)?)?)
        } else {
            None
        };

        Ok(Analysis {
            predictions: outputs,
            mean,
            variance,
            total,
            gradient,
        })
    }
}

/// Everything the selection strategies and the acquisition loop need from one
/// evaluation of the ensemble.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub predictions: Vec<ScalarField>,
    /// Mean member log-depth.
    pub mean: ScalarField,
    pub variance: ScalarField,
    pub total: f64,
    pub gradient: Option<ScalarField>,
}

fn check_stack(preds: &[ScalarField]) -> Result<(usize, usize)> {
    let first = preds
        .first()
        .ok_or_else(|| Error::Parameter("need at least one prediction".into()))?;
    let dims = first.dims();
    for p in preds {
        if p.dims() != dims {
            return Err(Error::shape(dims, p.dims()));
        }
    }
    Ok(dims)
}

/// Pixelwise mean, computed relative to the first member so identical members
/// reproduce their common value exactly.
pub fn mean_map(preds: &[ScalarField]) -> Result<ScalarField> {
    let (h, w) = check_stack(preds)?;
    let k = preds.len() as f64;
    let base = preds[0].values();
    let data = (0..h * w)
        .map(|i| {
            let shift: f64 = preds.iter().map(|p| p.values()[i] - base[i]).sum();
            base[i] + shift / k
        })
        .collect();
    ScalarField::new(preds[0].role(), Grid::from_vec(h, w, data)?)
}

/// Pixelwise population variance (divisor `K`).
pub fn variance_map(preds: &[ScalarField]) -> Result<ScalarField> {
    if preds.len() < 2 {
        return Err(Error::Parameter(format!("variance needs K >= 2 predictions, got {}", preds.len())));
    }
    let mean = mean_map(preds)?;
    let (h, w) = mean.dims();
    let k = preds.len() as f64;
    let data = mean
        .values()
        .iter()
        .enumerate()
        .map(|(i, mu)| preds.iter().map(|p| (p.values()[i] - mu).powi(2)).sum::<f64>() / k)
        .collect();
    ScalarField::new(FieldRole::Variance, Grid::from_vec(h, w, data)?)
}

/// Mean of a variance map over all pixels.
pub fn total_uncertainty(var: &ScalarField) -> Result<f64> {
    if var.values().iter().any(|v| *v < 0.0) {
        return Err(Error::Role("total uncertainty of a field with negative entries".into()));
    }
    if var.values().is_empty() {
        return Err(Error::Parameter("empty variance map".into()));
    }
    Ok(var.values().iter().sum::<f64>() / var.values().len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberEntry {
    /// Checkpoint path relative to the manifest's directory.
    pub checkpoint: String,
    pub seed: u64,
}

/// `ensemble.json`: the member checkpoints of a trained ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub format_version: u32,
    pub k: usize,
    pub resolution: usize,
    pub members: Vec<MemberEntry>,
}

impl EnsembleManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        if m.format_version != ENSEMBLE_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported ensemble format {}", m.format_version)));
        }
        if m.k != m.members.len() {
            return Err(Error::Format(format!("manifest says K={} but lists {} members", m.k, m.members.len())));
        }
        Ok(m)
    }

    pub fn checkpoint_paths(&self, manifest_path: &Path) -> Vec<PathBuf> {
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        self.members.iter().map(|m| base.join(&m.checkpoint)).collect()
    }
}

impl DepthEnsemble {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = EnsembleManifest::read(manifest_path)?;
        let members = manifest
            .checkpoint_paths(manifest_path)
            .iter()
            .map(|p| load_checkpoint(p, Some(manifest.resolution)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(members)
    }
}

pub const ENSEMBLE_MANIFEST: &str = "ensemble.json";

/// Init seed of member `index` under base seed `seed`.
pub fn member_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, stream::MEMBER, index as u64)
}

/// Progress events from [`train_ensemble`].
#[derive(Clone, Debug)]
pub enum MemberEvent<'a> {
    Skipped { index: usize, path: &'a Path },
    Epoch { index: usize, report: &'a EpochReport },
    Saved { index: usize, path: &'a Path },
}

/// Trains `k` members into `dir` as `member_{i}.ckpt` and writes
/// `ensemble.json`. A member whose checkpoint already exists with the expected
/// seed and architecture is reused, so an interrupted run can resume.
pub fn train_ensemble(
    dir: &Path,
    data: &TrainingData,
    config: &TrainConfig,
    k: usize,
    seed: u64,
    mut progress: impl FnMut(MemberEvent<'_>),
) -> Result<EnsembleManifest> {
    if k < 2 {
        return Err(Error::Parameter(format!("ensemble needs K >= 2 members, got {k}")));
    }
    fs::create_dir_all(dir)?;
    let mut members = Vec::with_capacity(k);
    for index in 0..k {
        let name = format!("member_{index}.ckpt");
        let path = dir.join(&name);
        let init = member_seed(seed, index);
        let reusable = path.exists()
            && load_checkpoint(&path, None)
                .map(|m| m.meta.seed == init && m.architecture() == &data.arch)
                .unwrap_or(false);
        if reusable {
            progress(MemberEvent::Skipped { index, path: &path });
        } else {
            let model = train_with_progress(config, data, init, |r| progress(MemberEvent::Epoch { index, report: r }))
                .map_err(|e| Error::Member {
                    index,
                    source: Box::new(e),
                })?;
            save_checkpoint(&path, &model)?;
            progress(MemberEvent::Saved { index, path: &path });
        }
        members.push(MemberEntry { checkpoint: name, seed: init });
    }
    let manifest = EnsembleManifest {
        format_version: ENSEMBLE_FORMAT_VERSION,
        k,
        resolution: data.arch.resolution,
        members,
    };
    manifest.write(&dir.join(ENSEMBLE_MANIFEST))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Pixel;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field(values: &[f64], h: usize, w: usize) -> ScalarField {
        ScalarField::new(FieldRole::LogDepth, Grid::from_vec(h, w, values.to_vec()).unwrap()).unwrap()
    }

    fn tiny_arch() -> Architecture {
        Architecture {
            resolution: 16,
            widths: [3, 4, 5],
            sparse_features: 3,
            sparse_scale: 100.0,
            output_bias: 3.0,
        }
    }

    fn rgb(seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::new(16, 16, (0..16 * 16 * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    fn ensemble(k: usize) -> DepthEnsemble {
        DepthEnsemble::new((0..k).map(|s| DepthModel::new(tiny_arch(), 100 + s as u64).unwrap()).collect()).unwrap()
    }

    fn duplicated(k: usize) -> DepthEnsemble {
        let base = DepthModel::new(tiny_arch(), 7).unwrap();
        DepthEnsemble::new(
            (0..k)
                .map(|i| {
                    let mut m = base.clone();
                    m.meta.seed = i as u64;
                    m
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn construction_checks() {
        let a = DepthModel::new(tiny_arch(), 1).unwrap();
        assert!(DepthEnsemble::new(vec![a.clone()]).is_err());
        assert!(DepthEnsemble::new(vec![a.clone(), a.clone()]).is_err());
        let mut other = tiny_arch();
        other.widths = [2, 2, 2];
        let b = DepthModel::new(other, 2).unwrap();
        assert!(DepthEnsemble::new(vec![a, b]).is_err());
    }

    #[test]
    fn mean_and_variance_hand_examples() {
        let a = field(&[1.0], 1, 1);
        let b = field(&[3.0], 1, 1);
        assert_eq!(mean_map(&[a.clone(), b.clone()]).unwrap().values(), &[2.0]);
        assert_eq!(variance_map(&[a.clone(), b]).unwrap().values(), &[1.0]);
        assert_eq!(mean_map(&[a.clone()]).unwrap(), a);
        assert!(mean_map(&[]).is_err());
        assert!(variance_map(&[a.clone()]).is_err());
        let f = field(&[0.3, -1.7, 2.2, 9.1], 2, 2);
        assert_eq!(mean_map(&[f.clone(), f.clone(), f.clone()]).unwrap(), f);
        assert!(variance_map(&[f.clone(), f.clone()]).unwrap().values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn total_uncertainty_examples() {
        let v = |vals: &[f64]| ScalarField::new(FieldRole::Variance, Grid::from_vec(2, 2, vals.to_vec()).unwrap()).unwrap();
        assert_eq!(total_uncertainty(&v(&[0.0, 0.0, 2.0, 2.0])).unwrap(), 1.0);
        assert_eq!(total_uncertainty(&v(&[0.7; 4])).unwrap(), 0.7);
        assert_eq!(total_uncertainty(&v(&[0.0; 4])).unwrap(), 0.0);
        let g = ScalarField::new(FieldRole::Gradient, Grid::from_vec(1, 2, vec![1.0, -1.0]).unwrap()).unwrap();
        assert!(matches!(total_uncertainty(&g), Err(Error::Role(_))));
    }

    proptest! {
        /// Variance and total against a one-pass brute-force recomputation.
        #[test]
        fn pipeline_matches_brute_force(seed in 0u64..10_000, k in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw: Vec<Vec<f64>> = (0..k).map(|_| (0..16).map(|_| rng.random_range(-3.0..5.0)).collect()).collect();
            let preds: Vec<ScalarField> = raw.iter().map(|r| field(r, 4, 4)).collect();
            let var = variance_map(&preds).unwrap();
            let total = total_uncertainty(&var).unwrap();
            let mut brute_total = 0.0;
            for i in 0..16 {
                let mut mean = 0.0;
                for r in &raw { mean += r[i]; }
                mean /= k as f64;
                let mut v = 0.0;
                for r in &raw { v += (r[i] - mean) * (r[i] - mean); }
                v /= k as f64;
                prop_assert!((var.values()[i] - v).abs() < 1e-9);
                prop_assert!(var.values()[i] >= 0.0);
                brute_total += v;
            }
            prop_assert!((total - brute_total / 16.0).abs() < 1e-9);
        }

        #[test]
        fn variance_is_translation_invariant(seed in 0u64..10_000, c in -10.0f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw: Vec<Vec<f64>> = (0..3).map(|_| (0..9).map(|_| rng.random_range(0.0..4.0)).collect()).collect();
            let preds: Vec<ScalarField> = raw.iter().map(|r| field(r, 3, 3)).collect();
            let shifted: Vec<ScalarField> = raw.iter().map(|r| field(&r.iter().map(|v| v + c).collect::<Vec<_>>(), 3, 3)).collect();
            let a = variance_map(&preds).unwrap();
            let b = variance_map(&shifted).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn predict_all_cardinality_and_duplicates() {
        let ens = ensemble(3);
        let s = SparseDepthMap::empty(16, 16);
        let out = ens.predict_all(&rgb(1), &s).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|f| f.dims() == (16, 16)));
        let dup = duplicated(2).predict_all(&rgb(1), &s).unwrap();
        assert_eq!(dup[0], dup[1]);
    }

    #[test]
    fn duplicated_members_have_zero_uncertainty_and_gradient() {
        let ens = duplicated(4);
        let mut s = SparseDepthMap::empty(16, 16);
        s.observe(Pixel::new(3, 4), 20.0).unwrap();
        let a = ens.analyze(&rgb(2), &s, true).unwrap();
        assert!(a.variance.values().iter().all(|v| *v == 0.0));
        assert_eq!(a.total, 0.0);
        assert!(a.gradient.unwrap().values().iter().all(|g| g.abs() <= 1e-12));
    }

    /// Recomputes U_total from scratch through `predict_all` for the
    /// finite-difference oracle.
    fn u_total(ens: &DepthEnsemble, img: &RgbImage, grid: &Grid<f64>) -> f64 {
        let preds: Vec<ScalarField> = ens.members().iter().map(|m| m.forward_raw(img, grid).unwrap()).collect();
        let n = preds[0].values().len();
        let mut total = 0.0;
        for i in 0..n {
            let mean = preds.iter().map(|p| p.values()[i]).sum::<f64>() / preds.len() as f64;
            total += preds.iter().map(|p| (p.values()[i] - mean).powi(2)).sum::<f64>() / preds.len() as f64;
        }
        total / n as f64
    }

    #[test]
    fn gradient_matches_central_differences() {
        let ens = ensemble(3);
        let img = rgb(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = SparseDepthMap::empty(16, 16);
        for _ in 0..20 {
            let p = Pixel::new(rng.random_range(0..16), rng.random_range(0..16));
            s.observe(p, rng.random_range(5.0..100.0)).unwrap();
        }
        let g = ens.uncertainty_gradient(&img, &s).unwrap();
        let h = 1e-6;
        let mut checked = 0;
        for _ in 0..20 {
            let p = Pixel::new(rng.random_range(0..16), rng.random_range(0..16));
            let mut up = s.grid().clone();
            up.set(p, s.grid().get(p) + h);
            let mut down = s.grid().clone();
            down.set(p, s.grid().get(p) - h);
            let fd = (u_total(&ens, &img, &up) - u_total(&ens, &img, &down)) / (2.0 * h);
            let an = g.get(p);
            let scale = an.abs().max(fd.abs());
            if scale < 1e-14 {
                continue;
            }
            checked += 1;
            assert!((an - fd).abs() / scale < 1e-5, "pixel {p:?}: {an} vs {fd}");
        }
        assert!(checked >= 10);
    }

    #[test]
    fn gradient_scales_and_permutes() {
        let ens = ensemble(3);
        let img = rgb(5);
        let s = SparseDepthMap::empty(16, 16);
        let g = ens.analyze(&img, &s, true).unwrap();
        let mut members = ens.members().to_vec();
        members.reverse();
        let rev = DepthEnsemble::new(members).unwrap().analyze(&img, &s, true).unwrap();
        let close = |a: &[f64], b: &[f64]| {
            let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
            a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * scale)
        };
        assert!(close(g.mean.values(), rev.mean.values()));
        assert!(close(g.variance.values(), rev.variance.values()));
        assert!((g.total - rev.total).abs() <= 1e-12 * g.total);
        assert!(close(g.gradient.as_ref().unwrap().values(), rev.gradient.as_ref().unwrap().values()));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ens = ensemble(2);
        let mut entries = Vec::new();
        for (i, m) in ens.members().iter().enumerate() {
            let name = format!("member_{i}.ckpt");
            crate::depthnet::save_checkpoint(&dir.path().join(&name), m).unwrap();
            entries.push(MemberEntry { checkpoint: name, seed: m.meta.seed });
        }
        let manifest = EnsembleManifest {
            format_version: ENSEMBLE_FORMAT_VERSION,
            k: 2,
            resolution: 16,
            members: entries,
        };
        let path = dir.path().join("ensemble.json");
        manifest.write(&path).unwrap();
        let back = DepthEnsemble::load(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.members()[1].params(), ens.members()[1].params());
    }
}
