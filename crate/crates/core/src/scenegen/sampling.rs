//! Training-time sparse conditioning sets and depth-stretch augmentation.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DepthMap, Pixel, SparseDepthMap};

fn observe_all(gt: &DepthMap, pixels: impl IntoIterator<Item = Pixel>) -> SparseDepthMap {
    let (h, w) = gt.dims();
    let mut s = SparseDepthMap::empty(h, w);
    for p in pixels {
        s.observe(p, gt.get(p)).expect("pixel in bounds, gt positive");
    }
    s
}

/// Exactly `n` distinct pixels chosen uniformly.
pub fn sample_sparse_random(gt: &DepthMap, n: usize, rng: &mut impl Rng) -> Result<SparseDepthMap> {
    let (h, w) = gt.dims();
    if n > h * w {
        return Err(Error::Parameter(format!("cannot sample {n} of {} pixels", h * w)));
    }
    let idx = rand::seq::index::sample(rng, h * w, n);
    Ok(observe_all(gt, idx.iter().map(|i| Pixel::new(i / w, i % w))))
}

/// `clusters` uniformly placed centers, each with `per_cluster` points drawn
/// from an isotropic Gaussian of std `sigma` pixels, rounded to the grid,
/// clipped to the image and deduplicated.
pub fn sample_sparse_cluster(
    gt: &DepthMap,
    clusters: usize,
    per_cluster: usize,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<SparseDepthMap> {
    if clusters == 0 || per_cluster == 0 {
        return Err(Error::Parameter("clusters and per_cluster must be at least 1".into()));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Parameter(format!("sigma must be finite and nonnegative, got {sigma}")));
    }
    let (h, w) = gt.dims();
    let mut pixels = Vec::with_capacity(clusters * per_cluster);
    for _ in 0..clusters {
        let (cr, cc) = (rng.random_range(0..h) as f64, rng.random_range(0..w) as f64);
        for _ in 0..per_cluster {
            let dr: f64 = rng.sample(StandardNormal);
            let dc: f64 = rng.sample(StandardNormal);
            let r = (cr + sigma * dr).round().clamp(0.0, (h - 1) as f64) as usize;
            let c = (cc + sigma * dc).round().clamp(0.0, (w - 1) as f64) as usize;
            pixels.push(Pixel::new(r, c));
        }
    }
    Ok(observe_all(gt, pixels))
}

/// Each pixel observed independently with probability `prob`.
pub fn sample_sparse_bernoulli(gt: &DepthMap, prob: f64, rng: &mut impl Rng) -> Result<SparseDepthMap> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::Parameter(format!("probability {prob} outside [0, 1]")));
    }
    let (h, w) = gt.dims();
    let mut pixels = Vec::new();
    for i in 0..h * w {
        if rng.random::<f64>() < prob {
            pixels.push(Pixel::new(i / w, i % w));
        }
    }
    Ok(observe_all(gt, pixels))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StretchMode {
    /// `d -> factor * d`
    Linear,
    /// `d -> d^factor`
    Exponential,
}

pub fn stretch_depth(gt: &DepthMap, mode: StretchMode, factor: f64) -> Result<DepthMap> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::Parameter(format!("stretch factor must be positive, got {factor}")));
    }
    let out = match mode {
        StretchMode::Linear => gt.grid().map(|d| factor * d),
        StretchMode::Exponential => gt.grid().map(|d| d.powf(factor)),
    };
    DepthMap::new(out)
}
