use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::{DepthMap, Pixel};

/// Smallest depth a noisy probe can report.
pub const MIN_PROBE_DEPTH: f64 = 1e-3;

/// Simulated touch probe: ground-truth lookup plus optional Gaussian noise.
#[derive(Clone, Debug)]
pub struct ProbeOracle {
    gt: DepthMap,
    noise_std: f64,
}

impl ProbeOracle {
    pub fn new(gt: DepthMap, noise_std: f64) -> Result<Self> {
        if !(noise_std.is_finite() && noise_std >= 0.0) {
            return Err(Error::Parameter(format!("noise std must be nonnegative, got {noise_std}")));
        }
        Ok(Self { gt, noise_std })
    }

    pub fn ground_truth(&self) -> &DepthMap {
        &self.gt
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    /// Depth at `pixel`; exact when the noise std is zero, otherwise clamped
    /// to at least [`MIN_PROBE_DEPTH`].
    pub fn probe<R: Rng + ?Sized>(&self, pixel: Pixel, rng: &mut R) -> Result<f64> {
        if !self.gt.grid().contains(pixel) {
            let (h, w) = self.gt.dims();
            return Err(Error::Parameter(format!("probe at {pixel:?} outside the {h}x{w} image")));
        }
        let d = self.gt.get(pixel);
        if self.noise_std == 0.0 {
            return Ok(d);
        }
        let n: f64 = rng.sample(StandardNormal);
        Ok((d + self.noise_std * n).max(MIN_PROBE_DEPTH))
    }
}
