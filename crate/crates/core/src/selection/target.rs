//! Target distributions over candidate pixels and their smoothed continuous
//! log-density.

use crate::error::{Error, Result};
use crate::grid::{FieldRole, Grid, Mask, Pixel, ScalarField};

/// Mass added to every unprobed pixel so a target always normalizes.
pub const FLOOR: f64 = 1e-12;

/// A probability field with zero mass on already-probed pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap(ScalarField);

impl ProbabilityMap {
    /// Normalizes `weight(v) + FLOOR` over unprobed pixels.
    fn from_weights(field: &ScalarField, probed: &Mask, weight: impl Fn(f64) -> f64) -> Result<Self> {
        if field.dims() != probed.dims() {
            return Err(Error::shape(field.dims(), probed.dims()));
        }
        let (h, w) = field.dims();
        let available = probed.as_slice().iter().filter(|p| !**p).count();
        if available == 0 {
            return Err(Error::NoCandidates { needed: 1, available });
        }
        let raw: Vec<f64> = field
            .values()
            .iter()
            .zip(probed.as_slice())
            .map(|(v, probed)| if *probed { 0.0 } else { weight(*v) + FLOOR })
            .collect();
        let total: f64 = raw.iter().sum();
        let data = raw.into_iter().map(|v| v / total).collect();
        Ok(Self(ScalarField::new(FieldRole::Probability, Grid::from_vec(h, w, data)?)?))
    }

    pub fn field(&self) -> &ScalarField {
        &self.0
    }

    pub fn values(&self) -> &[f64] {
        self.0.values()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn get(&self, p: Pixel) -> f64 {
        self.0.get(p)
    }
}

/// `p ∝ max(0, −g) + FLOOR` on unprobed pixels.
pub fn target_from_gradient(grad: &ScalarField, probed: &Mask) -> Result<ProbabilityMap> {
    if grad.role() != FieldRole::Gradient {
        return Err(Error::Role(format!("expected a gradient field, got {:?}", grad.role())));
    }
    ProbabilityMap::from_weights(grad, probed, |g| (-g).max(0.0))
}

/// `p ∝ var + FLOOR` on unprobed pixels.
pub fn target_from_variance(var: &ScalarField, probed: &Mask) -> Result<ProbabilityMap> {
    if var.role() != FieldRole::Variance {
        return Err(Error::Role(format!("expected a variance field, got {:?}", var.role())));
    }
    ProbabilityMap::from_weights(var, probed, |v| v)
}

/// Continuous log-density of a probability map: Gaussian smoothing, then
/// bilinear interpolation of `ln(p̃ + FLOOR)` on the pixel lattice.
///
/// Positions are `[row, col]` in pixel units.
#[derive(Clone, Debug)]
pub struct SmoothedLogDensity {
    height: usize,
    width: usize,
    log: Vec<f64>,
}

impl SmoothedLogDensity {
    pub fn new(p: &ProbabilityMap, sigma: f64) -> Self {
        let (h, w) = p.dims();
        let smooth = gaussian_blur(p.values(), h, w, sigma);
        Self {
            height: h,
            width: w,
            log: smooth.iter().map(|v| (v + FLOOR).ln()).collect(),
        }
    }

    fn corner(&self, pos: [f64; 2]) -> (usize, usize, f64, f64) {
        let cell = |x: f64, n: usize| -> (usize, f64) {
            if n < 2 {
                return (0, 0.0);
            }
            let x = x.clamp(0.0, (n - 1) as f64);
            let i = (x.floor() as usize).min(n - 2);
            (i, x - i as f64)
        };
        let (r, fr) = cell(pos[0], self.height);
        let (c, fc) = cell(pos[1], self.width);
        (r, c, fr, fc)
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.log[r.min(self.height - 1) * self.width + c.min(self.width - 1)]
    }

    pub fn value(&self, pos: [f64; 2]) -> f64 {
        let (r, c, fr, fc) = self.corner(pos);
        let (a, b) = (self.at(r, c), self.at(r, c + 1));
        let (d, e) = (self.at(r + 1, c), self.at(r + 1, c + 1));
        (1.0 - fr) * ((1.0 - fc) * a + fc * b) + fr * ((1.0 - fc) * d + fc * e)
    }

    /// `∇ ln p(pos)` as `[∂/∂row, ∂/∂col]`.
    pub fn gradient(&self, pos: [f64; 2]) -> [f64; 2] {
        let (r, c, fr, fc) = self.corner(pos);
        let (a, b) = (self.at(r, c), self.at(r, c + 1));
        let (d, e) = (self.at(r + 1, c), self.at(r + 1, c + 1));
        let dr = if self.height < 2 { 0.0 } else { (1.0 - fc) * (d - a) + fc * (e - b) };
        let dc = if self.width < 2 { 0.0 } else { (1.0 - fr) * (b - a) + fr * (e - d) };
        [dr, dc]
    }
}

/// One-shot form of [`SmoothedLogDensity::gradient`].
pub fn log_density_gradient(p: &ProbabilityMap, pos: [f64; 2], sigma: f64) -> Result<[f64; 2]> {
    let (h, w) = p.dims();
    if !(pos[0] >= 0.0 && pos[0] <= (h - 1) as f64 && pos[1] >= 0.0 && pos[1] <= (w - 1) as f64) {
        return Err(Error::Parameter(format!("position {pos:?} outside the {h}x{w} image")));
    }
    Ok(SmoothedLogDensity::new(p, sigma).gradient(pos))
}

/// Separable Gaussian blur whose kernel is renormalized over in-bounds taps,
/// so a constant map stays constant up to the border.
fn gaussian_blur(values: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return values.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let pass = |src: &[f64], len: usize, stride: usize, lines: usize, line_stride: usize| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for line in 0..lines {
            let base = line * line_stride;
            for i in 0..len as isize {
                let (mut acc, mut norm) = (0.0, 0.0);
                for (t, k) in taps.iter().zip(-radius..=radius) {
                    let j = i + k;
                    if j >= 0 && j < len as isize {
                        acc += t * src[base + j as usize * stride];
                        norm += t;
                    }
                }
                out[base + i as usize * stride] = acc / norm;
            }
        }
        out
    };
    let rows = pass(values, w, 1, h, w);
    pass(&rows, h, w, w, 1)
}
