//! Image-shaped containers shared by every stage of the pipeline.
//!
//! All grids are row-major with `(row, col)` addressing. Depths are in
//! millimeters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value marking an unobserved pixel of a [`SparseDepthMap`].
pub const SENTINEL: f64 = -1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pixel {
    pub row: usize,
    pub col: usize,
}

impl Pixel {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

/// Dense `height x width` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Input(format!(
                "grid of {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for row in 0..height {
            for col in 0..width {
                data.push(f(row, col));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn contains(&self, p: Pixel) -> bool {
        p.row < self.height && p.col < self.width
    }

    pub fn index_of(&self, p: Pixel) -> usize {
        p.row * self.width + p.col
    }

    pub fn pixel_at(&self, index: usize) -> Pixel {
        Pixel::new(index / self.width, index % self.width)
    }

    pub fn get(&self, p: Pixel) -> T {
        self.data[self.index_of(p)]
    }

    pub fn at(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, p: Pixel, value: T) {
        let i = self.index_of(p);
        self.data[i] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().copied().map(f).collect(),
        }
    }

    pub(crate) fn check_dims(&self, expected: (usize, usize)) -> Result<()> {
        if self.dims() != expected {
            return Err(Error::shape(expected, self.dims()));
        }
        Ok(())
    }
}

/// Per-pixel "already probed" flags.
pub type Mask = Grid<bool>;

/// Dense map of strictly positive, finite depths.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap(Grid<f64>);

impl DepthMap {
    pub fn new(grid: Grid<f64>) -> Result<Self> {
        if let Some(i) = grid.as_slice().iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            let p = grid.pixel_at(i);
            return Err(Error::Domain(format!(
                "depth at ({}, {}) is {}, must be finite and positive",
                p.row,
                p.col,
                grid.as_slice()[i]
            )));
        }
        Ok(Self(grid))
    }

    pub fn from_vec(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(Grid::from_vec(height, width, values)?)
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.0
    }

    pub fn values(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn get(&self, p: Pixel) -> f64 {
        self.0.get(p)
    }

    pub fn into_grid(self) -> Grid<f64> {
        self.0
    }

    pub fn log(&self) -> Grid<f64> {
        self.0.map(f64::ln)
    }
}

/// Depth observations at a subset of pixels; every other pixel holds [`SENTINEL`].
#[derive(Clone, Debug, PartialEq)]
pub struct SparseDepthMap {
    grid: Grid<f64>,
    observed: usize,
}

impl SparseDepthMap {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            grid: Grid::filled(height, width, SENTINEL),
            observed: 0,
        }
    }

    /// Validates a raw grid: each value is either the sentinel or a finite positive depth.
    pub fn from_grid(grid: Grid<f64>) -> Result<Self> {
        let mut observed = 0;
        for (i, &v) in grid.as_slice().iter().enumerate() {
            if v == SENTINEL {
                continue;
            }
            if !(v.is_finite() && v > 0.0) {
                let p = grid.pixel_at(i);
                return Err(Error::Domain(format!(
                    "sparse value at ({}, {}) is {v}; expected positive depth or -1",
                    p.row, p.col
                )));
            }
            observed += 1;
        }
        Ok(Self { grid, observed })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dims()
    }

    pub fn observed_count(&self) -> usize {
        self.observed
    }

    pub fn is_observed(&self, p: Pixel) -> bool {
        self.grid.get(p) != SENTINEL
    }

    pub fn get(&self, p: Pixel) -> Option<f64> {
        let v = self.grid.get(p);
        (v != SENTINEL).then_some(v)
    }

    /// Records a depth observation, replacing any previous value at `p`.
    pub fn observe(&mut self, p: Pixel, depth: f64) -> Result<()> {
        if !self.grid.contains(p) {
            return Err(Error::Parameter(format!(
                "pixel ({}, {}) outside {}x{} map",
                p.row,
                p.col,
                self.grid.height(),
                self.grid.width()
            )));
        }
        if !(depth.is_finite() && depth > 0.0) {
            return Err(Error::Domain(format!("observed depth {depth} must be finite and positive")));
        }
        if !self.is_observed(p) {
            self.observed += 1;
        }
        self.grid.set(p, depth);
        Ok(())
    }

    pub fn observed_pixels(&self) -> Vec<Pixel> {
        self.grid
            .as_slice()
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != SENTINEL)
            .map(|(i, _)| self.grid.pixel_at(i))
            .collect()
    }

    pub fn mask(&self) -> Mask {
        self.grid.map(|v| v != SENTINEL)
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        self.grid.as_slice()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldRole {
    Variance,
    Gradient,
    Probability,
    LogDepth,
}

/// A real-valued map tagged with what it represents.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    role: FieldRole,
    grid: Grid<f64>,
}

impl ScalarField {
    /// Builds a field, checking the invariant attached to `role`.
    pub fn new(role: FieldRole, grid: Grid<f64>) -> Result<Self> {
        if grid.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Role(format!("{role:?} field contains non-finite values")));
        }
        match role {
            FieldRole::Variance => {
                if grid.as_slice().iter().any(|v| *v < 0.0) {
                    return Err(Error::Role("variance field has negative entries".into()));
                }
            }
            FieldRole::Probability => {
                let sum: f64 = grid.as_slice().iter().sum();
                if grid.as_slice().iter().any(|v| *v < 0.0) || (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Role(format!(
                        "probability field must be nonnegative with unit sum (sum = {sum})"
                    )));
                }
            }
            FieldRole::Gradient | FieldRole::LogDepth => {}
        }
        Ok(Self { role, grid })
    }

    pub fn role(&self) -> FieldRole {
        self.role
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        self.grid.as_slice()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dims()
    }

    pub fn get(&self, p: Pixel) -> f64 {
        self.grid.get(p)
    }

    pub fn into_grid(self) -> Grid<f64> {
        self.grid
    }
}

/// Interleaved RGB image, `height x width x 3`, channel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::Input(format!(
                "rgb image of {height}x{width} needs {} values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        if data.iter().any(|v| !(v.is_finite() && (0.0..=1.0).contains(v))) {
            return Err(Error::Input("rgb values must be finite and within [0, 1]".into()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Planar `[3][H*W]` copy, the layout the network consumes.
    pub fn to_planar(&self) -> Vec<f64> {
        let n = self.height * self.width;
        let mut out = vec![0.0; 3 * n];
        for i in 0..n {
            for c in 0..3 {
                out[c * n + i] = self.data[i * 3 + c];
            }
        }
        out
    }

    /// Quantized 8-bit interleaved copy.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v * 255.0).round() as u8).collect()
    }

    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|b| f64::from(*b) / 255.0).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_map_counts_observations() {
        let mut s = SparseDepthMap::empty(4, 4);
        assert_eq!(s.observed_count(), 0);
        s.observe(Pixel::new(1, 2), 10.0).unwrap();
        s.observe(Pixel::new(1, 2), 12.0).unwrap();
        s.observe(Pixel::new(3, 3), 5.0).unwrap();
        assert_eq!(s.observed_count(), 2);
        assert_eq!(s.get(Pixel::new(1, 2)), Some(12.0));
        assert_eq!(s.get(Pixel::new(0, 0)), None);
        assert!(s.observe(Pixel::new(4, 0), 1.0).is_err());
        assert!(s.observe(Pixel::new(0, 0), -3.0).is_err());
    }

    #[test]
    fn sparse_from_grid_rejects_bad_values() {
        let g = Grid::from_vec(1, 3, vec![-1.0, 2.0, 0.0]).unwrap();
        assert!(SparseDepthMap::from_grid(g).is_err());
        let g = Grid::from_vec(1, 3, vec![-1.0, 2.0, 7.5]).unwrap();
        assert_eq!(SparseDepthMap::from_grid(g).unwrap().observed_count(), 2);
    }

    #[test]
    fn depth_map_requires_positive_values() {
        assert!(DepthMap::from_vec(1, 2, vec![1.0, 0.0]).is_err());
        assert!(DepthMap::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(DepthMap::from_vec(1, 2, vec![1.0, 3.0]).is_ok());
    }

    #[test]
    fn field_roles_are_checked() {
        let neg = Grid::from_vec(1, 2, vec![0.5, -0.1]).unwrap();
        assert!(ScalarField::new(FieldRole::Variance, neg.clone()).is_err());
        assert!(ScalarField::new(FieldRole::Gradient, neg).is_ok());
        let p = Grid::from_vec(1, 2, vec![0.25, 0.75]).unwrap();
        assert!(ScalarField::new(FieldRole::Probability, p).is_ok());
        let p = Grid::from_vec(1, 2, vec![0.25, 0.7]).unwrap();
        assert!(ScalarField::new(FieldRole::Probability, p).is_err());
    }

    #[test]
    fn rgb_planar_layout() {
        let img = RgbImage::new(1, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(img.to_planar(), vec![0.1, 0.4, 0.2, 0.5, 0.3, 0.6]);
    }
}
