//! Minimal convolutional building blocks with hand-written backward passes.
//!
//! Everything is generic over [`Real`] so the same network code trains in
//! `f32` and evaluates uncertainty gradients in `f64`.

mod layers;

pub use layers::{Conv2d, MaxPool2x2, PoolCache, UpConv2x2};

use num_traits::Float;

/// Floating-point scalar with a matrix-multiply kernel.
pub trait Real: Float + Default + Send + Sync + std::fmt::Debug + std::iter::Sum + 'static {
    /// `c = alpha * a * b + beta * c` on strided row/column views.
    ///
    /// # Safety
    /// All strides and dimensions must describe memory inside the given pointers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn to_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }
}

/// Borrowed matrix with arbitrary strides, so transposes are free.
#[derive(Clone, Copy)]
pub struct MatRef<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, T> MatRef<'a, T> {
    /// Row-major `rows x cols` view.
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        assert!(data.len() >= rows * cols, "matrix view out of bounds");
        Self {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

/// `c (m x n, row-major) = alpha * a * b + beta * c`.
pub fn gemm<T: Real>(alpha: T, a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, c: &mut [T]) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(c.len() >= m * n, "output buffer too small");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: MatRef construction checked the backing slices cover rows*cols
    // elements, and transposition only swaps strides within that extent.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Channel-major `C x H x W` activation tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    /// Stacks tensors along the channel axis.
    pub fn concat(parts: &[&Tensor<T>]) -> Self {
        let (h, w) = (parts[0].height, parts[0].width);
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        let mut channels = 0;
        for p in parts {
            assert_eq!((p.height, p.width), (h, w), "concat spatial mismatch");
            data.extend_from_slice(&p.data);
            channels += p.channels;
        }
        Self::from_vec(channels, h, w, data)
    }

    /// Inverse of [`Tensor::concat`]: splits off the given channel counts.
    pub fn split(&self, channels: &[usize]) -> Vec<Tensor<T>> {
        assert_eq!(channels.iter().sum::<usize>(), self.channels);
        let plane = self.plane();
        let mut start = 0;
        channels
            .iter()
            .map(|&c| {
                let t = Tensor::from_vec(
                    c,
                    self.height,
                    self.width,
                    self.data[start * plane..(start + c) * plane].to_vec(),
                );
                start += c;
                t
            })
            .collect()
    }

    pub fn relu_in_place(&mut self) {
        for v in &mut self.data {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
    }

    /// Zeroes gradient entries where the post-activation value was not positive.
    pub fn relu_backward_in_place(&mut self, activated: &Tensor<T>) {
        for (g, a) in self.data.iter_mut().zip(&activated.data) {
            if *a <= T::zero() {
                *g = T::zero();
            }
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let a: Vec<f64> = (0..6).map(f64::from).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|i| f64::from(i) * 0.5).collect(); // 3x4
        let mut c = vec![1.0; 8];
        gemm(2.0, MatRef::new(&a, 2, 3), MatRef::new(&b, 3, 4), 1.0, &mut c);
        for i in 0..2 {
            for j in 0..4 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += a[i * 3 + k] * b[k * 4 + j];
                }
                assert_eq!(c[i * 4 + j], 1.0 + 2.0 * s);
            }
        }
        // a^T (3x2) * a (2x3)
        let mut c = vec![0.0; 9];
        gemm(1.0, MatRef::new(&a, 2, 3).t(), MatRef::new(&a, 2, 3), 0.0, &mut c);
        assert_eq!(c[0], a[0] * a[0] + a[3] * a[3]);
        assert_eq!(c[5], a[1] * a[2] + a[4] * a[5]);
    }

    #[test]
    fn concat_then_split_restores_parts() {
        let a = Tensor::from_vec(1, 1, 2, vec![1.0f32, 2.0]);
        let b = Tensor::from_vec(2, 1, 2, vec![3.0f32, 4.0, 5.0, 6.0]);
        let c = Tensor::concat(&[&a, &b]);
        let parts = c.split(&[1, 2]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }
}
