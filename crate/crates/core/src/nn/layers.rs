use super::{gemm, MatRef, Real, Tensor};

/// Square convolution, stride 1, zero "same" padding, odd kernel size.
///
/// Weights live in a shared flat parameter vector: `cout x (cin * k * k)`
/// starting at `w_off`, then `cout` biases at `b_off`.
#[derive(Clone, Copy, Debug)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl Conv2d {
    /// Lays out a new layer at `*offset` and advances it past the layer's parameters.
    pub fn allocate(cin: usize, cout: usize, kernel: usize, offset: &mut usize) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd");
        let w_off = *offset;
        let b_off = w_off + cout * cin * kernel * kernel;
        *offset = b_off + cout;
        Self {
            cin,
            cout,
            kernel,
            w_off,
            b_off,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.fan_in()
    }

    fn im2col<T: Real>(&self, x: &Tensor<T>) -> Vec<T> {
        let (h, w) = (x.height, x.width);
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let plane = h * w;
        let mut cols = vec![T::zero(); self.fan_in() * plane];
        for ci in 0..self.cin {
            let src = &x.data[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let sy = sy as usize;
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (w as isize - dx.max(0)) as usize;
                        if x0 >= x1 {
                            continue;
                        }
                        let sx0 = (x0 as isize + dx) as usize;
                        dst[y * w + x0..y * w + x1]
                            .copy_from_slice(&src[sy * w + sx0..sy * w + sx0 + (x1 - x0)]);
                    }
                }
            }
        }
        cols
    }

    fn col2im<T: Real>(&self, cols: &[T], h: usize, w: usize) -> Tensor<T> {
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let plane = h * w;
        let mut out = Tensor::zeros(self.cin, h, w);
        for ci in 0..self.cin {
            let dst = &mut out.data[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * plane..(row + 1) * plane];
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let sy = sy as usize;
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (w as isize - dx.max(0)) as usize;
                        if x0 >= x1 {
                            continue;
                        }
                        let sx0 = (x0 as isize + dx) as usize;
                        let d = &mut dst[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                        for (a, b) in d.iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                            *a = *a + *b;
                        }
                    }
                }
            }
        }
        out
    }

    /// Returns the output and the unfolded input needed by [`Conv2d::backward`].
    pub fn forward<T: Real>(&self, params: &[T], x: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
        assert_eq!(x.channels, self.cin, "conv input channels");
        let plane = x.plane();
        let cols = self.im2col(x);
        let mut out = Tensor::zeros(self.cout, x.height, x.width);
        for co in 0..self.cout {
            let b = params[self.b_off + co];
            out.data[co * plane..(co + 1) * plane].fill(b);
        }
        let weights = &params[self.w_off..self.w_off + self.weight_len()];
        gemm(
            T::one(),
            MatRef::new(weights, self.cout, self.fan_in()),
            MatRef::new(&cols, self.fan_in(), plane),
            T::one(),
            &mut out.data,
        );
        (out, cols)
    }

    /// Accumulates parameter gradients into `grads`; returns the input gradient when asked.
    pub fn backward<T: Real>(
        &self,
        params: &[T],
        cols: &[T],
        dy: &Tensor<T>,
        grads: &mut [T],
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let plane = dy.plane();
        for co in 0..self.cout {
            let s: T = dy.data[co * plane..(co + 1) * plane].iter().copied().sum();
            grads[self.b_off + co] = grads[self.b_off + co] + s;
        }
        gemm(
            T::one(),
            MatRef::new(&dy.data, self.cout, plane),
            MatRef::new(cols, self.fan_in(), plane).t(),
            T::one(),
            &mut grads[self.w_off..self.w_off + self.weight_len()],
        );
        if !need_input_grad {
            return None;
        }
        let weights = &params[self.w_off..self.w_off + self.weight_len()];
        let mut dcols = vec![T::zero(); self.fan_in() * plane];
        gemm(
            T::one(),
            MatRef::new(weights, self.cout, self.fan_in()).t(),
            MatRef::new(&dy.data, self.cout, plane),
            T::zero(),
            &mut dcols,
        );
        Some(self.col2im(&dcols, dy.height, dy.width))
    }
}

/// 2x2 transposed convolution with stride 2 (doubles the spatial size).
///
/// Weights: `cin x (cout * 4)`, column `co * 4 + dy * 2 + dx`.
#[derive(Clone, Copy, Debug)]
pub struct UpConv2x2 {
    pub cin: usize,
    pub cout: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl UpConv2x2 {
    pub fn allocate(cin: usize, cout: usize, offset: &mut usize) -> Self {
        let w_off = *offset;
        let b_off = w_off + cin * cout * 4;
        *offset = b_off + cout;
        Self {
            cin,
            cout,
            w_off,
            b_off,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.cin
    }

    pub fn weight_len(&self) -> usize {
        self.cin * self.cout * 4
    }

    pub fn forward<T: Real>(&self, params: &[T], x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.channels, self.cin, "upconv input channels");
        let (h, w) = (x.height, x.width);
        let plane = h * w;
        let mut y = vec![T::zero(); self.cout * 4 * plane];
        let weights = &params[self.w_off..self.w_off + self.weight_len()];
        gemm(
            T::one(),
            MatRef::new(weights, self.cin, self.cout * 4).t(),
            MatRef::new(&x.data, self.cin, plane),
            T::zero(),
            &mut y,
        );
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = Tensor::zeros(self.cout, oh, ow);
        for co in 0..self.cout {
            let bias = params[self.b_off + co];
            for a in 0..2 {
                for b in 0..2 {
                    let src = &y[(co * 4 + a * 2 + b) * plane..][..plane];
                    for i in 0..h {
                        for j in 0..w {
                            out.data[(co * oh + 2 * i + a) * ow + 2 * j + b] = src[i * w + j] + bias;
                        }
                    }
                }
            }
        }
        out
    }

    pub fn backward<T: Real>(
        &self,
        params: &[T],
        x: &Tensor<T>,
        dout: &Tensor<T>,
        grads: &mut [T],
    ) -> Tensor<T> {
        let (h, w) = (x.height, x.width);
        let plane = h * w;
        let (oh, ow) = (2 * h, 2 * w);
        let mut dy = vec![T::zero(); self.cout * 4 * plane];
        for co in 0..self.cout {
            let mut bsum = T::zero();
            for a in 0..2 {
                for b in 0..2 {
                    let dst = &mut dy[(co * 4 + a * 2 + b) * plane..][..plane];
                    for i in 0..h {
                        for j in 0..w {
                            let g = dout.data[(co * oh + 2 * i + a) * ow + 2 * j + b];
                            dst[i * w + j] = g;
                            bsum = bsum + g;
                        }
                    }
                }
            }
            grads[self.b_off + co] = grads[self.b_off + co] + bsum;
        }
        gemm(
            T::one(),
            MatRef::new(&x.data, self.cin, plane),
            MatRef::new(&dy, self.cout * 4, plane).t(),
            T::one(),
            &mut grads[self.w_off..self.w_off + self.weight_len()],
        );
        let weights = &params[self.w_off..self.w_off + self.weight_len()];
        let mut dx = Tensor::zeros(self.cin, h, w);
        gemm(
            T::one(),
            MatRef::new(weights, self.cin, self.cout * 4),
            MatRef::new(&dy, self.cout * 4, plane),
            T::zero(),
            &mut dx.data,
        );
        dx
    }
}

/// Argmax positions (flat index into the input plane) for each pooled output.
#[derive(Clone, Debug)]
pub struct PoolCache {
    argmax: Vec<u32>,
    in_h: usize,
    in_w: usize,
}

/// 2x2 max pooling, stride 2. Ties go to the first element in raster order.
#[derive(Clone, Copy, Debug, Default)]
pub struct MaxPool2x2;

impl MaxPool2x2 {
    pub fn forward<T: Real>(&self, x: &Tensor<T>) -> (Tensor<T>, PoolCache) {
        assert!(x.height % 2 == 0 && x.width % 2 == 0, "pooling needs even dimensions");
        let (h, w) = (x.height, x.width);
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros(x.channels, oh, ow);
        let mut argmax = vec![0u32; x.channels * oh * ow];
        for c in 0..x.channels {
            let src = &x.data[c * h * w..(c + 1) * h * w];
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = (2 * i) * w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = (2 * i + di) * w + 2 * j + dj;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    let o = (c * oh + i) * ow + j;
                    out.data[o] = src[best];
                    argmax[o] = best as u32;
                }
            }
        }
        (
            out,
            PoolCache {
                argmax,
                in_h: h,
                in_w: w,
            },
        )
    }

    pub fn backward<T: Real>(&self, cache: &PoolCache, dout: &Tensor<T>) -> Tensor<T> {
        let plane_in = cache.in_h * cache.in_w;
        let plane_out = dout.plane();
        let mut dx = Tensor::zeros(dout.channels, cache.in_h, cache.in_w);
        for c in 0..dout.channels {
            for o in 0..plane_out {
                let idx = c * plane_out + o;
                let target = c * plane_in + cache.argmax[idx] as usize;
                dx.data[target] = dx.data[target] + dout.data[idx];
            }
        }
        dx
    }
}
