use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FieldRole, Grid, RgbImage, ScalarField, SparseDepthMap, SENTINEL};
use crate::nn::{Conv2d, MaxPool2x2, PoolCache, Real, Tensor, UpConv2x2};

/// Channels produced from the sparse depth input before it joins the image.
pub const SPARSE_FEATURES: usize = 16;

/// Static shape of a depth network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub resolution: usize,
    /// Encoder widths of the three downsampling blocks.
    pub widths: [usize; 3],
    pub sparse_features: usize,
    /// Positive sparse depths are divided by this before entering the network.
    pub sparse_scale: f64,
    /// Initial bias of the output layer (log-depth prior).
    pub output_bias: f64,
}

impl Architecture {
    /// Widths follow the resolution: 64 px uses `[8, 16, 32]`, 512 px ends at 256 channels.
    pub fn for_resolution(resolution: usize, d_min: f64, d_max: f64) -> Self {
        let widths = match resolution {
            r if r >= 512 => [64, 128, 256],
            r if r >= 256 => [32, 64, 128],
            r if r >= 128 => [16, 32, 64],
            _ => [8, 16, 32],
        };
        Self {
            resolution,
            widths,
            sparse_features: SPARSE_FEATURES,
            sparse_scale: d_max,
            output_bias: (d_min * d_max).sqrt().ln(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || self.resolution % 8 != 0 {
            return Err(Error::Parameter(format!(
                "resolution {} must be a positive multiple of 8",
                self.resolution
            )));
        }
        if self.widths.contains(&0) || self.sparse_features == 0 {
            return Err(Error::Parameter("channel widths must be positive".into()));
        }
        if !(self.sparse_scale.is_finite() && self.sparse_scale > 0.0) {
            return Err(Error::Parameter("sparse_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Parameter layout of the U-Net.
///
/// ```text
/// sparse -> conv -> sf (16ch) ─────────────────────────────────────────┐
/// [rgb, sf] -> enc1 -> pool -> enc2 -> pool -> enc3 -> pool (H/8)      │
///   up3 + enc3 -> dec3, up2 + enc2 -> dec2, up1 + enc1 -> dec1         │
///   [dec1, sf] -> final conv -> log depth  <───────────────────────────┘
/// ```
#[derive(Clone, Debug)]
pub struct Network {
    pub arch: Architecture,
    sparse_in: Conv2d,
    enc: [Conv2d; 3],
    up: [UpConv2x2; 3],
    dec: [Conv2d; 3],
    head: Conv2d,
    n_params: usize,
}

/// Activations kept from the forward pass for backpropagation.
pub struct ForwardCache<T> {
    sparse_cols: Vec<T>,
    enc_cols: [Vec<T>; 3],
    enc_out: [Tensor<T>; 3],
    pools: [PoolCache; 3],
    up_in: [Tensor<T>; 3],
    dec_cols: [Vec<T>; 3],
    dec_out: [Tensor<T>; 3],
    head_cols: Vec<T>,
}

impl Network {
    pub fn new(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let [w1, w2, w3] = arch.widths;
        let sf = arch.sparse_features;
        let mut off = 0;
        let sparse_in = Conv2d::allocate(1, sf, 3, &mut off);
        let enc = [
            Conv2d::allocate(3 + sf, w1, 3, &mut off),
            Conv2d::allocate(w1, w2, 3, &mut off),
            Conv2d::allocate(w2, w3, 3, &mut off),
        ];
        // Decoder stage i upsamples and merges with encoder stage i.
        let up3 = UpConv2x2::allocate(w3, w3, &mut off);
        let dec3 = Conv2d::allocate(2 * w3, w2, 3, &mut off);
        let up2 = UpConv2x2::allocate(w2, w2, &mut off);
        let dec2 = Conv2d::allocate(2 * w2, w1, 3, &mut off);
        let up1 = UpConv2x2::allocate(w1, w1, &mut off);
        let dec1 = Conv2d::allocate(2 * w1, w1, 3, &mut off);
        let head = Conv2d::allocate(w1 + sf, 1, 3, &mut off);
        Ok(Self {
            arch,
            sparse_in,
            enc,
            up: [up1, up2, up3],
            dec: [dec1, dec2, dec3],
            head,
            n_params: off,
        })
    }

    pub fn param_count(&self) -> usize {
        self.n_params
    }

    /// Fan-in scaled Gaussian initialization; biases start at zero.
    pub fn init_params(&self, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = vec![0.0f32; self.n_params];
        let mut fill = |off: usize, len: usize, std: f64, rng: &mut ChaCha8Rng| {
            for v in &mut p[off..off + len] {
                let z: f64 = StandardNormal.sample(rng);
                *v = (z * std) as f32;
            }
        };
        fill(self.sparse_in.w_off, self.sparse_in.weight_len(), (1.0 / self.sparse_in.fan_in() as f64).sqrt(), &mut rng);
        for c in self.enc.iter().chain(self.dec.iter()) {
            fill(c.w_off, c.weight_len(), (2.0 / c.fan_in() as f64).sqrt(), &mut rng);
        }
        for u in &self.up {
            fill(u.w_off, u.weight_len(), (2.0 / u.fan_in() as f64).sqrt(), &mut rng);
        }
        fill(self.head.w_off, self.head.weight_len(), (0.5 / self.head.fan_in() as f64).sqrt(), &mut rng);
        p[self.head.b_off] = self.arch.output_bias as f32;
        p
    }

    /// Runs the network on planar rgb (`3 x H x W`) and the normalized sparse channel.
    pub fn forward<T: Real>(&self, params: &[T], rgb: &Tensor<T>, sparse: &Tensor<T>) -> (Tensor<T>, ForwardCache<T>) {
        assert_eq!(params.len(), self.n_params, "parameter vector length");
        let (sf, sparse_cols) = self.sparse_in.forward(params, sparse);

        let x0 = Tensor::concat(&[rgb, &sf]);
        let (mut e1, c1) = self.enc[0].forward(params, &x0);
        e1.relu_in_place();
        let (p1, pc1) = MaxPool2x2.forward(&e1);
        let (mut e2, c2) = self.enc[1].forward(params, &p1);
        e2.relu_in_place();
        let (p2, pc2) = MaxPool2x2.forward(&e2);
        let (mut e3, c3) = self.enc[2].forward(params, &p2);
        e3.relu_in_place();
        let (p3, pc3) = MaxPool2x2.forward(&e3);

        let u3 = self.up[2].forward(params, &p3);
        let (mut d3, dc3) = self.dec[2].forward(params, &Tensor::concat(&[&u3, &e3]));
        d3.relu_in_place();
        let u2 = self.up[1].forward(params, &d3);
        let (mut d2, dc2) = self.dec[1].forward(params, &Tensor::concat(&[&u2, &e2]));
        d2.relu_in_place();
        let u1 = self.up[0].forward(params, &d2);
        let (mut d1, dc1) = self.dec[0].forward(params, &Tensor::concat(&[&u1, &e1]));
        d1.relu_in_place();

        let (out, head_cols) = self.head.forward(params, &Tensor::concat(&[&d1, &sf]));
        let cache = ForwardCache {
            sparse_cols,
            enc_cols: [c1, c2, c3],
            enc_out: [e1, e2, e3],
            pools: [pc1, pc2, pc3],
            up_in: [d2.clone(), d3.clone(), p3],
            dec_cols: [dc1, dc2, dc3],
            dec_out: [d1, d2, d3],
            head_cols,
        };
        (out, cache)
    }

    /// Backpropagates `dout` (gradient w.r.t. the output map), accumulating
    /// parameter gradients into `grads`. Returns the gradient with respect to
    /// the normalized sparse channel when `sparse_grad` is set.
    pub fn backward<T: Real>(
        &self,
        params: &[T],
        cache: &ForwardCache<T>,
        dout: &Tensor<T>,
        grads: &mut [T],
        sparse_grad: bool,
    ) -> Option<Tensor<T>> {
        let [w1, w2, w3] = self.arch.widths;
        let sf = self.arch.sparse_features;

        let dhead = self.head.backward(params, &cache.head_cols, dout, grads, true).unwrap();
        let mut parts = dhead.split(&[w1, sf]);
        let mut dsf = parts.pop().unwrap();
        let mut dd1 = parts.pop().unwrap();

        dd1.relu_backward_in_place(&cache.dec_out[0]);
        let dcat = self.dec[0].backward(params, &cache.dec_cols[0], &dd1, grads, true).unwrap();
        let mut parts = dcat.split(&[w1, w1]);
        let mut de1 = parts.pop().unwrap();
        let du1 = parts.pop().unwrap();
        let mut dd2 = self.up[0].backward(params, &cache.up_in[0], &du1, grads);

        dd2.relu_backward_in_place(&cache.dec_out[1]);
        let dcat = self.dec[1].backward(params, &cache.dec_cols[1], &dd2, grads, true).unwrap();
        let mut parts = dcat.split(&[w2, w2]);
        let mut de2 = parts.pop().unwrap();
        let du2 = parts.pop().unwrap();
        let mut dd3 = self.up[1].backward(params, &cache.up_in[1], &du2, grads);

        dd3.relu_backward_in_place(&cache.dec_out[2]);
        let dcat = self.dec[2].backward(params, &cache.dec_cols[2], &dd3, grads, true).unwrap();
        let mut parts = dcat.split(&[w3, w3]);
        let mut de3 = parts.pop().unwrap();
        let du3 = parts.pop().unwrap();
        let dp3 = self.up[2].backward(params, &cache.up_in[2], &du3, grads);

        de3.add_assign(&MaxPool2x2.backward(&cache.pools[2], &dp3));
        de3.relu_backward_in_place(&cache.enc_out[2]);
        let dp2 = self.enc[2].backward(params, &cache.enc_cols[2], &de3, grads, true).unwrap();

        de2.add_assign(&MaxPool2x2.backward(&cache.pools[1], &dp2));
        de2.relu_backward_in_place(&cache.enc_out[1]);
        let dp1 = self.enc[1].backward(params, &cache.enc_cols[1], &de2, grads, true).unwrap();

        de1.add_assign(&MaxPool2x2.backward(&cache.pools[0], &dp1));
        de1.relu_backward_in_place(&cache.enc_out[0]);
        // The rgb part of the input gradient is never needed; the sparse-feature
        // part always is (it feeds the sparse conv's weight gradient).
        let dx0 = self.enc[0].backward(params, &cache.enc_cols[0], &de1, grads, true).unwrap();
        let mut parts = dx0.split(&[3, sf]);
        dsf.add_assign(&parts.pop().unwrap());

        self.sparse_in.backward(params, &cache.sparse_cols, &dsf, grads, sparse_grad)
    }
}

/// Metadata recorded when a model finishes training.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs_trained: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub final_train_loss: f64,
}

/// A sparse-conditioned depth estimator: architecture, weights and training metadata.
#[derive(Clone, Debug)]
pub struct DepthModel {
    net: Network,
    params: Vec<f32>,
    params_f64: Vec<f64>,
    pub meta: TrainingMeta,
}

/// Normalized network inputs for one image.
pub(crate) struct NetInput<T> {
    pub rgb: Tensor<T>,
    pub sparse: Tensor<T>,
}

/// Maps a raw sparse value to the network's sparse channel: depths are divided
/// by `scale`, the sentinel (and anything nonpositive) passes through unchanged.
pub fn normalize_sparse(value: f64, scale: f64) -> f64 {
    if value > 0.0 {
        value / scale
    } else {
        value
    }
}

/// Derivative of [`normalize_sparse`] with respect to the raw value.
pub fn normalize_sparse_slope(value: f64, scale: f64) -> f64 {
    if value > 0.0 {
        1.0 / scale
    } else {
        1.0
    }
}

pub(crate) fn prepare_input<T: Real>(
    arch: &Architecture,
    rgb: &RgbImage,
    sparse: &Grid<f64>,
) -> Result<NetInput<T>> {
    let r = arch.resolution;
    if rgb.dims() != (r, r) {
        return Err(Error::shape((r, r), rgb.dims()));
    }
    sparse.check_dims((r, r))?;
    if sparse.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("sparse map contains non-finite values".into()));
    }
    let rgb_t = Tensor::from_vec(3, r, r, rgb.to_planar().into_iter().map(T::from_f64).collect());
    let sparse_t = Tensor::from_vec(
        1,
        r,
        r,
        sparse
            .as_slice()
            .iter()
            .map(|v| T::from_f64(normalize_sparse(*v, arch.sparse_scale)))
            .collect(),
    );
    Ok(NetInput {
        rgb: rgb_t,
        sparse: sparse_t,
    })
}

impl DepthModel {
    /// Fresh model with fan-in scaled random weights keyed by `seed`.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let net = Network::new(arch)?;
        let params = net.init_params(seed);
        let mut m = Self::from_params(net, params)?;
        m.meta.seed = seed;
        Ok(m)
    }

    pub fn from_params(net: Network, params: Vec<f32>) -> Result<Self> {
        if params.len() != net.param_count() {
            return Err(Error::Format(format!(
                "expected {} parameters, got {}",
                net.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite weights".into()));
        }
        let params_f64 = params.iter().map(|v| f64::from(*v)).collect();
        Ok(Self {
            net,
            params,
            params_f64,
            meta: TrainingMeta::default(),
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.net.arch
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub(crate) fn params_f64(&self) -> &[f64] {
        &self.params_f64
    }

    pub(crate) fn set_params(&mut self, params: Vec<f32>) {
        self.params_f64 = params.iter().map(|v| f64::from(*v)).collect();
        self.params = params;
    }

    /// Log-depth prediction for an image and a raw sparse grid (sentinel `-1`).
    pub fn forward_raw(&self, rgb: &RgbImage, sparse: &Grid<f64>) -> Result<ScalarField> {
        let input = prepare_input::<f64>(&self.net.arch, rgb, sparse)?;
        let (out, _) = self.net.forward(&self.params_f64, &input.rgb, &input.sparse);
        let r = self.net.arch.resolution;
        ScalarField::new(FieldRole::LogDepth, Grid::from_vec(r, r, out.data)?)
    }

    /// Dense log-depth map conditioned on `sparse`.
    pub fn forward(&self, rgb: &RgbImage, sparse: &SparseDepthMap) -> Result<ScalarField> {
        self.forward_raw(rgb, sparse.grid())
    }

    /// Dense depth in millimeters: the elementwise exponential of [`DepthModel::forward`].
    pub fn predict_depth(&self, rgb: &RgbImage, sparse: &SparseDepthMap) -> Result<crate::grid::DepthMap> {
        depth_from_log(&self.forward(rgb, sparse)?)
    }
}

/// Exponentiates a log-depth field.
pub fn depth_from_log(log_depth: &ScalarField) -> Result<crate::grid::DepthMap> {
    crate::grid::DepthMap::new(log_depth.grid().map(f64::exp))
}

/// A sparse grid with every pixel unobserved.
pub fn empty_sparse_grid(resolution: usize) -> Grid<f64> {
    Grid::filled(resolution, resolution, SENTINEL)
}
