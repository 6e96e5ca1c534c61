//! Convolution whose stride, dilation and effective kernel size are chosen
//! per forward pass while the stored kernel stays untouched.
//!
//! Padding is always `p = D·(K−1)/2`, so the spatial resolution is governed
//! by the stride alone:
//!
//! * whole stride `S`: `h' = ⌊(h + 2p − D(K−1) − 1)/S⌋ + 1`
//! * stride ½: a transposed convolution with step 2 and one row/column of
//!   output padding, so `h' = 2h` exactly.
//!
//! When the active size `K` differs from the stored size `K₀` the kernel is
//! bilinearly resampled and the output scaled by `α = K₀²/K²`. Bias, when
//! present, is added after scaling.

pub mod interp;
pub mod kernels;
pub mod reference;

pub use interp::{interpolate_kernel, interpolate_kernel_adjoint, resample_matrix, resize_bilinear};
pub use kernels::ConvGeometry;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, dim_err, Error, Result};
use crate::options::{Stride, DILATION_CHOICES, SIZE_CHOICES, STORED_KERNEL};
use crate::tensor::{self, Real, Tensor4};

/// Active attribute setting of one dynamic layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvConfig {
    pub stride: Stride,
    pub dilation: usize,
    pub kernel_size: usize,
    pub groups: usize,
}

impl Default for ConvConfig {
    fn default() -> Self {
        ConvConfig { stride: Stride::Whole(1), dilation: 1, kernel_size: STORED_KERNEL, groups: 1 }
    }
}

impl ConvConfig {
    pub fn new(stride: Stride, dilation: usize, kernel_size: usize, groups: usize) -> Result<Self> {
        let cfg = ConvConfig { stride, dilation, kernel_size, groups };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dilation == 0 {
            return config_err("dilation must be at least 1");
        }
        if self.kernel_size.is_multiple_of(2) {
            return config_err(format!("kernel size {} is even", self.kernel_size));
        }
        if self.groups == 0 {
            return config_err("groups must be at least 1");
        }
        if let Stride::Whole(0) = self.stride {
            return config_err("stride must be positive");
        }
        Ok(())
    }

    pub fn padding(&self) -> usize {
        self.dilation * (self.kernel_size - 1) / 2
    }

    /// Output scale compensating a resampled kernel: `K₀²/K²`.
    pub fn alpha(&self, stored: usize) -> f64 {
        (stored * stored) as f64 / (self.kernel_size * self.kernel_size) as f64
    }

    pub(crate) fn geometry(&self) -> ConvGeometry {
        let step = match self.stride {
            Stride::Half => 2,
            Stride::Whole(s) => s,
        };
        ConvGeometry::new(step, self.dilation, self.padding(), self.groups)
    }
}

/// Stored parameters of a dynamic layer; never resized or rewritten by a
/// forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvWeights<T> {
    pub kernel: Tensor4<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Real> ConvWeights<T> {
    pub fn new(kernel: Tensor4<T>) -> Self {
        ConvWeights { kernel, bias: None }
    }

    pub fn with_bias(kernel: Tensor4<T>, bias: Vec<T>) -> Result<Self> {
        if bias.len() != kernel.n() {
            return dim_err(format!("bias of {} for {} output channels", bias.len(), kernel.n()));
        }
        Ok(ConvWeights { kernel, bias: Some(bias) })
    }

    pub fn stored_size(&self) -> usize {
        self.kernel.h()
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.n()
    }

    pub fn in_channels(&self, groups: usize) -> usize {
        self.kernel.c() * groups
    }
}

pub fn output_shape(h: usize, w: usize, cfg: &ConvConfig) -> (usize, usize) {
    match cfg.stride {
        Stride::Half => (2 * h, 2 * w),
        Stride::Whole(s) => {
            let span = cfg.dilation * (cfg.kernel_size - 1);
            let ext = |x: usize| (x + 2 * cfg.padding() - span - 1) / s + 1;
            (ext(h), ext(w))
        }
    }
}

/// Multiply-accumulates of one dynamic layer on an input of `x_dims`:
/// `K²·(c_in/g)·c_out·h'·w'` with `K` the active size.
pub fn count_macs(x_dims: [usize; 4], out_channels: usize, cfg: &ConvConfig) -> u64 {
    let [n, c_in, h, w] = x_dims;
    let (oh, ow) = output_shape(h, w, cfg);
    let k = cfg.kernel_size as u64;
    n as u64 * k * k * (c_in / cfg.groups) as u64 * out_channels as u64 * oh as u64 * ow as u64
}

fn effective_kernel<T: Real>(w: &ConvWeights<T>, cfg: &ConvConfig) -> Result<Tensor4<T>> {
    interpolate_kernel(&w.kernel, cfg.kernel_size)
}

fn check_channels<T: Real>(x: &Tensor4<T>, w: &ConvWeights<T>, cfg: &ConvConfig) -> Result<()> {
    let expected = w.in_channels(cfg.groups);
    if x.c() != expected || !w.out_channels().is_multiple_of(cfg.groups) {
        return dim_err(format!(
            "input has {} channels; kernel {:?} with {} groups expects {}",
            x.c(),
            w.kernel.dims(),
            cfg.groups,
            expected
        ));
    }
    Ok(())
}

fn finish<T: Real>(mut y: Tensor4<T>, w: &ConvWeights<T>, cfg: &ConvConfig) -> Result<Tensor4<T>> {
    let alpha = cfg.alpha(w.stored_size());
    if alpha != 1.0 {
        y = tensor::scale(&y, T::cast(alpha));
    }
    if let Some(b) = &w.bias {
        kernels::add_channel_bias(&mut y, b)?;
    }
    Ok(y)
}

/// Whole-stride dynamic convolution.
pub fn conv_forward<T: Real>(x: &Tensor4<T>, w: &ConvWeights<T>, cfg: &ConvConfig) -> Result<Tensor4<T>> {
    cfg.validate()?;
    if cfg.stride.is_fractional() {
        return config_err("conv_forward needs a whole stride; use fractional_forward for 1/2");
    }
    check_channels(x, w, cfg)?;
    let k = effective_kernel(w, cfg)?;
    let y = kernels::conv2d(x, &k, cfg.geometry())?;
    finish(y, w, cfg)
}

/// Stride-½ dynamic convolution as a transposed convolution with step 2.
pub fn fractional_forward<T: Real>(x: &Tensor4<T>, w: &ConvWeights<T>, cfg: &ConvConfig) -> Result<Tensor4<T>> {
    cfg.validate()?;
    if cfg.stride != Stride::Half {
        return config_err(format!("fractional_forward needs stride 1/2, got {}", cfg.stride));
    }
    check_channels(x, w, cfg)?;
    let k = effective_kernel(w, cfg)?;
    let y = kernels::conv_transpose2d(x, &k, cfg.geometry(), 1)?;
    finish(y, w, cfg)
}

pub fn forward<T: Real>(x: &Tensor4<T>, w: &ConvWeights<T>, cfg: &ConvConfig) -> Result<Tensor4<T>> {
    match cfg.stride {
        Stride::Half => fractional_forward(x, w, cfg),
        Stride::Whole(_) => conv_forward(x, w, cfg),
    }
}

/// What a recorded forward keeps for its backward pass.
#[derive(Clone, Debug)]
pub struct ConvRecord<T> {
    input: Option<Tensor4<T>>,
    weights: ConvWeights<T>,
    cfg: ConvConfig,
}

impl<T: Real> ConvRecord<T> {
    /// Drops the saved activation (as a memory-saving pass would).
    pub fn release(&mut self) {
        self.input = None;
    }

    pub fn config(&self) -> &ConvConfig {
        &self.cfg
    }
}

pub fn forward_recorded<T: Real>(
    x: &Tensor4<T>,
    w: &ConvWeights<T>,
    cfg: &ConvConfig,
) -> Result<(Tensor4<T>, ConvRecord<T>)> {
    let y = forward(x, w, cfg)?;
    Ok((y, ConvRecord { input: Some(x.clone()), weights: w.clone(), cfg: *cfg }))
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor4<T>,
    pub kernel: Tensor4<T>,
    pub bias: Option<Vec<T>>,
}

/// Reverse pass of [`forward`]. The kernel gradient of a resampled layer is
/// the interpolation adjoint applied to the resampled-kernel gradient,
/// scaled by `α`; the input gradient of a stride-½ layer is a stride-2
/// convolution.
pub fn conv_backward<T: Real>(grad_out: &Tensor4<T>, record: &ConvRecord<T>) -> Result<ConvGrads<T>> {
    let Some(x) = &record.input else {
        return Err(Error::State("no saved input; forward was not recorded".into()));
    };
    let cfg = &record.cfg;
    let w = &record.weights;
    let stored = w.stored_size();
    let bias = w.bias.as_ref().map(|_| kernels::channel_sums(grad_out));
    let alpha = T::cast(cfg.alpha(stored));
    let g_scaled = tensor::scale(grad_out, alpha);
    let k = effective_kernel(w, cfg)?;
    let (dx, dk) = match cfg.stride {
        Stride::Half => kernels::conv_transpose2d_backward(&g_scaled, x, &k, cfg.geometry())?,
        Stride::Whole(_) => {
            let g = cfg.geometry();
            let dx = kernels::conv2d_backward_data(&g_scaled, &k, x.dims(), g)?;
            let dk = kernels::conv2d_backward_weight(&g_scaled, x, k.dims(), g)?;
            (dx, dk)
        }
    };
    let kernel = interpolate_kernel_adjoint(&dk, stored)?;
    Ok(ConvGrads { input: dx, kernel, bias })
}

/// Option space a single dynamic layer accepts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerOptions {
    pub strides: Vec<Stride>,
    pub dilations: Vec<usize>,
    pub sizes: Vec<usize>,
}

impl LayerOptions {
    pub fn deep() -> Self {
        LayerOptions {
            strides: crate::options::STRIDE_CHOICES.to_vec(),
            dilations: DILATION_CHOICES.to_vec(),
            sizes: SIZE_CHOICES.to_vec(),
        }
    }

    /// No up-sampling, as in the shallow slots.
    pub fn shallow() -> Self {
        let mut o = Self::deep();
        o.strides.retain(|s| !s.is_fractional());
        o
    }
}

/// A standalone dynamic layer: stored weights plus the options it admits.
#[derive(Clone, Debug)]
pub struct DynamicConv<T> {
    pub weights: ConvWeights<T>,
    pub groups: usize,
    pub options: LayerOptions,
}

impl<T: Real> DynamicConv<T> {
    pub fn config(&self, stride: Stride, dilation: usize, kernel_size: usize) -> Result<ConvConfig> {
        if !self.options.strides.contains(&stride) {
            return config_err(format!("stride {stride} is not allowed for this layer"));
        }
        if !self.options.dilations.contains(&dilation) {
            return config_err(format!("dilation {dilation} is not allowed for this layer"));
        }
        if !self.options.sizes.contains(&kernel_size) {
            return config_err(format!("kernel size {kernel_size} is not allowed for this layer"));
        }
        ConvConfig::new(stride, dilation, kernel_size, self.groups)
    }

    pub fn forward(&self, x: &Tensor4<T>, cfg: &ConvConfig) -> Result<Tensor4<T>> {
        self.config(cfg.stride, cfg.dilation, cfg.kernel_size)?;
        forward(x, &self.weights, cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(s: Stride, d: usize, k: usize) -> ConvConfig {
        ConvConfig::new(s, d, k, 1).unwrap()
    }

    #[test]
    fn output_shape_examples() {
        assert_eq!(output_shape(56, 56, &cfg(Stride::Whole(2), 1, 3)), (28, 28));
        assert_eq!(output_shape(7, 7, &cfg(Stride::Whole(1), 1, 3)), (7, 7));
        assert_eq!(output_shape(32, 32, &cfg(Stride::Whole(3), 2, 3)), (11, 11));
        assert_eq!(output_shape(8, 8, &cfg(Stride::Half, 3, 5)), (16, 16));
    }

    #[test]
    fn padding_and_alpha() {
        let c = cfg(Stride::Whole(1), 3, 7);
        assert_eq!(c.padding(), 9);
        assert!((cfg(Stride::Whole(1), 1, 5).alpha(3) - 9.0 / 25.0).abs() < 1e-15);
        assert_eq!(cfg(Stride::Whole(1), 1, 3).alpha(3), 1.0);
        assert!(ConvConfig::new(Stride::Whole(1), 1, 4, 1).is_err());
    }

    #[test]
    fn ones_kernel_hand_convolution() {
        let x = Tensor4::<f64>::filled([1, 1, 3, 3], 1.0);
        let w = ConvWeights::new(Tensor4::filled([1, 1, 3, 3], 1.0));
        let y = conv_forward(&x, &w, &cfg(Stride::Whole(1), 1, 3)).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn identity_kernel() {
        let x = Tensor4::<f64>::from_fn([2, 1, 5, 6], |[n, _, h, w]| (n * 30 + h * 6 + w) as f64);
        let mut k = Tensor4::zeros([1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        let y = conv_forward(&x, &ConvWeights::new(k), &cfg(Stride::Whole(1), 1, 3)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn dilation_spreads_a_delta() {
        let mut x = Tensor4::<f64>::zeros([1, 1, 5, 5]);
        x.data_mut()[12] = 1.0;
        let k = Tensor4::new([1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let y = conv_forward(&x, &ConvWeights::new(k), &cfg(Stride::Whole(1), 2, 3)).unwrap();
        // correlation with a centred delta stamps the kernel reversed
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(y.at(0, 0, 2 * a, 2 * b), (9 - (a * 3 + b)) as f64);
            }
        }
        assert_eq!(y.at(0, 0, 1, 1), 0.0);
    }

    #[test]
    fn wrong_stride_kind_and_channels() {
        let x = Tensor4::<f64>::zeros([1, 2, 4, 4]);
        let w = ConvWeights::new(Tensor4::zeros([1, 2, 3, 3]));
        assert!(conv_forward(&x, &w, &cfg(Stride::Half, 1, 3)).is_err());
        assert!(fractional_forward(&x, &w, &cfg(Stride::Whole(2), 1, 3)).is_err());
        let bad = Tensor4::<f64>::zeros([1, 3, 4, 4]);
        assert!(matches!(conv_forward(&bad, &w, &cfg(Stride::Whole(1), 1, 3)), Err(Error::Dimension(_))));
    }

    #[test]
    fn released_record_is_a_state_error() {
        let x = Tensor4::<f64>::filled([1, 1, 4, 4], 1.0);
        let w = ConvWeights::new(Tensor4::filled([1, 1, 3, 3], 1.0));
        let (y, mut rec) = forward_recorded(&x, &w, &cfg(Stride::Whole(1), 1, 3)).unwrap();
        rec.release();
        assert!(matches!(conv_backward(&y, &rec), Err(Error::State(_))));
    }

    #[test]
    fn shallow_layer_rejects_half() {
        let layer = DynamicConv {
            weights: ConvWeights::new(Tensor4::<f64>::zeros([1, 1, 3, 3])),
            groups: 1,
            options: LayerOptions::shallow(),
        };
        assert!(matches!(layer.config(Stride::Half, 1, 3), Err(Error::Config(_))));
        assert!(layer.config(Stride::Whole(4), 5, 9).is_ok());
    }

    #[test]
    fn mac_counts() {
        let c = cfg(Stride::Whole(1), 1, 3);
        assert_eq!(count_macs([1, 2, 8, 8], 4, &c), 4608);
        assert_eq!(count_macs([1, 2, 8, 8], 4, &cfg(Stride::Whole(1), 1, 1)), 512);
        let s1 = count_macs([1, 2, 16, 16], 4, &c);
        let s2 = count_macs([1, 2, 16, 16], 4, &cfg(Stride::Whole(2), 1, 3));
        assert_eq!(s1, 4 * s2);
    }
}
