//! Patch-matrix (im2col) convolution kernels and their adjoints.
//!
//! Kernels are `(c_out, c_in / groups, kh, kw)`. Every routine works one
//! sample and one group at a time, so results for a sample never depend on
//! what else is in the batch.

use crate::error::{dim_err, Result};
use crate::tensor::{Real, Tensor4};

/// Integer-stride geometry of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvGeometry {
    pub fn new(stride: usize, dilation: usize, padding: usize, groups: usize) -> Self {
        ConvGeometry { stride, dilation, padding, groups }
    }

    pub fn output_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span || self.stride == 0 {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

pub(crate) struct Plan {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub ig: usize,
    pub og: usize,
    pub g: ConvGeometry,
}

impl Plan {
    pub fn new(x_dims: [usize; 4], w_dims: [usize; 4], g: ConvGeometry) -> Result<Plan> {
        let [n, c_in, h, w] = x_dims;
        let [c_out, ig, kh, kw] = w_dims;
        if g.groups == 0 || c_in % g.groups != 0 || c_out % g.groups != 0 {
            return dim_err(format!("groups {} do not divide channels {c_in}->{c_out}", g.groups));
        }
        if ig * g.groups != c_in {
            return dim_err(format!(
                "input has {c_in} channels but kernel expects {} ({} per group x {} groups)",
                ig * g.groups,
                ig,
                g.groups
            ));
        }
        let (Some(oh), Some(ow)) = (g.output_extent(h, kh), g.output_extent(w, kw)) else {
            return dim_err(format!("input {h}x{w} too small for kernel {kh}x{kw} with {g:?}"));
        };
        Ok(Plan { n, c_in, h, w, c_out, kh, kw, oh, ow, ig, og: c_out / g.groups, g })
    }

    fn cols_rows(&self) -> usize {
        self.ig * self.kh * self.kw
    }

    fn cols_len(&self) -> usize {
        self.cols_rows() * self.oh * self.ow
    }

    /// Unfolds group `gi` of one input sample into `cols`.
    fn im2col<T: Real>(&self, x: &[T], gi: usize, cols: &mut [T]) {
        let (s, d, p) = (self.g.stride, self.g.dilation, self.g.padding as isize);
        let plane = self.oh * self.ow;
        let mut row = 0;
        for ci in 0..self.ig {
            let src = &x[(gi * self.ig + ci) * self.h * self.w..][..self.h * self.w];
            for a in 0..self.kh {
                for b in 0..self.kw {
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for i in 0..self.oh {
                        let y = (i * s + a * d) as isize - p;
                        let line = &mut dst[i * self.ow..(i + 1) * self.ow];
                        if y < 0 || y >= self.h as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        let src_row = &src[y as usize * self.w..][..self.w];
                        for (j, v) in line.iter_mut().enumerate() {
                            let xx = (j * s + b * d) as isize - p;
                            *v = if xx < 0 || xx >= self.w as isize { T::zero() } else { src_row[xx as usize] };
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Folds `cols` back onto group `gi` of one sample, accumulating.
    fn col2im<T: Real>(&self, cols: &[T], gi: usize, dx: &mut [T]) {
        let (s, d, p) = (self.g.stride, self.g.dilation, self.g.padding as isize);
        let plane = self.oh * self.ow;
        let mut row = 0;
        for ci in 0..self.ig {
            let dst = &mut dx[(gi * self.ig + ci) * self.h * self.w..][..self.h * self.w];
            for a in 0..self.kh {
                for b in 0..self.kw {
                    let src = &cols[row * plane..(row + 1) * plane];
                    for i in 0..self.oh {
                        let y = (i * s + a * d) as isize - p;
                        if y < 0 || y >= self.h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[y as usize * self.w..][..self.w];
                        for j in 0..self.ow {
                            let xx = (j * s + b * d) as isize - p;
                            if xx >= 0 && xx < self.w as isize {
                                dst_row[xx as usize] += src[i * self.ow + j];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

pub fn conv2d<T: Real>(x: &Tensor4<T>, w: &Tensor4<T>, g: ConvGeometry) -> Result<Tensor4<T>> {
    let plan = Plan::new(x.dims(), w.dims(), g)?;
    let mut y = Tensor4::zeros([plan.n, plan.c_out, plan.oh, plan.ow]);
    let mut cols = vec![T::zero(); plan.cols_len()];
    let plane = plan.oh * plan.ow;
    let k = plan.cols_rows();
    let pointwise = plan.kh == 1 && plan.kw == 1 && g.stride == 1 && g.padding == 0;
    for ni in 0..plan.n {
        let xs = x.sample(ni);
        let ys = &mut y.data_mut()[ni * plan.c_out * plane..(ni + 1) * plan.c_out * plane];
        for gi in 0..g.groups {
            let wg = &w.data()[gi * plan.og * k..(gi + 1) * plan.og * k];
            let yg = &mut ys[gi * plan.og * plane..(gi + 1) * plan.og * plane];
            if pointwise {
                let xg = &xs[gi * plan.ig * plane..(gi + 1) * plan.ig * plane];
                T::gemm(plan.og, k, plane, wg, false, xg, false, yg, false);
            } else {
                plan.im2col(xs, gi, &mut cols);
                T::gemm(plan.og, k, plane, wg, false, &cols, false, yg, false);
            }
        }
    }
    Ok(y)
}

/// Gradient of [`conv2d`] with respect to its input.
pub fn conv2d_backward_data<T: Real>(
    dy: &Tensor4<T>,
    w: &Tensor4<T>,
    x_dims: [usize; 4],
    g: ConvGeometry,
) -> Result<Tensor4<T>> {
    let plan = Plan::new(x_dims, w.dims(), g)?;
    if dy.dims() != [plan.n, plan.c_out, plan.oh, plan.ow] {
        return dim_err(format!("grad {:?} does not match conv output", dy.dims()));
    }
    let mut dx = Tensor4::zeros(x_dims);
    let mut cols = vec![T::zero(); plan.cols_len()];
    let plane = plan.oh * plan.ow;
    let k = plan.cols_rows();
    let in_len = plan.c_in * plan.h * plan.w;
    for ni in 0..plan.n {
        let dys = dy.sample(ni);
        let dxs = &mut dx.data_mut()[ni * in_len..(ni + 1) * in_len];
        for gi in 0..g.groups {
            let wg = &w.data()[gi * plan.og * k..(gi + 1) * plan.og * k];
            let dyg = &dys[gi * plan.og * plane..(gi + 1) * plan.og * plane];
            T::gemm(k, plan.og, plane, wg, true, dyg, false, &mut cols, false);
            plan.col2im(&cols, gi, dxs);
        }
    }
    Ok(dx)
}

/// Gradient of [`conv2d`] with respect to its kernel, summed over the batch
/// in sample order.
pub fn conv2d_backward_weight<T: Real>(
    dy: &Tensor4<T>,
    x: &Tensor4<T>,
    w_dims: [usize; 4],
    g: ConvGeometry,
) -> Result<Tensor4<T>> {
    let plan = Plan::new(x.dims(), w_dims, g)?;
    if dy.dims() != [plan.n, plan.c_out, plan.oh, plan.ow] {
        return dim_err(format!("grad {:?} does not match conv output", dy.dims()));
    }
    let mut dw = Tensor4::zeros(w_dims);
    let mut cols = vec![T::zero(); plan.cols_len()];
    let plane = plan.oh * plan.ow;
    let k = plan.cols_rows();
    for ni in 0..plan.n {
        let xs = x.sample(ni);
        let dys = dy.sample(ni);
        for gi in 0..g.groups {
            plan.im2col(xs, gi, &mut cols);
            let dyg = &dys[gi * plan.og * plane..(gi + 1) * plan.og * plane];
            let dwg = &mut dw.data_mut()[gi * plan.og * k..(gi + 1) * plan.og * k];
            T::gemm(plan.og, plane, k, dyg, false, &cols, true, dwg, true);
        }
    }
    Ok(dw)
}

/// Rearranges a stored `(out, in/g, K, K)` kernel into the
/// `(in, out/g, K, K)` kernel a transposed convolution consumes: channel
/// axes swapped within each group, spatial taps flipped about the centre.
pub fn flip_swap<T: Real>(w: &Tensor4<T>, groups: usize) -> Tensor4<T> {
    let [c_out, ig, kh, kw] = w.dims();
    let og = c_out / groups;
    let mut out = Tensor4::zeros([ig * groups, og, kh, kw]);
    for gi in 0..groups {
        for oj in 0..og {
            for ci in 0..ig {
                for a in 0..kh {
                    for b in 0..kw {
                        let v = w.at(gi * og + oj, ci, kh - 1 - a, kw - 1 - b);
                        let o = out.offset(gi * ig + ci, oj, a, b);
                        out.data_mut()[o] = v;
                    }
                }
            }
        }
    }
    out
}

/// Inverse (and adjoint, being a permutation) of [`flip_swap`].
pub fn unflip_swap<T: Real>(wt: &Tensor4<T>, groups: usize) -> Tensor4<T> {
    let [c_in, og, kh, kw] = wt.dims();
    let ig = c_in / groups;
    let mut out = Tensor4::zeros([og * groups, ig, kh, kw]);
    for gi in 0..groups {
        for oj in 0..og {
            for ci in 0..ig {
                for a in 0..kh {
                    for b in 0..kw {
                        let v = wt.at(gi * ig + ci, oj, a, b);
                        let o = out.offset(gi * og + oj, ci, kh - 1 - a, kw - 1 - b);
                        out.data_mut()[o] = v;
                    }
                }
            }
        }
    }
    out
}

/// Output extent of a transposed convolution.
pub fn transposed_extent(input: usize, kernel: usize, g: ConvGeometry, output_padding: usize) -> Option<usize> {
    let grown = (input.checked_sub(1)?) * g.stride + g.dilation * (kernel - 1) + 1 + output_padding;
    grown.checked_sub(2 * g.padding)
}

/// Transposed convolution of `x` using a *stored* forward kernel
/// (`(out, in/g, K, K)`), i.e. the kernel is flipped and channel-swapped
/// before striding over the output.
pub fn conv_transpose2d<T: Real>(
    x: &Tensor4<T>,
    stored: &Tensor4<T>,
    g: ConvGeometry,
    output_padding: usize,
) -> Result<Tensor4<T>> {
    let [n, c, h, w] = x.dims();
    let [c_out, ig, kh, kw] = stored.dims();
    if c != ig * g.groups {
        return dim_err(format!("input has {c} channels, kernel expects {}", ig * g.groups));
    }
    let (Some(oh), Some(ow)) = (
        transposed_extent(h, kh, g, output_padding),
        transposed_extent(w, kw, g, output_padding),
    ) else {
        return dim_err("transposed convolution output would be empty");
    };
    // The transposed op equals the input-gradient of a forward convolution
    // whose kernel is the flipped, swapped stored kernel.
    let wt = flip_swap(stored, g.groups);
    conv2d_backward_data(x, &wt, [n, c_out, oh, ow], g)
}

/// Gradients of [`conv_transpose2d`] with respect to input and stored kernel.
pub fn conv_transpose2d_backward<T: Real>(
    dy: &Tensor4<T>,
    x: &Tensor4<T>,
    stored: &Tensor4<T>,
    g: ConvGeometry,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let wt = flip_swap(stored, g.groups);
    let dx = conv2d(dy, &wt, g)?;
    if dx.dims() != x.dims() {
        return dim_err(format!("transposed backward produced {:?}, input was {:?}", dx.dims(), x.dims()));
    }
    let dwt = conv2d_backward_weight(x, dy, wt.dims(), g)?;
    Ok((dx, unflip_swap(&dwt, g.groups)))
}

/// Adds `bias[c]` to every element of channel `c`.
pub fn add_channel_bias<T: Real>(x: &mut Tensor4<T>, bias: &[T]) -> Result<()> {
    let [n, c, h, w] = x.dims();
    if bias.len() != c {
        return dim_err(format!("bias of {} for {c} channels", bias.len()));
    }
    let plane = h * w;
    for ni in 0..n {
        for (ci, &b) in bias.iter().enumerate() {
            let start = (ni * c + ci) * plane;
            for v in &mut x.data_mut()[start..start + plane] {
                *v += b;
            }
        }
    }
    Ok(())
}

/// Per-channel sum of a gradient; the bias gradient.
pub fn channel_sums<T: Real>(dy: &Tensor4<T>) -> Vec<T> {
    let [n, c, h, w] = dy.dims();
    let plane = h * w;
    let mut out = vec![T::zero(); c];
    for ni in 0..n {
        for (ci, o) in out.iter_mut().enumerate() {
            let start = (ni * c + ci) * plane;
            for &v in &dy.data()[start..start + plane] {
                *o += v;
            }
        }
    }
    out
}
