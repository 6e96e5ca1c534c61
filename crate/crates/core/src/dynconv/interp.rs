//! Separable linear resampling on the aligned-corner grid.
//!
//! One implementation serves two call sites: kernel-size interpolation of
//! stored 3×3 kernels and bilinear image resizing for the scale probes.

use crate::error::{config_err, dim_err, Result};
use crate::options::SIZE_CHOICES;
use crate::tensor::{Real, Tensor4};

/// Row-major `dst × src` matrix mapping `src` samples onto `dst` samples.
///
/// For `dst > 1` output `j` sits at source coordinate `j·(src−1)/(dst−1)`;
/// a single output samples the centre `(src−1)/2`.
pub fn resample_matrix(src: usize, dst: usize) -> Vec<f64> {
    let mut m = vec![0.0; dst * src];
    if src == 0 || dst == 0 {
        return m;
    }
    for j in 0..dst {
        let pos = if src == 1 {
            0.0
        } else if dst == 1 {
            (src - 1) as f64 / 2.0
        } else {
            j as f64 * (src - 1) as f64 / (dst - 1) as f64
        };
        let lo = (pos.floor() as usize).min(src - 1);
        let frac = pos - lo as f64;
        if frac > 0.0 && lo + 1 < src {
            m[j * src + lo] += 1.0 - frac;
            m[j * src + lo + 1] += frac;
        } else {
            m[j * src + lo] += 1.0;
        }
    }
    m
}

/// Applies `rows · X · colsᵀ` to every `(n, c)` plane of `x`.
fn resample_planes<T: Real>(x: &Tensor4<T>, rows: &[f64], out_h: usize, cols: &[f64], out_w: usize) -> Tensor4<T> {
    let [n, c, h, w] = x.dims();
    let rows: Vec<T> = rows.iter().map(|&v| T::cast(v)).collect();
    let cols: Vec<T> = cols.iter().map(|&v| T::cast(v)).collect();
    let mut out = Tensor4::zeros([n, c, out_h, out_w]);
    let mut tmp = vec![T::zero(); out_h * w];
    let plane_in = h * w;
    let plane_out = out_h * out_w;
    for p in 0..n * c {
        let src = &x.data()[p * plane_in..(p + 1) * plane_in];
        T::gemm(out_h, h, w, &rows, false, src, false, &mut tmp, false);
        let dst = &mut out.data_mut()[p * plane_out..(p + 1) * plane_out];
        T::gemm(out_h, w, out_w, &tmp, false, &cols, true, dst, false);
    }
    out
}

/// Adjoint of [`resample_planes`]: `rowsᵀ · G · cols`.
fn resample_planes_adjoint<T: Real>(g: &Tensor4<T>, rows: &[f64], in_h: usize, cols: &[f64], in_w: usize) -> Tensor4<T> {
    let [n, c, out_h, out_w] = g.dims();
    let rows: Vec<T> = rows.iter().map(|&v| T::cast(v)).collect();
    let cols: Vec<T> = cols.iter().map(|&v| T::cast(v)).collect();
    let mut out = Tensor4::zeros([n, c, in_h, in_w]);
    let mut tmp = vec![T::zero(); in_h * out_w];
    let plane_in = out_h * out_w;
    let plane_out = in_h * in_w;
    for p in 0..n * c {
        let src = &g.data()[p * plane_in..(p + 1) * plane_in];
        T::gemm(in_h, out_h, out_w, &rows, true, src, false, &mut tmp, false);
        let dst = &mut out.data_mut()[p * plane_out..(p + 1) * plane_out];
        T::gemm(in_h, out_w, in_w, &tmp, false, &cols, false, dst, false);
    }
    out
}

fn check_kernel_size(k: usize) -> Result<()> {
    if !SIZE_CHOICES.contains(&k) {
        return config_err(format!("unsupported kernel size {k}; expected one of 1,3,5,7,9"));
    }
    Ok(())
}

/// Resamples every spatial slice of a `(out, in, K₀, K₀)` kernel to `K×K`.
/// `K = K₀` returns the kernel unchanged.
pub fn interpolate_kernel<T: Real>(kernel: &Tensor4<T>, k: usize) -> Result<Tensor4<T>> {
    check_kernel_size(k)?;
    let (kh, kw) = (kernel.h(), kernel.w());
    if kh != kw {
        return dim_err(format!("kernel must be square, got {kh}x{kw}"));
    }
    if k == kh {
        return Ok(kernel.clone());
    }
    let m = resample_matrix(kh, k);
    Ok(resample_planes(kernel, &m, k, &m, k))
}

/// Transpose of the sampling map in [`interpolate_kernel`]: pulls a
/// gradient on the `K×K` kernel back onto the stored `K₀×K₀` kernel.
pub fn interpolate_kernel_adjoint<T: Real>(grad: &Tensor4<T>, stored: usize) -> Result<Tensor4<T>> {
    let k = grad.h();
    check_kernel_size(k)?;
    if k == stored {
        return Ok(grad.clone());
    }
    let m = resample_matrix(stored, k);
    Ok(resample_planes_adjoint(grad, &m, stored, &m, stored))
}

/// Bilinear image resize on the same aligned-corner grid.
pub fn resize_bilinear<T: Real>(x: &Tensor4<T>, out_h: usize, out_w: usize) -> Tensor4<T> {
    if out_h == x.h() && out_w == x.w() {
        return x.clone();
    }
    let rows = resample_matrix(x.h(), out_h);
    let cols = resample_matrix(x.w(), out_w);
    resample_planes(x, &rows, out_h, &cols, out_w)
}
