//! Direct nested-loop kernels. Slow, obvious, and instrumented: every
//! multiply-accumulate executed (padding taps included) bumps the counter.

use super::kernels::{ConvGeometry, Plan};
use crate::error::Result;
use crate::tensor::{Real, Tensor4};

pub fn conv2d_direct<T: Real>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    g: ConvGeometry,
    macs: Option<&mut u64>,
) -> Result<Tensor4<T>> {
    let p = Plan::new(x.dims(), w.dims(), g)?;
    let mut y = Tensor4::zeros([p.n, p.c_out, p.oh, p.ow]);
    let pad = g.padding as isize;
    let mut count = 0u64;
    for n in 0..p.n {
        for o in 0..p.c_out {
            let gi = o / p.og;
            for i in 0..p.oh {
                for j in 0..p.ow {
                    let mut acc = T::zero();
                    for ci in 0..p.ig {
                        let c = gi * p.ig + ci;
                        for a in 0..p.kh {
                            for b in 0..p.kw {
                                count += 1;
                                let yy = (i * g.stride + a * g.dilation) as isize - pad;
                                let xx = (j * g.stride + b * g.dilation) as isize - pad;
                                let v = if yy < 0 || xx < 0 || yy >= p.h as isize || xx >= p.w as isize {
                                    T::zero()
                                } else {
                                    x.at(n, c, yy as usize, xx as usize)
                                };
                                acc += v * w.at(o, ci, a, b);
                            }
                        }
                    }
                    let off = y.offset(n, o, i, j);
                    y.data_mut()[off] = acc;
                }
            }
        }
    }
    if let Some(m) = macs {
        *m += count;
    }
    Ok(y)
}

/// Inserts `factor − 1` zeros after every input pixel along both axes, so an
/// `h×w` map becomes `factor·h × factor·w` with the data on the even lattice.
pub fn zero_insert<T: Real>(x: &Tensor4<T>, factor: usize) -> Tensor4<T> {
    let [n, c, h, w] = x.dims();
    let mut out = Tensor4::zeros([n, c, h * factor, w * factor]);
    for ni in 0..n {
        for ci in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let o = out.offset(ni, ci, i * factor, j * factor);
                    out.data_mut()[o] = x.at(ni, ci, i, j);
                }
            }
        }
    }
    out
}

/// Fractional stride ½ in its gather form: the stored kernel, unflipped,
/// slides with step 1 over the zero-inserted input. Produces `2h × 2w`.
pub fn fractional_direct<T: Real>(
    x: &Tensor4<T>,
    stored: &Tensor4<T>,
    dilation: usize,
    groups: usize,
    macs: Option<&mut u64>,
) -> Result<Tensor4<T>> {
    let k = stored.h();
    let up = zero_insert(x, 2);
    conv2d_direct(&up, stored, ConvGeometry::new(1, dilation, dilation * (k - 1) / 2, groups), macs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_every_tap() {
        let x = Tensor4::<f64>::filled([1, 2, 8, 8], 1.0);
        let w = Tensor4::<f64>::filled([4, 2, 3, 3], 1.0);
        let mut macs = 0;
        conv2d_direct(&x, &w, ConvGeometry::new(1, 1, 1, 1), Some(&mut macs)).unwrap();
        assert_eq!(macs, 4608);
    }

    #[test]
    fn zero_insertion_layout() {
        let x = Tensor4::<f64>::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let u = zero_insert(&x, 2);
        assert_eq!(u.dims(), [1, 1, 4, 4]);
        assert_eq!(
            u.data(),
            &[1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 3.0, 0.0, 4.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
    }
}
