//! Finite-difference check of a dynamic convolution at a resized kernel,
//! an up-sampling stride and a dilation.

use dynaconv::autodiff::{grad_check, GradCheckOptions};
use dynaconv::dynconv::ConvConfig;
use dynaconv::options::Stride;
use dynaconv::tensor::Tensor4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> dynaconv::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor4::from_fn([2, 3, 7, 7], |_| rng.random_range(-1.0..1.0));
    let w = Tensor4::from_fn([4, 3, 3, 3], |_| rng.random_range(-1.0..1.0));
    for cfg in [
        ConvConfig::new(Stride::Whole(1), 1, 3, 1)?,
        ConvConfig::new(Stride::Whole(2), 3, 3, 1)?,
        ConvConfig::new(Stride::Whole(1), 1, 7, 1)?,
        ConvConfig::new(Stride::Half, 2, 5, 1)?,
    ] {
        let report = grad_check(
            |tape, v| {
                let y = tape.dynamic_conv(v[0], v[1], &cfg)?;
                let sq = tape.mul(y, y)?;
                tape.mean_all(sq)
            },
            &[x.clone(), w.clone()],
            &GradCheckOptions::default(),
        )?;
        println!(
            "stride {:>3} dilation {} size {}: {} coordinates, max relative error {:.2e}, {}",
            cfg.stride.to_string(),
            cfg.dilation,
            cfg.kernel_size,
            report.checked,
            report.max_rel_err,
            if report.passed() { "ok" } else { "FAILED" }
        );
    }
    Ok(())
}
