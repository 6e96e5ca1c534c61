//! One stored 3×3 kernel run at different strides, dilations and sizes.

use dynaconv::dynconv::{count_macs, ConvWeights, DynamicConv, LayerOptions};
use dynaconv::options::Stride;
use dynaconv::tensor::Tensor4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> dynaconv::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let kernel = Tensor4::from_fn([8, 4, 3, 3], |_| rng.random_range(-0.5..0.5f32));
    let layer = DynamicConv { weights: ConvWeights::new(kernel), groups: 1, options: LayerOptions::deep() };
    let x = Tensor4::from_fn([1, 4, 16, 16], |[_, c, h, w]| ((c + h * w) % 7) as f32 / 7.0);
    let before = layer.weights.clone();

    println!("{:>6} {:>4} {:>4} {:>10} {:>10}", "stride", "dil", "size", "output", "MACs");
    let settings = [
        (Stride::Whole(1), 1, 3),
        (Stride::Whole(2), 1, 3),
        (Stride::Whole(4), 1, 3),
        (Stride::Half, 1, 3),
        (Stride::Whole(1), 3, 3),
        (Stride::Whole(1), 1, 1),
        (Stride::Whole(1), 1, 7),
        (Stride::Half, 2, 5),
    ];
    for (s, d, k) in settings {
        let cfg = layer.config(s, d, k)?;
        let y = layer.forward(&x, &cfg)?;
        let macs = count_macs(x.dims(), layer.weights.out_channels(), &cfg);
        println!("{:>6} {:>4} {:>4} {:>10} {:>10}", s.to_string(), d, k, format!("{}×{}", y.h(), y.w()), macs);
    }
    assert_eq!(layer.weights, before);

    let shallow = DynamicConv { options: LayerOptions::shallow(), ..layer };
    match shallow.config(Stride::Half, 1, 3) {
        Err(e) => println!("shallow layer rejects up-sampling: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
