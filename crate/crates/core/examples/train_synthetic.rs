//! Trains a small residual network on synthetic shapes with its default
//! strides and saves the weights.

use dynaconv::data::SyntheticSpec;
use dynaconv::model::{Model, ModelSpec};
use dynaconv::rof::{evaluate, train_static, TrainConfig};

fn main() -> dynaconv::Result<()> {
    let ds = SyntheticSpec { n: 900, class_count: 8, scale_range: (8, 28), canvas: 32, seed: 7 }.generate()?;
    let (train, eval) = ds.split_off(200, ("train", "eval"))?;
    let spec = ModelSpec::mini_residual([8, 16, 32, 64], 8);
    let mut model = Model::<f32>::build(&spec, 1)?;
    model.set_normalization(train.normalization())?;
    println!("{} trainable parameters", model.parameter_count());

    let default = spec.default_permutation();
    println!("untrained accuracy {:.3}", evaluate(&model, &eval, &default, 100)?);
    let mut cfg = TrainConfig::new(6, 32, 0.05, 1);
    cfg.decay_epoch = Some(4);
    let log = train_static(&mut model, &train, &cfg)?;
    for (e, l) in log.epoch_loss.iter().enumerate() {
        println!("epoch {e}: mean loss {l:.4}");
    }
    println!("trained accuracy {:.3}", evaluate(&model, &eval, &default, 100)?);

    let path = std::env::temp_dir().join("dynaconv_synthetic.dynw");
    model.save(&path)?;
    println!("weights written to {}", path.display());
    Ok(())
}
