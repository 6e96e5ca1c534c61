//! Random-permutation fine-tuning: sweep, fine-tune with one random stride
//! permutation per batch, sweep again.

use dynaconv::data::SyntheticSpec;
use dynaconv::model::{Model, ModelSpec};
use dynaconv::options::{Attribute, Slot};
use dynaconv::oracle::{enumerate, SweepSpace};
use dynaconv::rof::{rof_finetune, train_static, TrainConfig};

fn main() -> dynaconv::Result<()> {
    let ds = SyntheticSpec { n: 860, class_count: 8, scale_range: (8, 28), canvas: 32, seed: 4 }.generate()?;
    let (train, eval) = ds.split_off(60, ("train", "eval"))?;
    let spec = ModelSpec::mini_residual([8, 16, 32, 64], 8);
    let mut model = Model::<f32>::build(&spec, 4)?;
    model.set_normalization(train.normalization())?;
    train_static(&mut model, &train, &TrainConfig::new(4, 32, 0.05, 4))?;

    let perms = enumerate(&spec, &SweepSpace::new(&[Attribute::Stride], &[Slot::C, Slot::D]))?;
    let report = rof_finetune(&mut model, &train, &eval, &TrainConfig::new(2, 32, 0.01, 9), &perms, 60)?;
    for (name, s) in [("before", &report.pre), ("after", &report.post)] {
        println!(
            "{name:<6} worst {:.3} median {:.3} best {:.3} volatility {:.3} mean distinct predictions {:.2}",
            s.bounds.worst, s.bounds.median, s.bounds.best, s.volatility, s.mean_unique
        );
    }
    Ok(())
}
