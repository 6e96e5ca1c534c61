//! Runs every sample through every stride permutation and reports the
//! oracle bounds, the greedy accumulation curve and how many distinct
//! predictions each sample receives.

use dynaconv::data::SyntheticSpec;
use dynaconv::model::{Model, ModelSpec};
use dynaconv::options::{Attribute, Slot};
use dynaconv::oracle::{comprehensive_sweep, enumerate, greedy_accumulate, unique_predictions, SweepSpace};
use dynaconv::rof::{train_static, TrainConfig};

fn main() -> dynaconv::Result<()> {
    let ds = SyntheticSpec { n: 760, class_count: 8, scale_range: (8, 28), canvas: 32, seed: 11 }.generate()?;
    let (train, eval) = ds.split_off(60, ("train", "eval"))?;
    let spec = ModelSpec::mini_residual([8, 16, 32, 64], 8);
    let mut model = Model::<f32>::build(&spec, 5)?;
    model.set_normalization(train.normalization())?;
    train_static(&mut model, &train, &TrainConfig::new(4, 32, 0.05, 5))?;

    // Slots C and D only, to keep the sweep small.
    let perms = enumerate(&spec, &SweepSpace::new(&[Attribute::Stride], &[Slot::C, Slot::D]))?;
    let sr = comprehensive_sweep(&model, &eval, &perms, 60)?;
    let base = spec.default_permutation();
    let b = sr.bounds();
    println!("{} permutations × {} samples", sr.m(), sr.n());
    println!(
        "default {:.3}  worst {:.3}  median {:.3}  best {:.3}  volatility {:.3}",
        sr.static_accuracy(sr.index_of(&base).expect("default is swept")),
        b.worst,
        b.median,
        b.best,
        b.volatility()
    );
    for step in greedy_accumulate(&sr, 5)? {
        println!("greedy k={} accuracy {:.3} adds {}", step.k, step.accuracy, sr.perms[step.perm].label(&base));
    }
    for (count, samples) in unique_predictions(&sr).iter().enumerate().skip(1).filter(|(_, &s)| s > 0) {
        println!("{samples:>3} samples see {count} distinct predictions");
    }
    Ok(())
}
