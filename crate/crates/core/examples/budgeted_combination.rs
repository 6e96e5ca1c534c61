//! Sweeps stride, dilation and size separately, keeps the top greedy
//! permutations of each within a budget and evaluates their combinations.

use dynaconv::data::SyntheticSpec;
use dynaconv::model::{Model, ModelSpec};
use dynaconv::options::{Attribute, Slot};
use dynaconv::oracle::{budget, combined_space, comprehensive_sweep, enumerate, SweepSpace};
use dynaconv::rof::{train_static, TrainConfig};

fn main() -> dynaconv::Result<()> {
    for cap in [625, 512, 100] {
        let p = budget(3, cap)?;
        println!("cap {cap}: R = {} per attribute, {} combinations", p.r, p.total);
    }

    let ds = SyntheticSpec { n: 740, class_count: 8, scale_range: (8, 28), canvas: 32, seed: 2 }.generate()?;
    let (train, eval) = ds.split_off(40, ("train", "eval"))?;
    let spec = ModelSpec::mini_residual([8, 16, 32, 64], 8);
    let mut model = Model::<f32>::build(&spec, 2)?;
    model.set_normalization(train.normalization())?;
    train_static(&mut model, &train, &TrainConfig::new(4, 32, 0.05, 2))?;

    let slots = [Slot::C, Slot::D];
    let attrs = [Attribute::Stride, Attribute::Dilation, Attribute::Size];
    let mut sweeps = Vec::new();
    for a in attrs {
        let perms = enumerate(&spec, &SweepSpace::new(&[a], &slots))?;
        let sr = comprehensive_sweep(&model, &eval, &perms, 40)?;
        println!("{a}: {} permutations, best case {:.3}", sr.m(), sr.bounds().best);
        sweeps.push((a, sr));
    }
    let plan = budget(3, 27)?;
    let refs: Vec<_> = sweeps.iter().map(|(a, s)| (*a, s)).collect();
    let joint = combined_space(&refs, &plan)?;
    let sr = comprehensive_sweep(&model, &eval, &joint, 40)?;
    let b = sr.bounds();
    println!("combined: {} permutations, worst {:.3} median {:.3} best {:.3}", sr.m(), b.worst, b.median, b.best);
    Ok(())
}
