//! Cheapest prediction-preserving permutation per sample, and the
//! accuracy-versus-cost frontier of every static permutation.

use dynaconv::data::SyntheticSpec;
use dynaconv::efficiency::{cost_table, efficiency_oracle, frontier, Reference};
use dynaconv::model::{Model, ModelSpec};
use dynaconv::options::{Attribute, OptionSets, Slot, Stride};
use dynaconv::oracle::{comprehensive_sweep, enumerate, SweepSpace};
use dynaconv::rof::{train_static, TrainConfig};

fn main() -> dynaconv::Result<()> {
    let ds = SyntheticSpec { n: 764, class_count: 8, scale_range: (8, 28), canvas: 32, seed: 6 }.generate()?;
    let (train, eval) = ds.split_off(64, ("train", "eval"))?;
    let mut spec = ModelSpec::mini_residual([8, 16, 32, 64], 8);
    spec.options = OptionSets::efficiency();
    spec.options.stride.get_mut(Slot::A).retain(|s| *s == Stride::Whole(1));
    let mut model = Model::<f32>::build(&spec, 6)?;
    model.set_normalization(train.normalization())?;
    train_static(&mut model, &train, &TrainConfig::new(4, 32, 0.05, 6))?;

    let perms = enumerate(&spec, &SweepSpace::new(&[Attribute::Stride, Attribute::Size], &Slot::ALL))?;
    let sr = comprehensive_sweep(&model, &eval, &perms, 64)?;
    let costs = cost_table(&model, &perms, eval.extent())?;
    let base = spec.default_permutation();

    let fixed = efficiency_oracle(&sr, &costs.macs, Reference::Fixed(base))?;
    println!(
        "default: accuracy {:.3} at {:.2} MMACs; efficient variant {:.3} at {:.2} MMACs",
        fixed.reference_accuracy,
        fixed.reference_macs / 1e6,
        fixed.accuracy,
        fixed.avg_macs / 1e6
    );
    let f = frontier(&sr, &costs.macs, &base, &[base])?;
    for p in f.highlights() {
        println!("{:<28} accuracy {:.3} at {:.4} GMACs", p.label, p.accuracy, p.avg_gmacs);
    }
    let cheapest = f.points.iter().filter(|p| p.perm_index.is_some()).min_by(|a, b| a.avg_gmacs.total_cmp(&b.avg_gmacs)).expect("non-empty");
    println!("cheapest static permutation {} at {:.4} GMACs, accuracy {:.3}", cheapest.label, cheapest.avg_gmacs, cheapest.accuracy);
    Ok(())
}
