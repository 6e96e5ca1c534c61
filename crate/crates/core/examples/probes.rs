//! Which slot-D stride the oracle prefers as the input is rescaled, and as
//! the visible context shrinks.

use dynaconv::data::{apply_probe, ProbeTransform, SyntheticSpec, CONTEXT_CROPS, SCALE_FACTORS};
use dynaconv::model::{Model, ModelSpec};
use dynaconv::options::{Attribute, Slot};
use dynaconv::oracle::{comprehensive_sweep, enumerate, preference_report, PreferenceMode, SweepResult, SweepSpace};
use dynaconv::rof::{train_static, TrainConfig};

fn main() -> dynaconv::Result<()> {
    let ds = SyntheticSpec { n: 740, class_count: 8, scale_range: (8, 28), canvas: 32, seed: 8 }.generate()?;
    let (train, eval) = ds.split_off(40, ("train", "eval"))?;
    let spec = ModelSpec::mini_residual([8, 16, 32, 64], 8);
    let mut model = Model::<f32>::build(&spec, 8)?;
    model.set_normalization(train.normalization())?;
    train_static(&mut model, &train, &TrainConfig::new(4, 32, 0.05, 8))?;
    let perms = enumerate(&spec, &SweepSpace::new(&[Attribute::Stride], &[Slot::D]))?;
    let base = spec.default_permutation();

    let probes: [(&str, Vec<ProbeTransform>); 2] = [
        ("scale", SCALE_FACTORS.iter().map(|&f| ProbeTransform::Scale(f)).collect()),
        ("context", CONTEXT_CROPS.iter().map(|&c| ProbeTransform::context(c)).collect()),
    ];
    for (kind, levels) in probes {
        let sweeps: Vec<(String, SweepResult)> = levels
            .iter()
            .map(|t| Ok((t.label(), comprehensive_sweep(&model, &apply_probe(&eval, *t)?, &perms, 40)?)))
            .collect::<dynaconv::Result<_>>()?;
        let groups: Vec<(String, &SweepResult)> = sweeps.iter().map(|(l, s)| (l.clone(), s)).collect();
        let report = preference_report(&groups, &base, PreferenceMode::GlobalBest)?;
        println!("{kind} probe");
        for g in &report.groups {
            let mean = g.mean(Slot::D, Attribute::Stride).unwrap_or(f64::NAN);
            println!("  {:<11} mean preferred D stride {mean:.3}", g.group);
        }
    }
    Ok(())
}
