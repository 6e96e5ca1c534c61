use dynaconv::data::{Dataset, SyntheticSpec};
use dynaconv::model::{Model, ModelSpec, ParamKind};
use dynaconv::options::{Attribute, Slot};
use dynaconv::oracle::{enumerate, stride_perm, SweepSpace};
use dynaconv::rof::{evaluate, permutation_draws, train, train_static, Sampling, TrainConfig};
use dynaconv::Error;

fn setup(n: usize, seed: u64) -> (ModelSpec, Model<f32>, Dataset) {
    let spec = ModelSpec::mini_residual([4, 8, 8, 16], 4);
    let ds = SyntheticSpec { n, class_count: 4, scale_range: (10, 24), canvas: 32, seed }.generate().unwrap();
    let mut model = Model::<f32>::build(&spec, seed).unwrap();
    model.set_normalization(ds.normalization()).unwrap();
    (spec, model, ds)
}

fn trainable(m: &Model<f32>) -> Vec<Vec<f32>> {
    m.params().iter().filter(|p| p.kind == ParamKind::Trainable).map(|p| p.value.data().to_vec()).collect()
}

fn snapshot(m: &Model<f32>) -> Vec<u8> {
    m.to_store().unwrap().to_bytes().unwrap()
}

#[test]
fn zero_learning_rate_leaves_weights_unchanged() {
    let (_, mut model, ds) = setup(24, 1);
    let before = trainable(&model);
    let all = snapshot(&model);
    let cfg = TrainConfig { sampling: Sampling::UniformRandom, ..TrainConfig::new(2, 8, 0.0, 3) };
    let perms = [stride_perm([1, 2, 2, 2]), stride_perm([2, 1, 0, 3])];
    train(&mut model, &ds, &cfg, &perms, |_, _| Ok(())).unwrap();
    assert_eq!(trainable(&model), before);
    let frozen = TrainConfig { freeze_bn: true, ..cfg };
    let (_, mut model, ds) = setup(24, 1);
    train(&mut model, &ds, &frozen, &perms, |_, _| Ok(())).unwrap();
    assert_eq!(snapshot(&model), all);
}

#[test]
fn overfits_a_tiny_set() {
    let (_, mut model, ds) = setup(8, 2);
    let cfg = TrainConfig { weight_decay: 0.0, ..TrainConfig::new(200, 8, 0.05, 4) };
    let log = train_static(&mut model, &ds, &cfg).unwrap();
    let first_below = log.batches.iter().position(|b| b.loss < 0.01);
    assert!(first_below.is_some_and(|s| s < 200), "final loss {}", log.batches.last().unwrap().loss);
}

#[test]
fn same_seed_same_model() {
    let perms = [stride_perm([1, 2, 2, 2]), stride_perm([1, 2, 1, 0]), stride_perm([2, 2, 3, 1])];
    let run = || {
        let (_, mut model, ds) = setup(40, 5);
        let cfg = TrainConfig { sampling: Sampling::UniformRandom, ..TrainConfig::new(2, 8, 0.02, 6) };
        let log = train(&mut model, &ds, &cfg, &perms, |_, _| Ok(())).unwrap();
        (log, snapshot(&model))
    };
    let (a, wa) = run();
    let (b, wb) = run();
    assert_eq!(a, b);
    assert_eq!(wa, wb);
}

#[test]
fn default_only_random_sampling_equals_static_training() {
    let (spec, mut a, ds) = setup(32, 7);
    let (_, mut b, _) = setup(32, 7);
    let cfg = TrainConfig::new(2, 8, 0.02, 8);
    train_static(&mut a, &ds, &cfg).unwrap();
    let random = TrainConfig { sampling: Sampling::UniformRandom, ..cfg };
    let log = train(&mut b, &ds, &random, &[spec.default_permutation()], |_, _| Ok(())).unwrap();
    assert!(log.batches.iter().all(|x| x.perm == 0));
    assert_eq!(snapshot(&a), snapshot(&b));
}

#[test]
fn permutation_draws_are_uniform() {
    let (count, draws) = (25usize, 100_000usize);
    let mut hist = vec![0usize; count];
    for d in permutation_draws(11, count, draws) {
        hist[d] += 1;
    }
    let p = 1.0 / count as f64;
    let mean = draws as f64 * p;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for (i, &h) in hist.iter().enumerate() {
        assert!((h as f64 - mean).abs() <= 5.0 * sigma, "bin {i}: {h} vs {mean}");
    }
    assert_eq!(permutation_draws(11, count, 50), permutation_draws(11, count, 50));
    assert_ne!(permutation_draws(11, count, 50), permutation_draws(12, count, 50));
}

#[test]
fn logged_permutations_follow_the_draw_stream() {
    let (spec, mut model, ds) = setup(32, 3);
    let perms = enumerate(&spec, &SweepSpace::new(&[Attribute::Stride], &[Slot::D])).unwrap();
    let cfg = TrainConfig { sampling: Sampling::UniformRandom, ..TrainConfig::new(2, 8, 0.01, 13) };
    let log = train(&mut model, &ds, &cfg, &perms, |_, _| Ok(())).unwrap();
    let logged: Vec<usize> = log.batches.iter().map(|b| b.perm).collect();
    assert_eq!(logged, permutation_draws(13, perms.len(), logged.len()));
}

#[test]
fn divergence_and_bad_configs_are_reported() {
    let (_, mut model, ds) = setup(16, 4);
    let cfg = TrainConfig { momentum: 0.0, weight_decay: 0.0, ..TrainConfig::new(3, 8, 1e30, 1) };
    assert!(matches!(train_static(&mut model, &ds, &cfg), Err(Error::Divergence { .. })));
    let (_, mut model, ds) = setup(16, 4);
    let bad = TrainConfig { epochs: 0, ..TrainConfig::new(1, 8, 0.1, 1) };
    assert!(matches!(train_static(&mut model, &ds, &bad), Err(Error::Config(_))));
    let disallowed = [stride_perm([0, 2, 2, 2])];
    let cfg = TrainConfig::new(1, 8, 0.1, 1);
    assert!(matches!(train(&mut model, &ds, &cfg, &disallowed, |_, _| Ok(())), Err(Error::Config(_))));
}

#[test]
fn learning_rate_schedule_and_checkpoints() {
    let (_, mut model, ds) = setup(16, 9);
    let cfg = TrainConfig { decay_epoch: Some(2), ..TrainConfig::new(3, 8, 0.1, 1) };
    let mut seen = Vec::new();
    let default = model.spec().default_permutation();
    let log = train(&mut model, &ds, &cfg, &[default], |e, m| {
        seen.push((e, evaluate(m, &ds, &m.spec().default_permutation(), 16)?));
        Ok(())
    })
    .unwrap();
    assert_eq!(seen.len(), 3);
    let lrs: Vec<f64> = log.batches.iter().map(|b| b.lr).collect();
    assert!(lrs[..4].iter().all(|&l| l == 0.1));
    assert!(lrs[4..].iter().all(|&l| (l - 0.01).abs() < 1e-15));
}
