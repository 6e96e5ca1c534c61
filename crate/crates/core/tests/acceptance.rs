//! One PASS/FAIL line per acceptance criterion.
//!
//! Exact criteria make the run exit non-zero when they fail. Directional
//! experiments report their outcome and measured values without failing the
//! run.

use std::time::Instant;

use dynaconv::autodiff::{grad_check, GradCheckOptions, Kernels, Tape};
use dynaconv::data::{apply_probe, load_cifar10, CifarSplit, Dataset, ProbeTransform, SyntheticSpec, SCALE_FACTORS};
use dynaconv::dynconv::{self, count_macs, kernels, output_shape, ConvConfig, ConvGeometry, ConvWeights};
use dynaconv::efficiency::{cost_table, efficiency_oracle, Reference};
use dynaconv::model::{Model, ModelSpec};
use dynaconv::options::{Attribute, OptionSets, Permutation, Slot, Stride};
use dynaconv::oracle::{
    budget, cartesian, comprehensive_sweep, enumerate, greedy_accumulate, preference_report, quality, select, stride_perm,
    PreferenceMode, Rule, SweepResult, SweepSpace,
};
use dynaconv::rof::{evaluate, rof_finetune, train_static, SweepSummary, TrainConfig};
use dynaconv::tensor::Tensor4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CIFAR_ENV: &str = "DYNACONV_CIFAR10_DIR";

struct Line {
    name: &'static str,
    pass: bool,
    exact: bool,
    detail: String,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(dims: [usize; 4], r: &mut ChaCha8Rng) -> Tensor4<f64> {
    Tensor4::from_fn(dims, |_| r.random_range(-1.0..1.0))
}

// ---------------------------------------------------------------- numerics

fn naive_conv(x: &Tensor4<f64>, w: &Tensor4<f64>, stride: usize, pad: usize, groups: usize) -> Tensor4<f64> {
    let [n, _, h, wd] = x.dims();
    let [o, ig, kh, kw] = w.dims();
    let og = o / groups;
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    Tensor4::from_fn([n, o, oh, ow], |[b, oc, i, j]| {
        let g = oc / og;
        let mut acc = 0.0;
        for ci in 0..ig {
            for a in 0..kh {
                for e in 0..kw {
                    let y = (i * stride + a) as isize - pad as isize;
                    let xx = (j * stride + e) as isize - pad as isize;
                    if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < wd {
                        acc += x.at(b, g * ig + ci, y as usize, xx as usize) * w.at(oc, ci, a, e);
                    }
                }
            }
        }
        acc
    })
}

fn numerics() -> Line {
    let t = Instant::now();
    let mut r = rng(1);
    let mut cases: Vec<(ConvConfig, [usize; 4], [usize; 4])> = vec![(ConvConfig::new(Stride::Whole(1), 1, 3, 1).unwrap(), [2, 3, 6, 6], [4, 3, 3, 3])];
    cases.extend((2..=5).map(|d| (ConvConfig::new(Stride::Whole(1), d, 3, 1).unwrap(), [1, 2, 9, 9], [3, 2, 3, 3])));
    cases.extend([1, 3, 5, 7, 9].map(|k| (ConvConfig::new(Stride::Whole(1), 1, k, 1).unwrap(), [1, 2, 7, 7], [3, 2, 3, 3])));
    cases.extend([(1, 3), (2, 3), (1, 5)].map(|(d, k)| (ConvConfig::new(Stride::Half, d, k, 1).unwrap(), [1, 2, 4, 5], [3, 2, 3, 3])));
    let mut worst_rel = 0.0f64;
    let mut failures = Vec::new();
    for (cfg, xd, wd) in &cases {
        let params = [random(*xd, &mut r), random(*wd, &mut r)];
        let report = grad_check(
            |tape, v| {
                let y = tape.dynamic_conv(v[0], v[1], cfg)?;
                let sq = tape.mul(y, y)?;
                tape.mean_all(sq)
            },
            &params,
            &GradCheckOptions { tol: 1e-4, max_coords: Some(40), ..Default::default() },
        )
        .unwrap();
        worst_rel = worst_rel.max(report.max_rel_err);
        if !report.passed() {
            failures.push(format!("{cfg:?}"));
        }
    }

    // Dilation d equals the plain convolution of the zero-inserted kernel.
    let mut dil_err = 0.0f64;
    let x = random([2, 3, 13, 11], &mut r);
    let w = random([4, 3, 3, 3], &mut r);
    for d in 1..=5 {
        let kd = d * 2 + 1;
        let sparse = Tensor4::from_fn([4, 3, kd, kd], |[a, b, y, z]| if y % d == 0 && z % d == 0 { w.at(a, b, y / d, z / d) } else { 0.0 });
        for s in 1..=4 {
            let cfg = ConvConfig::new(Stride::Whole(s), d, 3, 1).unwrap();
            let got = dynconv::forward(&x, &ConvWeights::new(w.clone()), &cfg).unwrap();
            dil_err = dil_err.max(got.max_abs_diff(&naive_conv(&x, &sparse, s, cfg.padding(), 1)).unwrap());
        }
    }

    // <T(y), x> = <y, C(x)> for the transposed convolution T.
    let mut adj_err = 0.0f64;
    for (stride, d, k, groups) in [(2, 1, 3, 1), (2, 2, 3, 1), (2, 1, 5, 2), (3, 1, 3, 1)] {
        let c = 2 * groups;
        let stored = random([c, c / groups, k, k], &mut r);
        let g = ConvGeometry::new(stride, d, d * (k - 1) / 2, groups);
        let y_small = random([1, c, 5, 5], &mut r);
        let up = kernels::conv_transpose2d(&y_small, &stored, g, 1).unwrap();
        let x_big = random(up.dims(), &mut r);
        let flipped = kernels::flip_swap(&stored, groups);
        let kd = d * (k - 1) + 1;
        let sparse = Tensor4::from_fn([c, c / groups, kd, kd], |[a, b, y, z]| if y % d == 0 && z % d == 0 { flipped.at(a, b, y / d, z / d) } else { 0.0 });
        let fwd = naive_conv(&x_big, &sparse, stride, g.padding, groups);
        let (lhs, rhs) = (up.dot(&x_big).unwrap(), y_small.dot(&fwd).unwrap());
        adj_err = adj_err.max((lhs - rhs).abs() / lhs.abs().max(1.0));
    }
    let pass = failures.is_empty() && dil_err <= 1e-10 && adj_err <= 1e-10 && t.elapsed().as_secs() < 120;
    Line {
        name: "numerics",
        pass,
        exact: true,
        detail: format!(
            "{} gradient paths, max rel err {worst_rel:.2e}, failures {failures:?}; dilation {dil_err:.1e}; adjoint {adj_err:.1e}; {:.1}s",
            cases.len(),
            t.elapsed().as_secs_f64()
        ),
    }
}

// ------------------------------------------------------------ shape / cost

fn first_principles_extent(n: usize, s: Stride, d: usize, k: usize) -> usize {
    match s {
        Stride::Half => 2 * n,
        Stride::Whole(s) => {
            let padded = n + d * (k - 1);
            (0..).step_by(s).take_while(|start| start + d * (k - 1) < padded).count()
        }
    }
}

fn shape_cost() -> Line {
    let t = Instant::now();
    let mut r = rng(2);
    let mut mismatches = 0;
    let configs = 1000;
    for _ in 0..configs {
        let (h, w) = (r.random_range(1..14), r.random_range(1..14));
        let s = if r.random_bool(0.2) { Stride::Half } else { Stride::Whole(r.random_range(1..=4)) };
        let d = r.random_range(1..=5);
        let k = [1, 3, 5, 7, 9][r.random_range(0..5)];
        let (c, o) = (r.random_range(1..4), r.random_range(1..4));
        let cfg = ConvConfig::new(s, d, k, 1).unwrap();
        let y = dynconv::forward(&Tensor4::<f32>::filled([1, c, h, w], 0.25), &ConvWeights::new(Tensor4::filled([o, c, 3, 3], 0.5)), &cfg).unwrap();
        let (oh, ow) = output_shape(h, w, &cfg);
        let want = (first_principles_extent(h, s, d, k), first_principles_extent(w, s, d, k));
        if y.dims() != [1, o, oh, ow] || (oh, ow) != want {
            mismatches += 1;
        }
    }
    let layer_cases = [
        (ConvConfig::new(Stride::Whole(1), 1, 3, 1).unwrap(), [2, 3, 8, 8], 4),
        (ConvConfig::new(Stride::Whole(2), 3, 5, 1).unwrap(), [1, 2, 11, 9], 3),
        (ConvConfig::new(Stride::Whole(4), 1, 1, 1).unwrap(), [1, 4, 13, 13], 2),
        (ConvConfig::new(Stride::Half, 2, 3, 1).unwrap(), [1, 2, 5, 6], 3),
        (ConvConfig::new(Stride::Whole(3), 1, 7, 4).unwrap(), [1, 4, 10, 10], 8),
    ];
    let mut mac_mismatch = 0;
    for (cfg, dims, out) in layer_cases {
        let mut tape = Tape::<f64>::inference().with_kernels(Kernels::Reference);
        let x = tape.leaf(Tensor4::filled(dims, 1.0));
        let w = tape.leaf(Tensor4::filled([out, dims[1] / cfg.groups, 3, 3], 1.0));
        tape.dynamic_conv(x, w, &cfg).unwrap();
        mac_mismatch += (tape.counted_macs() != count_macs(dims, out, &cfg)) as usize;
    }
    let model = Model::<f64>::build(&ModelSpec::mini_residual([4, 8, 8, 16], 5), 3).unwrap();
    let x = Tensor4::filled([1, 3, 16, 16], 0.1);
    for p in [stride_perm([1, 2, 2, 2]), stride_perm([2, 1, 0, 3]), stride_perm([4, 4, 1, 0])] {
        let (_, measured) = model.forward_counted(&x, &p).unwrap();
        mac_mismatch += (measured != model.macs(&p, 16, 16).unwrap()) as usize;
    }
    Line {
        name: "shape/cost",
        pass: mismatches == 0 && mac_mismatch == 0 && t.elapsed().as_secs() < 120,
        exact: true,
        detail: format!("{configs} shape configs, {mismatches} mismatches; 8 MAC configs, {mac_mismatch} mismatches; {:.1}s", t.elapsed().as_secs_f64()),
    }
}

// ------------------------------------------------------------ toy sweeps

fn toy_perms(m: usize) -> Vec<Permutation> {
    let base = ModelSpec::mini_residual([4, 4, 4, 4], 2).default_permutation();
    cartesian(&OptionSets::full(), &base, &[Attribute::Dilation], &Slot::ALL).into_iter().take(m).collect()
}

fn toy_sweep(r: &mut ChaCha8Rng, max_n: usize, max_m: usize) -> SweepResult {
    let (n, m, classes) = (r.random_range(1..=max_n), r.random_range(1..=max_m), r.random_range(2..5usize));
    let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..classes)).collect();
    let preds: Vec<u16> = (0..n * m).map(|_| r.random_range(0..classes as u16)).collect();
    // Coarse true-class confidences, consistent with each cell's correctness,
    // so that quality ties occur.
    let confs = (0..n * m)
        .map(|k| if preds[k] as usize == labels[k / m] { r.random_range(2..5) as f32 / 4.0 } else { r.random_range(0..2) as f32 / 4.0 })
        .collect();
    SweepResult::from_parts(toy_perms(m), labels, classes, preds, confs, vec![1; m]).unwrap()
}

fn bounds_suite(real: &[&SweepResult]) -> Line {
    let t = Instant::now();
    let mut grid_bad = 0;
    for k in 0..=1000 {
        let v = k as f64 / 1000.0;
        grid_bad += (quality(v, true) != v + 1.0) as usize + (quality(v, false) != v) as usize;
    }
    let mut r = rng(3);
    let toys: Vec<SweepResult> = (0..500).map(|_| toy_sweep(&mut r, 12, 9)).collect();
    let mut dominance_bad = 0;
    for sr in toys.iter().chain(real.iter().copied()) {
        let b = sr.bounds();
        dominance_bad += (0..sr.m()).filter(|&m| !(b.worst <= sr.static_accuracy(m) && sr.static_accuracy(m) <= b.best)).count();
    }
    let mut median_bad = 0;
    for sr in &toys {
        let chosen = select(sr, Rule::Median);
        for (i, &c) in chosen.iter().enumerate() {
            let mut order: Vec<usize> = (0..sr.m()).collect();
            order.sort_by(|&a, &b| sr.quality(i, a).partial_cmp(&sr.quality(i, b)).unwrap());
            median_bad += (order[(sr.m() - 1) / 2] != c) as usize;
        }
    }
    Line {
        name: "quality/bounds",
        pass: grid_bad == 0 && dominance_bad == 0 && median_bad == 0 && t.elapsed().as_secs() < 60,
        exact: true,
        detail: format!(
            "grid {grid_bad} bad; dominance over {} sweeps {dominance_bad} bad; median on {} toys {median_bad} bad; {:.1}s",
            toys.len() + real.len(),
            toys.len(),
            t.elapsed().as_secs_f64()
        ),
    }
}

fn budget_table() -> Line {
    let three = budget(3, 625).unwrap();
    let two = budget(2, 625).unwrap();
    Line {
        name: "budget",
        pass: (three.r, three.total, two.r, two.total) == (8, 512, 25, 625),
        exact: true,
        detail: format!("3 attrs: R={} total={}; 2 attrs: R={} total={}", three.r, three.total, two.r, two.total),
    }
}

fn subset_optimum(sr: &SweepResult, k: usize) -> usize {
    (0u32..1 << sr.m())
        .filter(|mask| mask.count_ones() as usize == k)
        .map(|mask| (0..sr.n()).filter(|&i| (0..sr.m()).any(|c| mask & (1 << c) != 0 && sr.correct(i, c))).count())
        .max()
        .unwrap_or(0)
}

fn greedy_suite(real: &SweepResult) -> Line {
    let t = Instant::now();
    let mut r = rng(4);
    let mut bad = Vec::new();
    let full = greedy_accumulate(real, real.m()).unwrap();
    if full.windows(2).any(|w| w[0].accuracy > w[1].accuracy) || full.last().unwrap().accuracy != real.bounds().best {
        bad.push("real sweep".to_string());
    }
    for case in 0..400 {
        let sr = toy_sweep(&mut r, 10, 10);
        let curve = greedy_accumulate(&sr, sr.m()).unwrap();
        let n = sr.n() as f64;
        if curve.windows(2).any(|w| w[0].accuracy > w[1].accuracy) || curve.last().unwrap().accuracy != sr.bounds().best {
            bad.push(format!("toy {case}: monotone/endpoint"));
        }
        if curve.iter().any(|s| s.accuracy > subset_optimum(&sr, s.k) as f64 / n + 1e-12) {
            bad.push(format!("toy {case}: exceeds optimum"));
        }
    }
    // Disjoint coverage: each sample is correct under at most one column.
    for case in 0..200 {
        let (n, m) = (r.random_range(1..12), r.random_range(1..=10usize));
        let owner: Vec<usize> = (0..n).map(|_| r.random_range(0..m + 1)).collect();
        let preds = owner.iter().flat_map(|&o| (0..m).map(move |c| u16::from(o == c))).collect();
        let sr = SweepResult::from_parts(toy_perms(m), vec![1; n], 2, preds, vec![0.5; n * m], vec![1; m]).unwrap();
        for s in greedy_accumulate(&sr, m).unwrap() {
            if s.accuracy != subset_optimum(&sr, s.k) as f64 / n as f64 {
                bad.push(format!("disjoint {case}: k={}", s.k));
            }
        }
    }
    Line {
        name: "greedy",
        pass: bad.is_empty() && t.elapsed().as_secs() < 60,
        exact: true,
        detail: format!("{}-perm real curve plus 600 toys; violations {bad:?}; {:.1}s", real.m(), t.elapsed().as_secs_f64()),
    }
}

// ----------------------------------------------------- desk-scale fixture

struct Fixture {
    spec: ModelSpec,
    model: Model<f32>,
    train: Dataset,
    eval: Dataset,
    static_acc: f64,
    stride_perms: Vec<Permutation>,
    stride_sweep: SweepResult,
    seconds: f64,
}

fn fixture() -> Fixture {
    let t = Instant::now();
    let ds = SyntheticSpec { n: 1300, class_count: 8, scale_range: (8, 28), canvas: 32, seed: 21 }.generate().unwrap();
    let (train, eval) = ds.split_off(100, ("train", "eval")).unwrap();
    let spec = ModelSpec::mini_residual([8, 16, 32, 64], 8);
    let mut model = Model::<f32>::build(&spec, 1).unwrap();
    model.set_normalization(train.normalization()).unwrap();
    let cfg = TrainConfig { decay_epoch: Some(9), ..TrainConfig::new(12, 32, 0.05, 1) };
    train_static(&mut model, &train, &cfg).unwrap();
    let static_acc = evaluate(&model, &eval, &spec.default_permutation(), 100).unwrap();
    let stride_perms = enumerate(&spec, &SweepSpace::new(&[Attribute::Stride], &Slot::ALL)).unwrap();
    let stride_sweep = comprehensive_sweep(&model, &eval, &stride_perms, 100).unwrap();
    Fixture { spec, model, train, eval, static_acc, stride_perms, stride_sweep, seconds: t.elapsed().as_secs_f64() }
}

fn dominance_line(static_acc: f64, sr: &SweepResult) -> (bool, String) {
    let b = sr.bounds();
    let pass = b.best >= static_acc + 0.05 && b.worst <= static_acc - 0.15;
    (pass, format!("static {static_acc:.3}, worst {:.3}, median {:.3}, best {:.3} over {} perms", b.worst, b.median, b.best, sr.m()))
}

fn cifar_dominance() -> Line {
    let Some(dir) = std::env::var_os(CIFAR_ENV) else {
        return Line {
            name: "cifar-dominance",
            pass: false,
            exact: false,
            detail: format!("BLOCKED: {CIFAR_ENV} is not set, CIFAR-10 binary batches unavailable"),
        };
    };
    let t = Instant::now();
    let run = || -> dynaconv::Result<(f64, SweepResult)> {
        let train = load_cifar10(&dir, CifarSplit::Train)?;
        let test = load_cifar10(&dir, CifarSplit::Test)?;
        let train = train.take(train.len().min(20_000))?;
        let test = test.take(test.len().min(1000))?;
        let spec = ModelSpec::mini_residual([16, 32, 64, 128], 10);
        let mut model = Model::<f32>::build(&spec, 1)?;
        model.set_normalization(train.normalization())?;
        train_static(&mut model, &train, &TrainConfig { decay_epoch: Some(12), ..TrainConfig::new(16, 64, 0.1, 1) })?;
        let static_acc = evaluate(&model, &test, &spec.default_permutation(), 100)?;
        let perms = enumerate(&spec, &SweepSpace::new(&[Attribute::Stride], &Slot::ALL))?;
        Ok((static_acc, comprehensive_sweep(&model, &test, &perms, 100)?))
    };
    match run() {
        Ok((static_acc, sr)) => {
            let (pass, detail) = dominance_line(static_acc, &sr);
            Line {
                name: "cifar-dominance",
                pass: pass && static_acc >= 0.6,
                exact: false,
                detail: format!("{detail}; {:.0}s", t.elapsed().as_secs_f64()),
            }
        }
        Err(e) => Line { name: "cifar-dominance", pass: false, exact: false, detail: format!("error: {e}") },
    }
}

fn rof(fx: &Fixture) -> Line {
    let t = Instant::now();
    let mut model = fx.model.clone();
    let cfg = TrainConfig { decay_epoch: Some(ROF_EPOCHS * 3 / 4), ..TrainConfig::new(ROF_EPOCHS, ROF_BATCH, 0.01, 2) };
    let report = rof_finetune(&mut model, &fx.train, &fx.eval, &cfg, &fx.stride_perms, 100).unwrap();
    let (pre, post): (&SweepSummary, &SweepSummary) = (&report.pre, &report.post);
    let pass = post.volatility < pre.volatility && post.bounds.median > pre.bounds.median && post.mean_unique < pre.mean_unique;
    Line {
        name: "rof",
        pass,
        exact: false,
        detail: format!(
            "volatility {:.3} -> {:.3}, median {:.3} -> {:.3}, worst {:.3} -> {:.3}, best {:.3} -> {:.3}, mean unique {:.3} -> {:.3}; {ROF_EPOCHS} epochs; {:.0}s",
            pre.volatility,
            post.volatility,
            pre.bounds.median,
            post.bounds.median,
            pre.bounds.worst,
            post.bounds.worst,
            pre.bounds.best,
            post.bounds.best,
            pre.mean_unique,
            post.mean_unique,
            t.elapsed().as_secs_f64()
        ),
    }
}

const ROF_EPOCHS: usize = 40;
const ROF_BATCH: usize = 16;

fn efficiency(fx: &Fixture) -> Line {
    let t = Instant::now();
    let mut r = rng(5);
    let mut bad = 0;
    for _ in 0..300 {
        let mut sr = toy_sweep(&mut r, 12, 10);
        sr.macs = (0..sr.m()).map(|_| r.random_range(1..1000)).collect();
        let reference = Reference::Fixed(sr.perms[r.random_range(0..sr.m())]);
        for reference in [reference, Reference::BestCase] {
            let e = efficiency_oracle(&sr, &sr.macs, reference).unwrap();
            bad += (e.accuracy != e.reference_accuracy || e.avg_macs > e.reference_macs) as usize;
        }
    }
    let base = fx.spec.default_permutation();
    let perms = cartesian(&OptionSets::efficiency(), &base, &[Attribute::Stride, Attribute::Size], &Slot::ALL);
    let eval = fx.eval.take(50).unwrap();
    let sr = comprehensive_sweep(&fx.model, &eval, &perms, 50).unwrap();
    let costs = cost_table(&fx.model, &perms, eval.extent()).unwrap();
    let mut desk = Vec::new();
    for reference in [Reference::Fixed(base), Reference::BestCase] {
        let e = efficiency_oracle(&sr, &costs.macs, reference).unwrap();
        bad += (e.accuracy != e.reference_accuracy || e.avg_macs > e.reference_macs) as usize;
        desk.push(format!("acc {:.3} at {:.2} MMACs (ref {:.2})", e.accuracy, e.avg_macs / 1e6, e.reference_macs / 1e6));
    }
    Line {
        name: "efficiency",
        pass: bad == 0,
        exact: true,
        detail: format!("600 toy checks; desk {} perms: default {}, best-case {}; {bad} violations; {:.0}s", perms.len(), desk[0], desk[1], t.elapsed().as_secs_f64()),
    }
}

/// Spearman rank correlation with average ranks for ties.
fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut out = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                out[k] = (i + j) as f64 / 2.0 + 1.0;
            }
            i = j + 1;
        }
        out
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

fn scale_probe(fx: &Fixture) -> Line {
    let t = Instant::now();
    let perms = enumerate(&fx.spec, &SweepSpace::new(&[Attribute::Stride], &[Slot::D])).unwrap();
    let sweeps: Vec<(String, SweepResult)> = SCALE_FACTORS
        .iter()
        .map(|&f| {
            let probe = apply_probe(&fx.eval, ProbeTransform::Scale(f)).unwrap();
            (ProbeTransform::Scale(f).label(), comprehensive_sweep(&fx.model, &probe, &perms, 50).unwrap())
        })
        .collect();
    let groups: Vec<(String, &SweepResult)> = sweeps.iter().map(|(l, s)| (l.clone(), s)).collect();
    let report = preference_report(&groups, &fx.spec.default_permutation(), PreferenceMode::GlobalBest).unwrap();
    let means: Vec<f64> = report.groups.iter().map(|g| g.mean(Slot::D, Attribute::Stride).unwrap()).collect();
    let rho = spearman(&SCALE_FACTORS, &means);
    let shown: Vec<String> = means.iter().map(|m| format!("{m:.3}")).collect();
    Line {
        name: "scale-probe",
        pass: rho > 0.0,
        exact: false,
        detail: format!("mean preferred D stride by scale {shown:?}, Spearman rho {rho:.3}; {:.0}s", t.elapsed().as_secs_f64()),
    }
}

fn report(line: &Line) {
    let kind = if line.exact { "exact" } else { "directional" };
    println!("{} {} [{kind}]: {}", if line.pass { "PASS" } else { "FAIL" }, line.name, line.detail);
}

fn main() {
    // `cargo test -- --list` and filters from the test harness.
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut lines = Vec::new();
    let mut run = |l: Line| {
        report(&l);
        lines.push(l);
    };
    run(numerics());
    run(shape_cost());
    let fx = fixture();
    println!(
        "info fixture: mini-residual on synthetic data, static accuracy {:.3}, {}-perm stride sweep; {:.0}s",
        fx.static_acc,
        fx.stride_perms.len(),
        fx.seconds
    );
    run(bounds_suite(&[&fx.stride_sweep]));
    run(budget_table());
    run(greedy_suite(&fx.stride_sweep));
    run(cifar_dominance());
    let (pass, detail) = dominance_line(fx.static_acc, &fx.stride_sweep);
    println!("info synthetic-dominance: {} ({detail})", if pass { "met" } else { "not met" });
    run(rof(&fx));
    run(efficiency(&fx));
    run(scale_probe(&fx));

    let exact_failures = lines.iter().filter(|l| l.exact && !l.pass).count();
    let directional_failures = lines.iter().filter(|l| !l.exact && !l.pass).count();
    println!(
        "summary: {} criteria, {} passed, {exact_failures} exact failures, {directional_failures} directional failures",
        lines.len(),
        lines.iter().filter(|l| l.pass).count()
    );
    if exact_failures > 0 {
        std::process::exit(1);
    }
}
