use dynaconv::data::SyntheticSpec;
use dynaconv::model::{Model, ModelSpec};
use dynaconv::options::{Attribute, OptionSets, Permutation, Slot};
use dynaconv::oracle::{
    budget, combined_space, comprehensive_sweep, enumerate, greedy_accumulate, quality, select, unique_counts,
    unique_predictions, Rule, SweepResult, SweepSpace,
};
use dynaconv::tensor::{argmax_rows, softmax_rows};
use proptest::prelude::*;

fn perms(m: usize) -> Vec<Permutation> {
    let space = OptionSets::full();
    let all = dynaconv::oracle::cartesian(
        &space,
        &ModelSpec::mini_residual([4, 4, 4, 4], 2).default_permutation(),
        &[Attribute::Dilation],
        &Slot::ALL,
    );
    all.into_iter().take(m).collect()
}

prop_compose! {
    fn toy_sweep(max_n: usize, max_m: usize)(n in 1..=max_n, m in 1..=max_m, classes in 2usize..5)
        (labels in prop::collection::vec(0..classes, n),
         preds in prop::collection::vec(0..classes as u16, n * m),
         raw in prop::collection::vec(0.0f32..1.0, n * m),
         classes in Just(classes), m in Just(m)) -> SweepResult {
        // True-class confidence is at least one half exactly when the cell is correct.
        let confs = raw.iter().enumerate().map(|(k, &t)| if preds[k] as usize == labels[k / m] { 0.5 + t / 2.0 } else { t / 2.0 }).collect();
        SweepResult::from_parts(perms(m), labels, classes, preds, confs, vec![1; m]).unwrap()
    }
}

#[test]
fn quality_matches_the_definition_on_a_grid() {
    for k in 0..=1000 {
        let t = k as f64 / 1000.0;
        assert_eq!(quality(t, true), t + 1.0);
        assert_eq!(quality(t, false), t);
        assert!(quality(t, true) >= 1.0 && quality(t, false) <= 1.0);
    }
}

/// Position `(M−1)/2` of a stable ascending sort by quality.
fn brute_median(sr: &SweepResult, i: usize) -> usize {
    let mut order: Vec<usize> = (0..sr.m()).collect();
    order.sort_by(|&a, &b| sr.quality(i, a).partial_cmp(&sr.quality(i, b)).unwrap());
    order[(sr.m() - 1) / 2]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 300, ..ProptestConfig::default() })]

    #[test]
    fn best_and_worst_dominate_every_static_permutation(sr in toy_sweep(12, 9)) {
        let b = sr.bounds();
        for m in 0..sr.m() {
            let a = sr.static_accuracy(m);
            prop_assert!(b.worst <= a && a <= b.best);
        }
        prop_assert!(b.worst <= b.median && b.median <= b.best);
        let any = (0..sr.n()).filter(|&i| (0..sr.m()).any(|m| sr.correct(i, m))).count();
        let all = (0..sr.n()).filter(|&i| (0..sr.m()).all(|m| sr.correct(i, m))).count();
        prop_assert_eq!(b.best, any as f64 / sr.n() as f64);
        prop_assert_eq!(b.worst, all as f64 / sr.n() as f64);
        prop_assert_eq!(b.volatility(), b.best - b.worst);
    }

    #[test]
    fn median_matches_a_sort_oracle(sr in toy_sweep(10, 9)) {
        let chosen = select(&sr, Rule::Median);
        for i in 0..sr.n() {
            prop_assert_eq!(chosen[i], brute_median(&sr, i));
        }
        let best = select(&sr, Rule::Best);
        let worst = select(&sr, Rule::Worst);
        for i in 0..sr.n() {
            let qs: Vec<f64> = (0..sr.m()).map(|m| sr.quality(i, m)).collect();
            let hi = qs.iter().cloned().fold(f64::MIN, f64::max);
            let lo = qs.iter().cloned().fold(f64::MAX, f64::min);
            prop_assert_eq!(best[i], qs.iter().position(|&q| q == hi).unwrap());
            prop_assert_eq!(worst[i], qs.iter().position(|&q| q == lo).unwrap());
        }
    }

    #[test]
    fn unique_prediction_histogram_counts_samples(sr in toy_sweep(10, 8)) {
        let counts = unique_counts(&sr);
        let hist = unique_predictions(&sr);
        prop_assert_eq!(hist.iter().sum::<usize>(), sr.n());
        for (i, &c) in counts.iter().enumerate() {
            let mut seen: Vec<usize> = (0..sr.m()).map(|m| sr.prediction(i, m)).collect();
            seen.sort_unstable();
            seen.dedup();
            prop_assert_eq!(c, seen.len());
        }
    }

    #[test]
    fn greedy_is_monotone_and_bounded_by_exhaustive_subsets(sr in toy_sweep(10, 7)) {
        let curve = greedy_accumulate(&sr, sr.m()).unwrap();
        prop_assert!(curve.windows(2).all(|w| w[0].accuracy <= w[1].accuracy));
        prop_assert_eq!(curve.last().unwrap().accuracy, sr.bounds().best);
        let mut picked: Vec<usize> = curve.iter().map(|s| s.perm).collect();
        picked.sort_unstable();
        prop_assert_eq!(picked, (0..sr.m()).collect::<Vec<_>>());
        for step in &curve {
            prop_assert!(step.accuracy <= subset_optimum(&sr, step.k) + 1e-12);
        }
    }

    #[test]
    fn greedy_is_optimal_on_disjoint_coverage(m in 1usize..7, raw in prop::collection::vec(0usize..7, 1..12)) {
        // Each sample is predicted correctly by at most one permutation, so
        // coverage sets are disjoint and the greedy choice is exact.
        let n = raw.len();
        let preds: Vec<u16> = raw.iter().flat_map(|&o| (0..m).map(move |c| u16::from(o == c))).collect();
        let sr = SweepResult::from_parts(perms(m), vec![1; n], 2, preds, vec![0.5; n * m], vec![1; m]).unwrap();
        for step in greedy_accumulate(&sr, m).unwrap() {
            prop_assert_eq!(step.accuracy, subset_optimum(&sr, step.k));
        }
    }

    #[test]
    fn budget_is_the_largest_fitting_power(a in 1usize..5, cap in 1u64..100_000) {
        let p = budget(a, cap).unwrap();
        prop_assert_eq!(p.total, p.r.pow(a as u32));
        prop_assert!(p.total <= cap);
        prop_assert!((p.r + 1).pow(a as u32) > cap);
    }
}

/// Best accuracy reachable by any `k` permutations, by exhaustive search.
fn subset_optimum(sr: &SweepResult, k: usize) -> f64 {
    let m = sr.m();
    let mut best = 0usize;
    for mask in 0u32..(1 << m) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let hits = (0..sr.n()).filter(|&i| (0..m).any(|c| mask & (1 << c) != 0 && sr.correct(i, c))).count();
        best = best.max(hits);
    }
    best as f64 / sr.n() as f64
}

#[test]
fn budget_arithmetic_of_the_combination_table() {
    let three = budget(3, 625).unwrap();
    assert_eq!((three.r, three.total), (8, 512));
    let two = budget(2, 625).unwrap();
    assert_eq!((two.r, two.total), (25, 625));
    assert_eq!(budget(1, 625).unwrap().r, 625);
}

#[test]
fn enumeration_sizes() {
    let spec = ModelSpec::mini_residual([4, 4, 4, 4], 2);
    let stride = enumerate(&spec, &SweepSpace::new(&[Attribute::Stride], &Slot::ALL).unguarded()).unwrap();
    assert_eq!(stride.len(), 4 * 4 * 5 * 5);
    assert_eq!(enumerate(&spec, &SweepSpace::new(&[Attribute::Dilation], &Slot::ALL)).unwrap().len(), 625);
    assert_eq!(enumerate(&spec, &SweepSpace::new(&[Attribute::Size], &Slot::ALL)).unwrap().len(), 625);
    // Last slot varies fastest.
    assert_eq!(stride[0].label(&stride[0]), "S(1,1,1/2,1/2)");
    assert_eq!(stride[1].label(&stride[0]), "S(1,1,1/2,1)");
    let guarded = enumerate(&spec, &SweepSpace::new(&[Attribute::Stride], &Slot::ALL)).unwrap();
    for p in &guarded {
        assert!(spec.peak_area(p, 32, 32) <= 16 * 32 * 32);
    }
}

#[test]
fn combined_space_takes_greedy_heads() {
    let spec = ModelSpec::mini_residual([4, 8, 8, 8], 3);
    let model = Model::<f32>::build(&spec, 0).unwrap();
    let ds = SyntheticSpec { n: 12, class_count: 3, scale_range: (8, 20), canvas: 32, seed: 1 }.generate().unwrap();
    let plan = budget(2, 9).unwrap();
    let mut sweeps = Vec::new();
    for a in [Attribute::Stride, Attribute::Size] {
        let ps = enumerate(&spec, &SweepSpace::new(&[a], &[Slot::D])).unwrap();
        sweeps.push((a, comprehensive_sweep(&model, &ds, &ps, 12).unwrap()));
    }
    let refs: Vec<_> = sweeps.iter().map(|(a, s)| (*a, s)).collect();
    let joint = combined_space(&refs, &plan).unwrap();
    assert_eq!(joint.len(), 9);
    let mut uniq = joint.clone();
    uniq.sort_by_key(|p| format!("{p:?}"));
    uniq.dedup();
    assert_eq!(uniq.len(), 9);
    let heads: Vec<Vec<Permutation>> = sweeps
        .iter()
        .map(|(_, s)| greedy_accumulate(s, 3).unwrap().iter().map(|g| s.perms[g.perm]).collect())
        .collect();
    for p in &joint {
        assert!(heads[0].iter().any(|h| h.slots.iter().zip(&p.slots).all(|(a, b)| a.stride == b.stride)));
        assert!(heads[1].iter().any(|h| h.slots.iter().zip(&p.slots).all(|(a, b)| a.size == b.size)));
    }
}

#[test]
fn sweep_cells_equal_direct_forwards() {
    let spec = ModelSpec::mini_residual([4, 8, 8, 8], 4);
    let model = Model::<f32>::build(&spec, 3).unwrap();
    let ds = SyntheticSpec { n: 9, class_count: 4, scale_range: (8, 20), canvas: 32, seed: 2 }.generate().unwrap();
    let ps = enumerate(&spec, &SweepSpace::new(&[Attribute::Stride], &[Slot::C, Slot::D])).unwrap();
    let sr = comprehensive_sweep(&model, &ds, &ps, 4).unwrap();
    for (m, p) in ps.iter().enumerate() {
        let probs = softmax_rows(&model.forward(&ds.images, p).unwrap());
        let arg = argmax_rows(&probs);
        for i in 0..ds.len() {
            assert_eq!(sr.prediction(i, m), arg[i]);
            let t = probs.at(i, ds.labels[i], 0, 0) as f64;
            assert!((sr.confidence(i, m) - t).abs() < 1e-5);
        }
        assert_eq!(sr.macs[m], model.macs(p, 32, 32).unwrap());
    }
    // Same cells regardless of batch size and worker count.
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let other = pool.install(|| comprehensive_sweep(&model, &ds, &ps, 9).unwrap());
    assert_eq!(other.predictions, sr.predictions);
}

#[test]
fn one_permutation_sweep_has_equal_bounds() {
    let spec = ModelSpec::mini_residual([4, 8, 8, 8], 4);
    let model = Model::<f32>::build(&spec, 3).unwrap();
    let ds = SyntheticSpec { n: 8, class_count: 4, scale_range: (8, 20), canvas: 32, seed: 2 }.generate().unwrap();
    let sr = comprehensive_sweep(&model, &ds, &[spec.default_permutation()], 8).unwrap();
    let b = sr.bounds();
    assert_eq!(b.worst, b.median);
    assert_eq!(b.median, b.best);
}
