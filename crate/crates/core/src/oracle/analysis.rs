use std::collections::BTreeSet;

use serde::Serialize;

use super::SweepResult;
use crate::error::{Error, Result};
use crate::options::{Attribute, Permutation, Slot};

pub const DEFAULT_CAP: u64 = 625;

/// Quality of one prediction: the true-class confidence, plus one when the
/// argmax class is correct.
pub fn quality(t: f64, correct: bool) -> f64 {
    if correct {
        t + 1.0
    } else {
        t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Worst,
    Median,
    Best,
}

/// Per-sample choice of permutation under a selection rule. Ties go to the
/// lowest permutation index; the median of an even count is the lower
/// middle.
pub fn select(sr: &SweepResult, rule: Rule) -> Vec<usize> {
    let m = sr.m();
    (0..sr.n())
        .map(|i| {
            let q = |k: usize| sr.quality(i, k);
            match rule {
                Rule::Best => (1..m).fold(0, |b, k| if q(k) > q(b) { k } else { b }),
                Rule::Worst => (1..m).fold(0, |b, k| if q(k) < q(b) { k } else { b }),
                Rule::Median => {
                    let mut order: Vec<usize> = (0..m).collect();
                    order.sort_by(|&a, &b| q(a).total_cmp(&q(b)));
                    order[(m - 1) / 2]
                }
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Bounds {
    pub worst: f64,
    pub median: f64,
    pub best: f64,
}

impl Bounds {
    pub fn volatility(&self) -> f64 {
        self.best - self.worst
    }
}

pub(super) fn bounds(sr: &SweepResult) -> Bounds {
    let acc = |rule| {
        let chosen = select(sr, rule);
        chosen.iter().enumerate().filter(|&(i, &m)| sr.correct(i, m)).count() as f64 / sr.n() as f64
    };
    Bounds { worst: acc(Rule::Worst), median: acc(Rule::Median), best: acc(Rule::Best) }
}

/// Distinct predicted classes per sample.
pub fn unique_counts(sr: &SweepResult) -> Vec<usize> {
    (0..sr.n())
        .map(|i| (0..sr.m()).map(|m| sr.prediction(i, m)).collect::<BTreeSet<_>>().len())
        .collect()
}

/// `hist[c]` = number of samples with exactly `c` distinct predictions.
pub fn unique_predictions(sr: &SweepResult) -> Vec<usize> {
    let mut hist = vec![0usize; sr.m().min(sr.class_count) + 1];
    for c in unique_counts(sr) {
        hist[c] += 1;
    }
    hist
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GreedyStep {
    pub k: usize,
    pub accuracy: f64,
    pub perm: usize,
}

/// Greedily grows a permutation subset, each step adding the permutation
/// that covers the most not-yet-covered samples (ties: larger summed
/// best quality, then lowest index). `accuracy` is the subset's best-case
/// accuracy.
pub fn greedy_accumulate(sr: &SweepResult, k_max: usize) -> Result<Vec<GreedyStep>> {
    let (n, m) = (sr.n(), sr.m());
    if k_max > m {
        return Err(Error::Parameter(format!("k_max {k_max} exceeds {m} permutations")));
    }
    let mut covered = vec![false; n];
    let mut best_q = vec![f64::NEG_INFINITY; n];
    let mut used = vec![false; m];
    let mut curve = Vec::with_capacity(k_max);
    let mut hits = 0usize;
    for k in 1..=k_max {
        let mut pick: Option<(usize, usize, f64)> = None;
        for c in (0..m).filter(|&c| !used[c]) {
            let mut gain = 0;
            let mut qsum = 0.0;
            for i in 0..n {
                if !covered[i] && sr.correct(i, c) {
                    gain += 1;
                }
                qsum += best_q[i].max(sr.quality(i, c));
            }
            let better = match pick {
                None => true,
                Some((_, g, q)) => gain > g || (gain == g && qsum > q),
            };
            if better {
                pick = Some((c, gain, qsum));
            }
        }
        let (c, gain, _) = pick.expect("k_max ≤ m leaves a candidate");
        used[c] = true;
        hits += gain;
        for i in 0..n {
            covered[i] |= sr.correct(i, c);
            best_q[i] = best_q[i].max(sr.quality(i, c));
        }
        curve.push(GreedyStep { k, accuracy: hits as f64 / n as f64, perm: c });
    }
    Ok(curve)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BudgetPlan {
    pub attributes: usize,
    pub cap: u64,
    /// Permutations kept per attribute.
    pub r: u64,
    /// `r^attributes`.
    pub total: u64,
}

/// Largest `R` with `R^attributes ≤ cap`.
pub fn budget(attributes: usize, cap: u64) -> Result<BudgetPlan> {
    if attributes == 0 || cap == 0 {
        return Err(Error::Parameter("attributes and cap must be positive".into()));
    }
    let a = attributes as u32;
    let fits = |r: u64| r.checked_pow(a).is_some_and(|t| t <= cap);
    let mut r = 1u64;
    while fits(r + 1) {
        r += 1;
    }
    Ok(BudgetPlan { attributes, cap, r, total: r.pow(a) })
}

/// Joint space over several attributes: the top-`R` greedy permutations of
/// each attribute's sweep, combined by cartesian product (first attribute
/// varies slowest). A combined permutation takes each attribute's values in
/// all four slots from that attribute's chosen permutation.
pub fn combined_space(sweeps: &[(Attribute, &SweepResult)], plan: &BudgetPlan) -> Result<Vec<Permutation>> {
    if sweeps.is_empty() || sweeps.len() != plan.attributes {
        return Err(Error::Parameter(format!("plan is for {} attributes, got {} sweeps", plan.attributes, sweeps.len())));
    }
    let r = plan.r as usize;
    let mut picks = Vec::with_capacity(sweeps.len());
    for (attr, sr) in sweeps {
        if r > sr.m() {
            return Err(Error::Parameter(format!("R = {r} exceeds the {} {attr} permutations available", sr.m())));
        }
        let chosen: Vec<Permutation> = greedy_accumulate(sr, r)?.iter().map(|s| sr.perms[s.perm]).collect();
        picks.push((*attr, chosen));
    }
    let mut out: Vec<Permutation> = vec![picks[0].1[0]];
    for (attr, chosen) in &picks {
        let mut next = Vec::with_capacity(out.len() * chosen.len());
        for p in &out {
            for c in chosen {
                let mut q = *p;
                for (dst, src) in q.slots.iter_mut().zip(&c.slots) {
                    match attr {
                        Attribute::Stride => dst.stride = src.stride,
                        Attribute::Dilation => dst.dilation = src.dilation,
                        Attribute::Size => dst.size = src.size,
                    }
                }
                next.push(q);
            }
        }
        out = next;
    }
    Ok(out)
}

/// How per-slot preferences are derived.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PreferenceMode {
    /// Marginals of each sample's single best permutation.
    GlobalBest,
    /// For each slot, the best among permutations that vary only that slot.
    SingleLayer,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathShare {
    pub index: usize,
    pub label: String,
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarginalShare {
    pub slot: Slot,
    pub attribute: Attribute,
    pub value: f64,
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupPreference {
    pub group: String,
    pub samples: usize,
    pub paths: Vec<PathShare>,
    pub marginals: Vec<MarginalShare>,
}

impl GroupPreference {
    /// Expected preferred value of an attribute in a slot.
    pub fn mean(&self, slot: Slot, attribute: Attribute) -> Option<f64> {
        let shares: Vec<&MarginalShare> = self.marginals.iter().filter(|s| s.slot == slot && s.attribute == attribute).collect();
        (!shares.is_empty()).then(|| shares.iter().map(|s| s.value * s.fraction).sum())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PreferenceReport {
    pub mode: PreferenceMode,
    pub groups: Vec<GroupPreference>,
}

/// Preferred-permutation fractions and per-slot option marginals, one
/// group per supplied sweep (for instance one per probe level). All sweeps
/// must share the same permutation table.
pub fn preference_report(groups: &[(String, &SweepResult)], base: &Permutation, mode: PreferenceMode) -> Result<PreferenceReport> {
    let Some((_, first)) = groups.first() else {
        return Err(Error::Parameter("no sweeps to report on".into()));
    };
    if groups.iter().any(|(_, sr)| sr.perms != first.perms) {
        return Err(Error::Parameter("grouped sweeps must share one permutation table".into()));
    }
    let perms = &first.perms;
    let varying: Vec<(Slot, Attribute)> = Slot::ALL
        .into_iter()
        .flat_map(|s| [Attribute::Stride, Attribute::Dilation, Attribute::Size].map(|a| (s, a)))
        .filter(|&(s, a)| perms.iter().any(|p| p.slot(s).get(a) != perms[0].slot(s).get(a)))
        .collect();
    let mut out = Vec::with_capacity(groups.len());
    for (name, sr) in groups {
        let best = select(sr, Rule::Best);
        let n = sr.n() as f64;
        let mut counts = vec![0usize; sr.m()];
        for &m in &best {
            counts[m] += 1;
        }
        let paths = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(index, &c)| PathShare { index, label: perms[index].label(base), fraction: c as f64 / n })
            .collect();
        let mut marginals = Vec::new();
        for &(slot, attribute) in &varying {
            let chosen: Vec<usize> = match mode {
                PreferenceMode::GlobalBest => best.clone(),
                PreferenceMode::SingleLayer => {
                    let cands: Vec<usize> = (0..sr.m())
                        .filter(|&m| Slot::ALL.iter().all(|&o| o == slot || perms[m].slot(o) == base.slot(o)))
                        .collect();
                    if cands.is_empty() {
                        continue;
                    }
                    (0..sr.n())
                        .map(|i| cands.iter().copied().fold(cands[0], |b, k| if sr.quality(i, k) > sr.quality(i, b) { k } else { b }))
                        .collect()
                }
            };
            let mut values: Vec<f64> = perms.iter().map(|p| p.slot(slot).get(attribute)).collect();
            values.sort_by(f64::total_cmp);
            values.dedup();
            for value in values {
                let c = chosen.iter().filter(|&&m| perms[m].slot(slot).get(attribute) == value).count();
                marginals.push(MarginalShare { slot, attribute, value, fraction: c as f64 / n });
            }
        }
        out.push(GroupPreference { group: name.clone(), samples: sr.n(), paths, marginals });
    }
    Ok(PreferenceReport { mode, groups: out })
}
