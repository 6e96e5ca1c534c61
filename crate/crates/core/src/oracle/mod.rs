//! Comprehensive evaluation over permutation spaces and the analyses built
//! on its (prediction, true-class confidence) table.

mod analysis;
mod io;

pub use analysis::{
    budget, combined_space, greedy_accumulate, preference_report, quality, select, unique_counts,
    unique_predictions, Bounds, BudgetPlan, GreedyStep, GroupPreference, MarginalShare, PathShare, PreferenceMode,
    PreferenceReport, Rule, DEFAULT_CAP,
};
pub use io::{bounds_csv, greedy_csv, histogram_csv, marginals_csv, static_csv, SWEEP_MAGIC, SWEEP_VERSION};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec};
use crate::options::{Attribute, OptionSets, Permutation, Slot, Stride};
use crate::tensor::{argmax_rows, softmax_rows};

pub const DEFAULT_GUARD: f64 = 16.0;

/// Which part of the option space a sweep covers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpace {
    pub attributes: Vec<Attribute>,
    pub slots: Vec<Slot>,
    /// Drop permutations whose largest feature map exceeds this multiple of
    /// the input area. `None` disables the guard.
    #[serde(default = "default_guard")]
    pub guard: Option<f64>,
}

fn default_guard() -> Option<f64> {
    Some(DEFAULT_GUARD)
}

impl SweepSpace {
    pub fn new(attributes: &[Attribute], slots: &[Slot]) -> Self {
        SweepSpace { attributes: attributes.to_vec(), slots: slots.to_vec(), guard: Some(DEFAULT_GUARD) }
    }

    pub fn unguarded(mut self) -> Self {
        self.guard = None;
        self
    }
}

/// Cartesian product of the per-slot options of every active attribute in
/// every active slot; inactive coordinates keep `base`. Ordering is
/// lexicographic over slots A→D, then stride, dilation, size, with the last
/// coordinate varying fastest.
pub fn cartesian(options: &OptionSets, base: &Permutation, attributes: &[Attribute], slots: &[Slot]) -> Vec<Permutation> {
    let mut axes: Vec<(Slot, Attribute, usize)> = Vec::new();
    for slot in Slot::ALL.into_iter().filter(|s| slots.contains(s)) {
        for attr in [Attribute::Stride, Attribute::Dilation, Attribute::Size] {
            if attributes.contains(&attr) {
                axes.push((slot, attr, options.len(attr, slot)));
            }
        }
    }
    if axes.iter().any(|a| a.2 == 0) {
        return Vec::new();
    }
    let total: usize = axes.iter().map(|a| a.2).product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; axes.len()];
    for _ in 0..total {
        let mut p = *base;
        for (&(slot, attr, _), &k) in axes.iter().zip(&idx) {
            let s = p.slot_mut(slot);
            match attr {
                Attribute::Stride => s.stride = options.stride.get(slot)[k],
                Attribute::Dilation => s.dilation = options.dilation.get(slot)[k],
                Attribute::Size => s.size = options.size.get(slot)[k],
            }
        }
        out.push(p);
        for d in (0..axes.len()).rev() {
            idx[d] += 1;
            if idx[d] < axes[d].2 {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

/// Enumerates the sweep space for a model spec, applying the resolution
/// guard at the spec's input size.
pub fn enumerate(spec: &ModelSpec, space: &SweepSpace) -> Result<Vec<Permutation>> {
    if space.slots.is_empty() {
        return Err(Error::Config("no active slots".into()));
    }
    if space.attributes.is_empty() {
        return Err(Error::Config("no active attributes".into()));
    }
    let base = spec.default_permutation();
    let mut perms = cartesian(&spec.options, &base, &space.attributes, &space.slots);
    if let Some(factor) = space.guard {
        let n = spec.input_size;
        let cap = factor * (n * n) as f64;
        perms.retain(|p| spec.peak_area(p, n, n) as f64 <= cap);
    }
    if perms.is_empty() {
        return Err(Error::Config("the sweep space is empty after applying the resolution guard".into()));
    }
    Ok(perms)
}

/// Per-sample predictions and true-class confidences for every permutation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub perms: Vec<Permutation>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    /// Sample-major `n × M` table of argmax classes.
    pub predictions: Vec<u16>,
    /// Sample-major `n × M` table of true-class softmax probabilities.
    pub confidences: Vec<f32>,
    /// Per-sample MACs of each permutation at the swept input extent.
    pub macs: Vec<u64>,
    pub dataset: String,
}

impl SweepResult {
    /// Assembles a sweep from explicit tables, checking every invariant.
    pub fn from_parts(
        perms: Vec<Permutation>,
        labels: Vec<usize>,
        class_count: usize,
        predictions: Vec<u16>,
        confidences: Vec<f32>,
        macs: Vec<u64>,
    ) -> Result<Self> {
        let sr = SweepResult { perms, labels, class_count, predictions, confidences, macs, dataset: String::new() };
        sr.check()?;
        Ok(sr)
    }

    pub fn check(&self) -> Result<()> {
        let (n, m) = (self.n(), self.m());
        if m == 0 || n == 0 {
            return Err(Error::Format("sweep needs at least one sample and one permutation".into()));
        }
        if self.predictions.len() != n * m || self.confidences.len() != n * m || self.macs.len() != m {
            return Err(Error::Format(format!("sweep tables do not match {n} samples × {m} permutations")));
        }
        if let Some(&label) = self.labels.iter().find(|&&l| l >= self.class_count) {
            return Err(Error::LabelRange { label, classes: self.class_count });
        }
        if let Some(&p) = self.predictions.iter().find(|&&p| p as usize >= self.class_count) {
            return Err(Error::LabelRange { label: p as usize, classes: self.class_count });
        }
        if self.confidences.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Format("confidence outside [0, 1]".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn m(&self) -> usize {
        self.perms.len()
    }

    pub fn prediction(&self, i: usize, m: usize) -> usize {
        self.predictions[i * self.m() + m] as usize
    }

    pub fn confidence(&self, i: usize, m: usize) -> f64 {
        self.confidences[i * self.m() + m] as f64
    }

    pub fn correct(&self, i: usize, m: usize) -> bool {
        self.prediction(i, m) == self.labels[i]
    }

    pub fn quality(&self, i: usize, m: usize) -> f64 {
        quality(self.confidence(i, m), self.correct(i, m))
    }

    /// Accuracy of the fixed permutation `m` over all samples.
    pub fn static_accuracy(&self, m: usize) -> f64 {
        (0..self.n()).filter(|&i| self.correct(i, m)).count() as f64 / self.n() as f64
    }

    pub fn static_accuracies(&self) -> Vec<f64> {
        (0..self.m()).map(|m| self.static_accuracy(m)).collect()
    }

    pub fn index_of(&self, perm: &Permutation) -> Option<usize> {
        self.perms.iter().position(|p| p == perm)
    }

    /// Sub-sweep restricted to the listed permutation columns.
    pub fn columns(&self, ms: &[usize]) -> Result<SweepResult> {
        if let Some(&bad) = ms.iter().find(|&&m| m >= self.m()) {
            return Err(Error::Parameter(format!("permutation index {bad} out of range")));
        }
        let mut predictions = Vec::with_capacity(self.n() * ms.len());
        let mut confidences = Vec::with_capacity(self.n() * ms.len());
        for i in 0..self.n() {
            for &m in ms {
                predictions.push(self.predictions[i * self.m() + m]);
                confidences.push(self.confidences[i * self.m() + m]);
            }
        }
        Ok(SweepResult {
            perms: ms.iter().map(|&m| self.perms[m]).collect(),
            labels: self.labels.clone(),
            class_count: self.class_count,
            predictions,
            confidences,
            macs: ms.iter().map(|&m| self.macs[m]).collect(),
            dataset: self.dataset.clone(),
        })
    }

    pub fn bounds(&self) -> Bounds {
        analysis::bounds(self)
    }
}

/// Evaluates every sample under every permutation. Permutations run in
/// parallel; each cell's arithmetic is independent of scheduling, so the
/// result is identical for any thread count.
pub fn comprehensive_sweep(model: &Model<f32>, ds: &Dataset, perms: &[Permutation], batch: usize) -> Result<SweepResult> {
    if perms.is_empty() {
        return Err(Error::Config("no permutations to sweep".into()));
    }
    if ds.class_count != model.spec().class_count {
        return Err(Error::Config(format!(
            "dataset has {} classes, model has {}",
            ds.class_count,
            model.spec().class_count
        )));
    }
    let batch = batch.max(1);
    let (h, w) = ds.extent();
    let columns: Vec<(Vec<u16>, Vec<f32>, u64)> = perms
        .par_iter()
        .enumerate()
        .map(|(m, perm)| {
            let cell = |sample: usize, e: Error| Error::SweepCell { sample, perm: m, source: Box::new(e) };
            let macs = model.macs(perm, h, w).map_err(|e| cell(0, e))?;
            let mut preds = Vec::with_capacity(ds.len());
            let mut confs = Vec::with_capacity(ds.len());
            let mut start = 0;
            while start < ds.len() {
                let idx: Vec<usize> = (start..(start + batch).min(ds.len())).collect();
                let (x, labels) = ds.batch(&idx);
                let logits = model.forward(&x, perm).map_err(|e| cell(start, e))?;
                let probs = softmax_rows(&logits);
                let classes = probs.c();
                for (r, (&p, &y)) in argmax_rows(&probs).iter().zip(&labels).enumerate() {
                    preds.push(p as u16);
                    confs.push(probs.data()[r * classes + y].clamp(0.0, 1.0));
                }
                start += batch;
            }
            Ok((preds, confs, macs))
        })
        .collect::<Result<_>>()?;
    let (n, mm) = (ds.len(), perms.len());
    let mut predictions = vec![0u16; n * mm];
    let mut confidences = vec![0f32; n * mm];
    for (m, (p, c, _)) in columns.iter().enumerate() {
        for i in 0..n {
            predictions[i * mm + m] = p[i];
            confidences[i * mm + m] = c[i];
        }
    }
    Ok(SweepResult {
        perms: perms.to_vec(),
        labels: ds.labels.clone(),
        class_count: ds.class_count,
        predictions,
        confidences,
        macs: columns.iter().map(|c| c.2).collect(),
        dataset: ds.fingerprint(),
    })
}

/// Default-permutation strides as a quick constructor for stride-only sweeps.
pub fn stride_perm(strides: [usize; 4]) -> Permutation {
    Permutation::from_strides(strides.map(|s| if s == 0 { Stride::Half } else { Stride::Whole(s) }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;

    #[test]
    fn space_sizes() {
        let spec = ModelSpec::mini_residual([4, 4, 4, 4], 10);
        let all = Slot::ALL.to_vec();
        let d = enumerate(&spec, &SweepSpace::new(&[Attribute::Dilation], &all)).unwrap();
        assert_eq!(d.len(), 625);
        let k = enumerate(&spec, &SweepSpace::new(&[Attribute::Size], &[Slot::D])).unwrap();
        assert_eq!(k.len(), 5);
        assert_eq!(k.iter().map(|p| p.slots[3].size).collect::<Vec<_>>(), vec![1, 3, 5, 7, 9]);
        let s = enumerate(&spec, &SweepSpace::new(&[Attribute::Stride], &all).unguarded()).unwrap();
        assert_eq!(s.len(), 400);
        assert_eq!(s[0], stride_perm([1, 1, 0, 0]));
        assert_eq!(s[1], stride_perm([1, 1, 0, 1]));
    }

    #[test]
    fn tight_guard_can_empty_the_space() {
        let spec = ModelSpec::mini_residual([4, 4, 4, 4], 10);
        let space = SweepSpace { attributes: vec![Attribute::Stride], slots: vec![Slot::C], guard: Some(0.5) };
        assert!(matches!(enumerate(&spec, &space), Err(Error::Config(_))));
    }
}
