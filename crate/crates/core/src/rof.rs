//! Training: plain static training and random option fine-tuning, which
//! draws one permutation per batch so the shared weights learn to serve the
//! whole option space.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Model, ParamKind, BN_MOMENTUM};
use crate::options::Permutation;
use crate::oracle::{comprehensive_sweep, unique_counts, Bounds, SweepResult};
use crate::tensor::{argmax_rows, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    /// Always the first permutation supplied.
    FixedDefault,
    /// A uniformly drawn permutation for every batch.
    UniformRandom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default = "default_decay")]
    pub lr_decay: f64,
    /// First epoch (0-based) trained at the decayed rate.
    #[serde(default)]
    pub decay_epoch: Option<usize>,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    pub seed: u64,
    pub sampling: Sampling,
    /// Keep batch-norm running statistics fixed and normalise with them.
    #[serde(default)]
    pub freeze_bn: bool,
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
}

fn default_decay() -> f64 {
    0.1
}

fn default_momentum() -> f64 {
    0.9
}

fn default_weight_decay() -> f64 {
    1e-4
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, lr: f64, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size,
            lr,
            lr_decay: default_decay(),
            decay_epoch: None,
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
            seed,
            sampling: Sampling::FixedDefault,
            freeze_bn: false,
            checkpoint_every: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if self.decay_epoch.is_some_and(|d| d > self.epochs) {
            return bad("decay_epoch exceeds epochs");
        }
        let rates = [self.lr, self.lr_decay, self.momentum, self.weight_decay];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return bad("rates must be finite and non-negative");
        }
        if self.momentum >= 1.0 {
            return bad("momentum must be below 1");
        }
        if self.checkpoint_every == Some(0) {
            return bad("checkpoint_every must be positive");
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.decay_epoch {
            Some(d) if epoch >= d => self.lr * self.lr_decay,
            _ => self.lr,
        }
    }
}

/// Momentum SGD with L2 weight decay folded into the gradient:
/// `v ← μv + (g + λθ)`, `θ ← θ − ηv`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Option<Vec<f32>>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd { momentum, weight_decay, velocity: Vec::new() }
    }

    /// Updates `params[k]` with `grads[k]`; `None` gradients are skipped.
    pub fn step(&mut self, params: &mut [&mut Tensor4<f32>], grads: &[Option<Tensor4<f32>>], lr: f64) {
        if self.velocity.len() < params.len() {
            self.velocity.resize(params.len(), None);
        }
        let (mu, wd, lr) = (self.momentum as f32, self.weight_decay as f32, lr as f32);
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            let Some(g) = g else { continue };
            let v = v.get_or_insert_with(|| vec![0.0; p.len()]);
            for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                *vi = mu * *vi + gi + wd * *w;
                *w -= lr * *vi;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatchLog {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
    pub lr: f64,
    pub perm: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub batches: Vec<BatchLog>,
    /// Sample-weighted mean loss per epoch.
    pub epoch_loss: Vec<f64>,
}

impl TrainLog {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let e = |e: csv::Error| Error::Format(format!("csv: {e}"));
        w.write_record(["epoch", "batch", "loss", "lr", "perm_index"]).map_err(e)?;
        for b in &self.batches {
            w.write_record([b.epoch.to_string(), b.batch.to_string(), b.loss.to_string(), b.lr.to_string(), b.perm.to_string()])
                .map_err(e)?;
        }
        String::from_utf8(w.into_inner().map_err(|x| Error::Format(x.to_string()))?).map_err(|x| Error::Format(x.to_string()))
    }
}

/// Independent seeded streams for data order and permutation draws.
pub fn streams(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let data = ChaCha8Rng::seed_from_u64(seed);
    let mut perm = ChaCha8Rng::seed_from_u64(seed);
    perm.set_stream(1);
    (data, perm)
}

/// The permutation indices drawn over `batches` batches.
pub fn permutation_draws(seed: u64, count: usize, batches: usize) -> Vec<usize> {
    let (_, mut rng) = streams(seed);
    (0..batches).map(|_| rng.random_range(0..count)).collect()
}

/// Shared training loop. `on_epoch` runs after every epoch (checkpoints).
pub fn train<F>(model: &mut Model<f32>, ds: &Dataset, cfg: &TrainConfig, perms: &[Permutation], mut on_epoch: F) -> Result<TrainLog>
where
    F: FnMut(usize, &Model<f32>) -> Result<()>,
{
    cfg.validate()?;
    if perms.is_empty() {
        return Err(Error::Config("no permutations to train with".into()));
    }
    for p in perms {
        model.spec().check_permutation(p)?;
    }
    if ds.class_count != model.spec().class_count {
        return Err(Error::Config("dataset and model disagree on class count".into()));
    }
    let (mut data_rng, mut perm_rng) = streams(cfg.seed);
    let mut sgd = Sgd::new(cfg.momentum, cfg.weight_decay);
    let trainable: Vec<usize> = (0..model.params().len()).filter(|&i| model.params()[i].kind == ParamKind::Trainable).collect();
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..ds.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut data_rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let pi = match cfg.sampling {
                Sampling::FixedDefault => 0,
                Sampling::UniformRandom => perm_rng.random_range(0..perms.len()),
            };
            let (x, labels) = ds.batch(idx);
            let mut tape = Tape::new();
            let (logits, vars, stats) = model.forward_on(&mut tape, &x, &perms[pi], !cfg.freeze_bn)?;
            let (loss, _) = tape.softmax_cross_entropy(logits, &labels)?;
            let value = tape.value(loss).scalar_value()? as f64;
            if !value.is_finite() {
                return Err(Error::Divergence { epoch, batch: b });
            }
            let mut grads = tape.backward(loss)?;
            let g: Vec<Option<Tensor4<f32>>> = trainable.iter().map(|&i| grads.take(vars[i])).collect();
            if g.iter().flatten().any(|t| !t.all_finite()) {
                return Err(Error::Divergence { epoch, batch: b });
            }
            drop(tape);
            let mut refs: Vec<&mut Tensor4<f32>> = model
                .params_mut()
                .iter_mut()
                .filter(|p| p.kind == ParamKind::Trainable)
                .map(|p| &mut p.value)
                .collect();
            sgd.step(&mut refs, &g, lr);
            if !cfg.freeze_bn {
                model.update_running_stats(&stats, BN_MOMENTUM);
            }
            total += value * idx.len() as f64;
            log.batches.push(BatchLog { epoch, batch: b, loss: value, lr, perm: pi });
        }
        log.epoch_loss.push(total / ds.len() as f64);
        on_epoch(epoch, model)?;
    }
    Ok(log)
}

/// Static training under one permutation.
pub fn train_static(model: &mut Model<f32>, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainLog> {
    let perm = model.spec().default_permutation();
    let cfg = TrainConfig { sampling: Sampling::FixedDefault, ..cfg.clone() };
    train(model, ds, &cfg, &[perm], |_, _| Ok(()))
}

/// Fraction of samples classified correctly under `perm`.
pub fn evaluate(model: &Model<f32>, ds: &Dataset, perm: &Permutation, batch: usize) -> Result<f64> {
    let mut correct = 0;
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let (x, labels) = ds.batch(chunk);
        let pred = argmax_rows(&model.forward(&x, perm)?);
        correct += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / ds.len() as f64)
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepSummary {
    pub bounds: Bounds,
    pub volatility: f64,
    pub mean_unique: f64,
}

impl SweepSummary {
    pub fn of(sr: &SweepResult) -> Self {
        let bounds = sr.bounds();
        let u = unique_counts(sr);
        SweepSummary { bounds, volatility: bounds.volatility(), mean_unique: u.iter().sum::<usize>() as f64 / u.len() as f64 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RofReport {
    pub pre: SweepSummary,
    pub post: SweepSummary,
    #[serde(skip)]
    pub log: TrainLog,
    #[serde(skip)]
    pub pre_sweep: SweepResult,
    #[serde(skip)]
    pub post_sweep: SweepResult,
}

/// Fine-tunes with one uniformly drawn permutation per batch and compares
/// comprehensive sweeps of `eval` before and after.
pub fn rof_finetune(
    model: &mut Model<f32>,
    train_ds: &Dataset,
    eval: &Dataset,
    cfg: &TrainConfig,
    perms: &[Permutation],
    sweep_batch: usize,
) -> Result<RofReport> {
    for p in perms {
        model.spec().check_permutation(p)?;
    }
    let pre_sweep = comprehensive_sweep(model, eval, perms, sweep_batch)?;
    let cfg = TrainConfig { sampling: Sampling::UniformRandom, ..cfg.clone() };
    let log = train(model, train_ds, &cfg, perms, |_, _| Ok(()))?;
    let post_sweep = comprehensive_sweep(model, eval, perms, sweep_batch)?;
    Ok(RofReport { pre: SweepSummary::of(&pre_sweep), post: SweepSummary::of(&post_sweep), log, pre_sweep, post_sweep })
}
