//! Configuration-driven experiment commands. Every command writes its
//! artifacts and a `run.json` manifest into the output directory.

mod config;

pub use config::{
    apply_override, decode, read_document, validate_value, BudgetSection, DataSection, DataSource, ModelSection,
    OutputFormat, OutputSection, ProbeSection, RunConfig, RuntimeSection, SweepSection, Violation, SECTIONS, THREADS_ENV,
};

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::data::{apply_probe, load_cifar10, load_idx, CifarSplit, Dataset, ProbeTransform, SyntheticSpec};
use crate::efficiency::{efficiency_oracle, frontier, Reference};
use crate::error::{Error, Result};
use crate::model::{hex, Model, ModelSpec};
use crate::options::{Attribute, Permutation};
use crate::oracle::{
    bounds_csv, budget, combined_space, comprehensive_sweep, enumerate, greedy_accumulate, greedy_csv, histogram_csv,
    marginals_csv, preference_report, static_csv, unique_predictions, SweepResult, SweepSpace,
};
use crate::rof::{evaluate, rof_finetune, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Command {
    Train,
    Rof,
    Sweep,
    Greedy,
    Combined,
    ProbeScale,
    ProbeContext,
    Efficiency,
    Report,
}

impl Command {
    pub const ALL: [Command; 9] = [
        Command::Train,
        Command::Rof,
        Command::Sweep,
        Command::Greedy,
        Command::Combined,
        Command::ProbeScale,
        Command::ProbeContext,
        Command::Efficiency,
        Command::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Rof => "rof",
            Command::Sweep => "sweep",
            Command::Greedy => "greedy",
            Command::Combined => "combined",
            Command::ProbeScale => "probe-scale",
            Command::ProbeContext => "probe-context",
            Command::Efficiency => "efficiency",
            Command::Report => "report",
        }
    }
}

/// Command-line inputs shared by every command.
#[derive(Clone, Debug, Default)]
pub struct Invocation {
    pub config: PathBuf,
    pub overrides: Vec<String>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

impl Invocation {
    pub fn new(config: impl Into<PathBuf>) -> Self {
        Invocation { config: config.into(), ..Default::default() }
    }

    /// The effective configuration document after overrides and flags.
    pub fn document(&self) -> Result<Value> {
        let mut doc = read_document(&self.config)?;
        for o in &self.overrides {
            apply_override(&mut doc, o)?;
        }
        if let Some(dir) = &self.output {
            apply_override(&mut doc, &format!("output.dir={}", Value::String(dir.display().to_string())))?;
        }
        if let Some(seed) = self.seed {
            apply_override(&mut doc, &format!("train.seed={seed}"))?;
        }
        if let Some(t) = self.threads {
            apply_override(&mut doc, &format!("runtime.threads={t}"))?;
        }
        Ok(doc)
    }
}

/// Exit status for an error: 2 schema, 3 missing input, 4 runtime.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Schema(_) | Error::Json(_) => 2,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 3,
        _ => 4,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub threads: usize,
    pub version: String,
    pub artifacts: Vec<String>,
    pub summary: Value,
}

struct Ctx {
    cfg: RunConfig,
    spec: ModelSpec,
    out: PathBuf,
    artifacts: Vec<String>,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn wants(&self, f: OutputFormat) -> bool {
        self.cfg.output.formats.contains(&f)
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, contents).map_err(|e| Error::io(&p, e))?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    fn csv(&mut self, name: &str, contents: Result<String>) -> Result<()> {
        if self.wants(OutputFormat::Csv) {
            self.write(name, contents?)?;
        }
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        if self.wants(OutputFormat::Json) {
            let mut s = serde_json::to_string_pretty(value)?;
            s.push('\n');
            self.write(name, s)?;
        }
        Ok(())
    }

    fn data(&self) -> Result<(Dataset, Dataset)> {
        let d = &self.cfg.data;
        let (mut train, mut eval) = match &d.source {
            DataSource::Synthetic { n, class_count, scale_range, canvas, seed } => {
                let ds = SyntheticSpec { n: *n, class_count: *class_count, scale_range: *scale_range, canvas: *canvas, seed: *seed }
                    .generate()?;
                ds.split_off(d.eval_samples, ("train", "eval"))?
            }
            DataSource::Cifar10 { dir } => {
                let test = load_cifar10(dir, CifarSplit::Test)?.take(d.eval_samples)?;
                (load_cifar10(dir, CifarSplit::Train)?, test)
            }
            DataSource::Idx { images, labels } => load_idx(images, labels)?.split_off(d.eval_samples, ("train", "eval"))?,
            DataSource::File { path } => Dataset::load(path)?.split_off(d.eval_samples, ("train", "eval"))?,
        };
        if let Some(cap) = d.train_samples {
            train = train.take(cap)?;
        }
        for ds in [&mut train, &mut eval] {
            if ds.class_count > self.spec.class_count {
                return Err(Error::Config(format!(
                    "dataset has {} classes, model has {}",
                    ds.class_count, self.spec.class_count
                )));
            }
            ds.class_count = self.spec.class_count;
        }
        Ok((train, eval))
    }

    fn weights_path(&self) -> PathBuf {
        self.cfg.model.weights.clone().unwrap_or_else(|| self.path("model.dynw"))
    }

    fn model(&self) -> Result<Model<f32>> {
        Model::load_for(&self.spec, self.weights_path())
    }

    fn perms(&self, space: &SweepSpace) -> Result<Vec<Permutation>> {
        enumerate(&self.spec, space)
    }

    /// Resumes from a saved sweep that covers the same permutations and
    /// dataset and is newer than the weights; otherwise runs and saves it.
    fn sweep(&mut self, name: &str, model: &Model<f32>, ds: &Dataset, perms: &[Permutation]) -> Result<SweepResult> {
        let p = self.path(name);
        let modified = |q: &Path| fs::metadata(q).and_then(|m| m.modified()).ok();
        let fresh = match (modified(&p), modified(&self.weights_path())) {
            (Some(s), Some(w)) => s >= w,
            (Some(_), None) => true,
            _ => false,
        };
        if fresh {
            if let Ok(sr) = SweepResult::load(&p) {
                if sr.perms == perms && sr.dataset == ds.fingerprint() {
                    self.artifacts.push(name.to_string());
                    return Ok(sr);
                }
            }
        }
        let sr = comprehensive_sweep(model, ds, perms, self.cfg.sweep.batch)?;
        sr.save(&p)?;
        self.artifacts.push(name.to_string());
        Ok(sr)
    }

    /// Bounds, per-permutation accuracy, greedy curve, unique-prediction
    /// histogram and preferences of one sweep.
    fn analyses(&mut self, prefix: &str, sr: &SweepResult) -> Result<Value> {
        let base = self.spec.default_permutation();
        let b = sr.bounds();
        self.csv(&format!("{prefix}bounds.csv"), bounds_csv(&[("sweep".into(), b)]))?;
        self.csv(&format!("{prefix}static.csv"), static_csv(sr, &base))?;
        let curve = greedy_accumulate(sr, sr.m())?;
        self.csv(&format!("{prefix}greedy.csv"), greedy_csv(sr, &curve, &base))?;
        self.csv(&format!("{prefix}unique.csv"), histogram_csv(&unique_predictions(sr)))?;
        let prefs = preference_report(&[("all".into(), sr)], &base, self.cfg.sweep.preference_mode)?;
        self.json(&format!("{prefix}preferences.json"), &prefs)?;
        self.csv(&format!("{prefix}marginals.csv"), marginals_csv(&prefs))?;
        let default = sr.index_of(&base).map(|m| sr.static_accuracy(m));
        Ok(json!({ "permutations": sr.m(), "samples": sr.n(), "bounds": b, "default_accuracy": default }))
    }
}

/// Runs one command end to end and writes its manifest.
pub fn run(command: Command, inv: &Invocation) -> Result<Manifest> {
    let doc = inv.document()?;
    let cfg = decode(&doc)?;
    let threads = cfg.threads();
    let hash = hex(&Sha256::digest(serde_json::to_vec(&doc)?));
    let out = cfg.output.dir.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut ctx = Ctx { spec: cfg.spec(), cfg, out, artifacts: Vec::new() };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let workers = pool.current_num_threads();
    let summary = pool.install(|| execute(command, &mut ctx))?;
    let manifest = Manifest {
        command: command.name().into(),
        config_hash: hash,
        seed: ctx.cfg.train.seed,
        threads: workers,
        version: env!("CARGO_PKG_VERSION").into(),
        artifacts: ctx.artifacts.clone(),
        summary,
    };
    let mut s = serde_json::to_string_pretty(&manifest)?;
    s.push('\n');
    let p = ctx.path("run.json");
    fs::write(&p, s).map_err(|e| Error::io(&p, e))?;
    Ok(manifest)
}

fn execute(command: Command, ctx: &mut Ctx) -> Result<Value> {
    match command {
        Command::Train => cmd_train(ctx),
        Command::Rof => cmd_rof(ctx),
        Command::Sweep => {
            let (model, (_, eval)) = (ctx.model()?, ctx.data()?);
            let perms = ctx.perms(&ctx.cfg.sweep.space())?;
            let sr = ctx.sweep("sweep.dyns", &model, &eval, &perms)?;
            ctx.analyses("", &sr)
        }
        Command::Greedy => {
            let (model, (_, eval)) = (ctx.model()?, ctx.data()?);
            let perms = ctx.perms(&ctx.cfg.sweep.space())?;
            let sr = ctx.sweep("sweep.dyns", &model, &eval, &perms)?;
            let curve = greedy_accumulate(&sr, sr.m())?;
            let base = ctx.spec.default_permutation();
            ctx.csv("greedy.csv", greedy_csv(&sr, &curve, &base))?;
            Ok(json!({ "permutations": sr.m(), "best_case": sr.bounds().best, "top": curve.first().map(|s| s.perm) }))
        }
        Command::Combined => cmd_combined(ctx),
        Command::ProbeScale => {
            let levels = ctx.cfg.data.probes.scale.iter().map(|&f| ProbeTransform::Scale(f)).collect();
            cmd_probe(ctx, "scale", levels)
        }
        Command::ProbeContext => {
            let r = ctx.cfg.data.probes.context_reference;
            let levels = ctx.cfg.data.probes.context.iter().map(|&c| ProbeTransform::Context { crop: c, reference: r }).collect();
            cmd_probe(ctx, "context", levels)
        }
        Command::Efficiency => cmd_efficiency(ctx),
        Command::Report => {
            let p = ctx.path("sweep.dyns");
            let sr = SweepResult::load(&p)?;
            ctx.analyses("", &sr)
        }
    }
}

fn cmd_train(ctx: &mut Ctx) -> Result<Value> {
    let (train, eval) = ctx.data()?;
    let tc: TrainConfig = ctx.cfg.train.clone();
    let mut model = Model::<f32>::build(&ctx.spec, tc.seed)?;
    model.set_normalization(train.normalization())?;
    let every = tc.checkpoint_every;
    let mut saved = Vec::new();
    let out = ctx.out.clone();
    let perm = ctx.spec.default_permutation();
    let log = crate::rof::train(&mut model, &train, &tc, &[perm], |epoch, m| {
        if every.is_some_and(|k| (epoch + 1) % k == 0) {
            let name = format!("checkpoint_epoch{}.dynw", epoch + 1);
            m.save(out.join(&name))?;
            saved.push(name);
        }
        Ok(())
    })?;
    ctx.artifacts.extend(saved);
    let p = ctx.path("model.dynw");
    model.save(&p)?;
    ctx.artifacts.push("model.dynw".into());
    ctx.csv("train_log.csv", log.to_csv())?;
    let acc = evaluate(&model, &eval, &perm, ctx.cfg.sweep.batch)?;
    let summary = json!({ "static_accuracy": acc, "epoch_loss": log.epoch_loss, "parameters": model.parameter_count() });
    ctx.json("train_summary.json", &summary)?;
    Ok(summary)
}

fn cmd_rof(ctx: &mut Ctx) -> Result<Value> {
    let (train, eval) = ctx.data()?;
    let mut model = ctx.model()?;
    let perms = ctx.perms(&ctx.cfg.sweep.space())?;
    let tc = ctx.cfg.train.clone();
    let report = rof_finetune(&mut model, &train, &eval, &tc, &perms, ctx.cfg.sweep.batch)?;
    for (name, sr) in [("pre_sweep.dyns", &report.pre_sweep), ("post_sweep.dyns", &report.post_sweep)] {
        sr.save(ctx.path(name))?;
        ctx.artifacts.push(name.into());
    }
    model.save(ctx.path("rof.dynw"))?;
    ctx.artifacts.push("rof.dynw".into());
    ctx.csv("rof_log.csv", report.log.to_csv())?;
    ctx.csv(
        "rof_bounds.csv",
        bounds_csv(&[("pre".into(), report.pre.bounds), ("post".into(), report.post.bounds)]),
    )?;
    ctx.json("rof_report.json", &report)?;
    Ok(serde_json::to_value(&report)?)
}

fn cmd_combined(ctx: &mut Ctx) -> Result<Value> {
    let b = ctx
        .cfg
        .sweep
        .budget
        .clone()
        .ok_or_else(|| Error::Schema(vec!["sweep.budget: required by the combined command".into()]))?;
    let plan = budget(b.attributes.len(), b.cap)?;
    let (model, (_, eval)) = (ctx.model()?, ctx.data()?);
    let mut sweeps: Vec<(Attribute, SweepResult)> = Vec::new();
    for &attr in &b.attributes {
        let space = SweepSpace { attributes: vec![attr], ..ctx.cfg.sweep.space() };
        let perms = ctx.perms(&space)?;
        let sr = ctx.sweep(&format!("sweep_{attr}.dyns"), &model, &eval, &perms)?;
        sweeps.push((attr, sr));
    }
    let refs: Vec<(Attribute, &SweepResult)> = sweeps.iter().map(|(a, s)| (*a, s)).collect();
    let perms = combined_space(&refs, &plan)?;
    let sr = ctx.sweep("combined.dyns", &model, &eval, &perms)?;
    let per_attribute: Vec<Value> = sweeps
        .iter()
        .map(|(a, s)| json!({ "attribute": a, "permutations": s.m(), "bounds": s.bounds() }))
        .collect();
    let analysis = ctx.analyses("combined_", &sr)?;
    let summary = json!({ "plan": plan, "per_attribute": per_attribute, "combined": analysis });
    ctx.json("budget.json", &summary)?;
    Ok(summary)
}

fn cmd_probe(ctx: &mut Ctx, kind: &str, levels: Vec<ProbeTransform>) -> Result<Value> {
    let (model, (_, eval)) = (ctx.model()?, ctx.data()?);
    let perms = ctx.perms(&ctx.cfg.sweep.space())?;
    let mut sweeps = Vec::new();
    for t in &levels {
        let ds = apply_probe(&eval, *t)?;
        let name = format!("probe_{kind}_{}.dyns", t.level());
        sweeps.push((t.label(), ctx.sweep(&name, &model, &ds, &perms)?));
    }
    let groups: Vec<(String, &SweepResult)> = sweeps.iter().map(|(l, s)| (l.clone(), s)).collect();
    let base = ctx.spec.default_permutation();
    let report = preference_report(&groups, &base, ctx.cfg.sweep.preference_mode)?;
    ctx.json(&format!("preferences_{kind}.json"), &report)?;
    ctx.csv(&format!("marginals_{kind}.csv"), marginals_csv(&report))?;
    let rows: Vec<(String, _)> = sweeps.iter().map(|(l, s)| (l.clone(), s.bounds())).collect();
    ctx.csv(&format!("bounds_{kind}.csv"), bounds_csv(&rows))?;
    Ok(json!({ "levels": levels.iter().map(|t| t.label()).collect::<Vec<_>>(), "bounds": rows }))
}

fn cmd_efficiency(ctx: &mut Ctx) -> Result<Value> {
    let (model, (_, eval)) = (ctx.model()?, ctx.data()?);
    let perms = ctx.perms(&ctx.cfg.sweep.space())?;
    let sr = ctx.sweep("efficiency_sweep.dyns", &model, &eval, &perms)?;
    let base = ctx.spec.default_permutation();
    let refs: Vec<Permutation> = sr.index_of(&base).map(|_| vec![base]).unwrap_or_default();
    let f = frontier(&sr, &sr.macs, &base, &refs)?;
    ctx.csv("frontier.csv", f.to_csv())?;
    let best = efficiency_oracle(&sr, &sr.macs, Reference::BestCase)?;
    let default = refs.first().map(|r| efficiency_oracle(&sr, &sr.macs, Reference::Fixed(*r))).transpose()?;
    let strip = |e: &crate::efficiency::EfficiencyResult| {
        json!({ "accuracy": e.accuracy, "avg_macs": e.avg_macs, "reference_accuracy": e.reference_accuracy, "reference_macs": e.reference_macs })
    };
    let summary = json!({
        "permutations": sr.m(),
        "highlights": f.highlights(),
        "best_case": strip(&best),
        "default": default.as_ref().map(strip),
    });
    ctx.json("efficiency.json", &summary)?;
    Ok(summary)
}

/// Reads and validates a configuration file, returning every violation.
pub fn validate_file(path: &Path) -> Result<Vec<Violation>> {
    let doc = read_document(path)?;
    Ok(validate_value(&doc))
}
