use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{CONTEXT_CROPS, CONTEXT_REFERENCE, SCALE_FACTORS};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, StageSpec};
use crate::options::{Attribute, OptionSets, Slot, Stride};
use crate::oracle::{PreferenceMode, SweepSpace, DEFAULT_CAP};
use crate::rof::TrainConfig;

pub const SECTIONS: [&str; 6] = ["model", "data", "options", "sweep", "train", "output"];
pub const OPTIONAL_SECTIONS: [&str; 1] = ["runtime"];
pub const THREADS_ENV: &str = "DYNACONV_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub data: DataSection,
    pub options: OptionSets,
    pub sweep: SweepSection,
    pub train: TrainConfig,
    pub output: OutputSection,
    #[serde(default)]
    pub runtime: RuntimeSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub input_size: usize,
    #[serde(default = "three")]
    pub in_channels: usize,
    pub class_count: usize,
    pub stem_width: usize,
    pub stages: [StageSpec; 4],
    pub default_strides: [Stride; 4],
    /// Weight file to evaluate or fine-tune; defaults to `model.dynw` in the
    /// output directory.
    #[serde(default)]
    pub weights: Option<PathBuf>,
}

fn three() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        n: usize,
        class_count: usize,
        scale_range: (usize, usize),
        #[serde(default = "canvas")]
        canvas: usize,
        seed: u64,
    },
    Cifar10 {
        dir: PathBuf,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
    /// A dataset saved in the portable container.
    File {
        path: PathBuf,
    },
}

fn canvas() -> usize {
    32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    /// Cap on training samples.
    #[serde(default)]
    pub train_samples: Option<usize>,
    /// Held-out samples used for evaluation and sweeps.
    pub eval_samples: usize,
    #[serde(default)]
    pub probes: ProbeSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    #[serde(default = "scales")]
    pub scale: Vec<f64>,
    #[serde(default = "crops")]
    pub context: Vec<usize>,
    #[serde(default = "reference")]
    pub context_reference: usize,
}

fn scales() -> Vec<f64> {
    SCALE_FACTORS.to_vec()
}

fn crops() -> Vec<usize> {
    CONTEXT_CROPS.to_vec()
}

fn reference() -> usize {
    CONTEXT_REFERENCE
}

impl Default for ProbeSection {
    fn default() -> Self {
        ProbeSection { scale: scales(), context: crops(), context_reference: reference() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    #[serde(default = "cap")]
    pub cap: u64,
    pub attributes: Vec<Attribute>,
}

fn cap() -> u64 {
    DEFAULT_CAP
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub attributes: Vec<Attribute>,
    pub slots: Vec<Slot>,
    pub guard: Option<f64>,
    #[serde(default)]
    pub budget: Option<BudgetSection>,
    #[serde(default = "batch")]
    pub batch: usize,
    #[serde(default = "mode")]
    pub preference_mode: PreferenceMode,
}

fn batch() -> usize {
    50
}

fn mode() -> PreferenceMode {
    PreferenceMode::GlobalBest
}

impl SweepSection {
    pub fn space(&self) -> SweepSpace {
        SweepSpace { attributes: self.attributes.clone(), slots: self.slots.clone(), guard: self.guard }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    #[serde(default = "formats")]
    pub formats: Vec<OutputFormat>,
}

fn formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Csv, OutputFormat::Json]
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuntimeSection {
    #[serde(default)]
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn spec(&self) -> ModelSpec {
        let m = &self.model;
        ModelSpec {
            input_size: m.input_size,
            in_channels: m.in_channels,
            class_count: m.class_count,
            stem_width: m.stem_width,
            stages: m.stages,
            default_strides: m.default_strides,
            options: self.options.clone(),
        }
    }

    /// Config worker count, else the environment variable, else rayon's
    /// default.
    pub fn threads(&self) -> Option<usize> {
        self.runtime.threads.or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn violation(path: impl Into<String>, message: impl Into<String>) -> Violation {
    Violation { path: path.into(), message: message.into() }
}

fn section<T: DeserializeOwned>(v: &Value, name: &str, out: &mut Vec<Violation>) -> Option<T> {
    let value = v.get(name)?;
    match serde_path_to_error::deserialize::<_, T>(value) {
        Ok(t) => Some(t),
        Err(e) => {
            let inner = e.path().to_string();
            let path = if inner == "." { name.to_string() } else { format!("{name}.{inner}") };
            out.push(violation(path, e.into_inner().to_string()));
            None
        }
    }
}

/// Every schema and semantic violation in a configuration document. Empty
/// iff the configuration is runnable.
pub fn validate_value(v: &Value) -> Vec<Violation> {
    let mut out = Vec::new();
    let Some(obj) = v.as_object() else {
        return vec![violation("$", "configuration must be a JSON object")];
    };
    for s in SECTIONS {
        if !obj.contains_key(s) {
            out.push(violation(s, "missing required section"));
        }
    }
    for k in obj.keys() {
        if !SECTIONS.contains(&k.as_str()) && !OPTIONAL_SECTIONS.contains(&k.as_str()) {
            out.push(violation(k.clone(), "unknown section"));
        }
    }
    let model: Option<ModelSection> = section(v, "model", &mut out);
    let data: Option<DataSection> = section(v, "data", &mut out);
    let options: Option<OptionSets> = section(v, "options", &mut out);
    let sweep: Option<SweepSection> = section(v, "sweep", &mut out);
    let train: Option<TrainConfig> = section(v, "train", &mut out);
    let _: Option<OutputSection> = section(v, "output", &mut out);
    let runtime: Option<RuntimeSection> = section(v, "runtime", &mut out);

    if let Some(o) = &options {
        out.extend(o.violations(&OptionSets::full(), "options").into_iter().map(|(p, m)| violation(p, m)));
    }
    if let (Some(m), Some(o)) = (&model, &options) {
        let spec = ModelSpec {
            input_size: m.input_size,
            in_channels: m.in_channels,
            class_count: m.class_count,
            stem_width: m.stem_width,
            stages: m.stages,
            default_strides: m.default_strides,
            options: o.clone(),
        };
        if let Err(e) = spec.validate() {
            out.push(violation("model", e.to_string()));
        }
    }
    if let Some(t) = &train {
        if let Err(e) = t.validate() {
            out.push(violation("train", e.to_string()));
        }
    }
    if let Some(s) = &sweep {
        if s.attributes.is_empty() {
            out.push(violation("sweep.attributes", "at least one attribute is required"));
        }
        if s.slots.is_empty() {
            out.push(violation("sweep.slots", "at least one slot is required"));
        }
        if s.guard.is_some_and(|g| !(g > 0.0 && g.is_finite())) {
            out.push(violation("sweep.guard", "guard must be a positive area factor or null"));
        }
        if s.batch == 0 {
            out.push(violation("sweep.batch", "batch must be positive"));
        }
        if let Some(b) = &s.budget {
            if b.attributes.is_empty() {
                out.push(violation("sweep.budget.attributes", "at least one attribute is required"));
            }
            if b.cap == 0 {
                out.push(violation("sweep.budget.cap", "cap must be positive"));
            }
        }
    }
    if let Some(d) = &data {
        if d.eval_samples == 0 {
            out.push(violation("data.eval_samples", "must be positive"));
        }
        for (i, f) in d.probes.scale.iter().enumerate() {
            if !SCALE_FACTORS.contains(f) {
                out.push(violation(format!("data.probes.scale[{i}]"), format!("scale factor {f} is not one of 1/4, 1/2, 1, 2, 4")));
            }
        }
        for (i, &c) in d.probes.context.iter().enumerate() {
            if c == 0 || c > d.probes.context_reference {
                out.push(violation(format!("data.probes.context[{i}]"), format!("crop {c} exceeds the reference extent")));
            }
        }
        if let (DataSource::Synthetic { class_count, n, .. }, Some(m)) = (&d.source, &model) {
            if *class_count != m.class_count {
                out.push(violation("data.source.class_count", "must equal model.class_count"));
            }
            if d.eval_samples >= *n {
                out.push(violation("data.eval_samples", "must leave training samples"));
            }
        }
    }
    if let Some(RuntimeSection { threads: Some(0) }) = runtime {
        out.push(violation("runtime.threads", "must be positive"));
    }
    out
}

/// Sets a dotted path (`train.lr`, `data.probes.scale.0`) to a value parsed
/// as JSON, or as a plain string when it is not valid JSON.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Schema(vec![format!("override {assignment:?} is not key=value")]))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| Error::Schema(vec![format!("{key}: {part:?} is not an index")]))?;
                items.get_mut(idx).ok_or_else(|| Error::Schema(vec![format!("{key}: index {idx} out of range")]))?
            }
            Value::Object(map) => {
                if !last && !map.contains_key(*part) {
                    map.insert(part.to_string(), Value::Object(Default::default()));
                }
                map.entry(part.to_string()).or_insert(Value::Null)
            }
            _ => return Err(Error::Schema(vec![format!("{key}: cannot descend into a scalar")])),
        };
    }
    *cur = value;
    Ok(())
}

/// Reads a configuration file (I/O errors are missing-input errors).
pub fn read_document(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(vec![format!("$: not valid JSON: {e}")]))
}

/// Validates and decodes a configuration document.
pub fn decode(doc: &Value) -> Result<RunConfig> {
    let violations = validate_value(doc);
    if !violations.is_empty() {
        return Err(Error::Schema(violations.iter().map(Violation::to_string).collect()));
    }
    serde_json::from_value(doc.clone()).map_err(|e| Error::Schema(vec![e.to_string()]))
}
