//! Datasets: CIFAR-10 binary batches, IDX files, a synthetic shape set with
//! known object scale, and the scale/context probe transforms.
//!
//! Images are held as `(n, 3, h, w)` in `[0, 1]`; channel standardisation
//! belongs to the model (see [`crate::model::Normalization`]).

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::dynconv::interp::resize_bilinear;
use crate::error::{Error, Result};
use crate::model::{hex, Normalization, StoredTensor, WeightStore};
use crate::tensor::Tensor4;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor4<f32>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub split: String,
    /// Ground-truth object extent in pixels (synthetic data only).
    pub scales: Option<Vec<f32>>,
}

impl Dataset {
    pub fn new(images: Tensor4<f32>, labels: Vec<usize>, class_count: usize, split: impl Into<String>) -> Result<Self> {
        if images.n() == 0 {
            return Err(Error::Format("dataset is empty".into()));
        }
        if images.n() != labels.len() {
            return Err(Error::Format(format!("{} images but {} labels", images.n(), labels.len())));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::LabelRange { label, classes: class_count });
        }
        Ok(Dataset { images, labels, class_count, split: split.into(), scales: None })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.images.h(), self.images.w())
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Parameter(format!("index {bad} out of range for {} samples", self.len())));
        }
        let mut out = Dataset::new(
            self.images.select(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.class_count,
            self.split.clone(),
        )?;
        out.scales = self.scales.as_ref().map(|s| indices.iter().map(|&i| s[i]).collect());
        Ok(out)
    }

    /// First `n` samples (or all, if fewer).
    pub fn take(&self, n: usize) -> Result<Dataset> {
        self.subset(&(0..n.min(self.len())).collect::<Vec<_>>())
    }

    /// Splits off the trailing `tail` samples as a second dataset.
    pub fn split_off(&self, tail: usize, names: (&str, &str)) -> Result<(Dataset, Dataset)> {
        if tail == 0 || tail >= self.len() {
            return Err(Error::Parameter(format!("cannot split {tail} of {} samples", self.len())));
        }
        let cut = self.len() - tail;
        let mut a = self.subset(&(0..cut).collect::<Vec<_>>())?;
        let mut b = self.subset(&(cut..self.len()).collect::<Vec<_>>())?;
        a.split = names.0.into();
        b.split = names.1.into();
        Ok((a, b))
    }

    pub fn batch(&self, indices: &[usize]) -> (Tensor4<f32>, Vec<usize>) {
        (self.images.select(indices), indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// Per-channel mean and standard deviation over every pixel.
    pub fn normalization(&self) -> Normalization {
        let [n, c, h, w] = self.images.dims();
        let plane = h * w;
        let mut sum = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        for i in 0..n {
            for (ch, (s, q)) in sum.iter_mut().zip(&mut sq).enumerate() {
                let o = self.images.offset(i, ch, 0, 0);
                for &v in &self.images.data()[o..o + plane] {
                    *s += v as f64;
                    *q += (v as f64) * (v as f64);
                }
            }
        }
        let count = (n * plane) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq.iter().zip(&mean).map(|(q, m)| ((q / count - m * m).max(0.0).sqrt().max(1e-6)) as f32).collect();
        Normalization { mean: mean.iter().map(|&m| m as f32).collect(), std }
    }

    /// Hex SHA-256 over dims, pixel bits and labels.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for d in self.images.dims() {
            h.update((d as u64).to_le_bytes());
        }
        for v in self.images.data() {
            h.update(v.to_le_bytes());
        }
        for &l in &self.labels {
            h.update((l as u32).to_le_bytes());
        }
        hex(&h.finalize())
    }

    /// Stores images, labels and (if present) scales as named tensors in
    /// the portable weight container.
    pub fn to_store(&self) -> Result<WeightStore> {
        let mut store = WeightStore::new(serde_json::json!({
            "kind": "dataset",
            "class_count": self.class_count,
            "split": self.split,
            "fingerprint": self.fingerprint(),
        }));
        store.push(StoredTensor::new("images", self.images.dims().to_vec(), self.images.data().to_vec())?)?;
        store.push(StoredTensor::new("labels", vec![self.len()], self.labels.iter().map(|&l| l as f32).collect())?)?;
        if let Some(s) = &self.scales {
            store.push(StoredTensor::new("scales", vec![s.len()], s.clone())?)?;
        }
        Ok(store)
    }

    pub fn from_store(store: &WeightStore) -> Result<Dataset> {
        let field = |k: &str| store.header.get(k).ok_or_else(|| Error::Format(format!("dataset header lacks {k}")));
        let class_count = field("class_count")?.as_u64().ok_or_else(|| Error::Format("class_count".into()))? as usize;
        let split = field("split")?.as_str().unwrap_or("").to_string();
        let images = store.get("images").ok_or_else(|| Error::Format("missing tensor images".into()))?;
        let labels = store.get("labels").ok_or_else(|| Error::Format("missing tensor labels".into()))?;
        let dims: [usize; 4] = images.dims.clone().try_into().map_err(|_| Error::Format("images must be rank 4".into()))?;
        let labels = labels.data.iter().map(|&l| l as usize).collect();
        let mut ds = Dataset::new(Tensor4::new(dims, images.data.clone())?, labels, class_count, split)?;
        ds.scales = store.get("scales").map(|s| s.data.clone());
        if let Some(fp) = store.fingerprint() {
            if fp != ds.fingerprint() {
                return Err(Error::FingerprintMismatch { expected: fp.to_string(), found: ds.fingerprint() });
            }
        }
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_store()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        Self::from_store(&WeightStore::load(path)?)
    }
}

pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// Parses one CIFAR-10 binary batch held in memory.
pub fn parse_cifar10(bytes: &[u8], split: &str) -> Result<Dataset> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::Format(format!("{} bytes is not a whole number of {CIFAR_RECORD}-byte records", bytes.len())));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut data = Vec::with_capacity(n * 3072);
    let mut labels = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        let label = rec[0] as usize;
        if label >= 10 {
            return Err(Error::LabelRange { label, classes: 10 });
        }
        labels.push(label);
        data.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Dataset::new(Tensor4::new([n, 3, 32, 32], data)?, labels, 10, split)
}

pub fn load_cifar10_batch(path: impl AsRef<Path>, split: &str) -> Result<Dataset> {
    let path = path.as_ref();
    parse_cifar10(&fs::read(path).map_err(|e| Error::io(path, e))?, split)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CifarSplit {
    Train,
    Test,
}

/// Reads `data_batch_{1..5}.bin` or `test_batch.bin` from `dir`. Missing
/// training batches are skipped as long as at least one is present.
pub fn load_cifar10(dir: impl AsRef<Path>, split: CifarSplit) -> Result<Dataset> {
    let dir = dir.as_ref();
    let files: Vec<PathBuf> = match split {
        CifarSplit::Train => (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).filter(|p| p.exists()).collect(),
        CifarSplit::Test => vec![dir.join("test_batch.bin")],
    };
    if files.is_empty() {
        return Err(Error::io(dir.join("data_batch_1.bin"), std::io::ErrorKind::NotFound.into()));
    }
    let name = if split == CifarSplit::Train { "train" } else { "test" };
    let parts = files.iter().map(|f| load_cifar10_batch(f, name)).collect::<Result<Vec<_>>>()?;
    let images = Tensor4::concat_batch(&parts.iter().map(|d| d.images.clone()).collect::<Vec<_>>())?;
    Dataset::new(images, parts.into_iter().flat_map(|d| d.labels).collect(), 10, name)
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("four bytes")))
        .ok_or_else(|| Error::Truncated(format!("IDX header at byte {at}")))
}

/// Parses IDX image and label files; grayscale is replicated to 3 channels.
pub fn parse_idx(images: &[u8], labels: &[u8], split: &str) -> Result<Dataset> {
    let magic = be_u32(images, 0)?;
    if magic != IDX_IMAGES {
        return Err(Error::Format(format!("image file magic {magic:#010x}, expected {IDX_IMAGES:#010x}")));
    }
    let magic = be_u32(labels, 0)?;
    if magic != IDX_LABELS {
        return Err(Error::Format(format!("label file magic {magic:#010x}, expected {IDX_LABELS:#010x}")));
    }
    let (n, h, w) = (be_u32(images, 4)? as usize, be_u32(images, 8)? as usize, be_u32(images, 12)? as usize);
    let nl = be_u32(labels, 4)? as usize;
    if n != nl {
        return Err(Error::Format(format!("{n} images but {nl} labels")));
    }
    let plane = h * w;
    if images.len() != 16 + n * plane {
        return Err(Error::Format(format!("image file holds {} bytes, header implies {}", images.len(), 16 + n * plane)));
    }
    if labels.len() != 8 + n {
        return Err(Error::Format(format!("label file holds {} bytes, header implies {}", labels.len(), 8 + n)));
    }
    let mut data = Vec::with_capacity(n * 3 * plane);
    for img in images[16..].chunks_exact(plane.max(1)).take(n) {
        for _ in 0..3 {
            data.extend(img.iter().map(|&b| b as f32 / 255.0));
        }
    }
    let labels: Vec<usize> = labels[8..].iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    Dataset::new(Tensor4::new([n, 3, h, w], data)?, labels, classes, split)
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let labels = fs::read(lp).map_err(|e| Error::io(lp, e))?;
    parse_idx(&images, &labels, "idx")
}

/// Shapes rendered by the synthetic generator, in class order.
pub const SHAPES: [&str; 8] = ["square", "disk", "cross", "diamond", "ring", "triangle", "x", "frame"];

fn inside(shape: usize, u: f64, v: f64) -> bool {
    match shape {
        0 => true,
        1 => u * u + v * v <= 1.0,
        2 => u.abs() <= 1.0 / 3.0 || v.abs() <= 1.0 / 3.0,
        3 => u.abs() + v.abs() <= 1.0,
        4 => (0.25..=1.0).contains(&(u * u + v * v)),
        5 => u.abs() <= (v + 1.0) / 2.0,
        6 => (u - v).abs() <= 0.35 || (u + v).abs() <= 0.35,
        _ => u.abs().max(v.abs()) >= 0.5,
    }
}

/// Shape-classification data with a controlled object extent.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub class_count: usize,
    /// Inclusive range of object extents in pixels.
    pub scale_range: (usize, usize),
    pub canvas: usize,
    pub seed: u64,
}

pub const BACKGROUND_MAX: f32 = 0.3;
pub const OBJECT_MIN: f32 = 0.6;

impl SyntheticSpec {
    pub fn generate(&self) -> Result<Dataset> {
        let (lo, hi) = self.scale_range;
        if self.n == 0 {
            return Err(Error::Parameter("n must be positive".into()));
        }
        if !(2..=SHAPES.len()).contains(&self.class_count) {
            return Err(Error::Parameter(format!("class_count must lie in 2..={}", SHAPES.len())));
        }
        if lo < 4 || lo > hi {
            return Err(Error::Parameter(format!("scale range {lo}..={hi} must be ordered and start at 4 or more")));
        }
        if hi > self.canvas {
            return Err(Error::Parameter(format!("scale {hi} exceeds the {0}×{0} canvas", self.canvas)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut labels: Vec<usize> = (0..self.n).map(|i| i % self.class_count).collect();
        labels.shuffle(&mut rng);
        let c = self.canvas;
        let mut data = Vec::with_capacity(self.n * 3 * c * c);
        let mut scales = Vec::with_capacity(self.n);
        for &label in &labels {
            let s = rng.random_range(lo..=hi);
            let (y0, x0) = (rng.random_range(0..=c - s), rng.random_range(0..=c - s));
            let colour: [f32; 3] = std::array::from_fn(|_| rng.random_range(OBJECT_MIN..=1.0));
            let mut img = vec![0.0f32; 3 * c * c];
            for v in img.iter_mut() {
                *v = rng.random_range(0.0..=BACKGROUND_MAX);
            }
            for i in y0..y0 + s {
                let v = (2 * (i - y0) + 1) as f64 / s as f64 - 1.0;
                for j in x0..x0 + s {
                    let u = (2 * (j - x0) + 1) as f64 / s as f64 - 1.0;
                    if inside(label, u, v) {
                        for (ch, &col) in colour.iter().enumerate() {
                            img[ch * c * c + i * c + j] = col;
                        }
                    }
                }
            }
            data.extend(img);
            scales.push(s as f32);
        }
        let mut ds = Dataset::new(Tensor4::new([self.n, 3, c, c], data)?, labels, self.class_count, "synthetic")?;
        ds.scales = Some(scales);
        Ok(ds)
    }
}

/// 32×32 synthetic shapes.
pub fn gen_scale_synthetic(n: usize, class_count: usize, scale_range: (usize, usize), seed: u64) -> Result<Dataset> {
    SyntheticSpec { n, class_count, scale_range, canvas: 32, seed }.generate()
}

pub const SCALE_FACTORS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];
pub const CONTEXT_REFERENCE: usize = 40;
pub const CONTEXT_CROPS: [usize; 6] = [20, 24, 28, 32, 36, 40];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProbeTransform {
    /// Bilinear resize by a factor in {¼, ½, 1, 2, 4}.
    Scale(f64),
    /// Resize to `reference`, then take a centred `crop × crop` window.
    Context { crop: usize, reference: usize },
}

impl ProbeTransform {
    pub fn context(crop: usize) -> Self {
        ProbeTransform::Context { crop, reference: CONTEXT_REFERENCE }
    }

    pub fn label(&self) -> String {
        match self {
            ProbeTransform::Scale(f) => format!("scale={f}"),
            ProbeTransform::Context { crop, .. } => format!("crop={crop}"),
        }
    }

    /// Numeric level used for grouping and correlation.
    pub fn level(&self) -> f64 {
        match *self {
            ProbeTransform::Scale(f) => f,
            ProbeTransform::Context { crop, .. } => crop as f64,
        }
    }
}

pub fn apply_probe(ds: &Dataset, t: ProbeTransform) -> Result<Dataset> {
    let (h, w) = ds.extent();
    let images = match t {
        ProbeTransform::Scale(f) => {
            if !SCALE_FACTORS.contains(&f) {
                return Err(Error::Parameter(format!("scale factor {f} is not one of 1/4, 1/2, 1, 2, 4")));
            }
            if f == 1.0 {
                ds.images.clone()
            } else {
                let oh = ((h as f64 * f).round() as usize).max(1);
                let ow = ((w as f64 * f).round() as usize).max(1);
                resize_bilinear(&ds.images, oh, ow)
            }
        }
        ProbeTransform::Context { crop, reference } => {
            if crop == 0 || crop > reference {
                return Err(Error::Parameter(format!("crop {crop} must lie in 1..={reference}")));
            }
            let resized = if (h, w) == (reference, reference) { ds.images.clone() } else { resize_bilinear(&ds.images, reference, reference) };
            let off = (reference - crop) / 2;
            let [n, c, _, _] = resized.dims();
            Tensor4::from_fn([n, c, crop, crop], |[a, b, i, j]| resized.at(a, b, i + off, j + off))
        }
    };
    let mut out = Dataset::new(images, ds.labels.clone(), ds.class_count, format!("{}:{}", ds.split, t.label()))?;
    out.scales = ds.scales.clone();
    Ok(out)
}
