//! Miniature four-stage CNNs with one dynamic 3×3 layer at the first block of
//! every stage (slots A–D), plus parameter persistence.

mod weights;

pub use weights::{StoredTensor, WeightStore, DTYPE_F32, MAGIC, VERSION};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{BatchNormMode, BatchStats, Kernels, Tape, Var};
use crate::dynconv::{self, kernels::ConvGeometry, ConvConfig};
use crate::error::{Error, Result};
use crate::options::{OptionSets, Permutation, Slot, SlotSetting, Stride, STORED_KERNEL};
use crate::tensor::{Real, Tensor4};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockKind {
    BasicResidual,
    Bottleneck,
    DepthwiseSeparable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub block: BlockKind,
    pub blocks: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_size: usize,
    #[serde(default = "three")]
    pub in_channels: usize,
    pub class_count: usize,
    pub stem_width: usize,
    pub stages: [StageSpec; 4],
    pub default_strides: [Stride; 4],
    pub options: OptionSets,
}

fn three() -> usize {
    3
}

impl ModelSpec {
    /// Basic-residual network with one block per stage.
    pub fn mini_residual(widths: [usize; 4], class_count: usize) -> Self {
        ModelSpec {
            input_size: 32,
            in_channels: 3,
            class_count,
            stem_width: widths[0],
            stages: widths.map(|width| StageSpec { block: BlockKind::BasicResidual, blocks: 1, width }),
            default_strides: [Stride::Whole(1), Stride::Whole(2), Stride::Whole(2), Stride::Whole(2)],
            options: OptionSets::full(),
        }
    }

    pub fn with_block(mut self, block: BlockKind) -> Self {
        for s in &mut self.stages {
            s.block = block;
        }
        self
    }

    pub fn default_permutation(&self) -> Permutation {
        Permutation::from_strides(self.default_strides)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Spec(m));
        if self.input_size == 0 || self.in_channels == 0 || self.stem_width == 0 {
            return bad("input size, input channels and stem width must be positive".into());
        }
        if self.class_count < 2 {
            return bad(format!("class_count must be at least 2, got {}", self.class_count));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.blocks == 0 || s.width == 0 {
                return bad(format!("stage {i}: blocks and width must be positive"));
            }
            if s.block == BlockKind::Bottleneck && s.width % 4 != 0 {
                return bad(format!("stage {i}: bottleneck width {} is not divisible by 4", s.width));
            }
        }
        for slot in Slot::ALL {
            let default = self.default_strides[slot.index()];
            if default.is_fractional() {
                return bad(format!("slot {slot}: default stride cannot be fractional"));
            }
            if !self.options.stride.get(slot).contains(&default) {
                return bad(format!("slot {slot}: default stride {default} missing from its stride options"));
            }
            if !self.options.dilation.get(slot).contains(&1) {
                return bad(format!("slot {slot}: dilation options must contain the default 1"));
            }
            if !self.options.size.get(slot).contains(&STORED_KERNEL) {
                return bad(format!("slot {slot}: size options must contain the default {STORED_KERNEL}"));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the spec's canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serialises");
        hex(&Sha256::digest(&bytes))
    }

    /// Largest feature-map area (pixels) a permutation produces for an
    /// `h×w` input, from shape algebra alone.
    pub fn peak_area(&self, perm: &Permutation, h: usize, w: usize) -> usize {
        let (mut h, mut w) = (h, w);
        let mut peak = h * w;
        for s in &perm.slots {
            let cfg = ConvConfig { stride: s.stride, dilation: s.dilation, kernel_size: s.size, groups: 1 };
            (h, w) = dynconv::output_shape(h, w, &cfg);
            peak = peak.max(h * w);
        }
        peak
    }

    /// Rejects permutations that use an option outside the slot's set.
    pub fn check_permutation(&self, perm: &Permutation) -> Result<()> {
        for slot in Slot::ALL {
            self.options.admits(slot, perm.slot(slot), self.default_strides[slot.index()])?;
        }
        Ok(())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Per-channel input standardisation, applied before the stem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Normalization { mean: vec![0.0; channels], std: vec![1.0; channels] }
    }

    pub fn apply<T: Real>(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        if x.c() != self.mean.len() {
            return Err(Error::Dimension(format!("normalisation has {} channels, input has {}", self.mean.len(), x.c())));
        }
        let mut out = x.clone();
        let plane = x.h() * x.w();
        for (k, v) in out.data_mut().chunks_mut(plane).enumerate() {
            let c = k % self.mean.len();
            let (m, s) = (T::cast(self.mean[c] as f64), T::cast(self.std[c] as f64));
            for e in v {
                *e = (*e - m) / s;
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Running batch-norm statistics.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor4<T>,
    pub kind: ParamKind,
}

#[derive(Clone, Copy, Debug)]
struct Bn {
    id: usize,
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Clone, Copy, Debug)]
struct ConvBn {
    weight: usize,
    kernel: usize,
    groups: usize,
    bn: Bn,
}

#[derive(Clone, Debug)]
struct Block {
    kind: BlockKind,
    slot: Option<Slot>,
    parts: Vec<ConvBn>,
    dynamic_part: usize,
    skip: Option<ConvBn>,
}

/// Spatial extents observed along a forward pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapeTrace {
    /// Output extent of each dynamic slot.
    pub slots: [(usize, usize); 4],
    /// Largest intermediate map area, in pixels.
    pub max_area: usize,
    /// `(c, h, w)` entering the global pool.
    pub pre_pool: (usize, usize, usize),
}

/// Batch statistics gathered by one training-mode forward, keyed by layer.
pub type BnUpdates<T> = Vec<(usize, BatchStats<T>)>;

#[derive(Clone, Debug)]
pub struct Model<T = f32> {
    spec: ModelSpec,
    normalization: Normalization,
    params: Vec<Param<T>>,
    stem: ConvBn,
    blocks: Vec<Block>,
    head_w: usize,
    head_b: usize,
    bns: Vec<Bn>,
}

struct Builder<'r, T> {
    params: Vec<Param<T>>,
    bns: Vec<Bn>,
    rng: &'r mut ChaCha8Rng,
}

impl<T: Real> Builder<'_, T> {
    fn push(&mut self, name: String, value: Tensor4<T>, kind: ParamKind) -> usize {
        self.params.push(Param { name, value, kind });
        self.params.len() - 1
    }

    fn conv_bn(&mut self, name: &str, c_in: usize, c_out: usize, kernel: usize, groups: usize) -> ConvBn {
        let fan_in = (c_in / groups) * kernel * kernel;
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
        let dims = [c_out, c_in / groups, kernel, kernel];
        let w = Tensor4::from_fn(dims, |_| T::cast(normal.sample(self.rng)));
        let weight = self.push(format!("{name}.weight"), w, ParamKind::Trainable);
        let bn = self.bn(name, c_out);
        ConvBn { weight, kernel, groups, bn }
    }

    fn bn(&mut self, name: &str, c: usize) -> Bn {
        let gamma = self.push(format!("{name}.bn.gamma"), Tensor4::filled([1, c, 1, 1], T::one()), ParamKind::Trainable);
        let beta = self.push(format!("{name}.bn.beta"), Tensor4::zeros([1, c, 1, 1]), ParamKind::Trainable);
        let mean = self.push(format!("{name}.bn.running_mean"), Tensor4::zeros([1, c, 1, 1]), ParamKind::Buffer);
        let var = self.push(format!("{name}.bn.running_var"), Tensor4::filled([1, c, 1, 1], T::one()), ParamKind::Buffer);
        let bn = Bn { id: self.bns.len(), gamma, beta, mean, var };
        self.bns.push(bn);
        bn
    }
}

struct Pass<'t, T> {
    tape: &'t mut Tape<T>,
    vars: Vec<Var>,
    train: bool,
    stats: BnUpdates<T>,
}

impl<T: Real> Model<T> {
    /// Builds a freshly initialised model. He-normal conv weights, uniform
    /// `±1/√fan_in` head weights, zero biases, unit BN scale.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder { params: Vec::new(), bns: Vec::new(), rng: &mut rng };
        let stem = b.conv_bn("stem", spec.in_channels, spec.stem_width, 3, 1);
        let mut blocks = Vec::new();
        let mut c_in = spec.stem_width;
        for (si, stage) in spec.stages.iter().enumerate() {
            for bi in 0..stage.blocks {
                let name = format!("stage{}.block{bi}", si + 1);
                let out = stage.width;
                let first = bi == 0;
                let (parts, dynamic_part) = match stage.block {
                    BlockKind::BasicResidual => (
                        vec![
                            b.conv_bn(&format!("{name}.conv0"), c_in, out, 3, 1),
                            b.conv_bn(&format!("{name}.conv1"), out, out, 3, 1),
                        ],
                        0,
                    ),
                    BlockKind::Bottleneck => {
                        let mid = out / 4;
                        (
                            vec![
                                b.conv_bn(&format!("{name}.conv0"), c_in, mid, 1, 1),
                                b.conv_bn(&format!("{name}.conv1"), mid, mid, 3, 1),
                                b.conv_bn(&format!("{name}.conv2"), mid, out, 1, 1),
                            ],
                            1,
                        )
                    }
                    BlockKind::DepthwiseSeparable => {
                        let hidden = 2 * c_in;
                        (
                            vec![
                                b.conv_bn(&format!("{name}.conv0"), c_in, hidden, 1, 1),
                                b.conv_bn(&format!("{name}.conv1"), hidden, hidden, 3, hidden),
                                b.conv_bn(&format!("{name}.conv2"), hidden, out, 1, 1),
                            ],
                            1,
                        )
                    }
                };
                if !first && c_in != out {
                    return Err(Error::Spec(format!("{name}: identity skip needs {c_in} == {out} channels")));
                }
                let skip = first.then(|| b.conv_bn(&format!("{name}.skip"), c_in, out, 1, 1));
                let slot = if first { Slot::from_index(si) } else { None };
                blocks.push(Block { kind: stage.block, slot, parts, dynamic_part, skip });
                c_in = out;
            }
        }
        let classes = spec.class_count;
        let bound = 1.0 / (c_in as f64).sqrt();
        let head = Tensor4::from_fn([c_in, classes, 1, 1], |_| T::cast(b.rng.random_range(-bound..bound)));
        let head_w = b.push("head.weight".into(), head, ParamKind::Trainable);
        let head_b = b.push("head.bias".into(), Tensor4::zeros([1, classes, 1, 1]), ParamKind::Trainable);
        let Builder { params, bns, .. } = b;
        Ok(Model {
            spec: spec.clone(),
            normalization: Normalization::identity(spec.in_channels),
            params,
            stem,
            blocks,
            head_w,
            head_b,
            bns,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn set_normalization(&mut self, n: Normalization) -> Result<()> {
        if n.mean.len() != self.spec.in_channels || n.std.len() != self.spec.in_channels {
            return Err(Error::Dimension("normalisation length must equal input channels".into()));
        }
        if n.std.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Parameter("normalisation std must be positive".into()));
        }
        self.normalization = n;
        Ok(())
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    /// Number of trainable scalars (running statistics excluded).
    pub fn parameter_count(&self) -> usize {
        self.params.iter().filter(|p| p.kind == ParamKind::Trainable).map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            normalization: self.normalization.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), value: p.value.cast(), kind: p.kind })
                .collect(),
            stem: self.stem,
            blocks: self.blocks.clone(),
            head_w: self.head_w,
            head_b: self.head_b,
            bns: self.bns.clone(),
        }
    }

    fn dynamic_config(&self, block: &Block, setting: &SlotSetting) -> Result<ConvConfig> {
        let part = &block.parts[block.dynamic_part];
        ConvConfig::new(setting.stride, setting.dilation, setting.size, part.groups)
    }

    /// Records the forward pass of the raw (un-normalised) batch `x` on
    /// `tape`. Returns logits `(n, classes)` plus, in training mode, the
    /// per-layer batch statistics to fold into the running estimates.
    pub fn forward_on(&self, tape: &mut Tape<T>, x: &Tensor4<T>, perm: &Permutation, train: bool) -> Result<(Var, Vec<Var>, BnUpdates<T>)> {
        self.spec.check_permutation(perm)?;
        let x = self.normalization.apply(x)?;
        let vars: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.value.clone())).collect();
        let input = tape.leaf(x);
        let mut pass = Pass { tape, vars, train, stats: Vec::new() };
        let mut h = self.conv_bn(&mut pass, input, &self.stem, None, 1)?;
        h = pass.tape.relu(h);
        for block in &self.blocks {
            let setting = block.slot.map(|s| *perm.slot(s));
            h = self.block_forward(&mut pass, h, block, setting.as_ref())?;
        }
        let pooled = pass.tape.global_avg_pool(h)?;
        let logits = pass.tape.matmul(pooled, pass.vars[self.head_w])?;
        let logits = pass.tape.add_row_bias(logits, pass.vars[self.head_b])?;
        Ok((logits, pass.vars, pass.stats))
    }

    fn conv_bn(&self, pass: &mut Pass<'_, T>, x: Var, cb: &ConvBn, dynamic: Option<ConvConfig>, stride: usize) -> Result<Var> {
        let w = pass.vars[cb.weight];
        let y = match dynamic {
            Some(cfg) => pass.tape.dynamic_conv(x, w, &cfg)?,
            None => pass.tape.conv2d(x, w, ConvGeometry::new(stride, 1, (cb.kernel - 1) / 2, cb.groups))?,
        };
        let bn = cb.bn;
        let mode = if pass.train {
            BatchNormMode::Train { eps: T::cast(BN_EPS) }
        } else {
            BatchNormMode::Eval {
                mean: self.params[bn.mean].value.data(),
                var: self.params[bn.var].value.data(),
                eps: T::cast(BN_EPS),
            }
        };
        let (out, stats) = pass.tape.batch_norm(y, pass.vars[bn.gamma], pass.vars[bn.beta], mode)?;
        if let Some(s) = stats {
            pass.stats.push((bn.id, s));
        }
        Ok(out)
    }

    fn block_forward(&self, pass: &mut Pass<'_, T>, x: Var, block: &Block, setting: Option<&SlotSetting>) -> Result<Var> {
        let dynamic = setting.map(|s| self.dynamic_config(block, s)).transpose()?;
        let mut h = x;
        let last = block.parts.len() - 1;
        for (i, part) in block.parts.iter().enumerate() {
            let cfg = if i == block.dynamic_part { dynamic } else { None };
            h = self.conv_bn(pass, h, part, cfg, 1)?;
            if i != last {
                h = pass.tape.relu(h);
            }
        }
        let skip = match &block.skip {
            None => x,
            Some(proj) => match setting.map_or(Stride::Whole(1), |s| s.stride) {
                Stride::Half => {
                    let up = pass.tape.upsample_nearest2x(x);
                    self.conv_bn(pass, up, proj, None, 1)?
                }
                Stride::Whole(s) => self.conv_bn(pass, x, proj, None, s)?,
            },
        };
        let sum = pass.tape.add(h, skip)?;
        Ok(if block.kind == BlockKind::DepthwiseSeparable { sum } else { pass.tape.relu(sum) })
    }

    /// Inference with frozen statistics. Returns logits `(n, classes)`.
    pub fn forward(&self, x: &Tensor4<T>, perm: &Permutation) -> Result<Tensor4<T>> {
        let mut tape = Tape::inference();
        let (logits, _, _) = self.forward_on(&mut tape, x, perm, false)?;
        let out = tape.value(logits).clone();
        out.ensure_finite("logits")?;
        Ok(out)
    }

    /// Inference through the direct reference kernels, returning logits and
    /// the multiply-accumulates actually executed.
    pub fn forward_counted(&self, x: &Tensor4<T>, perm: &Permutation) -> Result<(Tensor4<T>, u64)> {
        let mut tape = Tape::inference().with_kernels(Kernels::Reference);
        let (logits, _, _) = self.forward_on(&mut tape, x, perm, false)?;
        Ok((tape.value(logits).clone(), tape.counted_macs()))
    }

    /// Folds training-mode batch statistics into the running estimates
    /// (unbiased variance, exponential moving average).
    pub fn update_running_stats(&mut self, updates: &BnUpdates<T>, momentum: f64) {
        let m = T::cast(momentum);
        for (id, s) in updates {
            let bn = self.bns[*id];
            let unbias = if s.count > 1 { T::cast(s.count as f64 / (s.count - 1) as f64) } else { T::one() };
            for (r, &v) in self.params[bn.mean].value.data_mut().iter_mut().zip(&s.mean) {
                *r = (T::one() - m) * *r + m * v;
            }
            for (r, &v) in self.params[bn.var].value.data_mut().iter_mut().zip(&s.var) {
                *r = (T::one() - m) * *r + m * v * unbias;
            }
        }
    }

    /// Analytic per-sample MACs (convolutions and the linear head).
    pub fn macs(&self, perm: &Permutation, h: usize, w: usize) -> Result<u64> {
        Ok(self.walk(perm, h, w)?.0)
    }

    /// Spatial extents chained through the network without running it.
    pub fn trace_shapes(&self, perm: &Permutation, h: usize, w: usize) -> Result<ShapeTrace> {
        Ok(self.walk(perm, h, w)?.1)
    }

    fn walk(&self, perm: &Permutation, h: usize, w: usize) -> Result<(u64, ShapeTrace)> {
        self.spec.check_permutation(perm)?;
        if h == 0 || w == 0 {
            return Err(Error::Dimension("input extent must be positive".into()));
        }
        let conv = |cb: &ConvBn, c_in: usize, (h, w): (usize, usize), cfg: ConvConfig| -> (u64, (usize, usize), usize) {
            let out = self.params[cb.weight].value.n();
            let (oh, ow) = dynconv::output_shape(h, w, &cfg);
            (dynconv::count_macs([1, c_in, h, w], out, &cfg), (oh, ow), out)
        };
        let fixed = |k: usize, g: usize, s: usize| ConvConfig { stride: Stride::Whole(s), dilation: 1, kernel_size: k, groups: g };
        let mut total = 0u64;
        let mut max_area = h * w;
        let (m, mut hw, mut c) = conv(&self.stem, self.spec.in_channels, (h, w), fixed(3, 1, 1));
        total += m;
        let mut slots = [(0, 0); 4];
        for block in &self.blocks {
            let setting = block.slot.map(|s| *perm.slot(s));
            let (mut bhw, mut bc) = (hw, c);
            for (i, part) in block.parts.iter().enumerate() {
                let cfg = match setting {
                    Some(s) if i == block.dynamic_part => self.dynamic_config(block, &s)?,
                    _ => fixed(part.kernel, part.groups, 1),
                };
                let (m, nhw, nc) = conv(part, bc, bhw, cfg);
                total += m;
                bhw = nhw;
                bc = nc;
                max_area = max_area.max(bhw.0 * bhw.1);
            }
            if let Some(proj) = &block.skip {
                let (src, s) = match setting.map_or(Stride::Whole(1), |s| s.stride) {
                    Stride::Half => ((2 * hw.0, 2 * hw.1), 1),
                    Stride::Whole(s) => (hw, s),
                };
                let (m, shw, _) = conv(proj, c, src, fixed(1, 1, s));
                debug_assert_eq!(shw, bhw);
                total += m;
            }
            if let Some(s) = block.slot {
                slots[s.index()] = bhw;
            }
            hw = bhw;
            c = bc;
        }
        total += (c * self.spec.class_count) as u64;
        Ok((total, ShapeTrace { slots, max_area, pre_pool: (c, hw.0, hw.1) }))
    }
}

impl Model<f32> {
    /// Serialisable snapshot: trainable tensors and running statistics in
    /// build order, with the spec fingerprint in the header. Vectors are
    /// stored rank 1; the head weight is stored `(classes, features)`.
    pub fn to_store(&self) -> Result<WeightStore> {
        let header = serde_json::json!({
            "fingerprint": self.spec.fingerprint(),
            "spec": self.spec,
            "normalization": self.normalization,
        });
        let mut store = WeightStore::new(header);
        for (i, p) in self.params.iter().enumerate() {
            let d = p.value.dims();
            let (dims, data) = if i == self.head_w {
                let (rows, cols) = (d[0], d[1]);
                let mut t = vec![0.0f32; rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        t[c * rows + r] = p.value.data()[r * cols + c];
                    }
                }
                (vec![cols, rows], t)
            } else if d[0] == 1 && d[2] == 1 && d[3] == 1 {
                (vec![d[1]], p.value.data().to_vec())
            } else {
                (d.to_vec(), p.value.data().to_vec())
            };
            store.push(StoredTensor::new(p.name.clone(), dims, data)?)?;
        }
        Ok(store)
    }

    /// Rebuilds a model for `spec` from a store. The store's fingerprint
    /// must match and every parameter must be present with the right shape.
    pub fn from_store(spec: &ModelSpec, store: &WeightStore) -> Result<Self> {
        let expected = spec.fingerprint();
        let found = store.fingerprint().unwrap_or("").to_string();
        if found != expected {
            return Err(Error::FingerprintMismatch { expected, found });
        }
        let mut model = Model::<f32>::build(spec, 0)?;
        if store.tensors.len() != model.params.len() {
            return Err(Error::Format(format!("store holds {} tensors, model has {}", store.tensors.len(), model.params.len())));
        }
        let head_w = model.head_w;
        for (i, p) in model.params.iter_mut().enumerate() {
            let t = store.get(&p.name).ok_or_else(|| Error::Format(format!("missing tensor {}", p.name)))?;
            let d = p.value.dims();
            if i == head_w {
                let (rows, cols) = (d[0], d[1]);
                if t.dims != [cols, rows] {
                    return Err(Error::Format(format!("{}: expected dims [{cols}, {rows}], found {:?}", p.name, t.dims)));
                }
                for r in 0..rows {
                    for c in 0..cols {
                        p.value.data_mut()[r * cols + c] = t.data[c * rows + r];
                    }
                }
            } else {
                if t.data.len() != p.value.len() || !(t.dims == d || t.dims == [d[1]] && d[0] == 1) {
                    return Err(Error::Format(format!("{}: expected dims {d:?}, found {:?}", p.name, t.dims)));
                }
                p.value.data_mut().copy_from_slice(&t.data);
            }
        }
        if let Some(n) = store.header.get("normalization") {
            let n: Normalization = serde_json::from_value(n.clone())?;
            model.set_normalization(n)?;
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_store()?.save(path)
    }

    /// Loads a model whose spec is read from the file header.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let store = WeightStore::load(path)?;
        let spec = store
            .header
            .get("spec")
            .ok_or_else(|| Error::Format("weight header carries no model spec".into()))?;
        let spec: ModelSpec = serde_json::from_value(spec.clone())?;
        Self::from_store(&spec, &store)
    }

    /// Loads weights and checks them against an expected spec.
    pub fn load_for(spec: &ModelSpec, path: impl AsRef<Path>) -> Result<Self> {
        Self::from_store(spec, &WeightStore::load(path)?)
    }
}
