//! Reverse-mode differentiation over a per-pass tape.
//!
//! Every primitive pushes one node holding its value and, when recording,
//! a closure mapping the output gradient to input gradients. `backward`
//! walks the nodes in reverse index order exactly once and accumulates
//! input gradients in operand order, so gradients are bit-reproducible.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dynconv::{self, kernels, reference, ConvConfig, ConvGeometry};
use crate::error::{dim_err, Error, Result};
use crate::options::Stride;
use crate::tensor::{self, ReduceKind, Real, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type BackwardFn<T> = Box<dyn Fn(&Tensor4<T>, &[&Tensor4<T>]) -> Result<Vec<Option<Tensor4<T>>>> + Send>;

struct Node<T> {
    value: Tensor4<T>,
    inputs: Vec<Var>,
    backward: Option<BackwardFn<T>>,
}

/// Which convolution kernels the tape dispatches to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kernels {
    /// Patch-matrix kernels on top of a blocked GEMM.
    Fast,
    /// Direct nested loops that count every multiply-accumulate.
    Reference,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    recording: bool,
    kernels: Kernels,
    macs: u64,
}

/// Batch-normalisation mode.
pub enum BatchNormMode<'a, T> {
    /// Normalise with batch statistics (which are returned).
    Train { eps: T },
    /// Normalise with frozen running statistics.
    Eval { mean: &'a [T], var: &'a [T], eps: T },
}

/// Per-channel batch mean and biased variance observed in training mode.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub count: usize,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    /// A recording tape.
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), recording: true, kernels: Kernels::Fast, macs: 0 }
    }

    /// Forward-only evaluation; no backward closures are kept.
    pub fn inference() -> Self {
        Tape { recording: false, ..Self::new() }
    }

    pub fn with_kernels(mut self, kernels: Kernels) -> Self {
        self.kernels = kernels;
        self
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Multiply-accumulates counted by reference kernels so far.
    pub fn counted_macs(&self) -> u64 {
        self.macs
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor4<T>) -> Var {
        self.nodes.push(Node { value, inputs: Vec::new(), backward: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor4<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor4<T>, inputs: Vec<Var>, backward: BackwardFn<T>) -> Var {
        let backward = if self.recording { Some(backward) } else { None };
        self.nodes.push(Node { value, inputs, backward });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::add(self.value(a), self.value(b))?;
        Ok(self.push(v, vec![a, b], Box::new(|g, _| Ok(vec![Some(g.clone()), Some(g.clone())]))))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::sub(self.value(a), self.value(b))?;
        Ok(self.push(v, vec![a, b], Box::new(|g, _| Ok(vec![Some(g.clone()), Some(tensor::scale(g, -T::one()))]))))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::mul(self.value(a), self.value(b))?;
        Ok(self.push(
            v,
            vec![a, b],
            Box::new(|g, ins| Ok(vec![Some(tensor::mul(g, ins[1])?), Some(tensor::mul(g, ins[0])?)])),
        ))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = tensor::scale(self.value(a), s);
        self.push(v, vec![a], Box::new(move |g, _| Ok(vec![Some(tensor::scale(g, s))])))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = tensor::relu(self.value(a));
        self.push(
            v,
            vec![a],
            Box::new(|g, ins| {
                let mut out = g.clone();
                for (o, &x) in out.data_mut().iter_mut().zip(ins[0].data()) {
                    if x <= T::zero() {
                        *o = T::zero();
                    }
                }
                Ok(vec![Some(out)])
            }),
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let v = tensor::matmul(va, vb)?;
        if self.kernels == Kernels::Reference {
            self.macs += (va.dims()[0] * va.dims()[1] * vb.dims()[1]) as u64;
        }
        Ok(self.push(
            v,
            vec![a, b],
            Box::new(|g, ins| {
                let da = tensor::matmul_t(g, false, ins[1], true)?;
                let db = tensor::matmul_t(ins[0], true, g, false)?;
                Ok(vec![Some(da), Some(db)])
            }),
        ))
    }

    /// Adds a `(1, cols)` row to every row of a matrix.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if !vx.is_matrix() || vb.dims() != [1, vx.c(), 1, 1] {
            return dim_err(format!("row bias {:?} for matrix {:?}", vb.dims(), vx.dims()));
        }
        let cols = vx.c();
        let mut v = vx.clone();
        for (i, o) in v.data_mut().iter_mut().enumerate() {
            *o += vb.data()[i % cols];
        }
        Ok(self.push(
            v,
            vec![x, bias],
            Box::new(move |g, _| {
                let mut db = vec![T::zero(); cols];
                for (i, &gv) in g.data().iter().enumerate() {
                    db[i % cols] += gv;
                }
                Ok(vec![Some(g.clone()), Some(Tensor4::row(db))])
            }),
        ))
    }

    /// Adds a `(1, c)` row to every element of channel `c`.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let mut v = self.value(x).clone();
        kernels::add_channel_bias(&mut v, self.value(bias).data())?;
        Ok(self.push(
            v,
            vec![x, bias],
            Box::new(|g, _| Ok(vec![Some(g.clone()), Some(Tensor4::row(kernels::channel_sums(g)))])),
        ))
    }

    pub fn reduce(&mut self, kind: ReduceKind, x: Var, axes: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        let in_dims = vx.dims();
        let (v, arg) = tensor::reduce_with_argmax(kind, vx, axes)?;
        let out_dims = v.dims();
        let count: usize = in_dims.iter().zip(&out_dims).map(|(a, b)| a / b).product();
        Ok(self.push(
            v,
            vec![x],
            Box::new(move |g, _| {
                let mut dx = Tensor4::zeros(in_dims);
                match kind {
                    ReduceKind::Max => {
                        for (o, &src) in arg.iter().enumerate() {
                            dx.data_mut()[src] += g.data()[o];
                        }
                    }
                    _ => {
                        let f = if kind == ReduceKind::Mean { T::one() / T::cast(count as f64) } else { T::one() };
                        let od = out_dims;
                        for (i, d) in dx.data_mut().iter_mut().enumerate() {
                            let mut rem = i;
                            let mut pos = [0; 4];
                            for a in (0..4).rev() {
                                pos[a] = rem % in_dims[a];
                                rem /= in_dims[a];
                            }
                            let mut o = 0;
                            for a in 0..4 {
                                o = o * od[a] + if od[a] == 1 { 0 } else { pos[a] };
                            }
                            *d = g.data()[o] * f;
                        }
                    }
                }
                Ok(vec![Some(dx)])
            }),
        ))
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        self.reduce(ReduceKind::Mean, x, &[0, 1, 2, 3])
    }

    /// Mean over `(h, w)`, reshaped to an `(n, c)` matrix.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        self.reduce(ReduceKind::Mean, x, &[2, 3])
    }

    /// Mean cross-entropy of `logits` against `labels`; also returns the
    /// softmax probabilities.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<(Var, Tensor4<T>)> {
        let (loss, probs) = tensor::softmax_cross_entropy(self.value(logits), labels)?;
        let labels = labels.to_vec();
        let saved = probs.clone();
        let var = self.push(
            Tensor4::scalar(loss),
            vec![logits],
            Box::new(move |g, _| {
                let scale = g.data()[0] / T::cast(labels.len().max(1) as f64);
                let classes = saved.c();
                let mut d = saved.clone();
                for (r, &y) in labels.iter().enumerate() {
                    d.data_mut()[r * classes + y] -= T::one();
                }
                Ok(vec![Some(tensor::scale(&d, scale))])
            }),
        );
        Ok((var, probs))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, g: ConvGeometry) -> Result<Var> {
        let v = match self.kernels {
            Kernels::Fast => kernels::conv2d(self.value(x), self.value(w), g)?,
            Kernels::Reference => {
                let mut macs = 0;
                let v = reference::conv2d_direct(self.value(x), self.value(w), g, Some(&mut macs))?;
                self.macs += macs;
                v
            }
        };
        Ok(self.push(
            v,
            vec![x, w],
            Box::new(move |dy, ins| {
                let dx = kernels::conv2d_backward_data(dy, ins[1], ins[0].dims(), g)?;
                let dw = kernels::conv2d_backward_weight(dy, ins[0], ins[1].dims(), g)?;
                Ok(vec![Some(dx), Some(dw)])
            }),
        ))
    }

    /// Transposed convolution with the stored forward kernel `w`, output
    /// extent `(h−1)·s − 2p + D(K−1) + 1 + output_padding`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, g: ConvGeometry, output_padding: usize) -> Result<Var> {
        let v = match self.kernels {
            Kernels::Reference if g.stride == 2 && output_padding == 1 && 2 * g.padding == g.dilation * (self.value(w).h() - 1) => {
                let mut macs = 0;
                let v = reference::fractional_direct(self.value(x), self.value(w), g.dilation, g.groups, Some(&mut macs))?;
                self.macs += macs;
                v
            }
            _ => kernels::conv_transpose2d(self.value(x), self.value(w), g, output_padding)?,
        };
        Ok(self.push(
            v,
            vec![x, w],
            Box::new(move |dy, ins| {
                let (dx, dw) = kernels::conv_transpose2d_backward(dy, ins[0], ins[1], g)?;
                Ok(vec![Some(dx), Some(dw)])
            }),
        ))
    }

    pub fn interpolate_kernel(&mut self, w: Var, k: usize) -> Result<Var> {
        let stored = self.value(w).h();
        let v = dynconv::interpolate_kernel(self.value(w), k)?;
        Ok(self.push(
            v,
            vec![w],
            Box::new(move |g, _| Ok(vec![Some(dynconv::interpolate_kernel_adjoint(g, stored)?)])),
        ))
    }

    /// Dynamic convolution: resample the stored kernel to the active size,
    /// convolve (or transposed-convolve for stride ½), scale by `α`.
    pub fn dynamic_conv(&mut self, x: Var, w: Var, cfg: &ConvConfig) -> Result<Var> {
        cfg.validate()?;
        let stored = self.value(w).h();
        let channels = self.value(w).c() * cfg.groups;
        if self.value(x).c() != channels {
            return dim_err(format!(
                "input has {} channels; dynamic kernel {:?} with {} groups expects {channels}",
                self.value(x).c(),
                self.value(w).dims(),
                cfg.groups
            ));
        }
        let k = if cfg.kernel_size != stored { self.interpolate_kernel(w, cfg.kernel_size)? } else { w };
        let y = match cfg.stride {
            Stride::Half => self.conv_transpose2d(x, k, cfg.geometry(), 1)?,
            Stride::Whole(_) => self.conv2d(x, k, cfg.geometry())?,
        };
        let alpha = cfg.alpha(stored);
        Ok(if alpha != 1.0 { self.scale(y, T::cast(alpha)) } else { y })
    }

    /// Nearest-neighbour 2× spatial up-sampling.
    pub fn upsample_nearest2x(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let [n, c, h, w] = vx.dims();
        let v = Tensor4::from_fn([n, c, 2 * h, 2 * w], |[a, b, i, j]| vx.at(a, b, i / 2, j / 2));
        self.push(
            v,
            vec![x],
            Box::new(move |g, _| {
                let mut dx = Tensor4::zeros([n, c, h, w]);
                for a in 0..n {
                    for b in 0..c {
                        for i in 0..2 * h {
                            for j in 0..2 * w {
                                let o = dx.offset(a, b, i / 2, j / 2);
                                dx.data_mut()[o] += g.at(a, b, i, j);
                            }
                        }
                    }
                }
                Ok(vec![Some(dx)])
            }),
        )
    }

    /// Per-channel normalisation followed by `γ·x̂ + β`. `gamma` and `beta`
    /// are `(1, c)` rows.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, mode: BatchNormMode<'_, T>) -> Result<(Var, Option<BatchStats<T>>)> {
        let vx = self.value(x);
        let [n, c, h, w] = vx.dims();
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return dim_err(format!("batch norm parameters do not match {c} channels"));
        }
        let plane = h * w;
        let count = n * plane;
        let (mean, var, eps, train) = match mode {
            BatchNormMode::Train { eps } => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ni in 0..n {
                    for (ci, m) in mean.iter_mut().enumerate() {
                        let s = &vx.data()[(ni * c + ci) * plane..][..plane];
                        *m += s.iter().copied().sum::<T>();
                    }
                }
                let inv = T::one() / T::cast(count as f64);
                mean.iter_mut().for_each(|m| *m *= inv);
                for ni in 0..n {
                    for ci in 0..c {
                        let s = &vx.data()[(ni * c + ci) * plane..][..plane];
                        var[ci] += s.iter().map(|&v| (v - mean[ci]) * (v - mean[ci])).sum::<T>();
                    }
                }
                var.iter_mut().for_each(|v| *v *= inv);
                (mean, var, eps, true)
            }
            BatchNormMode::Eval { mean, var, eps } => {
                if mean.len() != c || var.len() != c {
                    return dim_err("running statistics do not match channels");
                }
                (mean.to_vec(), var.to_vec(), eps, false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (gv, bv) = (self.value(gamma).data().to_vec(), self.value(beta).data().to_vec());
        let mut xhat = Tensor4::zeros([n, c, h, w]);
        let mut out = Tensor4::zeros([n, c, h, w]);
        for ni in 0..n {
            for ci in 0..c {
                let off = (ni * c + ci) * plane;
                for p in off..off + plane {
                    let xh = (vx.data()[p] - mean[ci]) * inv_std[ci];
                    xhat.data_mut()[p] = xh;
                    out.data_mut()[p] = gv[ci] * xh + bv[ci];
                }
            }
        }
        let stats = train.then(|| BatchStats { mean: mean.clone(), var: var.clone(), count });
        let var_out = self.push(
            out,
            vec![x, gamma, beta],
            Box::new(move |g, _| {
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for ni in 0..n {
                    for ci in 0..c {
                        let off = (ni * c + ci) * plane;
                        for p in off..off + plane {
                            dgamma[ci] += g.data()[p] * xhat.data()[p];
                            dbeta[ci] += g.data()[p];
                        }
                    }
                }
                let mut dx = Tensor4::zeros([n, c, h, w]);
                let m = T::cast(count as f64);
                for ni in 0..n {
                    for ci in 0..c {
                        let off = (ni * c + ci) * plane;
                        let k = gv[ci] * inv_std[ci];
                        for p in off..off + plane {
                            dx.data_mut()[p] = if train {
                                k * (g.data()[p] - dbeta[ci] / m - xhat.data()[p] * dgamma[ci] / m)
                            } else {
                                k * g.data()[p]
                            };
                        }
                    }
                }
                Ok(vec![Some(dx), Some(Tensor4::row(dgamma)), Some(Tensor4::row(dbeta))])
            }),
        );
        Ok((var_out, stats))
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return dim_err(format!("backward needs a scalar loss, got {:?}", lv.dims()));
        }
        if !self.recording {
            return Err(Error::State("tape was not recording".into()));
        }
        let mut grads: Vec<Option<Tensor4<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor4::filled(lv.dims(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(bw) = &node.backward else { continue };
            let Some(g) = grads[i].take() else { continue };
            let inputs: Vec<&Tensor4<T>> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let input_grads = bw(&g, &inputs)?;
            grads[i] = Some(g);
            for (var, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&ig)?,
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

pub struct Gradients<T> {
    grads: Vec<Option<Tensor4<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor4<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor4<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Coordinates sampled per parameter tensor; `None` checks all.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { eps: 1e-5, tol: 1e-4, max_coords: Some(24), seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradFailure {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub failures: Vec<GradFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compares tape gradients of a scalar function against central finite
/// differences, in 64-bit precision. `f` receives one leaf per entry of
/// `params`, in order, and returns the scalar output.
pub fn grad_check<F>(f: F, params: &[Tensor4<f64>], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor4<f64>]| -> Result<f64> {
        let mut tape = Tape::inference();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out).scalar_value()?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("function value {v}")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor4<f64>> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let analytic = grads.get(vars[pi]).cloned().unwrap_or_else(|| Tensor4::zeros(p.dims()));
        analytic.ensure_finite("analytic gradient")?;
        let coords: Vec<usize> = match opts.max_coords {
            Some(m) if m < p.len() => {
                let mut c = sample(&mut rng, p.len(), m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..p.len()).collect(),
        };
        for idx in coords {
            let orig = p.data()[idx];
            work[pi].data_mut()[idx] = orig + opts.eps;
            let plus = eval(&work)?;
            work[pi].data_mut()[idx] = orig - opts.eps;
            let minus = eval(&work)?;
            work[pi].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic.data()[idx];
            let rel_err = (a - numeric).abs() / numeric.abs().max(1.0);
            report.checked += 1;
            report.max_rel_err = report.max_rel_err.max(rel_err);
            if rel_err > opts.tol {
                report.failures.push(GradFailure { param: pi, index: idx, analytic: a, numeric, rel_err });
            }
        }
    }
    Ok(report)
}
