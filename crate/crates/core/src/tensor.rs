//! Dense rank-4 tensors and the primitive kernels the tape builds on.
//!
//! Layout is always `(n, c, h, w)` row-major. Matrices are carried as
//! `(rows, cols, 1, 1)` tensors and row vectors as `(1, len, 1, 1)`, so a
//! single type moves through the whole engine.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

use crate::error::{dim_err, Error, Result};

/// Scalar type of a tensor: `f32` for experiments, `f64` for verification.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    const BITS: u32;

    /// `c = a·b (+ c)` for row-major operands, optionally transposed.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        c: &mut [Self],
        accumulate: bool,
    );

    fn cast(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("real converts to f64")
    }
}

macro_rules! impl_real {
    ($t:ty, $bits:expr, $gemm:path) => {
        impl Real for $t {
            const BITS: u32 = $bits;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                trans_a: bool,
                b: &[Self],
                trans_b: bool,
                c: &mut [Self],
                accumulate: bool,
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: the slice lengths were checked above against the
                // extents implied by the strides.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, 32, matrixmultiply::sgemm);
impl_real!(f64, 64, matrixmultiply::dgemm);

#[derive(Clone, PartialEq)]
pub struct Tensor4<T> {
    dims: [usize; 4],
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor4<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        write!(f, "Tensor4{:?} {:?}", self.dims, preview)?;
        if self.data.len() > 8 {
            write!(f, "..")?;
        }
        Ok(())
    }
}

impl<T: Real> Tensor4<T> {
    pub fn new(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return dim_err(format!(
                "dims {:?} need {} values, got {}",
                dims,
                expected,
                data.len()
            ));
        }
        Ok(Tensor4 { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self::filled(dims, T::zero())
    }

    pub fn filled(dims: [usize; 4], value: T) -> Self {
        Tensor4 { dims, data: vec![value; dims.iter().product()] }
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for n in 0..dims[0] {
            for c in 0..dims[1] {
                for h in 0..dims[2] {
                    for w in 0..dims[3] {
                        data.push(f([n, c, h, w]));
                    }
                }
            }
        }
        Tensor4 { dims, data }
    }

    pub fn scalar(value: T) -> Self {
        Tensor4 { dims: [1, 1, 1, 1], data: vec![value] }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new([rows, cols, 1, 1], data)
    }

    pub fn row(data: Vec<T>) -> Self {
        Tensor4 { dims: [1, data.len(), 1, 1], data }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn n(&self) -> usize {
        self.dims[0]
    }

    pub fn c(&self) -> usize {
        self.dims[1]
    }

    pub fn h(&self) -> usize {
        self.dims[2]
    }

    pub fn w(&self) -> usize {
        self.dims[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn is_matrix(&self) -> bool {
        self.dims[2] == 1 && self.dims[3] == 1
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn scalar_value(&self) -> Result<T> {
        if !self.is_scalar() {
            return dim_err(format!("expected a scalar, got {:?}", self.dims));
        }
        Ok(self.data[0])
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.dims[1] + c) * self.dims[2] + h) * self.dims[3] + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.offset(n, c, h, w)]
    }

    pub fn reshape(self, dims: [usize; 4]) -> Result<Self> {
        Self::new(dims, self.data)
    }

    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|v| U::cast(v.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    /// Element count of one sample.
    pub fn sample_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let len = self.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    /// Gathers the given samples, in order, into a new batch.
    pub fn select(&self, indices: &[usize]) -> Tensor4<T> {
        let mut data = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        Tensor4 { dims: [indices.len(), self.dims[1], self.dims[2], self.dims[3]], data }
    }

    pub fn concat_batch(parts: &[Tensor4<T>]) -> Result<Tensor4<T>> {
        let Some(first) = parts.first() else {
            return dim_err("cannot concatenate an empty list");
        };
        let tail = &first.dims[1..];
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if &p.dims[1..] != tail {
                return dim_err(format!("batch concat: {:?} vs {:?}", first.dims, p.dims));
            }
            n += p.dims[0];
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor4 { dims: [n, tail[0], tail[1], tail[2]], data })
    }

    pub fn dot(&self, other: &Tensor4<T>) -> Result<T> {
        same_dims(self, other, "dot")?;
        Ok(self.data.iter().zip(&other.data).fold(T::zero(), |acc, (a, b)| acc + *a * *b))
    }

    pub fn max_abs_diff(&self, other: &Tensor4<T>) -> Result<T> {
        same_dims(self, other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (a, b)| acc.max((*a - *b).abs())))
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor4<T>) -> Result<()> {
        same_dims(self, other, "accumulate")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }
}

pub(crate) fn same_dims<T>(a: &Tensor4<T>, b: &Tensor4<T>, what: &str) -> Result<()> {
    if a.dims != b.dims {
        return dim_err(format!("{what}: {:?} vs {:?}", a.dims, b.dims));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Scale,
    Relu,
}

/// Second operand of [`elementwise`]; only scalars broadcast.
#[derive(Clone, Copy, Debug)]
pub enum Operand<'a, T> {
    Tensor(&'a Tensor4<T>),
    Scalar(T),
    None,
}

pub fn elementwise<T: Real>(op: ElementwiseOp, a: &Tensor4<T>, b: Operand<'_, T>) -> Result<Tensor4<T>> {
    let map = |f: &dyn Fn(T) -> T| Tensor4 { dims: a.dims, data: a.data.iter().map(|&v| f(v)).collect() };
    let zip = |b: &Tensor4<T>, f: &dyn Fn(T, T) -> T| -> Result<Tensor4<T>> {
        same_dims(a, b, "elementwise")?;
        Ok(Tensor4 {
            dims: a.dims,
            data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
        })
    };
    match (op, b) {
        (ElementwiseOp::Relu, Operand::None) => Ok(map(&|v| if v > T::zero() { v } else { T::zero() })),
        (ElementwiseOp::Add, Operand::Tensor(b)) => zip(b, &|x, y| x + y),
        (ElementwiseOp::Sub, Operand::Tensor(b)) => zip(b, &|x, y| x - y),
        (ElementwiseOp::Mul, Operand::Tensor(b)) => zip(b, &|x, y| x * y),
        (ElementwiseOp::Add, Operand::Scalar(s)) => Ok(map(&|v| v + s)),
        (ElementwiseOp::Sub, Operand::Scalar(s)) => Ok(map(&|v| v - s)),
        (ElementwiseOp::Mul | ElementwiseOp::Scale, Operand::Scalar(s)) => Ok(map(&|v| v * s)),
        (op, _) => dim_err(format!("operand kind does not fit {op:?}")),
    }
}

pub fn add<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    elementwise(ElementwiseOp::Add, a, Operand::Tensor(b))
}

pub fn sub<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    elementwise(ElementwiseOp::Sub, a, Operand::Tensor(b))
}

pub fn mul<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    elementwise(ElementwiseOp::Mul, a, Operand::Tensor(b))
}

pub fn scale<T: Real>(a: &Tensor4<T>, s: T) -> Tensor4<T> {
    Tensor4 { dims: a.dims, data: a.data.iter().map(|&v| v * s).collect() }
}

pub fn relu<T: Real>(a: &Tensor4<T>) -> Tensor4<T> {
    Tensor4 {
        dims: a.dims,
        data: a.data.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect(),
    }
}

/// Matrix product of `(r, k, 1, 1)` and `(k, c, 1, 1)` tensors.
pub fn matmul<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    matmul_t(a, false, b, false)
}

pub(crate) fn matmul_t<T: Real>(a: &Tensor4<T>, ta: bool, b: &Tensor4<T>, tb: bool) -> Result<Tensor4<T>> {
    if !a.is_matrix() || !b.is_matrix() {
        return dim_err(format!("matmul needs matrices, got {:?} and {:?}", a.dims, b.dims));
    }
    let (m, k) = if ta { (a.dims[1], a.dims[0]) } else { (a.dims[0], a.dims[1]) };
    let (k2, n) = if tb { (b.dims[1], b.dims[0]) } else { (b.dims[0], b.dims[1]) };
    if k != k2 {
        return dim_err(format!("matmul inner dims {k} vs {k2}"));
    }
    let mut out = vec![T::zero(); m * n];
    T::gemm(m, k, n, &a.data, ta, &b.data, tb, &mut out, false);
    Ok(Tensor4 { dims: [m, n, 1, 1], data: out })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

/// Reduces the listed axes (0..4) to extent 1. Ties in `Max` resolve to
/// the first element in index order.
pub fn reduce<T: Real>(kind: ReduceKind, x: &Tensor4<T>, axes: &[usize]) -> Result<Tensor4<T>> {
    reduce_with_argmax(kind, x, axes).map(|(t, _)| t)
}

pub(crate) fn reduce_with_argmax<T: Real>(
    kind: ReduceKind,
    x: &Tensor4<T>,
    axes: &[usize],
) -> Result<(Tensor4<T>, Vec<usize>)> {
    let mut reduced = [false; 4];
    for &a in axes {
        if a >= 4 {
            return dim_err(format!("axis {a} out of range"));
        }
        if x.dims[a] == 0 {
            return dim_err(format!("empty reduction axis {a}"));
        }
        reduced[a] = true;
    }
    let mut out_dims = x.dims;
    for a in 0..4 {
        if reduced[a] {
            out_dims[a] = 1;
        }
    }
    let count: usize = (0..4).filter(|&a| reduced[a]).map(|a| x.dims[a]).product();
    let out_len: usize = out_dims.iter().product();
    let init = match kind {
        ReduceKind::Max => T::neg_infinity(),
        _ => T::zero(),
    };
    let mut out = vec![init; out_len];
    let mut arg = vec![usize::MAX; if kind == ReduceKind::Max { out_len } else { 0 }];
    let d = x.dims;
    let mut idx = 0;
    for n in 0..d[0] {
        for c in 0..d[1] {
            for h in 0..d[2] {
                for w in 0..d[3] {
                    let pos = [n, c, h, w];
                    let mut o = 0;
                    for a in 0..4 {
                        o = o * out_dims[a] + if reduced[a] { 0 } else { pos[a] };
                    }
                    let v = x.data[idx];
                    match kind {
                        ReduceKind::Max => {
                            if v > out[o] || arg[o] == usize::MAX {
                                out[o] = v;
                                arg[o] = idx;
                            }
                        }
                        _ => out[o] += v,
                    }
                    idx += 1;
                }
            }
        }
    }
    if kind == ReduceKind::Mean {
        let inv = T::one() / T::cast(count as f64);
        for v in &mut out {
            *v *= inv;
        }
    }
    Ok((Tensor4 { dims: out_dims, data: out }, arg))
}

/// Row-wise softmax with max subtraction, then mean negative log-likelihood
/// of the labelled class.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor4<T>, labels: &[usize]) -> Result<(T, Tensor4<T>)> {
    if !logits.is_matrix() {
        return dim_err(format!("logits must be a matrix, got {:?}", logits.dims));
    }
    let (rows, classes) = (logits.dims[0], logits.dims[1]);
    if labels.len() != rows {
        return dim_err(format!("{} labels for {} rows", labels.len(), rows));
    }
    let probs = softmax_rows(logits);
    let mut loss = T::zero();
    for (r, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::LabelRange { label: y, classes });
        }
        // log p_y computed from the shifted logits for stability.
        let row = &logits.data[r * classes..(r + 1) * classes];
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        loss += lse - (row[y] - max);
    }
    if rows > 0 {
        loss /= T::cast(rows as f64);
    }
    Ok((loss, probs))
}

pub fn softmax_rows<T: Real>(logits: &Tensor4<T>) -> Tensor4<T> {
    let (rows, classes) = (logits.dims[0], logits.dims[1]);
    let mut data = Vec::with_capacity(rows * classes);
    for r in 0..rows {
        let row = &logits.data[r * classes..(r + 1) * classes];
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let start = data.len();
        data.extend(row.iter().map(|&v| (v - max).exp()));
        let sum: T = data[start..].iter().copied().sum();
        for v in &mut data[start..] {
            *v /= sum;
        }
    }
    Tensor4 { dims: [rows, classes, 1, 1], data }
}

/// Index of the largest entry per row; ties go to the lowest index.
pub fn argmax_rows<T: Real>(m: &Tensor4<T>) -> Vec<usize> {
    let classes = m.dims[1];
    (0..m.dims[0])
        .map(|r| {
            let row = &m.data[r * classes..(r + 1) * classes];
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
