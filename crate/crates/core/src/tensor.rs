//! Dense row-major tensors over f32/f64.
//!
//! All layout is row-major; image tensors are NHWC. Ops here are the
//! plain (tape-free) numeric kernels; `tape` wraps them with gradient
//! recording and produces bit-identical values.

use crate::error::{Error, Result};
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn size_bytes(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_tag(t: u8) -> Option<Dtype> {
        match t {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }
}

/// Scalar element of a tensor. Implemented for f32 and f64 only.
pub trait Element:
    num_traits::Float + num_traits::NumAssignOps + Copy + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    const DTYPE: Dtype;
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: Dtype = Dtype::F32;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Element for f64 {
    const DTYPE: Dtype = Dtype::F64;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// Dense N-dimensional array, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E: Element> {
    shape: Vec<usize>,
    data: Vec<E>,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for a shape.
pub fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl<E: Element> Tensor<E> {
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero dimension in shape {shape:?}")));
        }
        if numel(&shape) != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                numel(&shape),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![E::zero(); numel(shape)] }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, E::one())
    }

    pub fn full(shape: &[usize], v: E) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![v; numel(shape)] }
    }

    pub fn scalar(v: E) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn from_vec(data: Vec<E>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn from_rows(rows: &[Vec<E>]) -> Self {
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Tensor { shape: vec![rows.len(), cols], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn scalar_value(&self) -> E {
        assert!(self.is_scalar(), "not a scalar: shape {:?}", self.shape);
        self.data[0]
    }

    pub fn at(&self, idx: &[usize]) -> E {
        let s = strides_of(&self.shape);
        let flat: usize = idx.iter().zip(&s).map(|(i, st)| i * st).sum();
        self.data[flat]
    }

    pub fn set(&mut self, idx: &[usize], v: E) {
        let s = strides_of(&self.shape);
        let flat: usize = idx.iter().zip(&s).map(|(i, st)| i * st).sum();
        self.data[flat] = v;
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Tensor<E> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn scale(&self, c: E) -> Tensor<E> {
        self.map(|x| x * c)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<E>> {
        if numel(shape) != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} ({} elems) to {:?}",
                self.shape,
                self.data.len(),
                shape
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data: self.data.clone() })
    }

    pub fn cast<T: Element>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| T::from_f64(x.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Fails with a domain error if any element is NaN/Inf.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::Domain(format!("non-finite value produced by {what}")))
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<E>) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

// ── broadcasting ─────────────────────────────────────────────────────

/// Numpy-style broadcast of two shapes: align trailing dims, size-1
/// dims stretch. Errors when dims disagree and neither is 1.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return Err(Error::Shape(format!("cannot broadcast {a:?} with {b:?}")));
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed as broadcast to `out_shape` (0 on stretched dims).
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let native = strides_of(shape);
    let pad = out_shape.len() - shape.len();
    let mut s = vec![0; out_shape.len()];
    for i in 0..shape.len() {
        s[pad + i] = if shape[i] == 1 && out_shape[pad + i] != 1 { 0 } else { native[i] };
    }
    s
}

/// Elementwise combine with broadcasting.
pub fn zip_broadcast<E: Element>(
    a: &Tensor<E>,
    b: &Tensor<E>,
    f: impl Fn(E, E) -> E,
) -> Result<Tensor<E>> {
    let out_shape = broadcast_shape(&a.shape, &b.shape)?;
    let n = numel(&out_shape);
    let sa = broadcast_strides(&a.shape, &out_shape);
    let sb = broadcast_strides(&b.shape, &out_shape);
    let mut idx = vec![0usize; out_shape.len()];
    let mut oa = 0usize;
    let mut ob = 0usize;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(f(a.data[oa], b.data[ob]));
        // odometer increment
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            oa -= sa[d] * out_shape[d];
            ob -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    Tensor::new(out_shape, data)
}

/// Sum `t` down to `target` shape (inverse of broadcasting), for gradients.
pub fn reduce_to_shape<E: Element>(t: &Tensor<E>, target: &[usize]) -> Tensor<E> {
    if t.shape() == target {
        return t.clone();
    }
    let pad = t.rank() - target.len();
    let mut out = Tensor::zeros(target);
    let ts = strides_of(t.shape());
    let os = strides_of(target);
    let mut idx = vec![0usize; t.rank()];
    for flat in 0..t.len() {
        // map input index -> output index (dropping padded dims, clamping size-1)
        let mut oflat = 0;
        for d in pad..t.rank() {
            let od = d - pad;
            let i = if target[od] == 1 { 0 } else { idx[d] };
            oflat += i * os[od];
        }
        out.data[oflat] += t.data[flat];
        let _ = ts;
        for d in (0..t.rank()).rev() {
            idx[d] += 1;
            if idx[d] < t.shape()[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

// ── reductions ───────────────────────────────────────────────────────

fn check_axes(rank: usize, axes: &[usize]) -> Result<()> {
    for &a in axes {
        if a >= rank {
            return Err(Error::Shape(format!("axis {a} out of range for rank {rank}")));
        }
    }
    Ok(())
}

fn reduced_shape(shape: &[usize], axes: &[usize], keepdims: bool) -> Vec<usize> {
    let mut out = Vec::new();
    for (d, &s) in shape.iter().enumerate() {
        if axes.contains(&d) {
            if keepdims {
                out.push(1);
            }
        } else {
            out.push(s);
        }
    }
    if out.is_empty() {
        out.push(1);
    }
    out
}

/// Map an input flat offset iteration to output offsets for a reduction.
fn reduction_output_index(
    shape: &[usize],
    axes: &[usize],
    keepdims: bool,
) -> (Vec<usize>, impl Fn(&[usize]) -> usize) {
    let out_shape = reduced_shape(shape, axes, keepdims);
    let os = strides_of(&out_shape);
    let axes = axes.to_vec();
    let keep: Vec<usize> = (0..shape.len()).filter(|d| !axes.contains(d)).collect();
    let f = move |idx: &[usize]| -> usize {
        if keepdims {
            let mut o = 0;
            let mut oi = 0;
            for d in 0..idx.len() {
                let i = if axes.contains(&d) { 0 } else { idx[d] };
                o += i * os[oi];
                oi += 1;
            }
            o
        } else {
            if keep.is_empty() {
                return 0;
            }
            let mut o = 0;
            for (oi, &d) in keep.iter().enumerate() {
                o += idx[d] * os[oi];
            }
            o
        }
    };
    (out_shape, f)
}

pub fn sum_axes<E: Element>(t: &Tensor<E>, axes: &[usize], keepdims: bool) -> Result<Tensor<E>> {
    check_axes(t.rank(), axes)?;
    let (out_shape, oidx) = reduction_output_index(t.shape(), axes, keepdims);
    let mut out = Tensor::zeros(&out_shape);
    let mut idx = vec![0usize; t.rank()];
    for flat in 0..t.len() {
        out.data[oidx(&idx)] += t.data[flat];
        bump(&mut idx, t.shape());
    }
    Ok(out)
}

pub fn mean_axes<E: Element>(t: &Tensor<E>, axes: &[usize], keepdims: bool) -> Result<Tensor<E>> {
    let n: usize = axes.iter().map(|&a| t.shape()[a]).product();
    let s = sum_axes(t, axes, keepdims)?;
    Ok(s.scale(E::from_f64(1.0 / n as f64)))
}

/// Max reduction; also returns, per output slot, the input flat index of
/// the (first, row-major) maximum — used to route gradients.
pub fn max_axes<E: Element>(
    t: &Tensor<E>,
    axes: &[usize],
    keepdims: bool,
) -> Result<(Tensor<E>, Vec<usize>)> {
    check_axes(t.rank(), axes)?;
    let (out_shape, oidx) = reduction_output_index(t.shape(), axes, keepdims);
    let n_out = numel(&out_shape);
    let mut best = vec![E::neg_infinity(); n_out];
    let mut arg = vec![usize::MAX; n_out];
    let mut idx = vec![0usize; t.rank()];
    for flat in 0..t.len() {
        let o = oidx(&idx);
        if t.data[flat] > best[o] {
            best[o] = t.data[flat];
            arg[o] = flat;
        }
        bump(&mut idx, t.shape());
    }
    Ok((Tensor::new(out_shape, best)?, arg))
}

fn bump(idx: &mut [usize], shape: &[usize]) {
    for d in (0..shape.len()).rev() {
        idx[d] += 1;
        if idx[d] < shape[d] {
            return;
        }
        idx[d] = 0;
    }
}

// ── matmul / permute / concat ────────────────────────────────────────

/// Matrix product over the last two axes; leading axes must match
/// exactly and act as a batch.
pub fn matmul<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    if a.rank() < 2 || b.rank() < 2 {
        return Err(Error::Shape("matmul needs rank >= 2".into()));
    }
    let (am, ak) = (a.shape[a.rank() - 2], a.shape[a.rank() - 1]);
    let (bk, bn) = (b.shape[b.rank() - 2], b.shape[b.rank() - 1]);
    let lead_a = &a.shape[..a.rank() - 2];
    let lead_b = &b.shape[..b.rank() - 2];
    if ak != bk || lead_a != lead_b {
        return Err(Error::Shape(format!(
            "matmul mismatch: {:?} x {:?}",
            a.shape, b.shape
        )));
    }
    let batch: usize = lead_a.iter().product();
    let mut out_shape = lead_a.to_vec();
    out_shape.push(am);
    out_shape.push(bn);
    let mut data = vec![E::zero(); batch * am * bn];
    for g in 0..batch {
        let ao = g * am * ak;
        let bo = g * bk * bn;
        let co = g * am * bn;
        for i in 0..am {
            for k in 0..ak {
                let av = a.data[ao + i * ak + k];
                if av == E::zero() {
                    continue;
                }
                let brow = bo + k * bn;
                let crow = co + i * bn;
                for j in 0..bn {
                    data[crow + j] += av * b.data[brow + j];
                }
            }
        }
    }
    Tensor::new(out_shape, data)
}

/// Reorder axes. `perm` must be a permutation of 0..rank.
pub fn permute<E: Element>(t: &Tensor<E>, perm: &[usize]) -> Result<Tensor<E>> {
    if perm.len() != t.rank() {
        return Err(Error::Shape("permute rank mismatch".into()));
    }
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() || seen[p] {
            return Err(Error::Shape(format!("invalid permutation {perm:?}")));
        }
        seen[p] = true;
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| t.shape[p]).collect();
    let in_strides = strides_of(&t.shape);
    let mut data = Vec::with_capacity(t.len());
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..t.len() {
        let mut off = 0;
        for (d, &p) in perm.iter().enumerate() {
            off += idx[d] * in_strides[p];
        }
        data.push(t.data[off]);
        bump(&mut idx, &out_shape);
    }
    Tensor::new(out_shape, data)
}

/// Swap the last two axes.
pub fn transpose_last2<E: Element>(t: &Tensor<E>) -> Result<Tensor<E>> {
    let mut perm: Vec<usize> = (0..t.rank()).collect();
    let r = t.rank();
    if r < 2 {
        return Err(Error::Shape("transpose needs rank >= 2".into()));
    }
    perm.swap(r - 1, r - 2);
    permute(t, &perm)
}

/// Concatenate along `axis`; all other dims must agree.
pub fn concat<E: Element>(parts: &[&Tensor<E>], axis: usize) -> Result<Tensor<E>> {
    if parts.is_empty() {
        return Err(Error::Shape("concat of zero tensors".into()));
    }
    let rank = parts[0].rank();
    check_axes(rank, &[axis])?;
    let mut out_shape = parts[0].shape.clone();
    out_shape[axis] = 0;
    for p in parts {
        if p.rank() != rank {
            return Err(Error::Shape("concat rank mismatch".into()));
        }
        for d in 0..rank {
            if d != axis && p.shape[d] != parts[0].shape[d] {
                return Err(Error::Shape(format!(
                    "concat shape mismatch on axis {d}: {:?} vs {:?}",
                    p.shape, parts[0].shape
                )));
            }
        }
        out_shape[axis] += p.shape[axis];
    }
    let outer: usize = out_shape[..axis].iter().product();
    let inner: usize = out_shape[axis + 1..].iter().product();
    let mut data = Vec::with_capacity(numel(&out_shape));
    for o in 0..outer {
        for p in parts {
            let rows = p.shape[axis];
            let start = o * rows * inner;
            data.extend_from_slice(&p.data[start..start + rows * inner]);
        }
    }
    Tensor::new(out_shape, data)
}

/// Split the concat result back into parts with the given axis sizes.
pub fn split<E: Element>(t: &Tensor<E>, axis: usize, sizes: &[usize]) -> Result<Vec<Tensor<E>>> {
    check_axes(t.rank(), &[axis])?;
    if sizes.iter().sum::<usize>() != t.shape[axis] {
        return Err(Error::Shape("split sizes do not sum to axis length".into()));
    }
    let outer: usize = t.shape[..axis].iter().product();
    let inner: usize = t.shape[axis + 1..].iter().product();
    let total = t.shape[axis];
    let mut out = Vec::with_capacity(sizes.len());
    let mut offset = 0usize;
    for &sz in sizes {
        let mut shape = t.shape.clone();
        shape[axis] = sz;
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            let start = (o * total + offset) * inner;
            data.extend_from_slice(&t.data[start..start + sz * inner]);
        }
        out.push(Tensor::new(shape, data)?);
        offset += sz;
    }
    Ok(out)
}

/// Numerically stable softmax along `axis` (max-subtraction).
pub fn softmax<E: Element>(t: &Tensor<E>, axis: usize) -> Result<Tensor<E>> {
    check_axes(t.rank(), &[axis])?;
    let (mx, _) = max_axes(t, &[axis], true)?;
    let shifted = zip_broadcast(t, &mx, |a, b| a - b)?;
    let e = shifted.map(|x| x.exp());
    let denom = sum_axes(&e, &[axis], true)?;
    zip_broadcast(&e, &denom, |a, b| a / b)
}
