//! Neural-network layer primitives on top of the autodiff tape:
//! convolution, pooling, dense, normalization, dropout, plus parameter
//! containers and the seeded RNG used for init/augmentation/dropout.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Element, Tensor};
use indexmap::IndexMap;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Train/infer switch shared by batch_norm, dropout and the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DenseActivation {
    None,
    Relu,
    Softmax,
}

// ── RNG ──────────────────────────────────────────────────────────────

/// Splittable counter-based generator. Identical (seed, stream,
/// call-sequence) reproduces identical draws on every platform.
#[derive(Clone, Debug)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    rng: ChaCha12Rng,
}

impl RngState {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngState { seed, stream, rng }
    }

    /// Independent generator derived from the same seed.
    pub fn substream(&self, stream: u64) -> RngState {
        RngState::new(self.seed, stream)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.gen::<f64>() * (hi - lo) + lo
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.rng.gen::<f64>() < p
    }

    pub fn shuffle<T>(&mut self, v: &mut [T]) {
        // Fisher-Yates, explicit so the draw sequence is pinned
        for i in (1..v.len()).rev() {
            let j = (self.next_u64() % (i as u64 + 1)) as usize;
            v.swap(i, j);
        }
    }

    /// Draws happen in f64 and are converted, so f32 and f64 models see
    /// the same underlying sequence.
    pub fn uniform_tensor<E: Element>(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<E> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| E::from_f64(self.uniform(lo, hi))).collect();
        Tensor::new(shape.to_vec(), data).expect("shape/data length")
    }
}

/// He-uniform init: U(-l, l) with l = sqrt(6 / fan_in).
pub fn he_uniform<E: Element>(shape: &[usize], fan_in: usize, rng: &mut RngState) -> Tensor<E> {
    let limit = (6.0 / fan_in as f64).sqrt();
    rng.uniform_tensor(shape, -limit, limit)
}

/// Glorot/Xavier uniform init, suited to linear and softmax layers.
pub fn glorot_uniform<E: Element>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut RngState,
) -> Tensor<E> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    rng.uniform_tensor(shape, -limit, limit)
}

// ── parameter containers ─────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct ParamTensor<E: Element> {
    pub tensor: Tensor<E>,
    pub trainable: bool,
}

/// Named, shaped parameter collection for one architecture block.
#[derive(Clone, Debug)]
pub struct LayerParams<E: Element> {
    pub name: String,
    pub tensors: IndexMap<String, ParamTensor<E>>,
}

impl<E: Element> LayerParams<E> {
    pub fn new(name: impl Into<String>) -> Self {
        LayerParams { name: name.into(), tensors: IndexMap::new() }
    }

    pub fn add(&mut self, key: &str, tensor: Tensor<E>, trainable: bool) {
        let prev = self.tensors.insert(key.to_string(), ParamTensor { tensor, trainable });
        assert!(prev.is_none(), "duplicate parameter {}/{key}", self.name);
    }

    pub fn get(&self, key: &str) -> &Tensor<E> {
        &self.tensors[key].tensor
    }

    pub fn get_mut(&mut self, key: &str) -> &mut Tensor<E> {
        &mut self.tensors.get_mut(key).unwrap().tensor
    }
}

// ── convolution ──────────────────────────────────────────────────────

fn conv_geometry(
    in_size: usize,
    k: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = in_size.div_ceil(stride);
            let pad_total = ((out - 1) * stride + k).saturating_sub(in_size);
            Ok((out, pad_total / 2))
        }
        Padding::Valid => {
            if in_size < k {
                return Err(Error::Shape(format!(
                    "valid conv: input {in_size} smaller than kernel {k}"
                )));
            }
            Ok(((in_size - k) / stride + 1, 0))
        }
    }
}

/// 2D cross-correlation (no kernel flip), NHWC input, kernel
/// [kh, kw, Cin, Cout]. Differentiable w.r.t. input, kernel and bias.
pub fn conv2d<E: Element>(
    tape: &Tape<E>,
    x: Var,
    kernel: Var,
    bias: Option<Var>,
    stride: usize,
    padding: Padding,
) -> Result<Var> {
    let xv = tape.value(x);
    let kv = tape.value(kernel);
    if xv.rank() != 4 || kv.rank() != 4 {
        return Err(Error::Shape(format!(
            "conv2d expects NHWC input and [kh,kw,Cin,Cout] kernel, got {:?} and {:?}",
            xv.shape(),
            kv.shape()
        )));
    }
    let [n, h, w, cin] = [xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]];
    let [kh, kw, kcin, cout] = [kv.shape()[0], kv.shape()[1], kv.shape()[2], kv.shape()[3]];
    if kcin != cin {
        return Err(Error::Shape(format!(
            "conv2d channel mismatch: input has {cin}, kernel expects {kcin}"
        )));
    }
    if stride == 0 || kh == 0 || kw == 0 {
        return Err(Error::Shape("conv2d: stride and kernel dims must be >= 1".into()));
    }
    let (oh, pt) = conv_geometry(h, kh, stride, padding)?;
    let (ow, pl) = conv_geometry(w, kw, stride, padding)?;

    // im2col: rows indexed by (n, oy, ox), cols by (dy, dx, cin) — the
    // column order matches the kernel's row-major [kh,kw,cin] layout.
    let patch = kh * kw * cin;
    let rows = n * oh * ow;
    let mut cols = Tensor::<E>::zeros(&[rows, patch]);
    {
        let cd = cols.data_mut();
        let xd = xv.data();
        let mut r = 0usize;
        for b in 0..n {
            let xb = b * h * w * cin;
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = r * patch;
                    for dy in 0..kh {
                        let iy = (oy * stride + dy) as isize - pt as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for dx in 0..kw {
                            let ix = (ox * stride + dx) as isize - pl as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let src = xb + (iy as usize * w + ix as usize) * cin;
                            let dst = base + (dy * kw + dx) * cin;
                            cd[dst..dst + cin].copy_from_slice(&xd[src..src + cin]);
                        }
                    }
                    r += 1;
                }
            }
        }
    }

    let kmat = kv.reshape(&[patch, cout])?;
    let flat = crate::tensor::matmul(&cols, &kmat)?;
    let mut out = flat.reshape(&[n, oh, ow, cout])?;

    let bv = match bias {
        Some(b) => {
            let bt = tape.value(b);
            if bt.shape() != [cout] {
                return Err(Error::Shape(format!(
                    "conv2d bias shape {:?}, expected [{cout}]",
                    bt.shape()
                )));
            }
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v = *v + bt.data()[i % cout];
            }
            Some(b)
        }
        None => None,
    };

    let mut parents = vec![x, kernel];
    if let Some(b) = bv {
        parents.push(b);
    }
    let in_shape = xv.shape().to_vec();
    let k_shape = kv.shape().to_vec();
    let has_bias = bv.is_some();
    Ok(tape.push(
        out,
        parents,
        Some(Box::new(move |g| {
            let gflat = g.reshape(&[rows, cout]).unwrap();
            // dK = colsᵀ · g
            let colst = crate::tensor::transpose_last2(&cols).unwrap();
            let dk = crate::tensor::matmul(&colst, &gflat).unwrap().reshape(&k_shape).unwrap();
            // dX = col2im(g · Kᵀ)
            let kt = crate::tensor::transpose_last2(&kmat).unwrap();
            let dcols = crate::tensor::matmul(&gflat, &kt).unwrap();
            let mut dx = Tensor::<E>::zeros(&in_shape);
            {
                let dxd = dx.data_mut();
                let dcd = dcols.data();
                let mut r = 0usize;
                for b in 0..n {
                    let xb = b * h * w * cin;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let base = r * patch;
                            for dy in 0..kh {
                                let iy = (oy * stride + dy) as isize - pt as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for dx_ in 0..kw {
                                    let ix = (ox * stride + dx_) as isize - pl as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let dst = xb + (iy as usize * w + ix as usize) * cin;
                                    let src = base + (dy * kw + dx_) * cin;
                                    for c in 0..cin {
                                        dxd[dst + c] += dcd[src + c];
                                    }
                                }
                            }
                            r += 1;
                        }
                    }
                }
            }
            let mut grads = vec![dx, dk];
            if has_bias {
                let mut db = Tensor::<E>::zeros(&[cout]);
                for (i, &v) in gflat.data().iter().enumerate() {
                    db.data_mut()[i % cout] += v;
                }
                grads.push(db);
            }
            grads
        })),
    ))
}

// ── pooling ──────────────────────────────────────────────────────────

/// Max pooling over NHWC; gradient routes to the first (row-major)
/// maximum in each window.
pub fn maxpool2d<E: Element>(tape: &Tape<E>, x: Var, window: usize, stride: usize) -> Result<Var> {
    let xv = tape.value(x);
    if xv.rank() != 4 {
        return Err(Error::Shape(format!("maxpool2d expects NHWC, got {:?}", xv.shape())));
    }
    let [n, h, w, c] = [xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]];
    if window > h || window > w {
        return Err(Error::Shape(format!(
            "maxpool window {window} exceeds spatial dims {h}x{w}"
        )));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Tensor::<E>::zeros(&[n, oh, ow, c]);
    let mut arg = vec![0usize; out.len()];
    {
        let od = out.data_mut();
        let xd = xv.data();
        let mut o = 0usize;
        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let mut best = E::neg_infinity();
                        let mut best_i = 0usize;
                        for dy in 0..window {
                            for dx in 0..window {
                                let iy = oy * stride + dy;
                                let ix = ox * stride + dx;
                                let i = ((b * h + iy) * w + ix) * c + ch;
                                if xd[i] > best {
                                    best = xd[i];
                                    best_i = i;
                                }
                            }
                        }
                        od[o] = best;
                        arg[o] = best_i;
                        o += 1;
                    }
                }
            }
        }
    }
    let in_shape = xv.shape().to_vec();
    Ok(tape.push(
        out,
        vec![x],
        Some(Box::new(move |g| {
            let mut dx = Tensor::<E>::zeros(&in_shape);
            for (o, &src) in arg.iter().enumerate() {
                dx.data_mut()[src] += g.data()[o];
            }
            vec![dx]
        })),
    ))
}

/// Global average pooling: [N,H,W,C] -> [N,C]; each spatial cell
/// receives 1/(H·W) of the gradient.
pub fn global_avg_pool<E: Element>(tape: &Tape<E>, x: Var) -> Result<Var> {
    let shape = tape.shape(x);
    if shape.len() != 4 {
        return Err(Error::Shape(format!("global_avg_pool expects NHWC, got {shape:?}")));
    }
    tape.reduce(crate::tape::ReduceOp::Mean, x, &[1, 2], false)
}

// ── dense ────────────────────────────────────────────────────────────

/// x·W + b with an optional activation.
pub fn dense<E: Element>(
    tape: &Tape<E>,
    x: Var,
    weights: Var,
    bias: Var,
    activation: DenseActivation,
) -> Result<Var> {
    let z = tape.matmul(x, weights)?;
    let z = tape.add(z, bias)?;
    match activation {
        DenseActivation::None => Ok(z),
        DenseActivation::Relu => tape.relu(z),
        DenseActivation::Softmax => {
            let axis = tape.shape(z).len() - 1;
            tape.softmax(z, axis)
        }
    }
}

// ── normalization ────────────────────────────────────────────────────

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;
pub const LN_EPS: f64 = 1e-5;

/// Running statistics for one batch_norm layer.
#[derive(Clone, Debug)]
pub struct BnStats<E: Element> {
    pub mean: Tensor<E>,
    pub var: Tensor<E>,
    pub initialized: bool,
}

impl<E: Element> BnStats<E> {
    pub fn new(channels: usize) -> Self {
        BnStats {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::ones(&[channels]),
            initialized: false,
        }
    }
}

/// Per-channel batch normalization over NHWC. Train mode normalizes by
/// batch statistics (biased variance) and returns updated running
/// stats; infer mode uses the recorded running stats.
pub fn batch_norm<E: Element>(
    tape: &Tape<E>,
    x: Var,
    gamma: Var,
    beta: Var,
    stats: &BnStats<E>,
    mode: Mode,
) -> Result<(Var, Option<BnStats<E>>)> {
    let xv = tape.value(x);
    if xv.rank() != 4 {
        return Err(Error::Shape(format!("batch_norm expects NHWC, got {:?}", xv.shape())));
    }
    let c = xv.shape()[3];
    let m = xv.len() / c;
    let gv = tape.value(gamma);
    let bv = tape.value(beta);
    if gv.shape() != [c] || bv.shape() != [c] {
        return Err(Error::Shape("batch_norm gamma/beta must be per-channel".into()));
    }
    let eps = E::from_f64(BN_EPS);

    let (mean, var) = match mode {
        Mode::Train => {
            let mut mean = vec![E::zero(); c];
            for (i, &v) in xv.data().iter().enumerate() {
                mean[i % c] += v;
            }
            let minv = E::from_f64(1.0 / m as f64);
            for v in &mut mean {
                *v = *v * minv;
            }
            let mut var = vec![E::zero(); c];
            for (i, &v) in xv.data().iter().enumerate() {
                let d = v - mean[i % c];
                var[i % c] += d * d;
            }
            for v in &mut var {
                *v = *v * minv;
            }
            (mean, var)
        }
        Mode::Infer => {
            if !stats.initialized {
                return Err(Error::Data(
                    "batch_norm inference before any statistics were recorded".into(),
                ));
            }
            (stats.mean.data().to_vec(), stats.var.data().to_vec())
        }
    };

    let inv_std: Vec<E> = var.iter().map(|&v| E::one() / (v + eps).sqrt()).collect();
    let mut xhat = xv.clone();
    for (i, v) in xhat.data_mut().iter_mut().enumerate() {
        let ch = i % c;
        *v = (*v - mean[ch]) * inv_std[ch];
    }
    let mut out = xhat.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let ch = i % c;
        *v = gv.data()[ch] * *v + bv.data()[ch];
    }

    let new_stats = match mode {
        Mode::Train => {
            let mom = E::from_f64(BN_MOMENTUM);
            let one_m = E::one() - mom;
            let (mut nm, mut nv) = (stats.mean.clone(), stats.var.clone());
            for ch in 0..c {
                let (om, ov) = if stats.initialized {
                    (stats.mean.data()[ch], stats.var.data()[ch])
                } else {
                    // first batch seeds the running stats directly
                    (mean[ch], var[ch])
                };
                nm.data_mut()[ch] = mom * om + one_m * mean[ch];
                nv.data_mut()[ch] = mom * ov + one_m * var[ch];
            }
            Some(BnStats { mean: nm, var: nv, initialized: true })
        }
        Mode::Infer => None,
    };

    let gvc = gv.clone();
    let train = mode == Mode::Train;
    let out_var = tape.push(
        out,
        vec![x, gamma, beta],
        Some(Box::new(move |g| {
            let mut dgamma = vec![E::zero(); c];
            let mut dbeta = vec![E::zero(); c];
            for (i, &gi) in g.data().iter().enumerate() {
                let ch = i % c;
                dgamma[ch] += gi * xhat.data()[i];
                dbeta[ch] += gi;
            }
            let mut dx = g.clone();
            if train {
                // dx = γ/√(σ²+ε) · (g − mean(g) − x̂·mean(g·x̂)) per channel
                let minv = E::from_f64(1.0 / m as f64);
                for (i, v) in dx.data_mut().iter_mut().enumerate() {
                    let ch = i % c;
                    *v = gvc.data()[ch]
                        * inv_std[ch]
                        * (g.data()[i]
                            - dbeta[ch] * minv
                            - xhat.data()[i] * dgamma[ch] * minv);
                }
            } else {
                for (i, v) in dx.data_mut().iter_mut().enumerate() {
                    let ch = i % c;
                    *v = g.data()[i] * gvc.data()[ch] * inv_std[ch];
                }
            }
            vec![
                dx,
                Tensor::from_vec(dgamma),
                Tensor::from_vec(dbeta),
            ]
        })),
    );
    Ok((out_var, new_stats))
}

/// Layer normalization over the last axis with per-feature affine.
pub fn layer_norm<E: Element>(tape: &Tape<E>, x: Var, gamma: Var, beta: Var) -> Result<Var> {
    let xv = tape.value(x);
    let d = *xv.shape().last().unwrap();
    let rows = xv.len() / d;
    let gv = tape.value(gamma);
    let bv = tape.value(beta);
    if gv.shape() != [d] || bv.shape() != [d] {
        return Err(Error::Shape(format!(
            "layer_norm gamma/beta must have shape [{d}]"
        )));
    }
    let eps = E::from_f64(LN_EPS);

    let mut xhat = xv.clone();
    let mut inv_std = vec![E::zero(); rows];
    for r in 0..rows {
        let row = &xv.data()[r * d..(r + 1) * d];
        let dinv = E::from_f64(1.0 / d as f64);
        let mut mu = E::zero();
        for &v in row {
            mu += v;
        }
        mu = mu * dinv;
        let mut var = E::zero();
        for &v in row {
            let dv = v - mu;
            var += dv * dv;
        }
        var = var * dinv;
        let istd = E::one() / (var + eps).sqrt();
        inv_std[r] = istd;
        for (j, v) in xhat.data_mut()[r * d..(r + 1) * d].iter_mut().enumerate() {
            *v = (row[j] - mu) * istd;
        }
    }
    let mut out = xhat.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let j = i % d;
        *v = gv.data()[j] * *v + bv.data()[j];
    }

    let gvc = gv.clone();
    Ok(tape.push(
        out,
        vec![x, gamma, beta],
        Some(Box::new(move |g| {
            let mut dgamma = vec![E::zero(); d];
            let mut dbeta = vec![E::zero(); d];
            for (i, &gi) in g.data().iter().enumerate() {
                let j = i % d;
                dgamma[j] += gi * xhat.data()[i];
                dbeta[j] += gi;
            }
            let mut dx = g.clone();
            let dinv = E::from_f64(1.0 / d as f64);
            for r in 0..rows {
                let mut mean_gg = E::zero();
                let mut mean_ggx = E::zero();
                for j in 0..d {
                    let gg = g.data()[r * d + j] * gvc.data()[j];
                    mean_gg += gg;
                    mean_ggx += gg * xhat.data()[r * d + j];
                }
                mean_gg = mean_gg * dinv;
                mean_ggx = mean_ggx * dinv;
                for j in 0..d {
                    let i = r * d + j;
                    let gg = g.data()[i] * gvc.data()[j];
                    dx.data_mut()[i] = inv_std[r] * (gg - mean_gg - xhat.data()[i] * mean_ggx);
                }
            }
            vec![dx, Tensor::from_vec(dgamma), Tensor::from_vec(dbeta)]
        })),
    ))
}

// ── dropout ──────────────────────────────────────────────────────────

/// Inverted dropout: train mode zeroes with probability `rate` and
/// scales survivors by 1/(1-rate); infer mode is the identity.
pub fn dropout<E: Element>(
    tape: &Tape<E>,
    x: Var,
    rate: f64,
    mode: Mode,
    rng: &mut RngState,
) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    let xv = tape.value(x);
    if mode == Mode::Infer || rate == 0.0 {
        let out = xv.clone();
        return Ok(tape.push(out, vec![x], Some(Box::new(|g| vec![g.clone()]))));
    }
    let keep_scale = E::from_f64(1.0 / (1.0 - rate));
    let mask: Vec<E> = (0..xv.len())
        .map(|_| if rng.bernoulli(rate) { E::zero() } else { keep_scale })
        .collect();
    let mask = Tensor::new(xv.shape().to_vec(), mask)?;
    let mut out = xv.clone();
    for (v, &m) in out.data_mut().iter_mut().zip(mask.data()) {
        *v = *v * m;
    }
    Ok(tape.push(
        out,
        vec![x],
        Some(Box::new(move |g| {
            let mut dx = g.clone();
            for (v, &m) in dx.data_mut().iter_mut().zip(mask.data()) {
                *v = *v * m;
            }
            vec![dx]
        })),
    ))
}
