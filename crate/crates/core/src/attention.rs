//! Attention mechanisms: custom spatial attention, grouped-query
//! attention (GQA), and multi-head attention (MHA = GQA with G = H).

use crate::error::{Error, Result};
use crate::layers::{conv2d, glorot_uniform, he_uniform, LayerParams, Padding, RngState};
use crate::tape::{ReduceOp, Tape, Var};
use crate::tensor::{Element, Tensor};

/// Head/group geometry for MHA and GQA.
#[derive(Clone, Copy, Debug)]
pub struct AttentionConfig {
    pub model_dim: usize,
    pub num_heads: usize,
    pub num_kv_groups: usize,
}

impl AttentionConfig {
    pub fn new(model_dim: usize, num_heads: usize, num_kv_groups: usize) -> Result<Self> {
        let cfg = AttentionConfig { model_dim, num_heads, num_kv_groups };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let (d, h, g) = (self.model_dim, self.num_heads, self.num_kv_groups);
        if d == 0 || h == 0 || g == 0 {
            return Err(Error::Config("attention dims must be positive".into()));
        }
        if d % h != 0 {
            return Err(Error::Config(format!("model dim {d} not divisible by {h} heads")));
        }
        if h % g != 0 || g > h {
            return Err(Error::Config(format!("{h} heads not divisible by {g} kv groups")));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    /// Degenerate config where GQA coincides with MHA.
    pub fn full_heads(model_dim: usize, num_heads: usize) -> Result<Self> {
        Self::new(model_dim, num_heads, num_heads)
    }
}

/// Tape handles for one attention layer's projections.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Output plus the row-stochastic attention weights [N,H,T,T].
pub struct AttentionOutput {
    pub output: Var,
    pub weights: Var,
}

/// He-uniform projection parameters for one attention layer.
pub fn init_attention_params<E: Element>(
    name: &str,
    cfg: &AttentionConfig,
    rng: &mut RngState,
) -> Result<LayerParams<E>> {
    cfg.validate()?;
    let d = cfg.model_dim;
    let kv = cfg.num_kv_groups * cfg.head_dim();
    let mut p = LayerParams::new(name);
    p.add("wq", glorot_uniform(&[d, d], d, d, rng), true);
    p.add("bq", Tensor::zeros(&[d]), true);
    p.add("wk", glorot_uniform(&[d, kv], d, kv, rng), true);
    p.add("bk", Tensor::zeros(&[kv]), true);
    p.add("wv", glorot_uniform(&[d, kv], d, kv, rng), true);
    p.add("bv", Tensor::zeros(&[kv]), true);
    p.add("wo", glorot_uniform(&[d, d], d, d, rng), true);
    p.add("bo", Tensor::zeros(&[d]), true);
    Ok(p)
}

/// x[N,T,din] · w[din,dout] + b, returned as [N,T,dout].
fn project<E: Element>(tape: &Tape<E>, x: Var, w: Var, b: Var) -> Result<Var> {
    let [n, t, din] = shape3(tape, x)?;
    let dout = tape.shape(w)[1];
    let flat = tape.reshape(x, &[n * t, din])?;
    let z = tape.matmul(flat, w)?;
    let z = tape.add(z, b)?;
    tape.reshape(z, &[n, t, dout])
}

fn shape3<E: Element>(tape: &Tape<E>, x: Var) -> Result<[usize; 3]> {
    let s = tape.shape(x);
    if s.len() != 3 {
        return Err(Error::Shape(format!("expected [N,T,d] tokens, got {s:?}")));
    }
    Ok([s[0], s[1], s[2]])
}

/// Repeat each KV group for its block of query heads:
/// [N,G,T,hd] -> [N,H,T,hd], head h reads group floor(h·G/H).
/// Backward sums head gradients back onto their group.
fn expand_groups<E: Element>(tape: &Tape<E>, kv: Var, num_heads: usize) -> Result<Var> {
    let s = tape.shape(kv);
    let [n, g, t, hd] = [s[0], s[1], s[2], s[3]];
    if num_heads == g {
        return Ok(kv);
    }
    let v = tape.value(kv);
    let mut out = Tensor::<E>::zeros(&[n, num_heads, t, hd]);
    let block = t * hd;
    for b in 0..n {
        for h in 0..num_heads {
            let grp = h * g / num_heads;
            let src = (b * g + grp) * block;
            let dst = (b * num_heads + h) * block;
            out.data_mut()[dst..dst + block].copy_from_slice(&v.data()[src..src + block]);
        }
    }
    Ok(tape.push(
        out,
        vec![kv],
        Some(Box::new(move |grad| {
            let mut dkv = Tensor::<E>::zeros(&[n, g, t, hd]);
            for b in 0..n {
                for h in 0..num_heads {
                    let grp = h * g / num_heads;
                    let dst = (b * g + grp) * block;
                    let src = (b * num_heads + h) * block;
                    for i in 0..block {
                        dkv.data_mut()[dst + i] += grad.data()[src + i];
                    }
                }
            }
            vec![dkv]
        })),
    ))
}

fn attention_core<E: Element>(
    tape: &Tape<E>,
    x: Var,
    vars: &AttentionVars,
    cfg: &AttentionConfig,
) -> Result<AttentionOutput> {
    cfg.validate()?;
    let [n, t, d] = shape3(tape, x)?;
    if d != cfg.model_dim {
        return Err(Error::Shape(format!(
            "token dim {d} does not match attention model dim {}",
            cfg.model_dim
        )));
    }
    let heads = cfg.num_heads;
    let groups = cfg.num_kv_groups;
    let hd = cfg.head_dim();

    let q = project(tape, x, vars.wq, vars.bq)?;
    let k = project(tape, x, vars.wk, vars.bk)?;
    let v = project(tape, x, vars.wv, vars.bv)?;

    // [N,T,H,hd] -> [N,H,T,hd]
    let q = tape.reshape(q, &[n, t, heads, hd])?;
    let q = tape.permute(q, &[0, 2, 1, 3])?;
    let k = tape.reshape(k, &[n, t, groups, hd])?;
    let k = tape.permute(k, &[0, 2, 1, 3])?;
    let v = tape.reshape(v, &[n, t, groups, hd])?;
    let v = tape.permute(v, &[0, 2, 1, 3])?;
    let k = expand_groups(tape, k, heads)?;
    let v = expand_groups(tape, v, heads)?;

    let kt = tape.permute(k, &[0, 1, 3, 2])?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, E::from_f64(1.0 / (hd as f64).sqrt()))?;
    let weights = tape.softmax(scores, 3)?;

    let ctx = tape.matmul(weights, v)?;
    let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = tape.reshape(ctx, &[n, t, d])?;
    let output = project(tape, ctx, vars.wo, vars.bo)?;
    Ok(AttentionOutput { output, weights })
}

/// Standard multi-head attention (every head has its own K/V).
pub fn multi_head_attention<E: Element>(
    tape: &Tape<E>,
    x: Var,
    vars: &AttentionVars,
    cfg: &AttentionConfig,
) -> Result<AttentionOutput> {
    if cfg.num_kv_groups != cfg.num_heads {
        return Err(Error::Config(format!(
            "multi_head_attention requires G = H, got G={} H={}",
            cfg.num_kv_groups, cfg.num_heads
        )));
    }
    attention_core(tape, x, vars, cfg)
}

/// Grouped-query attention: H query heads share G key/value groups
/// (contiguous blocks of heads per group).
pub fn grouped_query_attention<E: Element>(
    tape: &Tape<E>,
    x: Var,
    vars: &AttentionVars,
    cfg: &AttentionConfig,
) -> Result<AttentionOutput> {
    attention_core(tape, x, vars, cfg)
}

/// Spatial attention gate: sigmoid(conv(concat(channel-mean, channel-max)))
/// multiplied into the feature map. The gate is returned for inspection.
pub fn spatial_attention<E: Element>(
    tape: &Tape<E>,
    x: Var,
    gate_kernel: Var,
    gate_bias: Var,
) -> Result<(Var, Var)> {
    let ks = tape.shape(gate_kernel);
    if ks.len() != 4 || ks[2] != 2 || ks[3] != 1 {
        return Err(Error::Shape(format!(
            "spatial attention gate kernel must be [k,k,2,1], got {ks:?}"
        )));
    }
    if ks[0] % 2 == 0 || ks[0] != ks[1] {
        return Err(Error::Config(format!(
            "spatial attention kernel must be square and odd, got {}x{}",
            ks[0], ks[1]
        )));
    }
    let mean_c = tape.reduce(ReduceOp::Mean, x, &[3], true)?;
    let max_c = tape.reduce(ReduceOp::Max, x, &[3], true)?;
    let stacked = tape.concat(&[mean_c, max_c], 3)?;
    let pre = conv2d(tape, stacked, gate_kernel, Some(gate_bias), 1, Padding::Same)?;
    let gate = tape.sigmoid(pre)?;
    let gated = tape.mul(x, gate)?;
    Ok((gated, gate))
}

/// He-uniform parameters for the spatial attention gate conv.
pub fn init_spatial_attention_params<E: Element>(
    name: &str,
    kernel_size: usize,
    rng: &mut RngState,
) -> LayerParams<E> {
    let mut p = LayerParams::new(name);
    let fan_in = kernel_size * kernel_size * 2;
    p.add("kernel", he_uniform(&[kernel_size, kernel_size, 2, 1], fan_in, rng), true);
    p.add("bias", Tensor::zeros(&[1]), true);
    p
}

/// Row-major spatial flattening [N,H,W,C] -> [N,H·W,C].
pub fn tokens_from_feature_map<E: Element>(tape: &Tape<E>, x: Var) -> Result<Var> {
    let s = tape.shape(x);
    if s.len() != 4 {
        return Err(Error::Shape(format!("expected NHWC feature map, got {s:?}")));
    }
    tape.reshape(x, &[s[0], s[1] * s[2], s[3]])
}

/// Inverse of `tokens_from_feature_map`; `height`·`width` must equal T.
pub fn feature_map_from_tokens<E: Element>(
    tape: &Tape<E>,
    x: Var,
    height: usize,
    width: usize,
) -> Result<Var> {
    let [n, t, c] = shape3(tape, x)?;
    if height * width != t {
        return Err(Error::Shape(format!(
            "cannot fold {t} tokens into {height}x{width} map"
        )));
    }
    tape.reshape(x, &[n, height, width, c])
}
