//! Acceptance suite: one test per criterion, each printing a
//! `criterion N: PASS/FAIL` line (run with `-- --nocapture` to see
//! the lines as they complete).

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use indexmap::IndexMap;

use admri::attention::{
    grouped_query_attention, init_attention_params, init_spatial_attention_params,
    multi_head_attention, spatial_attention, AttentionConfig, AttentionVars,
};
use admri::data::{self, ManifestEntry, Split};
use admri::explain::{faster_scorecam, gradcam, render_overlay, scorecam, xgradcam};
use admri::layers::{
    batch_norm, conv2d, dense, dropout, global_avg_pool, layer_norm, maxpool2d, BnStats,
    DenseActivation, LayerParams, Mode, Padding, RngState,
};
use admri::metrics;
use admri::model::{
    build_model, init_multi_residual_params, multi_residual_block, Model, ModelConfig,
    MultiResidualStats, DEFAULT_CAPTURE,
};
use admri::tape::{finite_difference_check, rel_err, ReduceOp, Tape, Var};
use admri::tensor::Tensor;
use admri::train::{
    categorical_cross_entropy, SchedulerKind, SchedulerState,
};
use admri::Result;

fn report(n: usize, name: &str, outcome: std::result::Result<(), String>) {
    match outcome {
        Ok(()) => println!("criterion {n}: PASS — {name}"),
        Err(e) => {
            println!("criterion {n}: FAIL — {name}: {e}");
            panic!("criterion {n} failed: {e}");
        }
    }
}

fn ok(cond: bool, msg: String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg)
    }
}

// ── criterion 1: gradient integrity ──────────────────────────────────

fn fd<F>(name: &str, x: &Tensor<f64>, f: F) -> std::result::Result<(), String>
where
    F: Fn(&Tape<f64>, Var) -> Result<Var>,
{
    let check = finite_difference_check(&f, x, 1e-5)
        .map_err(|e| format!("{name}: {e}"))?;
    ok(
        check.max_rel_err < 1e-5,
        format!("{name}: FD rel err {}", check.max_rel_err),
    )
}

fn attn_vars(tape: &Tape<f64>, p: &LayerParams<f64>) -> AttentionVars {
    let leaf = |k: &str| tape.leaf(p.get(k).clone());
    AttentionVars {
        wq: leaf("wq"),
        bq: leaf("bq"),
        wk: leaf("wk"),
        bk: leaf("bk"),
        wv: leaf("wv"),
        bv: leaf("bv"),
        wo: leaf("wo"),
        bo: leaf("bo"),
    }
}

fn criterion_1() -> std::result::Result<(), String> {
    let started = Instant::now();
    let mut rng = RngState::new(100, 0);

    // every layer, f64, central differences
    let x = rng.uniform_tensor::<f64>(&[2, 6, 6, 3], -1.0, 1.0);
    let k = rng.uniform_tensor::<f64>(&[3, 3, 3, 4], -0.5, 0.5);
    let b = rng.uniform_tensor::<f64>(&[4], -0.5, 0.5);
    fd("conv2d", &x, |t, v| {
        let y = conv2d(t, v, t.leaf(k.clone()), Some(t.leaf(b.clone())), 1, Padding::Same)?;
        let sq = t.mul(y, y)?;
        t.reduce(ReduceOp::Sum, sq, &[0, 1, 2, 3], false)
    })?;
    fd("maxpool2d", &x, |t, v| {
        let y = maxpool2d(t, v, 2, 2)?;
        let sq = t.mul(y, y)?;
        t.reduce(ReduceOp::Sum, sq, &[0, 1, 2, 3], false)
    })?;
    fd("global_avg_pool", &x, |t, v| {
        let y = global_avg_pool(t, v)?;
        let sq = t.mul(y, y)?;
        t.reduce(ReduceOp::Sum, sq, &[0, 1], false)
    })?;

    let gamma = rng.uniform_tensor::<f64>(&[3], 0.5, 1.5);
    let beta = rng.uniform_tensor::<f64>(&[3], -0.5, 0.5);
    for mode in [Mode::Train, Mode::Infer] {
        let mut stats = BnStats::<f64>::new(3);
        stats.mean = rng.uniform_tensor(&[3], -0.2, 0.2);
        stats.var = rng.uniform_tensor(&[3], 0.5, 1.5);
        stats.initialized = true;
        fd(&format!("batch_norm[{mode:?}]"), &x, |t, v| {
            let (y, _) = batch_norm(
                t,
                v,
                t.leaf(gamma.clone()),
                t.leaf(beta.clone()),
                &stats,
                mode,
            )?;
            let sq = t.mul(y, y)?;
            t.reduce(ReduceOp::Sum, sq, &[0, 1, 2, 3], false)
        })?;
    }
    let tokens = rng.uniform_tensor::<f64>(&[2, 5, 3], -1.0, 1.0);
    fd("layer_norm", &tokens, |t, v| {
        let y = layer_norm(t, v, t.leaf(gamma.clone()), t.leaf(beta.clone()))?;
        let sq = t.mul(y, y)?;
        t.reduce(ReduceOp::Sum, sq, &[0, 1, 2], false)
    })?;

    let flat = rng.uniform_tensor::<f64>(&[3, 4], -1.0, 1.0);
    let dw = rng.uniform_tensor::<f64>(&[4, 2], -1.0, 1.0);
    let db = rng.uniform_tensor::<f64>(&[2], -0.5, 0.5);
    for act in [DenseActivation::None, DenseActivation::Relu, DenseActivation::Softmax] {
        fd(&format!("dense[{act:?}]"), &flat, |t, v| {
            let y = dense(t, v, t.leaf(dw.clone()), t.leaf(db.clone()), act)?;
            let sq = t.mul(y, y)?;
            t.reduce(ReduceOp::Sum, sq, &[0, 1], false)
        })?;
    }
    fd("dropout", &x, |t, v| {
        // fixed stream so every FD probe sees the same mask
        let mut r = RngState::new(7, 7);
        let y = dropout(t, v, 0.4, Mode::Train, &mut r)?;
        let sq = t.mul(y, y)?;
        t.reduce(ReduceOp::Sum, sq, &[0, 1, 2, 3], false)
    })?;

    let acfg = AttentionConfig::new(8, 2, 1).map_err(|e| e.to_string())?;
    let ap = init_attention_params::<f64>("a", &acfg, &mut rng).map_err(|e| e.to_string())?;
    let atok = rng.uniform_tensor::<f64>(&[1, 4, 8], -1.0, 1.0);
    fd("grouped_query_attention", &atok, |t, v| {
        let vars = attn_vars(t, &ap);
        let out = grouped_query_attention(t, v, &vars, &acfg)?;
        let sq = t.mul(out.output, out.output)?;
        t.reduce(ReduceOp::Sum, sq, &[0, 1, 2], false)
    })?;
    let sp = init_spatial_attention_params::<f64>("sa", 3, &mut rng);
    fd("spatial_attention", &x, |t, v| {
        let (y, _) = spatial_attention(t, v, t.leaf(sp.get("kernel").clone()), t.leaf(sp.get("bias").clone()))?;
        let sq = t.mul(y, y)?;
        t.reduce(ReduceOp::Sum, sq, &[0, 1, 2, 3], false)
    })?;
    let mrp = init_multi_residual_params::<f64>("mr", 3, 4, &mut rng);
    fd("multi_residual_block", &x, |t, v| {
        let mut vars = IndexMap::new();
        for (key, pt) in &mrp.tensors {
            vars.insert(key.clone(), t.leaf(pt.tensor.clone()));
        }
        let mut stats = MultiResidualStats::<f64>::new(4);
        for s in [&mut stats.conv1, &mut stats.conv3, &mut stats.conv5] {
            s.var = Tensor::full(&[4], 1.0);
            s.initialized = true;
        }
        let mk = |ks: &str| {
            [
                vars[&format!("{ks}_kernel")],
                vars[&format!("{ks}_bias")],
                vars[&format!("{ks}_gamma")],
                vars[&format!("{ks}_beta")],
            ]
        };
        let mr_vars = admri::model::MultiResidualVars {
            conv1: mk("conv1"),
            conv3: mk("conv3"),
            conv5: mk("conv5"),
            skip_kernel: vars.get("skip_kernel").copied(),
        };
        let (y, _) = multi_residual_block(t, v, &mr_vars, &stats, Mode::Infer)?;
        let sq = t.mul(y, y)?;
        t.reduce(ReduceOp::Sum, sq, &[0, 1, 2, 3], false)
    })?;

    // full reduced model: analytic vs numeric loss gradient per
    // picked parameter, infer mode with warmed statistics
    let cfg = ModelConfig::for_size(16, 3);
    let mut model = build_model::<f64>(&cfg, &mut rng).map_err(|e| e.to_string())?;
    let tape = Tape::<f64>::new();
    let warm = tape.leaf(rng.uniform_tensor(&[4, 16, 16, 3], 0.0, 1.0));
    model.forward(&tape, warm, None, &mut rng).map_err(|e| e.to_string())?;
    model.set_mode(Mode::Infer);

    let x = rng.uniform_tensor::<f64>(&[2, 16, 16, 3], 0.0, 1.0);
    let mut y = Tensor::<f64>::zeros(&[2, 3]);
    y.set(&[0, 0], 1.0);
    y.set(&[1, 2], 1.0);
    let loss_of = |model: &mut Model<f64>| -> std::result::Result<f64, String> {
        let tape = Tape::<f64>::new();
        let mut r = RngState::new(0, 0);
        let pass = model
            .forward(&tape, tape.leaf(x.clone()), None, &mut r)
            .map_err(|e| e.to_string())?;
        let loss = categorical_cross_entropy(&tape, pass.probs, tape.leaf(y.clone()))
            .map_err(|e| e.to_string())?;
        Ok(tape.value(loss).scalar_value())
    };
    let tape = Tape::<f64>::new();
    let mut r = RngState::new(0, 0);
    let pass = model
        .forward(&tape, tape.leaf(x.clone()), None, &mut r)
        .map_err(|e| e.to_string())?;
    let loss = categorical_cross_entropy(&tape, pass.probs, tape.leaf(y.clone()))
        .map_err(|e| e.to_string())?;
    let grads = tape.backward(loss).map_err(|e| e.to_string())?;
    for pick in [
        "stem0/kernel",
        "stem1/gamma",
        "spatial_attention/kernel",
        "multi_residual/conv5_kernel",
        "ln1/gamma",
        "gqa/wv",
        "mha/wo",
        "head1/weights",
        "head2/bias",
    ] {
        let var = pass.param_vars[pick];
        let analytic = grads
            .get(var)
            .ok_or_else(|| format!("no gradient for {pick}"))?
            .data()[0];
        let (block, key) = pick.split_once('/').unwrap();
        let h = 1e-5;
        let base = model.params[block].get(key).data()[0];
        model.params.get_mut(block).unwrap().get_mut(key).data_mut()[0] = base + h;
        let up = loss_of(&mut model)?;
        model.params.get_mut(block).unwrap().get_mut(key).data_mut()[0] = base - h;
        let down = loss_of(&mut model)?;
        model.params.get_mut(block).unwrap().get_mut(key).data_mut()[0] = base;
        let numeric = (up - down) / (2.0 * h);
        let rel = rel_err(analytic, numeric);
        ok(rel < 1e-5, format!("model {pick}: FD rel err {rel}"))?;
    }

    let elapsed = started.elapsed();
    ok(
        elapsed.as_secs() < 180,
        format!("suite took {elapsed:?}, budget is 3 min"),
    )
}

#[test]
fn acceptance_1_gradient_integrity() {
    report(1, "gradient integrity (layers + reduced model, f64 FD < 1e-5, < 3 min)", criterion_1());
}

// ── criterion 2: oracle equivalence ──────────────────────────────────

fn conv_oracle(
    x: &Tensor<f64>,
    k: &Tensor<f64>,
    stride: usize,
) -> Tensor<f64> {
    // "same" padding quadruple loop, accumulation in (dy, dx, ic) order
    let [n, h, w, cin] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [kh, kw, _, cout] = [k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]];
    let oh = h.div_ceil(stride);
    let ow = w.div_ceil(stride);
    let pt = ((oh - 1) * stride + kh).saturating_sub(h) / 2;
    let pl = ((ow - 1) * stride + kw).saturating_sub(w) / 2;
    let mut out = Tensor::<f64>::zeros(&[n, oh, ow, cout]);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for oc in 0..cout {
                    let mut acc = 0.0;
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
                            for ic in 0..cin {
                                acc += x.at(&[b, iy as usize, ix as usize, ic])
                                    * k.at(&[dy, dx, ic, oc]);
                            }
                        }
                    }
                    out.set(&[b, oy, ox, oc], acc);
                }
            }
        }
    }
    out
}

fn attention_scalar_oracle(
    x: &Tensor<f64>,
    p: &LayerParams<f64>,
    cfg: &AttentionConfig,
) -> Vec<f64> {
    let (n, t, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (heads, groups, hd) = (cfg.num_heads, cfg.num_kv_groups, cfg.head_dim());
    let kvdim = groups * hd;
    let lin = |inp: &[f64], w: &Tensor<f64>, b: &Tensor<f64>, dout: usize| -> Vec<f64> {
        let mut out = vec![0.0; dout];
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = b.data()[j];
            for (i, &xi) in inp.iter().enumerate() {
                acc += xi * w.data()[i * dout + j];
            }
            *o = acc;
        }
        out
    };
    let mut result = vec![0.0; n * t * d];
    for b in 0..n {
        let tok = |i: usize| &x.data()[(b * t + i) * d..(b * t + i) * d + d];
        let qs: Vec<Vec<f64>> = (0..t).map(|i| lin(tok(i), p.get("wq"), p.get("bq"), d)).collect();
        let ks: Vec<Vec<f64>> =
            (0..t).map(|i| lin(tok(i), p.get("wk"), p.get("bk"), kvdim)).collect();
        let vs: Vec<Vec<f64>> =
            (0..t).map(|i| lin(tok(i), p.get("wv"), p.get("bv"), kvdim)).collect();
        for i in 0..t {
            let mut concat = vec![0.0; d];
            for h in 0..heads {
                let grp = h * groups / heads;
                let mut logits = vec![0.0; t];
                for (j, l) in logits.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for e in 0..hd {
                        s += qs[i][h * hd + e] * ks[j][grp * hd + e];
                    }
                    *l = s / (hd as f64).sqrt();
                }
                let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
                let z: f64 = exps.iter().sum();
                for e in 0..hd {
                    let mut acc = 0.0;
                    for j in 0..t {
                        acc += exps[j] / z * vs[j][grp * hd + e];
                    }
                    concat[h * hd + e] = acc;
                }
            }
            let out = lin(&concat, p.get("wo"), p.get("bo"), d);
            result[(b * t + i) * d..(b * t + i) * d + d].copy_from_slice(&out);
        }
    }
    result
}

fn brute_force_rates(truth: &[usize], pred: &[usize], k: usize) -> (f64, Vec<f64>, Vec<f64>) {
    // (accuracy, per-class precision, per-class recall) by direct counting
    let n = truth.len();
    let acc = truth.iter().zip(pred).filter(|(a, b)| a == b).count() as f64 / n as f64;
    let mut precision = vec![0.0; k];
    let mut recall = vec![0.0; k];
    for c in 0..k {
        let tp = truth.iter().zip(pred).filter(|&(&t, &p)| t == c && p == c).count() as f64;
        let fp = truth.iter().zip(pred).filter(|&(&t, &p)| t != c && p == c).count() as f64;
        let fn_ = truth.iter().zip(pred).filter(|&(&t, &p)| t == c && p != c).count() as f64;
        precision[c] = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        recall[c] = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    }
    (acc, precision, recall)
}

fn criterion_2() -> std::result::Result<(), String> {
    let mut rng = RngState::new(200, 0);

    // conv2d vs quadruple loop: exact, 100 random cases
    for case in 0..100 {
        let n = 1 + (rng.next_u64() % 2) as usize;
        let h = 3 + (rng.next_u64() % 6) as usize;
        let w = 3 + (rng.next_u64() % 6) as usize;
        let cin = 1 + (rng.next_u64() % 3) as usize;
        let cout = 1 + (rng.next_u64() % 3) as usize;
        let ks = [1, 3, 5][(rng.next_u64() % 3) as usize];
        let stride = 1 + (rng.next_u64() % 2) as usize;
        let x = rng.uniform_tensor::<f64>(&[n, h, w, cin], -1.0, 1.0);
        let k = rng.uniform_tensor::<f64>(&[ks, ks, cin, cout], -1.0, 1.0);
        let tape = Tape::<f64>::new();
        let y = conv2d(&tape, tape.leaf(x.clone()), tape.leaf(k.clone()), None, stride, Padding::Same)
            .map_err(|e| format!("case {case}: {e}"))?;
        let got = tape.value(y);
        let want = conv_oracle(&x, &k, stride);
        ok(
            got.data() == want.data(),
            format!("case {case}: conv2d differs from quadruple-loop oracle"),
        )?;
    }

    // attention vs scalar-loop oracle < 1e-10
    for (d, heads, groups, t) in [(8, 2, 1, 4), (8, 2, 2, 5), (12, 4, 2, 3)] {
        let cfg = AttentionConfig::new(d, heads, groups).map_err(|e| e.to_string())?;
        let p = init_attention_params::<f64>("a", &cfg, &mut rng).map_err(|e| e.to_string())?;
        let x = rng.uniform_tensor::<f64>(&[2, t, d], -1.0, 1.0);
        let tape = Tape::<f64>::new();
        let vars = attn_vars(&tape, &p);
        let out = grouped_query_attention(&tape, tape.leaf(x.clone()), &vars, &cfg)
            .map_err(|e| e.to_string())?;
        let got = tape.value(out.output);
        let want = attention_scalar_oracle(&x, &p, &cfg);
        for (g, w) in got.data().iter().zip(&want) {
            ok(
                (g - w).abs() < 1e-10,
                format!("attention d={d} H={heads} G={groups}: {g} vs {w}"),
            )?;
        }
    }

    // metrics vs brute-force counting on 1000 random prediction sets
    for _ in 0..1000 {
        let k = 2 + (rng.next_u64() % 4) as usize;
        let n = 20 + (rng.next_u64() % 80) as usize;
        let truth: Vec<usize> = (0..n).map(|_| (rng.next_u64() % k as u64) as usize).collect();
        let pred: Vec<usize> = (0..n).map(|_| (rng.next_u64() % k as u64) as usize).collect();
        let cm = metrics::confusion(&truth, &pred, k).map_err(|e| e.to_string())?;
        let rep = metrics::basic_rates(&cm).map_err(|e| e.to_string())?;
        let (acc, precision, recall) = brute_force_rates(&truth, &pred, k);
        ok((rep.accuracy - acc).abs() < 1e-12, format!("accuracy {} vs {acc}", rep.accuracy))?;
        let mut macro_p = 0.0;
        let mut macro_r = 0.0;
        for c in 0..k {
            ok(
                (rep.per_class[c].precision - precision[c]).abs() < 1e-12,
                format!("class {c} precision"),
            )?;
            ok(
                (rep.per_class[c].recall - recall[c]).abs() < 1e-12,
                format!("class {c} recall"),
            )?;
            macro_p += precision[c] / k as f64;
            macro_r += recall[c] / k as f64;
        }
        ok((rep.precision_macro - macro_p).abs() < 1e-12, "macro precision".into())?;
        ok((rep.recall_macro - macro_r).abs() < 1e-12, "macro recall".into())?;
        ok((rep.precision_micro - acc).abs() < 1e-12, "micro precision".into())?;
    }
    Ok(())
}

#[test]
fn acceptance_2_oracle_equivalence() {
    report(2, "oracle equivalence (conv exact, attention < 1e-10, metrics < 1e-12)", criterion_2());
}

// ── criterion 3: degeneration identities ─────────────────────────────

fn frozen_toy_model(seed: u64) -> (Model<f32>, Tensor<f32>) {
    let cfg = ModelConfig::for_size(16, 3);
    let mut rng = RngState::new(seed, 0);
    let mut model = build_model::<f32>(&cfg, &mut rng).unwrap();
    let tape = Tape::<f32>::new();
    let warm = tape.leaf(rng.uniform_tensor(&[4, 16, 16, 3], 0.0, 1.0));
    model.forward(&tape, warm, None, &mut rng).unwrap();
    model.set_mode(Mode::Infer);
    let input = rng.uniform_tensor::<f32>(&[16, 16, 3], 0.0, 1.0);
    (model, input)
}

fn criterion_3() -> std::result::Result<(), String> {
    // GQA with G = H coincides with MHA
    for seed in 0..5u64 {
        let mut rng = RngState::new(300 + seed, 0);
        let cfg = AttentionConfig::new(16, 4, 4).map_err(|e| e.to_string())?;
        let p = init_attention_params::<f64>("a", &cfg, &mut rng).map_err(|e| e.to_string())?;
        let x = rng.uniform_tensor::<f64>(&[2, 6, 16], -1.0, 1.0);
        let tape = Tape::<f64>::new();
        let xv = tape.leaf(x);
        let vars = attn_vars(&tape, &p);
        let a = multi_head_attention(&tape, xv, &vars, &cfg).map_err(|e| e.to_string())?;
        let b = grouped_query_attention(&tape, xv, &vars, &cfg).map_err(|e| e.to_string())?;
        let diff = tape.value(a.output).max_abs_diff(&tape.value(b.output));
        ok(diff < 1e-5, format!("seed {seed}: GQA(G=H) vs MHA diff {diff}"))?;
    }

    let (mut model, input) = frozen_toy_model(301);
    let (g, _) = gradcam(&mut model, &input, 1, DEFAULT_CAPTURE).map_err(|e| e.to_string())?;
    let (x, _) =
        xgradcam(&mut model, &input, 1, DEFAULT_CAPTURE, 0.0, false).map_err(|e| e.to_string())?;
    let diff = g.values.max_abs_diff(&x.values);
    ok(diff < 1e-6, format!("xgradcam(0) vs gradcam diff {diff}"))?;

    let c = model.cfg.multi_residual_filters;
    let (a, wa) = scorecam(&mut model, &input, 2, DEFAULT_CAPTURE).map_err(|e| e.to_string())?;
    let (b, wb) =
        faster_scorecam(&mut model, &input, 2, DEFAULT_CAPTURE, c).map_err(|e| e.to_string())?;
    ok(a.values.data() == b.values.data(), "faster_scorecam(K=C) heatmap != scorecam".into())?;
    ok(a.raw.data() == b.raw.data(), "faster_scorecam(K=C) raw map != scorecam".into())?;
    ok(wa.weights == wb.weights, "faster_scorecam(K=C) weights != scorecam".into())?;
    Ok(())
}

#[test]
fn acceptance_3_degeneration_identities() {
    report(3, "degeneration identities (GQA≡MHA, xgradcam(0)≡gradcam, faster(K=C)≡scorecam)", criterion_3());
}

// ── criterion 4: micro-averaging fingerprint ─────────────────────────

fn criterion_4() -> std::result::Result<(), String> {
    let mut rng = RngState::new(400, 0);
    for i in 0..200 {
        let k = 2 + (rng.next_u64() % 5) as usize;
        let n = 10 + (rng.next_u64() % 200) as usize;
        let truth: Vec<usize> = (0..n).map(|_| (rng.next_u64() % k as u64) as usize).collect();
        let pred: Vec<usize> = (0..n).map(|_| (rng.next_u64() % k as u64) as usize).collect();
        let cm = metrics::confusion(&truth, &pred, k).map_err(|e| e.to_string())?;
        let rep = metrics::basic_rates(&cm).map_err(|e| e.to_string())?;
        let acc = rep.accuracy;
        for (name, v) in [
            ("precision", rep.precision_micro),
            ("recall", rep.recall_micro),
            ("f1", rep.f1_micro),
        ] {
            ok(
                (v - acc).abs() < 1e-12,
                format!("matrix {i}: micro {name} {v} != accuracy {acc}"),
            )?;
        }
    }
    Ok(())
}

#[test]
fn acceptance_4_micro_averaging_fingerprint() {
    report(4, "micro precision = recall = F1 = accuracy on 200 random matrices", criterion_4());
}

// ── criterion 5: synthetic end-to-end run ────────────────────────────

fn run_cli(args: &[&str], cwd: &Path) -> std::result::Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_admri"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| format!("spawn: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "admri {args:?} failed ({}): {}",
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn read_accuracy(path: &Path) -> std::result::Result<f64, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    v["accuracy"].as_f64().ok_or_else(|| "report has no accuracy".into())
}

fn criterion_5() -> std::result::Result<(), String> {
    let started = Instant::now();
    let dir = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let d = dir.path();
    run_cli(&["synth", "--out", "data", "--classes", "3", "--per-class", "80", "--seed", "43"], d)?;
    run_cli(&["split", "--input", "data", "--output", "manifest.csv", "--seed", "43"], d)?;
    run_cli(
        &[
            "train",
            "--manifest",
            "manifest.csv",
            "--out",
            "model.amri",
            "--epochs",
            "30",
            "--image-size",
            "32",
        ],
        d,
    )?;
    run_cli(
        &["eval", "--manifest", "manifest.csv", "--weights", "model.amri", "--report", "train.json", "--split", "train"],
        d,
    )?;
    run_cli(
        &["eval", "--manifest", "manifest.csv", "--weights", "model.amri", "--report", "test.json", "--split", "test"],
        d,
    )?;
    let train_acc = read_accuracy(&d.join("train.json"))?;
    let test_acc = read_accuracy(&d.join("test.json"))?;
    ok(train_acc >= 0.95, format!("train accuracy {train_acc} < 0.95"))?;
    ok(test_acc >= 0.90, format!("test accuracy {test_acc} < 0.90"))?;

    // replay the recorded validation losses through a fresh scheduler
    // and demand the logged lr trace matches the plateau contract
    let log = std::fs::read_to_string(d.join("model.csv")).map_err(|e| e.to_string())?;
    let mut sched = SchedulerState::new(SchedulerKind::Plateau, 1e-4, 30);
    let mut expected = 1e-4;
    for line in log.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let val_loss: f64 = cols[2].parse().map_err(|_| "bad val_loss column")?;
        let lr: f64 = cols[4].parse().map_err(|_| "bad lr column")?;
        ok(
            (lr - expected).abs() < 1e-15,
            format!("epoch {}: logged lr {lr} vs scheduler {expected}", cols[0]),
        )?;
        ok(lr >= 1e-6 - 1e-18, format!("lr {lr} fell below the floor"))?;
        expected = sched.step(val_loss);
    }

    let elapsed = started.elapsed();
    ok(
        elapsed.as_secs() < 1800,
        format!("end-to-end run took {elapsed:?}, budget is 30 min"),
    )
}

#[test]
fn acceptance_5_synthetic_end_to_end() {
    report(5, "synthetic 3×80 run reaches ≥95% train / ≥90% test with a plateau-consistent lr trace", criterion_5());
}

// ── criterion 6: pipeline determinism ────────────────────────────────

fn criterion_6() -> std::result::Result<(), String> {
    let a = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let b = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    admri::synth::generate_synthetic_dataset(a.path(), 3, 80, 43).map_err(|e| e.to_string())?;
    admri::synth::generate_synthetic_dataset(b.path(), 3, 80, 43).map_err(|e| e.to_string())?;
    for c in 0..3 {
        for i in 0..80 {
            let name = format!("class{c}/img{i:04}.png");
            let fa = std::fs::read(a.path().join(&name)).map_err(|e| e.to_string())?;
            let fb = std::fs::read(b.path().join(&name)).map_err(|e| e.to_string())?;
            ok(fa == fb, format!("{name} differs between runs"))?;
        }
    }

    let scanned = data::scan_dataset(a.path(), None).map_err(|e| e.to_string())?;
    // val fraction is taken from the non-test remainder:
    // 0.15 of 85% = 12.75% of the whole set
    let s1 = data::split(&scanned, 43, 0.15, 0.15).map_err(|e| e.to_string())?;
    let s2 = data::split(&scanned, 43, 0.15, 0.15).map_err(|e| e.to_string())?;
    ok(
        data::manifest_hash(&s1) == data::manifest_hash(&s2),
        "seed-43 split hashes differ".into(),
    )?;

    for c in 0..3 {
        let per = 80.0;
        for (frac, which) in [(0.15, Split::Test), (0.1275, Split::Val), (0.7225, Split::Train)] {
            let count = s1.class_counts(which)[c] as f64;
            ok(
                (count - frac * per).abs() <= 1.0,
                format!("class {c} {which:?}: {count} vs expected {}", frac * per),
            )?;
        }
    }
    Ok(())
}

#[test]
fn acceptance_6_pipeline_determinism() {
    report(6, "seed-43 splits/synthetic trees identical; split fractions within ±1 sample", criterion_6());
}

// ── criterion 7: balancing rule ──────────────────────────────────────

fn criterion_7() -> std::result::Result<(), String> {
    let counts = [3200usize, 2240, 896, 64];
    let mut entries = Vec::new();
    for (label, &n) in counts.iter().enumerate() {
        for i in 0..n {
            entries.push(ManifestEntry {
                path: format!("class{label}/img{i}.png"),
                label,
                split: Split::Train,
            });
        }
    }
    let manifest = data::DatasetManifest {
        entries,
        class_names: (0..4).map(|c| format!("class{c}")).collect(),
        seed: 43,
    };
    let balanced = data::balance_training_set(&manifest, 10.0).map_err(|e| e.to_string())?;
    let got = balanced.class_counts(Split::Train);
    let want = [3200usize, 2240, 2240, 747];
    ok(got == want, format!("post-balance counts {got:?}, expected {want:?}"))
}

#[test]
fn acceptance_7_balancing_rule() {
    report(7, "counts {3200,2240,896,64} balance to {3200,2240,2240,747}", criterion_7());
}

// ── criterion 8: CAM invariants ──────────────────────────────────────

fn criterion_8() -> std::result::Result<(), String> {
    let (mut model, input) = frozen_toy_model(800);
    let c = model.cfg.multi_residual_filters;

    let maps = [
        ("gradcam", gradcam(&mut model, &input, 0, DEFAULT_CAPTURE).map(|(h, _)| h)),
        (
            "xgradcam",
            xgradcam(&mut model, &input, 0, DEFAULT_CAPTURE, 0.1, false).map(|(h, _)| h),
        ),
        ("scorecam", scorecam(&mut model, &input, 0, DEFAULT_CAPTURE).map(|(h, _)| h)),
        (
            "faster_scorecam",
            faster_scorecam(&mut model, &input, 0, DEFAULT_CAPTURE, c / 2).map(|(h, _)| h),
        ),
    ];
    for (name, heat) in maps {
        let heat = heat.map_err(|e| format!("{name}: {e}"))?;
        for &v in heat.values.data() {
            ok(
                (0.0..=1.0).contains(&v),
                format!("{name}: normalized value {v} outside [0,1]"),
            )?;
        }
        for &v in heat.raw.data() {
            ok(v >= 0.0, format!("{name}: negative raw value {v}"))?;
        }
    }

    // zero classifier ⇒ zero gradients ⇒ all-zero GradCAM map
    let (mut zero_model, zin) = frozen_toy_model(801);
    let p = zero_model.params.get_mut("head2").unwrap();
    let shape = p.get("weights").shape().to_vec();
    *p.get_mut("weights") = Tensor::zeros(&shape);
    let bshape = p.get("bias").shape().to_vec();
    *p.get_mut("bias") = Tensor::zeros(&bshape);
    let (zheat, _) = gradcam(&mut zero_model, &zin, 0, DEFAULT_CAPTURE).map_err(|e| e.to_string())?;
    ok(
        zheat.values.data().iter().all(|&v| v == 0.0),
        "zero-gradient GradCAM map is not all zero".into(),
    )?;

    let (_, cw) = scorecam(&mut model, &input, 1, DEFAULT_CAPTURE).map_err(|e| e.to_string())?;
    let sum: f64 = cw.weights.iter().sum();
    ok((sum - 1.0).abs() < 1e-6, format!("Score-CAM weights sum to {sum}"))?;

    // overlay PNG round-trips to the blended values within 1 LSB
    let (heat, _) = gradcam(&mut model, &input, 0, DEFAULT_CAPTURE).map_err(|e| e.to_string())?;
    let alpha = 0.4;
    let img = render_overlay(&heat.values, &input, alpha).map_err(|e| e.to_string())?;
    let dir = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let png = dir.path().join("overlay.png");
    img.save(&png).map_err(|e| e.to_string())?;
    let decoded = image::open(&png).map_err(|e| e.to_string())?.to_rgb8();
    let (h, w) = (input.shape()[0], input.shape()[1]);
    for y in 0..h {
        for x in 0..w {
            let v = heat.values.data()[y * w + x] as f64;
            let color = admri::explain::colormap(v);
            let base = &input.data()[(y * w + x) * 3..(y * w + x) * 3 + 3];
            let gray = (base[0] + base[1] + base[2]) as f64 / 3.0 * 255.0;
            let px = decoded.get_pixel(x as u32, y as u32);
            for ch in 0..3 {
                let expect = alpha * color[ch] as f64 + (1.0 - alpha) * gray;
                ok(
                    (px.0[ch] as f64 - expect).abs() <= 1.0,
                    format!("overlay pixel ({x},{y}) ch {ch}: {} vs {expect}", px.0[ch]),
                )?;
            }
        }
    }
    Ok(())
}

#[test]
fn acceptance_8_cam_invariants() {
    report(8, "CAM invariants (nonneg normalized maps, zero-grad zero map, ω sums to 1, 1-LSB overlay)", criterion_8());
}

// ── criterion 9: softmax / cross-entropy closed forms ────────────────

fn criterion_9() -> std::result::Result<(), String> {
    // uniform-probability cross-entropy equals ln K
    for k in 2..=6usize {
        let tape = Tape::<f64>::new();
        let probs = tape.leaf(Tensor::full(&[1, k], 1.0 / k as f64));
        let mut onehot = Tensor::<f64>::zeros(&[1, k]);
        onehot.set(&[0, 0], 1.0);
        let loss = categorical_cross_entropy(&tape, probs, tape.leaf(onehot))
            .map_err(|e| e.to_string())?;
        let ce = tape.value(loss).scalar_value();
        let want = (k as f64).ln();
        ok((ce - want).abs() < 1e-9, format!("uniform CE for K={k}: {ce} vs ln K {want}"))?;
    }

    // RMSE closed forms (exactly representable probabilities)
    let onehot = metrics::one_hot(&[0, 1], 2).map_err(|e| e.to_string())?;
    let perfect = onehot.clone();
    let r = metrics::rmse(&onehot, &perfect).map_err(|e| e.to_string())?;
    ok(r.abs() < 1e-9, format!("perfect-prediction RMSE {r} != 0"))?;

    let half = Tensor::<f32>::full(&[2, 2], 0.5);
    let r = metrics::rmse(&onehot, &half).map_err(|e| e.to_string())?;
    ok((r - 0.5).abs() < 1e-9, format!("uniform K=2 RMSE {r} != 0.5"))?;

    let onehot4 = metrics::one_hot(&[0], 4).map_err(|e| e.to_string())?;
    let quarter = Tensor::<f32>::full(&[1, 4], 0.25);
    // sqrt(((0.75)^2 + 3·(0.25)^2) / 4) = sqrt(0.1875)
    let want = 0.1875f64.sqrt();
    let r = metrics::rmse(&onehot4, &quarter).map_err(|e| e.to_string())?;
    ok((r - want).abs() < 1e-9, format!("uniform K=4 RMSE {r} != {want}"))?;
    Ok(())
}

#[test]
fn acceptance_9_closed_forms() {
    report(9, "uniform CE = ln K and RMSE closed forms to 1e-9", criterion_9());
}
