//! CAM-family explainability: GradCAM, Score-CAM, Faster Score-CAM,
//! and XGradCAM, plus heatmap rendering to overlay PNGs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::resize_bilinear;
use crate::error::{Error, Result};
use crate::layers::RngState;
use crate::model::Model;
use crate::tape::{ReduceOp, Tape, Var};
use crate::tensor::{softmax, Tensor};
use crate::Element;

/// Class-activation map: normalized values at input resolution plus
/// the raw (pre-normalization) map at the capture layer's resolution.
#[derive(Clone, Debug)]
pub struct Heatmap<E: Element> {
    pub values: Tensor<E>,
    pub raw: Tensor<E>,
    pub source_height: usize,
    pub source_width: usize,
}

/// Channel weights used by the Score-CAM variants, in the order the
/// channels were reduced.
#[derive(Clone, Debug)]
pub struct CamWeights {
    pub channels: Vec<usize>,
    pub weights: Vec<f64>,
}

fn min_max_normalize<E: Element>(t: &Tensor<E>) -> Tensor<E> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in t.data() {
        lo = lo.min(v.as_f64());
        hi = hi.max(v.as_f64());
    }
    if !(hi > lo) {
        return Tensor::zeros(t.shape());
    }
    t.map(|v| E::from_f64((v.as_f64() - lo) / (hi - lo)))
}

fn upsample_map<E: Element>(raw: &Tensor<E>, out_h: usize, out_w: usize) -> Result<Tensor<E>> {
    let (h, w) = (raw.shape()[0], raw.shape()[1]);
    let as_hwc = raw.reshape(&[h, w, 1])?;
    let big = resize_bilinear(&as_hwc, out_h, out_w)?;
    big.reshape(&[out_h, out_w])
}

fn check_input<E: Element>(model: &Model<E>, input: &Tensor<E>) -> Result<()> {
    let want = [
        model.cfg.input_height,
        model.cfg.input_width,
        model.cfg.input_channels,
    ];
    if input.shape() != want {
        return Err(Error::Shape(format!(
            "explainability input must be {want:?}, got {:?}",
            input.shape()
        )));
    }
    Ok(())
}

fn check_class<E: Element>(model: &Model<E>, class: usize) -> Result<()> {
    if class >= model.cfg.num_classes {
        return Err(Error::Config(format!(
            "target class {class} out of range [0,{})",
            model.cfg.num_classes
        )));
    }
    Ok(())
}

/// Pre-softmax score of one class as a scalar tape node.
fn class_score<E: Element>(tape: &Tape<E>, logits: Var, class: usize) -> Result<Var> {
    let s = tape.shape(logits);
    let mut mask = Tensor::<E>::zeros(&s);
    mask.set(&[0, class], E::one());
    let m = tape.leaf(mask);
    let picked = tape.mul(logits, m)?;
    tape.reduce(ReduceOp::Sum, picked, &[0, 1], false)
}

fn finish<E: Element>(model: &Model<E>, raw: Tensor<E>) -> Result<Heatmap<E>> {
    let (h, w) = (raw.shape()[0], raw.shape()[1]);
    let big = upsample_map(&raw, model.cfg.input_height, model.cfg.input_width)?;
    Ok(Heatmap {
        values: min_max_normalize(&big),
        raw,
        source_height: h,
        source_width: w,
    })
}

/// Weighted channel sum followed by ReLU: map(i,j) = ReLU(Σ αₖ Aₖ).
fn weighted_map<E: Element>(
    acts: &Tensor<E>,
    channels: &[usize],
    alphas: &[f64],
) -> Tensor<E> {
    let (h, w, c) = (acts.shape()[1], acts.shape()[2], acts.shape()[3]);
    let mut raw = Tensor::<E>::zeros(&[h, w]);
    for (pos, v) in raw.data_mut().iter_mut().enumerate() {
        let mut acc = 0.0;
        for (&k, &a) in channels.iter().zip(alphas) {
            acc += a * acts.data()[pos * c + k].as_f64();
        }
        *v = E::from_f64(acc.max(0.0));
    }
    raw
}

/// GradCAM weights: αₖ = spatial mean of ∂y_c/∂Aₖ, optionally shifted
/// by η or replaced by the activation-normalized XGrad-CAM weighting.
fn gradient_alphas<E: Element>(
    model: &mut Model<E>,
    input: &Tensor<E>,
    class: usize,
    capture: &str,
    eta: f64,
    normalized: bool,
) -> Result<(Tensor<E>, Vec<f64>)> {
    check_input(model, input)?;
    check_class(model, class)?;
    let mut rng = RngState::new(0, 0);
    let tape = Tape::<E>::new();
    let batched = input.reshape(&[1, input.shape()[0], input.shape()[1], input.shape()[2]])?;
    let x = tape.leaf(batched);
    let pass = model.forward(&tape, x, Some(capture), &mut rng)?;
    let fmap = pass.captured.expect("capture requested");
    let acts = tape.value(fmap);
    if acts.rank() != 4 {
        return Err(Error::Shape(format!(
            "capture layer {capture:?} is not spatially resolved: {:?}",
            acts.shape()
        )));
    }
    let score = class_score(&tape, pass.logits, class)?;
    let grads = tape.backward(score)?;
    let shape = acts.shape().to_vec();
    let dacts = grads.get_or_zeros(fmap, &shape);

    let (h, w, c) = (shape[1], shape[2], shape[3]);
    let z = (h * w) as f64;
    let mut alphas = vec![0.0f64; c];
    if normalized {
        // α_k = Σ_ij (A_k/ΣA_k)·∂y/∂A_k, zero for all-zero channels
        let mut sums = vec![0.0f64; c];
        for (pos, &v) in acts.data().iter().enumerate() {
            sums[pos % c] += v.as_f64();
        }
        for (pos, &g) in dacts.data().iter().enumerate() {
            let k = pos % c;
            if sums[k].abs() > 1e-12 {
                alphas[k] += acts.data()[pos].as_f64() / sums[k] * g.as_f64();
            }
        }
        for a in &mut alphas {
            *a += eta;
        }
    } else {
        for (pos, &g) in dacts.data().iter().enumerate() {
            alphas[pos % c] += g.as_f64() / z;
        }
        for a in &mut alphas {
            *a += eta;
        }
    }
    Ok((acts, alphas))
}

/// Classic GradCAM; also returns the channel weights αₖ.
pub fn gradcam<E: Element>(
    model: &mut Model<E>,
    input: &Tensor<E>,
    class: usize,
    capture: &str,
) -> Result<(Heatmap<E>, Vec<f64>)> {
    let (acts, alphas) = gradient_alphas(model, input, class, capture, 0.0, false)?;
    let channels: Vec<usize> = (0..alphas.len()).collect();
    let raw = weighted_map(&acts, &channels, &alphas);
    Ok((finish(model, raw)?, alphas))
}

/// XGradCAM: gradient means shifted by η. With η = 0 this coincides
/// with GradCAM; `normalized` selects the activation-normalized
/// weighting instead of the plain mean.
pub fn xgradcam<E: Element>(
    model: &mut Model<E>,
    input: &Tensor<E>,
    class: usize,
    capture: &str,
    eta: f64,
    normalized: bool,
) -> Result<(Heatmap<E>, Vec<f64>)> {
    let (acts, alphas) = gradient_alphas(model, input, class, capture, eta, normalized)?;
    let channels: Vec<usize> = (0..alphas.len()).collect();
    let raw = weighted_map(&acts, &channels, &alphas);
    Ok((finish(model, raw)?, alphas))
}

/// One forward pass returning the pre-softmax score of `class`.
fn masked_score<E: Element>(
    model: &mut Model<E>,
    input: &Tensor<E>,
    class: usize,
) -> Result<f64> {
    let mut rng = RngState::new(0, 0);
    let tape = Tape::<E>::new();
    let x = tape.leaf(input.reshape(&[
        1,
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
    ])?);
    let pass = model.forward(&tape, x, None, &mut rng)?;
    Ok(tape.value(pass.logits).data()[class].as_f64())
}

fn scorecam_over_channels<E: Element>(
    model: &mut Model<E>,
    input: &Tensor<E>,
    class: usize,
    capture: &str,
    select: Option<usize>,
) -> Result<(Heatmap<E>, CamWeights)> {
    check_input(model, input)?;
    check_class(model, class)?;
    let mut rng = RngState::new(0, 0);
    let tape = Tape::<E>::new();
    let x = tape.leaf(input.reshape(&[
        1,
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
    ])?);
    let pass = model.forward(&tape, x, Some(capture), &mut rng)?;
    let acts = tape.value(pass.captured.expect("capture requested"));
    if acts.rank() != 4 {
        return Err(Error::Shape(format!(
            "capture layer {capture:?} is not spatially resolved: {:?}",
            acts.shape()
        )));
    }
    let (h, w, c) = (acts.shape()[1], acts.shape()[2], acts.shape()[3]);

    // channel order: full sweep ascending, or top-K by spatial
    // variance (then ascending so reductions match the full sweep)
    let channels: Vec<usize> = match select {
        None => (0..c).collect(),
        Some(k) => {
            if k == 0 || k > c {
                return Err(Error::Config(format!(
                    "top-K must lie in [1,{c}], got {k}"
                )));
            }
            let mut variances: Vec<(usize, f64)> = (0..c)
                .map(|ch| {
                    let vals: Vec<f64> =
                        (0..h * w).map(|pos| acts.data()[pos * c + ch].as_f64()).collect();
                    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                        / vals.len() as f64;
                    (ch, var)
                })
                .collect();
            variances.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let mut picked: Vec<usize> = variances[..k].iter().map(|&(ch, _)| ch).collect();
            picked.sort_unstable();
            picked
        }
    };

    let (ih, iw) = (model.cfg.input_height, model.cfg.input_width);
    let mut scores = Vec::with_capacity(channels.len());
    for &ch in &channels {
        let mut chan = Tensor::<E>::zeros(&[h, w]);
        for pos in 0..h * w {
            chan.data_mut()[pos] = acts.data()[pos * c + ch];
        }
        let mask = min_max_normalize(&upsample_map(&chan, ih, iw)?);
        let mut masked = input.clone();
        for (pos, v) in masked.data_mut().iter_mut().enumerate() {
            let m = mask.data()[pos / input.shape()[2]];
            *v = *v * m;
        }
        scores.push(E::from_f64(masked_score(model, &masked, class)?));
    }
    let omega = softmax(&Tensor::from_vec(scores), 0)?;
    let weights: Vec<f64> = omega.data().iter().map(|v| v.as_f64()).collect();
    let raw = weighted_map(&acts, &channels, &weights);
    Ok((finish(model, raw)?, CamWeights { channels, weights }))
}

/// Score-CAM: one masked forward per channel, softmax over the class
/// scores, ReLU-weighted channel sum.
pub fn scorecam<E: Element>(
    model: &mut Model<E>,
    input: &Tensor<E>,
    class: usize,
    capture: &str,
) -> Result<(Heatmap<E>, CamWeights)> {
    scorecam_over_channels(model, input, class, capture, None)
}

/// Score-CAM restricted to the `top_k` highest-variance channels
/// (K+1 forward passes instead of C+1).
pub fn faster_scorecam<E: Element>(
    model: &mut Model<E>,
    input: &Tensor<E>,
    class: usize,
    capture: &str,
    top_k: usize,
) -> Result<(Heatmap<E>, CamWeights)> {
    scorecam_over_channels(model, input, class, capture, Some(top_k))
}

// ── rendering ────────────────────────────────────────────────────────

/// Piecewise-linear blue→cyan→green→yellow→red colormap.
pub fn colormap(v: f64) -> [u8; 3] {
    let anchors: [(f64, [f64; 3]); 5] = [
        (0.0, [0.0, 0.0, 255.0]),
        (0.35, [0.0, 255.0, 255.0]),
        (0.5, [0.0, 255.0, 0.0]),
        (0.65, [255.0, 255.0, 0.0]),
        (1.0, [255.0, 0.0, 0.0]),
    ];
    let v = v.clamp(0.0, 1.0);
    for pair in anchors.windows(2) {
        let (a, ca) = pair[0];
        let (b, cb) = pair[1];
        if v <= b {
            let t = if b > a { (v - a) / (b - a) } else { 0.0 };
            return [
                (ca[0] + t * (cb[0] - ca[0])).round() as u8,
                (ca[1] + t * (cb[1] - ca[1])).round() as u8,
                (ca[2] + t * (cb[2] - ca[2])).round() as u8,
            ];
        }
    }
    [255, 0, 0]
}

/// Blend the colormapped heatmap over the grayscale original:
/// out = α·color + (1−α)·gray.
pub fn render_overlay<E: Element>(
    heat: &Tensor<E>,
    original: &Tensor<f32>,
    alpha: f64,
) -> Result<image::RgbImage> {
    let hs = heat.shape();
    let os = original.shape();
    if hs.len() != 2 || os.len() != 3 || os[0] != hs[0] || os[1] != hs[1] || os[2] != 3 {
        return Err(Error::Shape(format!(
            "overlay expects heat [H,W] and original [H,W,3], got {hs:?} and {os:?}"
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha {alpha} outside [0,1]")));
    }
    let (h, w) = (hs[0], hs[1]);
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let v = heat.data()[y * w + x].as_f64();
            let color = colormap(v);
            let base = &original.data()[(y * w + x) * 3..(y * w + x) * 3 + 3];
            let gray = (base[0] + base[1] + base[2]) as f64 / 3.0 * 255.0;
            let mut px = [0u8; 3];
            for ch in 0..3 {
                px[ch] = (alpha * color[ch] as f64 + (1.0 - alpha) * gray)
                    .round()
                    .clamp(0.0, 255.0) as u8;
            }
            // alpha = 0 must reproduce the original exactly, not its
            // grayscale version
            if alpha == 0.0 {
                for ch in 0..3 {
                    px[ch] = (base[ch] as f64 * 255.0).round().clamp(0.0, 255.0) as u8;
                }
            }
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    Ok(img)
}

/// Metadata written next to every overlay PNG.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CamSidecar {
    pub method: String,
    pub target_class: usize,
    pub capture_layer: String,
    pub params: serde_json::Value,
    pub raw_min: f64,
    pub raw_max: f64,
}

pub fn write_overlay<E: Element>(
    png_path: &Path,
    img: &image::RgbImage,
    heat: &Heatmap<E>,
    sidecar: &CamSidecar,
) -> Result<()> {
    let _ = heat;
    img.save(png_path)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", png_path.display())))?;
    let json_path = png_path.with_extension("json");
    let text = serde_json::to_string_pretty(sidecar)
        .map_err(|e| Error::Data(format!("sidecar: {e}")))?;
    fs::write(&json_path, text).map_err(|e| Error::file(&json_path, e))
}
