//! Command-line entry points. Exit codes: 0 success, 1 runtime
//! failure, 2 input/validation failure.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{
    self, decode_image, load_entry, resize_bilinear, scan_dataset, DatasetManifest, Split,
    IMAGE_EXTENSIONS, IMAGE_SIZE,
};
use crate::error::{Error, Result};
use crate::explain::{
    faster_scorecam, gradcam, render_overlay, scorecam, write_overlay, xgradcam, CamSidecar,
    Heatmap,
};
use crate::layers::{Mode, RngState};
use crate::metrics::{argmax_rows, confusion, evaluate};
use crate::model::{build_model, Model, ModelConfig};
use crate::synth::generate_synthetic_dataset;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::train::{train, Dataset, TrainConfig};
use crate::weights::{load_weights, save_weights};

#[derive(Parser)]
#[command(
    name = "admri",
    about = "MRI-style image classifier: preprocessing, training, evaluation, and CAM explanations",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Preprocess an image tree into a mirrored tree of normalized PNGs
    Prep {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// apply the 3x3 sharpening kernel
        #[arg(long)]
        sharpen: bool,
        #[arg(long, default_value_t = IMAGE_SIZE)]
        size: usize,
    },
    /// Scan a class-per-directory tree and write a train/val/test manifest
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// oversample minority training classes with deterministic augmentations
        #[arg(long)]
        balance: bool,
        /// extra `key = value` config overrides
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Train a model from a manifest and save weights + training log
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "image-size")]
        image_size: Option<usize>,
        /// training-log CSV path (default: weights path with .csv)
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Evaluate saved weights on one split of a manifest
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// confusion-matrix CSV path (default: report path with .csv)
        #[arg(long)]
        confusion: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Render a CAM heatmap overlay for one image
    Explain {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// gradcam | xgradcam | scorecam | faster-scorecam
        #[arg(long)]
        method: Option<String>,
        /// target class index (default: the predicted class)
        #[arg(long = "class")]
        class: Option<usize>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long = "top-k")]
        top_k: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        layer: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Generate a synthetic labeled dataset of parametric patterns
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long = "per-class", default_value_t = 80)]
        per_class: usize,
        #[arg(long, default_value_t = 43)]
        seed: u64,
    },
    /// Run the built-in gradient and invariant checks
    Selftest,
}

/// Sidecar written next to trained weights so `eval` and `explain`
/// can rebuild the exact model without the training manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub image_size: usize,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub sharpen: bool,
    pub seed: u64,
}

fn sidecar_path(weights: &Path) -> PathBuf {
    let mut s = weights.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Data(_)
        | Error::Shape(_)
        | Error::WeightFile(_)
        | Error::File { .. } => 2,
        _ => 1,
    }
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn apply_overrides(cfg: &mut RunConfig, sets: &[String]) -> Result<()> {
    for s in sets {
        let (k, v) = s.split_once('=').ok_or_else(|| {
            Error::Config(format!("--set expects KEY=VALUE, got {s:?}"))
        })?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()
}

fn load_config(path: Option<&Path>, sets: &[String]) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply_overrides(&mut cfg, sets)?;
    Ok(cfg)
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Prep { input, output, sharpen, size } => cmd_prep(&input, &output, sharpen, size),
        Command::Split { input, output, config, seed, balance, sets } => {
            let mut cfg = load_config(config.as_deref(), &sets)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cmd_split(&input, &output, &cfg, balance)
        }
        Command::Train { manifest, out, config, epochs, seed, image_size, log, sets } => {
            let mut cfg = load_config(config.as_deref(), &sets)?;
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(sz) = image_size {
                cfg.image_size = sz;
            }
            cfg.validate()?;
            cmd_train(&manifest, &out, log.as_deref(), &cfg)
        }
        Command::Eval { manifest, weights, report, confusion, split } => {
            cmd_eval(&manifest, &weights, &report, confusion.as_deref(), &split)
        }
        Command::Explain { image, weights, out, method, class, eta, top_k, alpha, layer, config } => {
            let mut cfg = load_config(config.as_deref(), &[])?;
            if let Some(m) = method {
                cfg.cam_method = m;
            }
            if let Some(e) = eta {
                cfg.cam_eta = e;
            }
            if let Some(k) = top_k {
                cfg.cam_top_k = k;
            }
            if let Some(a) = alpha {
                cfg.cam_alpha = a;
            }
            if let Some(l) = layer {
                cfg.cam_capture = l;
            }
            cfg.validate()?;
            cmd_explain(&image, &weights, &out, class, &cfg)
        }
        Command::Synth { out, classes, per_class, seed } => {
            generate_synthetic_dataset(&out, classes, per_class, seed)?;
            println!("wrote {classes} x {per_class} images under {}", out.display());
            Ok(())
        }
        Command::Selftest => cmd_selftest(),
    }
}

// ── prep ─────────────────────────────────────────────────────────────

fn tensor_to_rgb(t: &Tensor<f32>) -> image::RgbImage {
    let (h, w) = (t.shape()[0], t.shape()[1]);
    image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let mut px = [0u8; 3];
        for ch in 0..3 {
            let v = t.data()[((y as usize) * w + x as usize) * 3 + ch];
            px[ch] = (v * 255.0).round().clamp(0.0, 255.0) as u8;
        }
        image::Rgb(px)
    })
}

fn cmd_prep(input: &Path, output: &Path, apply_sharpen: bool, size: usize) -> Result<()> {
    if size < 8 {
        return Err(Error::Config(format!("--size too small: {size}")));
    }
    let mut files = Vec::new();
    let mut stack = vec![input.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| Error::file(&dir, e))? {
            let p = entry.map_err(|e| Error::file(&dir, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p
                .extension()
                .and_then(|e| e.to_str())
                .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
                .unwrap_or(false)
            {
                files.push(p);
            }
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no image files under {}", input.display())));
    }
    let mut failures = Vec::new();
    let mut written = 0usize;
    for src in &files {
        let rel = src.strip_prefix(input).expect("file is under input root");
        let dst = output.join(rel).with_extension("png");
        let process = || -> Result<()> {
            let mut t = resize_bilinear(&decode_image(src)?, size, size)?;
            if apply_sharpen {
                t = data::sharpen(&t)?;
            }
            if let Some(parent) = dst.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::file(parent, e))?;
            }
            tensor_to_rgb(&t)
                .save(&dst)
                .map_err(|e| Error::Data(format!("cannot write {}: {e}", dst.display())))
        };
        match process() {
            Ok(()) => written += 1,
            Err(e) => failures.push(format!("{}: {e}", src.display())),
        }
    }
    println!("prep: {written} images written to {}", output.display());
    if failures.is_empty() {
        Ok(())
    } else {
        for f in &failures {
            eprintln!("prep failure: {f}");
        }
        Err(Error::Data(format!("{} of {} files failed", failures.len(), files.len())))
    }
}

// ── split ────────────────────────────────────────────────────────────

fn cmd_split(input: &Path, output: &Path, cfg: &RunConfig, balance: bool) -> Result<()> {
    let merge = if cfg.merge.is_empty() { None } else { Some(&cfg.merge) };
    let scanned = scan_dataset(input, merge)?;
    let mut manifest = data::split(&scanned, cfg.seed, cfg.test_frac, cfg.val_frac)?;
    if balance {
        if !cfg.augment {
            return Err(Error::Config(
                "--balance oversamples with augmentations; enable `augment` or drop the flag".into(),
            ));
        }
        manifest = data::balance_training_set(&manifest, cfg.balance_threshold)?;
    }
    manifest.write_csv(output)?;
    println!(
        "split: {} entries across {} classes -> {} (hash {})",
        manifest.entries.len(),
        manifest.class_names.len(),
        output.display(),
        data::manifest_hash(&manifest)
    );
    Ok(())
}

// ── train ────────────────────────────────────────────────────────────

fn load_split_images(
    manifest: &DatasetManifest,
    which: Split,
    cfg: &RunConfig,
) -> Result<Dataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for e in manifest.entries.iter().filter(|e| e.split == which) {
        let sample = load_entry(e, manifest.seed, cfg.sharpen)?;
        let px = if cfg.image_size == IMAGE_SIZE {
            sample.pixels
        } else {
            resize_bilinear(&sample.pixels, cfg.image_size, cfg.image_size)?
        };
        images.push(px);
        labels.push(sample.label);
    }
    Ok(Dataset { images, labels })
}

fn cmd_train(
    manifest_path: &Path,
    out: &Path,
    log_path: Option<&Path>,
    cfg: &RunConfig,
) -> Result<()> {
    let manifest = DatasetManifest::read_csv(manifest_path)?;
    let k = manifest.class_names.len();
    if k < 2 {
        return Err(Error::Data(format!("manifest has {k} classes; need at least 2")));
    }
    let train_set = load_split_images(&manifest, Split::Train, cfg)?;
    let val_set = load_split_images(&manifest, Split::Val, cfg)?;
    println!(
        "train: {} training / {} validation images, {k} classes, image size {}",
        train_set.len(),
        val_set.len(),
        cfg.image_size
    );

    let mut model_cfg = ModelConfig::for_size(cfg.image_size, k);
    model_cfg.dropout_rate = cfg.dropout;
    let mut rng = RngState::new(cfg.seed, 0);
    let mut model = build_model::<f32>(&model_cfg, &mut rng)?;

    let tc = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.learning_rate,
        optimizer: cfg.optimizer,
        scheduler: cfg.scheduler,
        seed: cfg.seed,
        factor: cfg.factor,
        patience: cfg.patience,
        min_lr: cfg.min_lr,
    };
    let log = train(&mut model, &train_set, &val_set, &tc)?;

    save_weights(out, &model.export_state())?;
    let side = ModelSidecar {
        image_size: cfg.image_size,
        num_classes: k,
        class_names: manifest.class_names.clone(),
        sharpen: cfg.sharpen,
        seed: cfg.seed,
    };
    let sp = sidecar_path(out);
    std::fs::write(
        &sp,
        serde_json::to_string_pretty(&side).map_err(|e| Error::Data(format!("sidecar: {e}")))?,
    )
    .map_err(|e| Error::file(&sp, e))?;

    let log_out = log_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.with_extension("csv"));
    log.write_csv(&log_out)?;
    if let Some(last) = log.records.last() {
        println!(
            "train: finished epoch {} (val loss {:.4}, val acc {:.3}); weights -> {}",
            last.epoch,
            last.val_loss,
            last.val_acc,
            out.display()
        );
    }
    Ok(())
}

// ── eval ─────────────────────────────────────────────────────────────

fn load_model(weights: &Path) -> Result<(Model<f32>, ModelSidecar)> {
    let sp = sidecar_path(weights);
    let text = std::fs::read_to_string(&sp).map_err(|e| Error::file(&sp, e))?;
    let side: ModelSidecar = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: {e}", sp.display())))?;
    let model_cfg = ModelConfig::for_size(side.image_size, side.num_classes);
    let mut rng = RngState::new(side.seed, 0);
    let mut model = build_model::<f32>(&model_cfg, &mut rng)?;
    let snap = load_weights::<f32>(weights)?;
    model.import_state(&snap)?;
    model.set_mode(Mode::Infer);
    Ok((model, side))
}

fn predict_probs(model: &mut Model<f32>, ds: &Dataset, batch: usize) -> Result<Tensor<f32>> {
    let k = model.cfg.num_classes;
    let mut rows = Vec::with_capacity(ds.len() * k);
    let mut rng = RngState::new(0, 0);
    let idxs: Vec<usize> = (0..ds.len()).collect();
    for chunk in idxs.chunks(batch) {
        let tape = Tape::<f32>::new();
        let mut stacked = Tensor::<f32>::zeros(&[
            chunk.len(),
            model.cfg.input_height,
            model.cfg.input_width,
            model.cfg.input_channels,
        ]);
        let per = stacked.len() / chunk.len();
        for (j, &i) in chunk.iter().enumerate() {
            stacked.data_mut()[j * per..(j + 1) * per].copy_from_slice(ds.images[i].data());
        }
        let pass = model.forward(&tape, tape.leaf(stacked), None, &mut rng)?;
        rows.extend_from_slice(tape.value(pass.probs).data());
    }
    Tensor::new(vec![ds.len(), k], rows)
}

fn cmd_eval(
    manifest_path: &Path,
    weights: &Path,
    report_path: &Path,
    confusion_path: Option<&Path>,
    split_name: &str,
) -> Result<()> {
    let which = Split::parse(split_name)?;
    let manifest = DatasetManifest::read_csv(manifest_path)?;
    let (mut model, side) = load_model(weights)?;
    if manifest.class_names != side.class_names {
        return Err(Error::Data(format!(
            "manifest classes {:?} do not match model classes {:?}",
            manifest.class_names, side.class_names
        )));
    }
    let eval_cfg = RunConfig {
        image_size: side.image_size,
        sharpen: side.sharpen,
        ..RunConfig::default()
    };
    let ds = load_split_images(&manifest, which, &eval_cfg)?;
    if ds.is_empty() {
        return Err(Error::Data(format!("split {split_name:?} has no entries")));
    }
    let probs = predict_probs(&mut model, &ds, 8)?;
    let k = side.num_classes;
    let report = evaluate(&ds.labels, &probs, k)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Data(format!("report: {e}")))?;
    std::fs::write(report_path, json).map_err(|e| Error::file(report_path, e))?;

    let preds = argmax_rows(&probs);
    let cm = confusion(&ds.labels, &preds, k)?;
    let cm_path = confusion_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| report_path.with_extension("csv"));
    std::fs::write(&cm_path, cm.to_csv()).map_err(|e| Error::file(&cm_path, e))?;
    println!(
        "eval[{split_name}]: accuracy {:.4}, macro F1 {:.4} ({} samples) -> {}",
        report.accuracy,
        report.f1_macro,
        ds.len(),
        report_path.display()
    );
    Ok(())
}

// ── explain ──────────────────────────────────────────────────────────

fn cmd_explain(
    image_path: &Path,
    weights: &Path,
    out: &Path,
    class: Option<usize>,
    cfg: &RunConfig,
) -> Result<()> {
    let (mut model, side) = load_model(weights)?;
    let mut px = resize_bilinear(&decode_image(image_path)?, side.image_size, side.image_size)?;
    if side.sharpen {
        px = data::sharpen(&px)?;
    }

    let target = match class {
        Some(c) => {
            if c >= side.num_classes {
                return Err(Error::Config(format!(
                    "--class {c} out of range [0,{})",
                    side.num_classes
                )));
            }
            c
        }
        None => {
            let ds = Dataset { images: vec![px.clone()], labels: vec![0] };
            let probs = predict_probs(&mut model, &ds, 1)?;
            argmax_rows(&probs)[0]
        }
    };

    let capture = cfg.cam_capture.as_str();
    let (heat, params): (Heatmap<f32>, serde_json::Value) = match cfg.cam_method.as_str() {
        "gradcam" => {
            let (h, _) = gradcam(&mut model, &px, target, capture)?;
            (h, serde_json::json!({ "alpha": cfg.cam_alpha }))
        }
        "xgradcam" => {
            let (h, _) = xgradcam(&mut model, &px, target, capture, cfg.cam_eta, false)?;
            (h, serde_json::json!({ "alpha": cfg.cam_alpha, "eta": cfg.cam_eta }))
        }
        "scorecam" => {
            let (h, _) = scorecam(&mut model, &px, target, capture)?;
            (h, serde_json::json!({ "alpha": cfg.cam_alpha }))
        }
        "faster-scorecam" => {
            let (h, _) = faster_scorecam(&mut model, &px, target, capture, cfg.cam_top_k)?;
            (h, serde_json::json!({ "alpha": cfg.cam_alpha, "top_k": cfg.cam_top_k }))
        }
        other => return Err(Error::Config(format!("unknown CAM method {other:?}"))),
    };

    let img = render_overlay(&heat.values, &px, cfg.cam_alpha)?;
    let (mut raw_min, mut raw_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in heat.raw.data() {
        raw_min = raw_min.min(v as f64);
        raw_max = raw_max.max(v as f64);
    }
    let sidecar = CamSidecar {
        method: cfg.cam_method.clone(),
        target_class: target,
        capture_layer: capture.to_string(),
        params,
        raw_min,
        raw_max,
    };
    write_overlay(out, &img, &heat, &sidecar)?;
    println!(
        "explain: {} heatmap for class {} ({}) -> {}",
        cfg.cam_method,
        target,
        side.class_names.get(target).map(String::as_str).unwrap_or("?"),
        out.display()
    );
    Ok(())
}

// ── selftest ─────────────────────────────────────────────────────────

fn cmd_selftest() -> Result<()> {
    let start = Instant::now();
    let mut failed = 0usize;
    let mut check = |name: &str, result: Result<()>| {
        let elapsed = start.elapsed().as_secs_f64();
        match result {
            Ok(()) => println!("selftest [{elapsed:7.2}s] PASS {name}"),
            Err(e) => {
                failed += 1;
                println!("selftest [{elapsed:7.2}s] FAIL {name}: {e}");
            }
        }
    };

    check("conv2d matches direct convolution", selftest_conv_oracle());
    check("layer gradients match finite differences", selftest_layer_fd());
    check("grouped-query attention degenerates to multi-head", selftest_gqa_mha());
    check("full model gradient matches finite differences", selftest_model_fd());
    check("micro-averaged metrics equal accuracy", selftest_micro_identity());
    check("uniform cross-entropy equals ln K", selftest_uniform_ce());
    check("weight file checksum detects corruption", selftest_weight_crc());
    check("CAM identities hold", selftest_cam_identities());
    check("augmentation is deterministic", selftest_augment_determinism());

    if failed == 0 {
        println!("selftest: all checks passed in {:.1}s", start.elapsed().as_secs_f64());
        Ok(())
    } else {
        Err(Error::Domain(format!("{failed} selftest check(s) failed")))
    }
}

fn selftest_conv_oracle() -> Result<()> {
    use crate::layers::{conv2d, Padding};
    let mut rng = RngState::new(7, 0);
    for case in 0..10 {
        let (n, h, w, cin, cout, kh) = (2, 5, 4, 3, 2, 3);
        let x = rng.uniform_tensor::<f64>(&[n, h, w, cin], -1.0, 1.0);
        let k = rng.uniform_tensor::<f64>(&[kh, kh, cin, cout], -1.0, 1.0);
        let tape = Tape::<f64>::new();
        let y = conv2d(&tape, tape.leaf(x.clone()), tape.leaf(k.clone()), None, 1, Padding::Same)?;
        let got = tape.value(y);
        // direct quadruple-loop convolution with zero padding
        let pad = kh / 2;
        for b in 0..n {
            for oy in 0..h {
                for ox in 0..w {
                    for oc in 0..cout {
                        let mut acc = 0.0;
                        for ky in 0..kh {
                            for kx in 0..kh {
                                let iy = oy as isize + ky as isize - pad as isize;
                                let ix = ox as isize + kx as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                for ic in 0..cin {
                                    acc += x.at(&[b, iy as usize, ix as usize, ic])
                                        * k.at(&[ky, kx, ic, oc]);
                                }
                            }
                        }
                        let g = got.at(&[b, oy, ox, oc]);
                        if (g - acc).abs() > 1e-12 {
                            return Err(Error::Domain(format!(
                                "case {case}: conv mismatch {g} vs {acc}"
                            )));
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn selftest_layer_fd() -> Result<()> {
    use crate::layers::{conv2d, Padding};
    use crate::tape::finite_difference_check;
    let mut rng = RngState::new(11, 0);
    let x = rng.uniform_tensor::<f64>(&[1, 6, 6, 2], -1.0, 1.0);
    let k = rng.uniform_tensor::<f64>(&[3, 3, 2, 3], -1.0, 1.0);
    let fd = finite_difference_check(
        &|tape, v| {
            let y = conv2d(tape, v, tape.leaf(k.clone()), None, 1, Padding::Same)?;
            let r = tape.relu(y)?;
            tape.reduce(crate::tape::ReduceOp::Sum, r, &[0, 1, 2, 3], false)
        },
        &x,
        1e-5,
    )?;
    if fd.max_rel_err > 1e-5 {
        return Err(Error::Domain(format!("conv FD rel err {}", fd.max_rel_err)));
    }
    Ok(())
}

fn selftest_gqa_mha() -> Result<()> {
    use crate::attention::{
        grouped_query_attention, init_attention_params, multi_head_attention, AttentionConfig,
        AttentionVars,
    };
    let mut rng = RngState::new(13, 0);
    let full = AttentionConfig { model_dim: 16, num_heads: 4, num_kv_groups: 4 };
    let p = init_attention_params::<f64>("attn", &full, &mut rng)?;
    let x = rng.uniform_tensor::<f64>(&[2, 5, 16], -1.0, 1.0);

    let tape = Tape::<f64>::new();
    let xv = tape.leaf(x.clone());
    let leaf = |k: &str| tape.leaf(p.get(k).clone());
    let vars = AttentionVars {
        wq: leaf("wq"),
        bq: leaf("bq"),
        wk: leaf("wk"),
        bk: leaf("bk"),
        wv: leaf("wv"),
        bv: leaf("bv"),
        wo: leaf("wo"),
        bo: leaf("bo"),
    };
    let a = multi_head_attention(&tape, xv, &vars, &full)?;
    let b = grouped_query_attention(&tape, xv, &vars, &full)?;
    let diff = tape.value(a.output).max_abs_diff(&tape.value(b.output));
    if diff > 1e-12 {
        return Err(Error::Domain(format!("GQA(G=H) vs MHA diff {diff}")));
    }
    Ok(())
}

fn selftest_model_fd() -> Result<()> {
    use crate::train::categorical_cross_entropy;
    let cfg = ModelConfig::for_size(16, 3);
    let mut rng = RngState::new(17, 0);
    let mut model = build_model::<f64>(&cfg, &mut rng)?;
    // warm batch seeds the normalization statistics, then freeze
    let tape = Tape::<f64>::new();
    let warm = tape.leaf(rng.uniform_tensor(&[4, 16, 16, 3], 0.0, 1.0));
    model.forward(&tape, warm, None, &mut rng)?;
    model.set_mode(Mode::Infer);

    let x = rng.uniform_tensor::<f64>(&[2, 16, 16, 3], 0.0, 1.0);
    let mut y = Tensor::<f64>::zeros(&[2, 3]);
    y.set(&[0, 1], 1.0);
    y.set(&[1, 2], 1.0);
    let loss_of = |model: &mut Model<f64>| -> Result<f64> {
        let tape = Tape::<f64>::new();
        let mut r = RngState::new(0, 0);
        let pass = model.forward(&tape, tape.leaf(x.clone()), None, &mut r)?;
        let loss = categorical_cross_entropy(&tape, pass.probs, tape.leaf(y.clone()))?;
        Ok(tape.value(loss).scalar_value())
    };

    // analytic gradient of one weight via the tape
    let tape = Tape::<f64>::new();
    let mut r = RngState::new(0, 0);
    let pass = model.forward(&tape, tape.leaf(x.clone()), None, &mut r)?;
    let loss = categorical_cross_entropy(&tape, pass.probs, tape.leaf(y.clone()))?;
    let grads = tape.backward(loss)?;
    for pick in ["head1/weights", "stem0/kernel", "gqa/wq"] {
        let var = pass.param_vars[pick];
        let g = grads.get(var).ok_or_else(|| Error::Domain(format!("no grad for {pick}")))?;
        let analytic = g.data()[0];

        let (block, key) = pick.split_once('/').expect("name has block/key form");
        let h = 1e-5;
        let base = model.params[block].get(key).data()[0];
        model.params.get_mut(block).unwrap().get_mut(key).data_mut()[0] = base + h;
        let up = loss_of(&mut model)?;
        model.params.get_mut(block).unwrap().get_mut(key).data_mut()[0] = base - h;
        let down = loss_of(&mut model)?;
        model.params.get_mut(block).unwrap().get_mut(key).data_mut()[0] = base;
        let numeric = (up - down) / (2.0 * h);
        let rel = crate::tape::rel_err(analytic, numeric);
        if rel > 1e-5 {
            return Err(Error::Domain(format!(
                "{pick}: analytic {analytic} vs numeric {numeric} (rel {rel})"
            )));
        }
    }
    Ok(())
}

fn selftest_micro_identity() -> Result<()> {
    let mut rng = RngState::new(19, 0);
    for _ in 0..50 {
        let k = 2 + (rng.next_u64() % 4) as usize;
        let n = 50;
        let truth: Vec<usize> = (0..n).map(|_| (rng.next_u64() % k as u64) as usize).collect();
        let pred: Vec<usize> = (0..n).map(|_| (rng.next_u64() % k as u64) as usize).collect();
        let cm = confusion(&truth, &pred, k)?;
        let rep = crate::metrics::basic_rates(&cm)?;
        let correct = truth.iter().zip(&pred).filter(|(a, b)| a == b).count();
        let acc = correct as f64 / n as f64;
        for (name, v) in [
            ("precision", rep.precision_micro),
            ("recall", rep.recall_micro),
            ("f1", rep.f1_micro),
        ] {
            if (v - acc).abs() > 1e-12 {
                return Err(Error::Domain(format!("micro {name} {v} != accuracy {acc}")));
            }
        }
    }
    Ok(())
}

fn selftest_uniform_ce() -> Result<()> {
    use crate::train::cross_entropy_value;
    for k in 2..=5 {
        let probs = Tensor::<f32>::full(&[1, k], 1.0 / k as f32);
        let ce = cross_entropy_value(&probs, &[0]);
        if (ce - (k as f64).ln()).abs() > 1e-6 {
            return Err(Error::Domain(format!("uniform CE {ce} != ln {k}")));
        }
    }
    Ok(())
}

fn selftest_weight_crc() -> Result<()> {
    use crate::weights::{decode_weights, encode_weights};
    let mut rng = RngState::new(23, 0);
    let mut tensors = IndexMap::new();
    tensors.insert("t".to_string(), rng.uniform_tensor::<f32>(&[4, 4], -1.0, 1.0));
    let mut bytes = encode_weights(&tensors)?;
    decode_weights::<f32>(&bytes)?;
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    if decode_weights::<f32>(&bytes).is_ok() {
        return Err(Error::Domain("corrupted weight file decoded without error".into()));
    }
    Ok(())
}

fn selftest_cam_identities() -> Result<()> {
    let cfg = ModelConfig::for_size(16, 3);
    let mut rng = RngState::new(29, 0);
    let mut model = build_model::<f32>(&cfg, &mut rng)?;
    let tape = Tape::<f32>::new();
    let warm = tape.leaf(rng.uniform_tensor(&[4, 16, 16, 3], 0.0, 1.0));
    model.forward(&tape, warm, None, &mut rng)?;
    model.set_mode(Mode::Infer);
    let input = rng.uniform_tensor::<f32>(&[16, 16, 3], 0.0, 1.0);
    let capture = crate::model::DEFAULT_CAPTURE;

    let (g, _) = gradcam(&mut model, &input, 0, capture)?;
    let (x, _) = xgradcam(&mut model, &input, 0, capture, 0.0, false)?;
    let d = g.values.max_abs_diff(&x.values);
    if d > 1e-6 {
        return Err(Error::Domain(format!("xgradcam(0) vs gradcam diff {d}")));
    }
    let c = model.cfg.multi_residual_filters;
    let (a, _) = scorecam(&mut model, &input, 0, capture)?;
    let (b, _) = faster_scorecam(&mut model, &input, 0, capture, c)?;
    if a.values.data() != b.values.data() {
        return Err(Error::Domain("faster_scorecam(K=C) != scorecam".into()));
    }
    Ok(())
}

fn selftest_augment_determinism() -> Result<()> {
    use crate::data::{augment, AugmentParams, ImageSample, Provenance};
    let mut rng = RngState::new(31, 0);
    let sample = ImageSample {
        pixels: rng.uniform_tensor::<f32>(&[128, 128, 3], 0.0, 1.0),
        label: 0,
        provenance: Provenance::Original,
    };
    let params = AugmentParams::for_id(43, 5);
    let a = augment(&sample, &params)?;
    let b = augment(&sample, &params)?;
    if a.pixels.data() != b.pixels.data() {
        return Err(Error::Domain("augmentation not deterministic".into()));
    }
    Ok(())
}
