//! Produce class-activation heatmap overlays with all four CAM
//! methods for one image from a freshly trained toy model.
//!
//! Run with: cargo run --example cam_overlay

use admri::data::{load_entry, resize_bilinear, scan_dataset, split, Split};
use admri::explain::{
    faster_scorecam, gradcam, render_overlay, scorecam, write_overlay, xgradcam, CamSidecar,
};
use admri::layers::RngState;
use admri::model::{build_model, ModelConfig, DEFAULT_CAPTURE};
use admri::synth::generate_synthetic_dataset;
use admri::train::{train, Dataset, TrainConfig};
use admri::Result;

fn main() -> Result<()> {
    let dir = std::env::temp_dir().join("admri-example-cam");
    let _ = std::fs::remove_dir_all(&dir);
    generate_synthetic_dataset(&dir, 3, 20, 43)?;
    let manifest = split(&scan_dataset(&dir, None)?, 43, 0.15, 0.15)?;

    let size = 32;
    let load = |which: Split| -> Result<Dataset> {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for e in manifest.entries.iter().filter(|e| e.split == which) {
            let s = load_entry(e, manifest.seed, true)?;
            images.push(resize_bilinear(&s.pixels, size, size)?);
            labels.push(s.label);
        }
        Ok(Dataset { images, labels })
    };
    let train_set = load(Split::Train)?;
    let val_set = load(Split::Val)?;

    let mut rng = RngState::new(43, 0);
    let mut model = build_model::<f32>(&ModelConfig::for_size(size, 3), &mut rng)?;
    train(&mut model, &train_set, &val_set, &TrainConfig { epochs: 8, ..TrainConfig::default() })?;

    // explain one class-2 image (ellipse with two voids)
    let image = &train_set.images[train_set.labels.iter().position(|&l| l == 2).unwrap()];
    let target = 2;

    let out_dir = std::env::temp_dir().join("admri-example-cam-out");
    std::fs::create_dir_all(&out_dir)?;
    let runs: Vec<(&str, admri::explain::Heatmap<f32>)> = vec![
        ("gradcam", gradcam(&mut model, image, target, DEFAULT_CAPTURE)?.0),
        ("xgradcam", xgradcam(&mut model, image, target, DEFAULT_CAPTURE, 0.2, false)?.0),
        ("scorecam", scorecam(&mut model, image, target, DEFAULT_CAPTURE)?.0),
        ("faster_scorecam", faster_scorecam(&mut model, image, target, DEFAULT_CAPTURE, 8)?.0),
    ];
    for (method, heat) in runs {
        let overlay = render_overlay(&heat.values, image, 0.5)?;
        let raw_min = heat.raw.data().iter().fold(f64::INFINITY, |a, &b| a.min(b as f64));
        let raw_max = heat.raw.data().iter().fold(0.0f64, |a, &b| a.max(b as f64));
        let png = out_dir.join(format!("{method}.png"));
        write_overlay(
            &png,
            &overlay,
            &heat,
            &CamSidecar {
                method: method.to_string(),
                target_class: target,
                capture_layer: DEFAULT_CAPTURE.to_string(),
                params: serde_json::json!({ "alpha": 0.5 }),
                raw_min,
                raw_max,
            },
        )?;
        println!("{method:16} raw range [{raw_min:.4}, {raw_max:.4}] -> {}", png.display());
    }
    Ok(())
}
