//! Train the reduced model end to end on synthetic data and print the
//! per-epoch log, including the plateau-scheduled learning rate.
//!
//! Run with: cargo run --example train_synthetic

use admri::data::{load_entry, resize_bilinear, scan_dataset, split, Split};
use admri::layers::RngState;
use admri::model::{build_model, ModelConfig};
use admri::synth::generate_synthetic_dataset;
use admri::train::{evaluate_split, train, Dataset, TrainConfig};
use admri::Result;

fn load(manifest: &admri::data::DatasetManifest, which: Split, size: usize) -> Result<Dataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for e in manifest.entries.iter().filter(|e| e.split == which) {
        let sample = load_entry(e, manifest.seed, true)?;
        images.push(resize_bilinear(&sample.pixels, size, size)?);
        labels.push(sample.label);
    }
    Ok(Dataset { images, labels })
}

fn main() -> Result<()> {
    let dir = std::env::temp_dir().join("admri-example-train");
    let _ = std::fs::remove_dir_all(&dir);
    generate_synthetic_dataset(&dir, 3, 60, 43)?;
    let manifest = split(&scan_dataset(&dir, None)?, 43, 0.15, 0.15)?;

    let size = 32;
    let train_set = load(&manifest, Split::Train, size)?;
    let val_set = load(&manifest, Split::Val, size)?;
    let test_set = load(&manifest, Split::Test, size)?;
    println!(
        "{} train / {} val / {} test images at {size}x{size}",
        train_set.len(),
        val_set.len(),
        test_set.len()
    );

    let cfg = ModelConfig::for_size(size, 3);
    let mut rng = RngState::new(43, 0);
    let mut model = build_model::<f32>(&cfg, &mut rng)?;
    println!("model has {} parameters", model.num_params());

    let tc = TrainConfig { epochs: 25, ..TrainConfig::default() };
    let log = train(&mut model, &train_set, &val_set, &tc)?;
    println!("epoch  train_loss  val_loss  val_acc      lr");
    for r in &log.records {
        println!(
            "{:5}  {:10.4}  {:8.4}  {:7.3}  {:.2e}",
            r.epoch, r.train_loss, r.val_loss, r.val_acc, r.lr
        );
    }

    let (test_loss, test_acc) = evaluate_split(&mut model, &test_set, 8)?;
    println!("held-out test: loss {test_loss:.4}, accuracy {test_acc:.3}");
    Ok(())
}
