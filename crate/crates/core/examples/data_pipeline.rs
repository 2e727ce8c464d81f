//! Walk the data pipeline: generate a synthetic dataset, scan it into
//! a manifest, make a deterministic stratified split, and balance the
//! training classes with augmented copies.
//!
//! Run with: cargo run --example data_pipeline

use admri::data::{balance_training_set, count_by_class, manifest_hash, scan_dataset, split, Split};
use admri::synth::generate_synthetic_dataset;
use admri::Result;

fn main() -> Result<()> {
    let dir = std::env::temp_dir().join("admri-example-pipeline");
    let _ = std::fs::remove_dir_all(&dir);
    // deliberately unbalanced: trim class2 after generation
    generate_synthetic_dataset(&dir, 3, 40, 43)?;
    for i in 10..40 {
        std::fs::remove_file(dir.join(format!("class2/img{i:04}.png")))?;
    }

    let manifest = scan_dataset(&dir, None)?;
    println!("scanned {} images, classes {:?}", manifest.entries.len(), manifest.class_names);

    let manifest = split(&manifest, 43, 0.15, 0.15)?;
    println!("split hash (stable across runs): {}", manifest_hash(&manifest));
    for which in [Split::Train, Split::Val, Split::Test] {
        println!("  {which:?}: {:?}", count_by_class(&manifest, which));
    }

    let balanced = balance_training_set(&manifest, 10.0)?;
    println!("after balancing the training split:");
    println!("  Train: {:?}", count_by_class(&balanced, Split::Train));
    let augmented = balanced.entries.iter().filter(|e| e.augmentation().is_some()).count();
    println!("  {augmented} deterministic augmented copies were added");
    Ok(())
}
