//! Apply deterministic affine augmentations (rotation, shift, shear,
//! zoom, flip) to one image and write the variants as PNGs.
//!
//! Run with: cargo run --example augmentation

use admri::data::{augment, preprocess, AugmentParams};
use admri::synth::generate_synthetic_dataset;
use admri::Result;

fn main() -> Result<()> {
    let dir = std::env::temp_dir().join("admri-example-aug");
    let _ = std::fs::remove_dir_all(&dir);
    generate_synthetic_dataset(&dir, 2, 1, 43)?;
    let sample = preprocess(&dir.join("class1/img0000.png"), 1, false)?;

    let out_dir = std::env::temp_dir().join("admri-example-aug-out");
    std::fs::create_dir_all(&out_dir)?;
    let save = |name: &str, t: &admri::tensor::Tensor<f32>| {
        let (h, w) = (t.shape()[0], t.shape()[1]);
        let img = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let mut px = [0u8; 3];
            for c in 0..3 {
                let v = t.data()[((y as usize) * w + x as usize) * 3 + c];
                px[c] = (v * 255.0).round().clamp(0.0, 255.0) as u8;
            }
            image::Rgb(px)
        });
        let path = out_dir.join(name);
        img.save(&path).expect("png written");
        println!("wrote {}", path.display());
    };
    save("original.png", &sample.pixels);

    for id in 0..4u64 {
        // the (seed, id) pair fully determines the transform, so
        // augmented manifest entries are reproducible forever
        let params = AugmentParams::for_id(43, id);
        println!(
            "id {id}: rot {:+6.1}°, shift ({:+.2}, {:+.2}), shear {:+.2}, zoom {:.2}, hflip {}",
            params.rotation_deg,
            params.width_shift,
            params.height_shift,
            params.shear,
            params.zoom,
            params.hflip
        );
        let augmented = augment(&sample, &params)?;
        save(&format!("augmented_{id}.png"), &augmented.pixels);
    }
    Ok(())
}
