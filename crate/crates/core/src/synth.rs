//! Synthetic labeled dataset generator: class-distinct parametric
//! ellipse patterns with seeded jitter and noise, written as
//! grayscale PNGs in one directory per class.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::RngState;
use crate::tensor::Tensor;

pub const SYNTH_SIZE: usize = 128;

/// Per-image rendering parameters drawn deterministically from the
/// dataset seed, class index, and image index.
#[derive(Clone, Debug)]
struct EllipseParams {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    angle: f64,
    intensity: f64,
    voids: Vec<(f64, f64, f64)>, // (center x, center y, radius)
}

fn draw_params(rng: &mut RngState, num_voids: usize) -> EllipseParams {
    let s = SYNTH_SIZE as f64;
    let cx = s / 2.0 + rng.uniform(-12.0, 12.0);
    let cy = s / 2.0 + rng.uniform(-12.0, 12.0);
    let rx = rng.uniform(36.0, 50.0);
    let ry = rng.uniform(36.0, 50.0);
    let angle = rng.uniform(0.0, std::f64::consts::PI);
    let intensity = rng.uniform(0.65, 0.9);
    let mut voids = Vec::with_capacity(num_voids);
    for i in 0..num_voids {
        // place voids in opposite half-planes so two voids do not
        // merge into one; radius is kept large enough to survive a
        // 4x downsampling
        let side = if i % 2 == 0 { 1.0 } else { -1.0 };
        let off_x = side * rng.uniform(8.0, 20.0);
        let off_y = side * rng.uniform(-14.0, 14.0);
        let r = rng.uniform(11.0, 15.0);
        voids.push((cx + off_x, cy + off_y, r));
    }
    EllipseParams { cx, cy, rx, ry, angle, intensity, voids }
}

/// Render one pattern as an [S,S] tensor in [0,1]. Class `c` draws an
/// ellipse with `c` voids punched out of it.
fn render(params: &EllipseParams, rng: &mut RngState) -> Tensor<f32> {
    let s = SYNTH_SIZE;
    let (sin, cos) = params.angle.sin_cos();
    let mut img = Tensor::<f32>::zeros(&[s, s]);
    for y in 0..s {
        for x in 0..s {
            let dx = x as f64 - params.cx;
            let dy = y as f64 - params.cy;
            // rotate into the ellipse frame
            let u = (cos * dx + sin * dy) / params.rx;
            let v = (-sin * dx + cos * dy) / params.ry;
            let d = u * u + v * v;
            let mut val = if d <= 1.0 {
                // soft edge over the outer 10% of the radius
                let edge = ((1.0 - d) / 0.1).min(1.0);
                params.intensity * edge
            } else {
                0.05
            };
            for &(vx, vy, vr) in &params.voids {
                let dd = ((x as f64 - vx).powi(2) + (y as f64 - vy).powi(2)).sqrt();
                if dd <= vr {
                    let edge = ((vr - dd) / 2.0).min(1.0);
                    val = val * (1.0 - edge) + 0.05 * edge;
                }
            }
            let noisy = val + rng.uniform(-0.06, 0.06);
            img.set(&[y, x], noisy.clamp(0.0, 1.0) as f32);
        }
    }
    img
}

fn to_png(img: &Tensor<f32>) -> image::GrayImage {
    let s = SYNTH_SIZE as u32;
    image::GrayImage::from_fn(s, s, |x, y| {
        let v = img.at(&[y as usize, x as usize]);
        image::Luma([(v * 255.0).round().clamp(0.0, 255.0) as u8])
    })
}

/// Generate `classes` × `per_class` grayscale PNGs under `out_dir`,
/// one `class{c}` directory per class. Deterministic for a given
/// seed: repeated runs produce byte-identical trees.
pub fn generate_synthetic_dataset(
    out_dir: &Path,
    classes: usize,
    per_class: usize,
    seed: u64,
) -> Result<()> {
    if !(2..=4).contains(&classes) {
        return Err(Error::Config(format!(
            "synthetic classes must lie in [2,4], got {classes}"
        )));
    }
    if per_class == 0 {
        return Err(Error::Config("per-class image count must be positive".into()));
    }
    for c in 0..classes {
        let dir = out_dir.join(format!("class{c}"));
        fs::create_dir_all(&dir).map_err(|e| Error::file(&dir, e))?;
        for i in 0..per_class {
            // independent stream per image so ordering never matters
            let stream = 0x5359_0000 + (c as u64) * 10_000 + i as u64;
            let mut rng = RngState::new(seed, stream);
            let params = draw_params(&mut rng, c);
            let img = to_png(&render(&params, &mut rng));
            let path = dir.join(format!("img{i:04}.png"));
            img.save(&path)
                .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
        }
    }
    Ok(())
}
