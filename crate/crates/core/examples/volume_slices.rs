//! Store a 3D scan volume in the binary volume format and extract the
//! middle slices along each anatomical plane.
//!
//! Run with: cargo run --example volume_slices

use admri::data::{select_middle_slices, Plane, Volume};
use admri::tensor::Tensor;
use admri::Result;

fn main() -> Result<()> {
    // toy volume [depth, height, width] with a bright core
    let (d, h, w) = (16, 12, 10);
    let mut voxels = Tensor::<f32>::zeros(&[d, h, w]);
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let dist = ((z as f32 - 8.0).powi(2) / 64.0
                    + (y as f32 - 6.0).powi(2) / 36.0
                    + (x as f32 - 5.0).powi(2) / 25.0)
                    .sqrt();
                voxels.set(&[z, y, x], (1.0 - dist).max(0.0));
            }
        }
    }

    let path = std::env::temp_dir().join("admri-example-volume.avol");
    Volume::new(voxels.clone(), Plane::Axial)?.write(&path)?;
    println!("wrote {} ({} voxels)", path.display(), d * h * w);

    for plane in [Plane::Axial, Plane::Sagittal, Plane::Coronal] {
        let vol = Volume::read(&path, plane)?;
        let slices = select_middle_slices(&vol, 3)?;
        println!(
            "{plane:?}: depth {} -> {} middle slices of shape {:?}",
            vol.depth(),
            slices.len(),
            slices[0].shape()
        );
    }
    Ok(())
}
