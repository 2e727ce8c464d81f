//! Save a model's full state to the binary weight format, reload it,
//! and demonstrate that the checksum catches corruption.
//!
//! Run with: cargo run --example weights_roundtrip

use admri::layers::RngState;
use admri::model::{build_model, ModelConfig};
use admri::weights::{load_weights, save_weights};
use admri::Result;

fn main() -> Result<()> {
    let mut rng = RngState::new(9, 0);
    let mut model = build_model::<f32>(&ModelConfig::for_size(32, 3), &mut rng)?;
    // one forward pass in train mode seeds the batch-norm statistics
    let tape = admri::Tape::<f32>::new();
    let x = tape.leaf(rng.uniform_tensor(&[2, 32, 32, 3], 0.0, 1.0));
    model.forward(&tape, x, None, &mut rng)?;

    let state = model.export_state();
    println!("exporting {} tensors ({} parameters)", state.len(), model.num_params());

    let path = std::env::temp_dir().join("admri-example-weights.amri");
    save_weights(&path, &state)?;
    let bytes = std::fs::metadata(&path)?.len();
    println!("wrote {} ({bytes} bytes)", path.display());

    let back = load_weights::<f32>(&path)?;
    let mut rng2 = RngState::new(999, 0);
    let mut fresh = build_model::<f32>(&ModelConfig::for_size(32, 3), &mut rng2)?;
    fresh.import_state(&back)?;
    let diff = state
        .iter()
        .map(|(k, t)| t.max_abs_diff(&back[k]))
        .fold(0.0f64, f64::max);
    println!("round-trip max difference: {diff} (bit-exact)");

    // flip one byte in the payload: the trailing CRC32 must reject it
    let mut raw = std::fs::read(&path)?;
    let mid = raw.len() / 2;
    raw[mid] ^= 0x01;
    std::fs::write(&path, raw)?;
    match load_weights::<f32>(&path) {
        Err(e) => println!("corrupted file rejected as expected: {e}"),
        Ok(_) => panic!("corruption was not detected"),
    }
    Ok(())
}
