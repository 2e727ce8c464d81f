//! Verify analytic gradients against central finite differences for a
//! convolution + batch-norm + pooling stack.
//!
//! Run with: cargo run --example gradient_check

use admri::layers::{batch_norm, conv2d, global_avg_pool, BnStats, Mode, Padding, RngState};
use admri::tape::{finite_difference_check, ReduceOp};
use admri::Result;

fn main() -> Result<()> {
    let mut rng = RngState::new(1, 0);
    let x = rng.uniform_tensor::<f64>(&[2, 8, 8, 3], -1.0, 1.0);
    let kernel = rng.uniform_tensor::<f64>(&[3, 3, 3, 4], -0.5, 0.5);
    let gamma = rng.uniform_tensor::<f64>(&[4], 0.5, 1.5);
    let beta = rng.uniform_tensor::<f64>(&[4], -0.5, 0.5);

    let check = finite_difference_check(
        &|tape, v| {
            let y = conv2d(tape, v, tape.leaf(kernel.clone()), None, 1, Padding::Same)?;
            let stats = BnStats::new(4);
            let (y, _) = batch_norm(
                tape,
                y,
                tape.leaf(gamma.clone()),
                tape.leaf(beta.clone()),
                &stats,
                Mode::Train,
            )?;
            let y = tape.relu(y)?;
            let y = global_avg_pool(tape, y)?;
            let sq = tape.mul(y, y)?;
            tape.reduce(ReduceOp::Sum, sq, &[0, 1], false)
        },
        &x,
        1e-5,
    )?;

    println!("checked {} input coordinates", check.numeric.len());
    println!("max relative error vs finite differences: {:.3e}", check.max_rel_err);
    assert!(check.max_rel_err < 1e-6);
    println!("analytic gradients agree with finite differences");
    Ok(())
}
