//! Build a full metric report — confusion matrix, micro/macro
//! precision/recall/F1, one-vs-rest AUC, and RMSE — from a set of
//! predicted probabilities.
//!
//! Run with: cargo run --example metrics_report

use admri::layers::RngState;
use admri::metrics::{argmax_rows, confusion, evaluate};
use admri::tensor::softmax;
use admri::Result;

fn main() -> Result<()> {
    let k = 4;
    let n = 200;
    let mut rng = RngState::new(5, 0);

    // synthetic scores: the true class gets a bump, so the classifier
    // is good but imperfect
    let truth: Vec<usize> = (0..n).map(|_| (rng.next_u64() % k as u64) as usize).collect();
    let mut logits = rng.uniform_tensor::<f32>(&[n, k], -1.0, 1.0);
    for (i, &t) in truth.iter().enumerate() {
        logits.data_mut()[i * k + t] += 1.5;
    }
    let probs = softmax(&logits, 1)?;

    let report = evaluate(&truth, &probs, k)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));

    let cm = confusion(&truth, &argmax_rows(&probs), k)?;
    println!("\nconfusion matrix (rows = truth):\n{}", cm.to_csv());
    println!("note: micro precision = recall = F1 = accuracy for single-label data");
    Ok(())
}
