//! Show that grouped-query attention with one key/value group per
//! head is exactly multi-head attention, and how shrinking the group
//! count shrinks the projection parameters.
//!
//! Run with: cargo run --example attention_equivalence

use admri::attention::{
    grouped_query_attention, init_attention_params, multi_head_attention, AttentionConfig,
    AttentionVars,
};
use admri::layers::{LayerParams, RngState};
use admri::tape::Tape;
use admri::Result;

fn vars_on<'a>(tape: &Tape<f64>, p: &LayerParams<f64>) -> AttentionVars {
    let leaf = |k: &str| tape.leaf(p.get(k).clone());
    AttentionVars {
        wq: leaf("wq"),
        bq: leaf("bq"),
        wk: leaf("wk"),
        bk: leaf("bk"),
        wv: leaf("wv"),
        bv: leaf("bv"),
        wo: leaf("wo"),
        bo: leaf("bo"),
    }
}

fn main() -> Result<()> {
    let d = 32;
    let heads = 8;
    let mut rng = RngState::new(7, 0);
    let x = rng.uniform_tensor::<f64>(&[2, 10, d], -1.0, 1.0);
    println!("model dim {d}, {heads} heads, sequence length 10");

    for groups in [heads, heads / 2, heads / 4, 1] {
        let cfg = AttentionConfig { model_dim: d, num_heads: heads, num_kv_groups: groups };
        let mut rng = RngState::new(7, 1);
        let params = init_attention_params::<f64>("attn", &cfg, &mut rng)?;
        let n_params: usize = params.tensors.values().map(|t| t.tensor.len()).sum();

        let tape = Tape::<f64>::new();
        let xv = tape.leaf(x.clone());
        let vars = vars_on(&tape, &params);
        let gqa = grouped_query_attention(&tape, xv, &vars, &cfg)?;
        print!("G = {groups}: {n_params} attention parameters");
        if groups == heads {
            let mha = multi_head_attention(&tape, xv, &vars, &cfg)?;
            let diff = tape.value(gqa.output).max_abs_diff(&tape.value(mha.output));
            print!(", max |GQA - MHA| = {diff:.3e} (identical by construction)");
        }
        println!();
    }
    Ok(())
}
