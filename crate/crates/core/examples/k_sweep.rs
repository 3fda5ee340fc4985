//! Compares forward cost and quality across the number of flow samples K.
//!
//! Each model gets a short training run on synthetic pairs so the quality
//! column is meaningful; raise `steps` for a closer comparison.
//! Usage: `k_sweep [steps]`.

use daflow::cli::{cmd_bench, BenchArgs, ConfigArgs};

fn main() -> daflow::Result<()> {
    let steps: usize = std::env::args().nth(1).map_or(60, |s| s.parse().expect("steps"));
    let args = BenchArgs {
        config: ConfigArgs {
            toy: true,
            overrides: ["train_pairs=200", "eval_pairs=40"].map(String::from).to_vec(),
            ..ConfigArgs::default()
        },
        k: vec![1, 2, 4, 6, 8],
        checkpoints: None,
        train_small: true,
        steps,
        reps: 3,
        out: None,
    };
    let rows = cmd_bench(&args)?;
    let slower: Vec<bool> = rows.windows(2).map(|p| p[1].forward_ms > p[0].forward_ms).collect();
    println!("\nforward time grows with K at every step: {}", slower.iter().all(|&b| b));
    Ok(())
}
