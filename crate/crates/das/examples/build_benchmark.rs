//! Build a small training benchmark (fully trained architectures with
//! ground-truth accuracy and early-epoch checkpoints) into ./bench_out.
//! Uses a reduced architecture count so it finishes in about a minute;
//! pass a directory argument to choose the output location.
//!
//!     cargo run --release --example build_benchmark [dir]

use std::path::PathBuf;

use das::bench::{build_bench, BenchConfig};

fn main() {
    let dir: PathBuf = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "bench_out".to_string())
        .into();
    let cfg = BenchConfig {
        m: 10,
        ..BenchConfig::default()
    };
    println!(
        "training {} architectures for {} epochs each...",
        cfg.m, cfg.train.epochs
    );
    let bench = build_bench(&cfg, &dir).expect("benchmark build");
    println!("\n{:>18}  {:>9}  checkpoints", "spec", "final_acc");
    for r in bench.records() {
        println!(
            "{:>18}  {:>9.4}  {:?}",
            r.spec_hash,
            r.final_acc,
            r.checkpoints.iter().map(|c| c.epoch).collect::<Vec<_>>()
        );
    }
    if !bench.manifest.failures.is_empty() {
        println!("diverged: {:?}", bench.manifest.failures);
    }
    println!("\nmanifest: {}", dir.join("manifest.json").display());
}
