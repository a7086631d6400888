//! Rank-correlation study over a benchmark: KTau of the WOT and DAS
//! scores against final accuracy, a lambda grid, an epoch sweep over the
//! stored checkpoints, and the 2x2 decoupled-by-fast-training ablation.
//!
//! With no argument a small throwaway benchmark is built in a temp
//! directory; correlations over so few architectures are noisy, so for
//! meaningful numbers pass a directory holding a bigger benchmark
//! (e.g. one built with `das bench-build --m 50 ...`):
//!
//!     cargo run --release --example correlation_study [bench_dir]

use das::bench::{build_bench, load_bench, Bench, BenchConfig, TrainConfig};
use das::data::DatasetSource;
use das::eval::{ablation_grid, epoch_sweep, evaluate_proxy, grid_search_lambda, Method};
use das::proxy::Lambda;
use das::space::Skeleton;

fn build_throwaway(dir: &std::path::Path) -> Bench {
    let cfg = BenchConfig {
        seed: 0,
        m: 16,
        skeleton: Skeleton {
            stem_channels: 8,
            num_stacks: 2,
            cells_per_stack: 1,
            classes: 10,
            input_shape: (3, 12, 12),
        },
        train: TrainConfig {
            epochs: 25,
            lr: 0.02,
            ..TrainConfig::default()
        },
        dataset: DatasetSource::Synthetic {
            classes: 10,
            samples_per_class: 100,
            noise: 1.0,
            image_shape: (3, 12, 12),
        },
    };
    println!(
        "building a {}-architecture benchmark (correlations over so few \
         architectures are noisy)...",
        cfg.m
    );
    build_bench(&cfg, dir).expect("benchmark")
}

fn main() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let bench = match std::env::args().nth(1) {
        Some(dir) => load_bench(std::path::Path::new(&dir)).expect("benchmark loads"),
        None => build_throwaway(tmp.path()),
    };
    println!("{} architectures", bench.records().len());

    let batch_seed = 1;
    for (label, method, lambda, e_f) in [
        ("WOT  (raw kernel, e_f=0)", Method::Wot, Lambda::Auto, 0usize),
        ("DAS  (decoupled,  e_f=0)", Method::Das, Lambda::Auto, 0),
        ("DAS  (decoupled, e_f=30)", Method::Das, Lambda::Auto, 30),
    ] {
        let report = evaluate_proxy(&bench, method, lambda, e_f, batch_seed).expect("eval");
        println!("{}: ktau = {:+.4}", label, report.ktau);
    }

    let lambdas: Vec<f64> = (0..8).map(|k| k as f64 * 8.0).collect();
    let (best, curve) = grid_search_lambda(&bench, &lambdas, 0, batch_seed).expect("grid");
    println!("\nlambda grid (e_f=0):");
    for (lam, kt) in &curve {
        println!("  lambda {:>5.1}: ktau {:+.4}", lam, kt);
    }
    println!("  best: {}", best);

    let (epochs, warnings) =
        epoch_sweep(&bench, &[0, 1, 2, 3, 4, 5], Method::Das, Lambda::Auto, batch_seed)
            .expect("sweep");
    println!("\nscore vs checkpoint epoch:");
    for (epoch, kt) in &epochs {
        println!("  epoch {}: ktau {:+.4}", epoch, kt);
    }
    for w in warnings {
        println!("  warning: {}", w);
    }

    println!("\nablation (decoupled x fast training):");
    for cell in ablation_grid(&bench, 30, batch_seed).expect("ablation") {
        println!(
            "  decoupled={:5} fast={:5}: ktau {:+.4}",
            cell.decoupled, cell.fast_training, cell.ktau
        );
    }
}
