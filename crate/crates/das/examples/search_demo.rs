//! Proxy-guided search vs the random baseline: sample candidates, score
//! them with DAS, keep the argmax, and compare the chosen architectures'
//! ground-truth accuracy over repeated trials.
//!
//! With no argument a small throwaway benchmark is built in a temp
//! directory; pass a directory holding a bigger benchmark (e.g. from
//! `das bench-build --m 50 ...`) for a less noisy comparison:
//!
//!     cargo run --release --example search_demo [bench_dir]

use das::bench::{build_bench, load_bench, Bench, BenchConfig, TrainConfig};
use das::data::DatasetSource;
use das::eval::Method;
use das::search::{random_baseline, run_search, SearchConfig, SearchPool};
use das::space::Skeleton;

fn build_throwaway(dir: &std::path::Path) -> Bench {
    let cfg = BenchConfig {
        seed: 5,
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
    println!("building a {}-architecture benchmark...", cfg.m);
    build_bench(&cfg, dir).expect("benchmark")
}

fn main() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let bench = match std::env::args().nth(1) {
        Some(dir) => load_bench(std::path::Path::new(&dir)).expect("benchmark loads"),
        None => build_throwaway(tmp.path()),
    };
    let pool = SearchPool::Bench(&bench);

    let search_cfg = SearchConfig {
        n_candidates: 10,
        method: Method::Das,
        lambda_auto: true,
        lambda: 0.0,
        e_f: 0,
        trials: 100,
        seed: 1,
    };
    let (_, proxy) = run_search(&pool, &search_cfg).expect("search");
    let (_, random) = random_baseline(&bench, search_cfg.trials, search_cfg.seed).expect("baseline");

    println!("\nover {} trials of {} candidates:", search_cfg.trials, search_cfg.n_candidates);
    println!(
        "  DAS-guided : mean acc {:.4} (std {:.4}), mean cost {:.2}s",
        proxy.mean_acc, proxy.std_acc, proxy.mean_cost_s
    );
    println!(
        "  random pick: mean acc {:.4} (std {:.4})",
        random.mean_acc, random.std_acc
    );
}
