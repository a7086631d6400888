//! End-to-end pipeline tests: fast training, benchmark build/load/restore,
//! proxy evaluation, and search, all on a miniature configuration.

use std::path::Path;

use das::bench::{build_bench, load_bench, Bench, BenchConfig, BenchError, TrainConfig};
use das::data::{load_dataset, DatasetSource};
use das::eval::{
    ablation_grid, epoch_sweep, evaluate_proxy, grid_search_lambda, scoring_batch, Method,
    DEFAULT_SCORE_BATCH,
};
use das::fasttrain::{fast_train, fast_train_then_score, FastTrainConfig};
use das::proxy::{das_score, Lambda};
use das::search::{random_baseline, run_search, SearchConfig, SearchPool};
use das::space::{compile, sample_random, Skeleton};

fn tiny_skeleton() -> Skeleton {
    Skeleton {
        stem_channels: 4,
        num_stacks: 1,
        cells_per_stack: 1,
        classes: 3,
        input_shape: (1, 6, 6),
    }
}

fn tiny_dataset() -> DatasetSource {
    DatasetSource::Synthetic {
        classes: 3,
        samples_per_class: 20,
        noise: 0.5,
        image_shape: (1, 6, 6),
    }
}

fn tiny_bench_config() -> BenchConfig {
    BenchConfig {
        seed: 11,
        m: 6,
        skeleton: tiny_skeleton(),
        train: TrainConfig {
            epochs: 6,
            batch_size: 16,
            lr: 0.05,
            momentum: 0.9,
        },
        dataset: tiny_dataset(),
    }
}

fn build_tiny_bench(dir: &Path) -> Bench {
    build_bench(&tiny_bench_config(), dir).unwrap()
}

// ------------------------------------------------------------ fast training

#[test]
fn zero_epochs_is_the_pure_zero_cost_score() {
    let spec = sample_random(3).unwrap();
    let skel = tiny_skeleton();
    let splits = load_dataset(&tiny_dataset(), 5).unwrap();
    let batch = &splits.scorebatch;

    let cfg = FastTrainConfig::zero_cost(123);
    let (score, trace) =
        fast_train_then_score(&spec, &skel, &batch.images, &batch.labels, &cfg, Lambda::Auto)
            .unwrap();
    assert!(trace.losses.is_empty());
    assert!(trace.diverged_at.is_none());

    // identical to compiling, initializing from the same seed, and scoring
    let mut net = compile(&spec, &skel).unwrap();
    net.init_params(123);
    let direct = das_score(&mut net, &batch.images, Lambda::Auto).unwrap();
    assert_eq!(score.value, direct.value);
    assert_eq!(score.logdet_nk, direct.logdet_nk);

    // e_f = 0 must not touch the parameters
    let (trained, _) = fast_train(&spec, &skel, &batch.images, &batch.labels, &cfg).unwrap();
    assert_eq!(trained.param_checksum(), net.param_checksum());
}

#[test]
fn fast_training_reduces_the_batch_loss() {
    let skel = tiny_skeleton();
    let splits = load_dataset(&tiny_dataset(), 5).unwrap();
    let batch = &splits.scorebatch;
    let mut improved = 0;
    for seed in 0..5u64 {
        let spec = sample_random(seed + 100).unwrap();
        let cfg = FastTrainConfig::with_epochs(seed, 30);
        let (_, trace) = fast_train(&spec, &skel, &batch.images, &batch.labels, &cfg).unwrap();
        assert_eq!(trace.losses.len(), 30);
        assert!(trace.diverged_at.is_none());
        if trace.losses[29] < trace.losses[0] {
            improved += 1;
        }
    }
    assert!(improved >= 4, "loss dropped in only {}/5 runs", improved);
}

#[test]
fn divergence_is_recorded_not_fatal() {
    let spec = sample_random(1).unwrap();
    let skel = tiny_skeleton();
    let splits = load_dataset(&tiny_dataset(), 5).unwrap();
    let batch = &splits.scorebatch;
    // absurd learning rate blows the parameters up quickly
    let cfg = FastTrainConfig {
        e_f: 60,
        lr: 1e12,
        momentum: 0.9,
        seed: 0,
    };
    let (score, trace) =
        fast_train_then_score(&spec, &skel, &batch.images, &batch.labels, &cfg, Lambda::Auto)
            .unwrap();
    assert!(trace.diverged_at.is_some());
    assert_eq!(score.value, f64::NEG_INFINITY);
}

// -------------------------------------------------------------- bench build

#[test]
fn bench_build_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let built = build_tiny_bench(dir.path());
    assert_eq!(built.records().len() + built.manifest.failures.len(), 6);
    assert!(built.records().len() >= 2, "too many training failures");

    for r in built.records() {
        // final accuracy equals the last epoch's entry
        assert_eq!(r.final_acc, r.epoch_acc.last().unwrap().1);
        assert_eq!(r.epoch_acc.len(), 6);
        // checkpoints at epochs 1..5 plus the final epoch
        let epochs: Vec<usize> = r.checkpoints.iter().map(|c| c.epoch).collect();
        assert_eq!(epochs, vec![1, 2, 3, 4, 5, 6]);
    }

    let loaded = load_bench(dir.path()).unwrap();
    assert_eq!(loaded.records().len(), built.records().len());
    assert_eq!(
        loaded.manifest.train_config_digest,
        built.manifest.train_config_digest
    );
    for (a, b) in loaded.records().iter().zip(built.records()) {
        assert_eq!(a.spec_hash, b.spec_hash);
        assert_eq!(a.final_acc, b.final_acc);
        assert_eq!(a.seed, b.seed);
    }
}

#[test]
fn bench_rebuild_is_deterministic() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let a = build_tiny_bench(d1.path());
    let b = build_tiny_bench(d2.path());
    for (ra, rb) in a.records().iter().zip(b.records()) {
        assert_eq!(ra.spec_hash, rb.spec_hash);
        assert_eq!(ra.final_acc, rb.final_acc);
        assert_eq!(ra.epoch_acc, rb.epoch_acc);
        for (ca, cb) in ra.checkpoints.iter().zip(&rb.checkpoints) {
            assert_eq!(ca.digest, cb.digest, "checkpoint bytes differ");
        }
    }
}

#[test]
fn restored_checkpoint_reproduces_recorded_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let bench = build_tiny_bench(dir.path());
    let splits = bench.dataset().unwrap();
    let record = &bench.records()[0];
    for &(epoch, recorded) in &record.epoch_acc {
        if record.checkpoint_for(epoch).is_none() {
            continue;
        }
        let mut net = bench.restore(record, epoch).unwrap();
        let acc = das::bench::evaluate_accuracy(&mut net, &splits.val).unwrap();
        assert!(
            (acc - recorded).abs() < 1e-6,
            "epoch {}: restored {} vs recorded {}",
            epoch,
            acc,
            recorded
        );
    }
    // epoch 0 restores the fresh initialization
    let net0 = bench.restore(record, 0).unwrap();
    let mut fresh = compile(&record.spec().unwrap(), &bench.manifest.skeleton).unwrap();
    fresh.init_params(record.seed);
    assert_eq!(net0.param_checksum(), fresh.param_checksum());
    // an epoch that was never checkpointed is a structured error
    assert!(matches!(
        bench.restore(record, 99),
        Err(BenchError::MissingCheckpoint { .. })
    ));
}

#[test]
fn tampered_checkpoint_is_detected_on_load() {
    let dir = tempfile::tempdir().unwrap();
    let bench = build_tiny_bench(dir.path());
    let ck = &bench.records()[0].checkpoints[0];
    let path = dir.path().join(&ck.path);
    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(
        load_bench(dir.path()),
        Err(BenchError::DigestMismatch { .. })
    ));
}

#[test]
fn missing_manifest_is_a_structured_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        load_bench(dir.path()),
        Err(BenchError::ManifestMissing(_))
    ));
}

#[test]
fn bench_rejects_degenerate_configs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_bench_config();
    cfg.m = 1;
    assert!(matches!(
        build_bench(&cfg, dir.path()),
        Err(BenchError::TooFew(1))
    ));
    let mut cfg = tiny_bench_config();
    cfg.train.epochs = 5;
    assert!(matches!(
        build_bench(&cfg, dir.path()),
        Err(BenchError::TooFewEpochs(5))
    ));
}

// --------------------------------------------------------------- evaluation

#[test]
fn evaluate_proxy_is_deterministic_with_full_coverage() {
    let dir = tempfile::tempdir().unwrap();
    let bench = build_tiny_bench(dir.path());
    let a = evaluate_proxy(&bench, Method::Das, Lambda::Auto, 0, 7).unwrap();
    let b = evaluate_proxy(&bench, Method::Das, Lambda::Auto, 0, 7).unwrap();
    assert_eq!(a.ktau, b.ktau);
    assert_eq!(a.n_archs, bench.records().len());
    assert!(a.ktau.is_finite() && a.ktau.abs() <= 1.0);
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        assert_eq!(ra.score, rb.score);
    }
    // the scoring batch itself is pinned by the batch seed
    let s1 = scoring_batch(&bench, 7, DEFAULT_SCORE_BATCH).unwrap();
    let s2 = scoring_batch(&bench, 7, DEFAULT_SCORE_BATCH).unwrap();
    assert_eq!(s1.labels, s2.labels);
    assert_eq!(s1.images.data(), s2.images.data());

    // wot and das at lambda = N rank identically
    let wot = evaluate_proxy(&bench, Method::Wot, Lambda::Auto, 0, 7).unwrap();
    let das_n = evaluate_proxy(
        &bench,
        Method::Das,
        Lambda::Fixed(s1.len() as f64),
        0,
        7,
    )
    .unwrap();
    assert!((wot.ktau - das_n.ktau).abs() < 1e-12);
}

#[test]
fn lambda_grid_singleton_and_argmax() {
    let dir = tempfile::tempdir().unwrap();
    let bench = build_tiny_bench(dir.path());

    let (best, curve) = grid_search_lambda(&bench, &[4.0], 0, 7).unwrap();
    assert_eq!(best, 4.0);
    assert_eq!(curve.len(), 1);

    let lambdas = [0.0, 2.0, 4.0, 8.0, 16.0];
    let (best, curve) = grid_search_lambda(&bench, &lambdas, 0, 7).unwrap();
    assert_eq!(curve.len(), lambdas.len());
    let best_kt = curve.iter().find(|(l, _)| *l == best).unwrap().1;
    assert!(curve.iter().all(|&(_, kt)| kt <= best_kt));
    // first-index tie-break: best is the earliest lambda at the max
    let first_at_max = curve.iter().find(|&&(_, kt)| kt == best_kt).unwrap().0;
    assert_eq!(best, first_at_max);

    assert!(grid_search_lambda(&bench, &[], 0, 7).is_err());
}

#[test]
fn epoch_sweep_scores_checkpoints_and_warns_on_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let bench = build_tiny_bench(dir.path());
    let (curve, warnings) =
        epoch_sweep(&bench, &[0, 1, 3, 9], Method::Das, Lambda::Auto, 7).unwrap();
    let epochs: Vec<usize> = curve.iter().map(|&(e, _)| e).collect();
    assert_eq!(epochs, vec![0, 1, 3]);
    assert!(curve.iter().all(|&(_, kt)| kt.is_finite() && kt.abs() <= 1.0));
    assert_eq!(warnings.len(), 1);
    assert!(warnings[0].contains("epoch 9"), "{}", warnings[0]);
}

#[test]
fn ablation_grid_has_all_four_cells() {
    let dir = tempfile::tempdir().unwrap();
    let bench = build_tiny_bench(dir.path());
    let grid = ablation_grid(&bench, 5, 7).unwrap();
    assert_eq!(grid.len(), 4);
    let mut combos: Vec<(bool, bool)> =
        grid.iter().map(|c| (c.decoupled, c.fast_training)).collect();
    combos.sort();
    assert_eq!(
        combos,
        vec![(false, false), (false, true), (true, false), (true, true)]
    );
    for cell in &grid {
        assert!(cell.ktau.is_finite() && cell.ktau.abs() <= 1.0);
    }
}

// ------------------------------------------------------------------- search

#[test]
fn search_over_bench_is_deterministic_and_scored() {
    let dir = tempfile::tempdir().unwrap();
    let bench = build_tiny_bench(dir.path());
    let cfg = SearchConfig {
        n_candidates: 3,
        method: Method::Das,
        lambda_auto: true,
        lambda: 0.0,
        e_f: 0,
        trials: 4,
        seed: 2,
    };
    let pool = SearchPool::Bench(&bench);
    let (t1, s1) = run_search(&pool, &cfg).unwrap();
    let (t2, s2) = run_search(&pool, &cfg).unwrap();
    assert_eq!(t1.len(), 4);
    for (a, b) in t1.iter().zip(&t2) {
        assert_eq!(a.chosen_hash, b.chosen_hash);
        assert_eq!(a.score, b.score);
    }
    assert_eq!(s1.mean_acc, s2.mean_acc);
    assert_eq!(s1.trials, 4);
    // chosen record comes from the bench, with its ground truth attached
    for t in &t1 {
        let rec = bench
            .records()
            .iter()
            .find(|r| r.spec_hash == t.chosen_hash)
            .expect("chosen arch is a bench record");
        assert_eq!(t.final_acc, Some(rec.final_acc));
    }
    // asking for more candidates than records degrades to the full bench
    let cfg_all = SearchConfig {
        n_candidates: 100,
        ..cfg
    };
    let (tall, _) = run_search(&pool, &cfg_all).unwrap();
    assert_eq!(tall.len(), 4);

    // the summary's mean is the mean of the trial accuracies
    let mean: f64 = t1.iter().map(|t| t.final_acc.unwrap()).sum::<f64>() / t1.len() as f64;
    assert!((s1.mean_acc - mean).abs() < 1e-12);
}

#[test]
fn search_over_the_open_space_works_without_ground_truth() {
    let cfg = SearchConfig {
        n_candidates: 3,
        method: Method::Das,
        lambda_auto: false,
        lambda: 8.0,
        e_f: 0,
        trials: 2,
        seed: 5,
    };
    let pool = SearchPool::Space {
        skeleton: tiny_skeleton(),
        dataset: tiny_dataset(),
    };
    let (trials, summary) = run_search(&pool, &cfg).unwrap();
    assert_eq!(trials.len(), 2);
    for t in &trials {
        assert!(t.final_acc.is_none());
        assert!(!t.chosen_hash.is_empty());
    }
    assert!(summary.mean_acc.is_nan());
}

#[test]
fn random_baseline_is_deterministic_and_unscored() {
    let dir = tempfile::tempdir().unwrap();
    let bench = build_tiny_bench(dir.path());
    let (a, sa) = random_baseline(&bench, 8, 3).unwrap();
    let (b, _) = random_baseline(&bench, 8, 3).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.chosen_hash, y.chosen_hash);
        assert!(x.score.is_nan());
    }
    assert_eq!(sa.trials, 8);
    assert!(sa.mean_acc.is_finite());
}
