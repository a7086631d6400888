//! End-to-end runs of the `das` binary: every subcommand, config
//! snapshots, and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use das::space::sample_random;

fn das(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_das"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = das(args);
    assert!(
        out.status.success(),
        "das {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {}", path.display(), e))
}

/// Drop CSV columns whose header name mentions wall-clock time; those vary
/// between runs by design.
fn strip_timing(csv: &str) -> String {
    let mut lines = csv.lines();
    let header: Vec<&str> = match lines.next() {
        Some(h) => h.split(',').collect(),
        None => return String::new(),
    };
    let keep: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, name)| !name.starts_with("wall_"))
        .map(|(i, _)| i)
        .collect();
    let mut out = String::new();
    for line in csv.lines() {
        let fields: Vec<&str> = line.split(',').collect();
        let kept: Vec<&str> = keep.iter().map(|&i| fields[i]).collect();
        out.push_str(&kept.join(","));
        out.push('\n');
    }
    out
}

const TINY_BENCH: [&str; 21] = [
    "bench-build",
    "--m",
    "5",
    "--epochs",
    "6",
    "--stem",
    "4",
    "--stacks",
    "1",
    "--classes",
    "3",
    "--input",
    "1x6x6",
    "--shape",
    "1x6x6",
    "--per-class",
    "20",
    "--seed",
    "11",
    "--threads",
    "2",
];

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let bench_dir = dir.path().join("bench");
    let bench_str = bench_dir.to_str().unwrap();

    // bench-build
    let mut args: Vec<&str> = TINY_BENCH.to_vec();
    args.extend(["--out", bench_str]);
    ok(&args);
    assert!(bench_dir.join("manifest.json").exists());
    assert!(bench_dir.join("snapshot.cfg").exists());

    // evaluate with ablation
    let eval_out = dir.path().join("eval");
    ok(&[
        "evaluate",
        "--bench",
        bench_str,
        "--ef",
        "2",
        "--ablation",
        "--out",
        eval_out.to_str().unwrap(),
        "--quiet",
    ]);
    let csv = read(&eval_out.join("eval.csv"));
    assert!(csv.starts_with("spec_hash,score,final_acc\n"));
    assert_eq!(csv.lines().count(), 6); // header + 5 records
    let ablation = read(&eval_out.join("ablation.csv"));
    assert_eq!(ablation.lines().count(), 5); // header + 4 cells
    assert!(eval_out.join("eval.json").exists());

    // gridsearch
    let grid_out = dir.path().join("grid");
    ok(&[
        "gridsearch",
        "--bench",
        bench_str,
        "--lambdas",
        "0,4,8",
        "--out",
        grid_out.to_str().unwrap(),
        "--quiet",
    ]);
    let curve = read(&grid_out.join("lambda_curve.csv"));
    assert_eq!(curve.lines().count(), 4);
    assert!(read(&grid_out.join("best_lambda.json")).contains("best_lambda"));

    // epoch-sweep (epoch 9 missing -> warning, not failure)
    let sweep_out = dir.path().join("sweep");
    let out = ok(&[
        "epoch-sweep",
        "--bench",
        bench_str,
        "--epochs",
        "0,2,9",
        "--out",
        sweep_out.to_str().unwrap(),
        "--quiet",
    ]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch 9"));
    let curve = read(&sweep_out.join("epoch_curve.csv"));
    assert_eq!(curve.lines().count(), 3); // header + epochs 0, 2

    // search over the bench, plus the random baseline
    let search_out = dir.path().join("search");
    ok(&[
        "search",
        "--bench",
        bench_str,
        "--n",
        "3",
        "--trials",
        "4",
        "--out",
        search_out.to_str().unwrap(),
        "--quiet",
    ]);
    let summary = read(&search_out.join("summary.json"));
    for key in ["mean_acc", "std_acc", "mean_cost_s", "trials"] {
        assert!(summary.contains(key), "summary lacks {}", key);
    }
    assert_eq!(read(&search_out.join("trials.csv")).lines().count(), 5);
    let base_out = dir.path().join("baseline");
    ok(&[
        "search",
        "--bench",
        bench_str,
        "--baseline",
        "--trials",
        "4",
        "--out",
        base_out.to_str().unwrap(),
        "--quiet",
    ]);
    assert!(base_out.join("summary.json").exists());
}

#[test]
fn score_and_kernel_dump_from_spec_files() {
    let dir = tempfile::tempdir().unwrap();
    let spec_a = dir.path().join("a.json");
    let spec_b = dir.path().join("b.json");
    fs::write(&spec_a, sample_random(1).unwrap().to_json()).unwrap();
    fs::write(&spec_b, sample_random(2).unwrap().to_json()).unwrap();
    let specs = format!("{},{}", spec_a.display(), spec_b.display());

    let out = dir.path().join("scores");
    ok(&[
        "score",
        "--spec",
        &specs,
        "--ef",
        "3",
        "--stem",
        "4",
        "--stacks",
        "1",
        "--classes",
        "3",
        "--input",
        "1x6x6",
        "--shape",
        "1x6x6",
        "--per-class",
        "20",
        "--batch",
        "8",
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    let csv = read(&out.join("scores.csv"));
    assert!(csv.starts_with("spec_hash,N,N_A,lambda,logdet_nk,log_na,score,wall_ms\n"));
    assert_eq!(csv.lines().count(), 3);
    // trace has 3 epochs per spec
    let trace = read(&out.join("trace.csv"));
    assert_eq!(trace.lines().count(), 1 + 2 * 3);

    // kernel-dump: CSV parses back to a symmetric matrix, PGM is binary P5
    let kout = dir.path().join("kernel");
    ok(&[
        "kernel-dump",
        "--spec",
        spec_a.to_str().unwrap(),
        "--stem",
        "4",
        "--stacks",
        "1",
        "--classes",
        "3",
        "--input",
        "1x6x6",
        "--shape",
        "1x6x6",
        "--per-class",
        "20",
        "--batch",
        "8",
        "--out",
        kout.to_str().unwrap(),
        "--quiet",
    ]);
    let files: Vec<_> = fs::read_dir(&kout)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .collect();
    let csv_path = files.iter().find(|p| p.extension().unwrap() == "csv").unwrap();
    let pgm_path = files.iter().find(|p| p.extension().unwrap() == "pgm").unwrap();
    let matrix: Vec<Vec<f64>> = read(csv_path)
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(matrix.len(), 8);
    for i in 0..8 {
        for j in 0..8 {
            assert!((matrix[i][j] - matrix[j][i]).abs() < 1e-6);
        }
    }
    assert!(fs::read(pgm_path).unwrap().starts_with(b"P5\n8 8\n255\n"));
}

#[test]
fn snapshot_reruns_are_byte_identical_single_threaded() {
    let dir = tempfile::tempdir().unwrap();
    let bench_dir = dir.path().join("bench");
    let mut args: Vec<&str> = TINY_BENCH.to_vec();
    args.extend(["--out", bench_dir.to_str().unwrap()]);
    ok(&args);

    let out1 = dir.path().join("run1");
    ok(&[
        "evaluate",
        "--bench",
        bench_dir.to_str().unwrap(),
        "--ef",
        "2",
        "--threads",
        "1",
        "--out",
        out1.to_str().unwrap(),
        "--quiet",
    ]);
    // rerun purely from the snapshot, into a second directory
    let snap = out1.join("snapshot.cfg");
    let out2 = dir.path().join("run2");
    ok(&[
        "evaluate",
        "--config",
        snap.to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert_eq!(read(&out1.join("eval.csv")), read(&out2.join("eval.csv")));
    assert_eq!(read(&out1.join("eval.json")), read(&out2.join("eval.json")));

    // score CSV is identical once timing columns are dropped
    let spec = dir.path().join("s.json");
    fs::write(&spec, sample_random(4).unwrap().to_json()).unwrap();
    let score_args = |out: &str| -> Vec<String> {
        [
            "score", "--spec", spec.to_str().unwrap(), "--stem", "4", "--stacks", "1",
            "--classes", "3", "--input", "1x6x6", "--shape", "1x6x6", "--per-class", "20",
            "--threads", "1", "--out", out, "--quiet",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    };
    let s1 = dir.path().join("s1");
    let s2 = dir.path().join("s2");
    let run = |args: Vec<String>| {
        let strs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
        ok(&strs);
    };
    run(score_args(s1.to_str().unwrap()));
    run(score_args(s2.to_str().unwrap()));
    assert_eq!(
        strip_timing(&read(&s1.join("scores.csv"))),
        strip_timing(&read(&s2.join("scores.csv")))
    );
}

#[test]
fn dataset_gen_writes_loadable_cifar_batches() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    ok(&[
        "dataset-gen",
        "--classes",
        "4",
        "--per-class",
        "10",
        "--shape",
        "3x32x32",
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    for name in ["train_batch.bin", "val_batch.bin", "score_batch.bin"] {
        let meta = fs::metadata(out.join(name)).unwrap();
        assert_eq!(meta.len() % 3073, 0, "{} not whole records", name);
    }
    // the emitted directory loads as a CIFAR-10 source
    let splits = das::data::load_dataset(
        &das::data::DatasetSource::Cifar10Binary {
            dir: out.clone(),
        },
        0,
    )
    .unwrap();
    assert_eq!(
        splits.train.len() + splits.val.len() + splits.scorebatch.len(),
        40
    );

    // non-CIFAR shape is a usage error
    let bad = das(&[
        "dataset-gen",
        "--shape",
        "1x8x8",
        "--out",
        dir.path().join("bad").to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn exit_codes_match_error_classes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = out.to_str().unwrap();

    // no command / unknown flag / unknown command -> 1
    assert_eq!(das(&[]).status.code(), Some(1));
    assert_eq!(das(&["frobnicate", "--out", o]).status.code(), Some(1));
    let bad_flag = das(&["score", "--bogus-flag", "x", "--out", o]);
    // unknown keys parse as options but score then misses --spec -> usage
    assert_eq!(bad_flag.status.code(), Some(1));

    // missing bench dir -> 2, with the path in the message
    let missing = dir.path().join("no-bench");
    let r = das(&["evaluate", "--bench", missing.to_str().unwrap(), "--out", o]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("no-bench"));

    // malformed spec file -> 2
    let spec = dir.path().join("broken.json");
    fs::write(&spec, "{ not json").unwrap();
    let r = das(&["score", "--spec", spec.to_str().unwrap(), "--out", o]);
    assert_eq!(r.status.code(), Some(2));

    // tampered spec hash -> 2
    let spec_ok = dir.path().join("good.json");
    let text = sample_random(1).unwrap().to_json();
    let tampered = text.replace("\"hash\": \"", "\"hash\": \"0");
    fs::write(&spec_ok, tampered).unwrap();
    let r = das(&["score", "--spec", spec_ok.to_str().unwrap(), "--out", o]);
    assert_eq!(r.status.code(), Some(2));

    // help goes to stderr with exit 0
    let h = das(&["help"]);
    assert_eq!(h.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&h.stderr).contains("usage:"));
}
