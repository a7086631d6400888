//! Command-line front end.
//!
//! One executable, eight subcommands covering the full pipeline. Options
//! come from `--key value` flags merged over an optional `key = value`
//! config file (flags win); every run writes the fully resolved options
//! back out as `snapshot.cfg` beside its outputs, so any run can be
//! repeated exactly with `--config <out>/snapshot.cfg`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 internal
//! error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::bench::{build_bench, load_bench, BenchConfig, BenchError, TrainConfig};
use crate::data::{load_dataset, write_cifar_binary, DataError, DatasetSource};
use crate::eval::{
    ablation_grid, epoch_sweep, evaluate_proxy, grid_search_lambda, EvalError, EvalReport,
    Method, DEFAULT_SCORE_BATCH,
};
use crate::fasttrain::{fast_train, FastTrainConfig, FastTrainError, TrainTrace};
use crate::proxy::{
    das_score, hamming_kernel, extract_codes, kernel_dump, normalize_kernel, wot_score, Lambda,
    ProxyError, Score,
};
use crate::search::{run_search, SearchConfig, SearchError, SearchPool};
use crate::space::{ArchSpec, Skeleton, SpaceError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

const USAGE: &str = "\
usage: das <command> [--config file] [--out dir] [--seed n] [--threads n] [options]

commands:
  score        score architecture spec files
               --spec a.json[,b.json...] [--ef n] [--lambda auto|x] [--method das|wot]
  search       sample-score-argmax search, repeated over trials
               --bench dir | --space  --n k --trials t [--method das|wot]
               [--lambda auto|x] [--ef n] [--baseline]
  gridsearch   KTau curve over a lambda grid
               --bench dir --lambdas a,b,c [--ef n]
  evaluate     score a benchmark and correlate with final accuracy
               --bench dir [--method das|wot] [--lambda auto|x] [--ef n] [--ablation]
  epoch-sweep  KTau of scores against checkpoints of each epoch
               --bench dir --epochs 0,1,2 [--method das|wot] [--lambda auto|x]
  bench-build  train a ground-truth benchmark into --out
               [--m n] [--epochs n] [--batch-size n] [--lr x] [--momentum x]
  kernel-dump  write a spec's kernel as CSV + PGM
               --spec a.json [--ef n] [--normalized]
  dataset-gen  write the synthetic dataset as CIFAR-10 binary batches
               (requires --shape 3x32x32)

dataset options (score/search/kernel-dump/bench-build/dataset-gen):
  --dataset synthetic|<cifar-dir> --classes n --per-class n --noise x --shape CxHxW
skeleton options: --stem n --stacks n --cells n --input CxHxW
global: --out dir (default out), --seed n (0), --threads n (cores),
        --batch n (64), --config file, --quiet
";

/// A usage/data/internal error carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INTERNAL,
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(format!("i/o error: {}", e))
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<SpaceError> for CliError {
    fn from(e: SpaceError) -> Self {
        match e {
            SpaceError::Malformed(_)
            | SpaceError::Invalid(_)
            | SpaceError::HashMismatch { .. }
            | SpaceError::Json(_) => CliError::data(e.to_string()),
            other => CliError::internal(other.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::ManifestMissing(_)
            | BenchError::ManifestFormat { .. }
            | BenchError::DigestMismatch { .. }
            | BenchError::Io { .. }
            | BenchError::MissingCheckpoint { .. } => CliError::data(e.to_string()),
            BenchError::TooFew(_) | BenchError::TooFewEpochs(_) => {
                CliError::usage(e.to_string())
            }
            BenchError::Data(d) => d.into(),
            BenchError::Space(s) => s.into(),
            BenchError::Checkpoint(c) => CliError::data(c.to_string()),
            other => CliError::internal(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Bench(b) => b.into(),
            EvalError::Data(d) => d.into(),
            EvalError::Space(s) => s.into(),
            other => CliError::internal(other.to_string()),
        }
    }
}

impl From<SearchError> for CliError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::Bench(b) => b.into(),
            SearchError::Data(d) => d.into(),
            SearchError::Space(s) => s.into(),
            SearchError::NoCandidates | SearchError::NoTrials | SearchError::EmptyBench => {
                CliError::usage(e.to_string())
            }
            other => CliError::internal(other.to_string()),
        }
    }
}

impl From<FastTrainError> for CliError {
    fn from(e: FastTrainError) -> Self {
        match e {
            FastTrainError::Space(s) => s.into(),
            other => CliError::internal(other.to_string()),
        }
    }
}

impl From<ProxyError> for CliError {
    fn from(e: ProxyError) -> Self {
        match e {
            ProxyError::Io { .. } => CliError::data(e.to_string()),
            other => CliError::internal(other.to_string()),
        }
    }
}

/// Flags known to take no value.
const BOOL_FLAGS: [&str; 5] = ["ablation", "space", "normalized", "quiet", "baseline"];

/// Resolved options: config-file entries overridden by command-line flags.
#[derive(Debug, Clone)]
pub struct Options {
    pub command: String,
    values: BTreeMap<String, String>,
}

impl Options {
    /// Parse `das <command> --key value ... [--config file]`.
    pub fn parse(args: &[String]) -> Result<Options, CliError> {
        let command = match args.first() {
            Some(c) if !c.starts_with("--") => c.clone(),
            _ => return Err(CliError::usage("missing command")),
        };
        let mut flags: BTreeMap<String, String> = BTreeMap::new();
        let mut i = 1;
        while i < args.len() {
            let arg = &args[i];
            let key = arg
                .strip_prefix("--")
                .ok_or_else(|| CliError::usage(format!("unexpected argument '{}'", arg)))?;
            if key.is_empty() {
                return Err(CliError::usage("empty flag"));
            }
            if BOOL_FLAGS.contains(&key) {
                flags.insert(key.to_string(), "true".to_string());
                i += 1;
            } else {
                let value = args
                    .get(i + 1)
                    .ok_or_else(|| CliError::usage(format!("flag --{} needs a value", key)))?;
                flags.insert(key.to_string(), value.clone());
                i += 2;
            }
        }
        let mut values = BTreeMap::new();
        if let Some(path) = flags.get("config") {
            values = parse_config_file(Path::new(path))?;
            values.remove("config");
        }
        values.extend(flags); // flags override the file
        Ok(Options { command, values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    fn required(&self, key: &str) -> Result<&str, CliError> {
        self.get(key)
            .ok_or_else(|| CliError::usage(format!("missing required flag --{}", key)))
    }

    fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(text) => text
                .parse()
                .map_err(|_| CliError::usage(format!("bad value '{}' for --{}", text, key))),
        }
    }

    fn flag(&self, key: &str) -> bool {
        self.get(key) == Some("true")
    }

    fn lambda(&self) -> Result<Lambda, CliError> {
        match self.str_or("lambda", "auto") {
            "auto" => Ok(Lambda::Auto),
            text => text
                .parse()
                .map(Lambda::Fixed)
                .map_err(|_| CliError::usage(format!("bad value '{}' for --lambda", text))),
        }
    }

    fn method(&self) -> Result<Method, CliError> {
        match self.str_or("method", "das") {
            "das" => Ok(Method::Das),
            "wot" => Ok(Method::Wot),
            other => Err(CliError::usage(format!(
                "bad value '{}' for --method (das|wot)",
                other
            ))),
        }
    }

    fn seed(&self) -> Result<u64, CliError> {
        self.parse_or("seed", 0)
    }

    fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.str_or("out", "out"))
    }

    fn batch_size(&self) -> Result<usize, CliError> {
        self.parse_or("batch", DEFAULT_SCORE_BATCH)
    }

    fn e_f(&self) -> Result<usize, CliError> {
        self.parse_or("ef", 0)
    }

    fn shape(&self, key: &str, default: (usize, usize, usize)) -> Result<(usize, usize, usize), CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(text) => {
                let parts: Vec<usize> = text
                    .split('x')
                    .map(|p| p.parse())
                    .collect::<Result<_, _>>()
                    .map_err(|_| {
                        CliError::usage(format!("bad value '{}' for --{} (want CxHxW)", text, key))
                    })?;
                match parts.as_slice() {
                    [c, h, w] => Ok((*c, *h, *w)),
                    _ => Err(CliError::usage(format!(
                        "bad value '{}' for --{} (want CxHxW)",
                        text, key
                    ))),
                }
            }
        }
    }

    fn skeleton(&self) -> Result<Skeleton, CliError> {
        let d = Skeleton::default();
        Ok(Skeleton {
            stem_channels: self.parse_or("stem", d.stem_channels)?,
            num_stacks: self.parse_or("stacks", d.num_stacks)?,
            cells_per_stack: self.parse_or("cells", d.cells_per_stack)?,
            classes: self.parse_or("classes", d.classes)?,
            input_shape: self.shape("input", d.input_shape)?,
        })
    }

    fn dataset(&self) -> Result<DatasetSource, CliError> {
        match self.str_or("dataset", "synthetic") {
            "synthetic" => {
                let d = DatasetSource::synthetic_default();
                let (classes, spc, noise, shape) = match d {
                    DatasetSource::Synthetic {
                        classes,
                        samples_per_class,
                        noise,
                        image_shape,
                    } => (classes, samples_per_class, noise, image_shape),
                    _ => unreachable!(),
                };
                Ok(DatasetSource::Synthetic {
                    classes: self.parse_or("classes", classes)?,
                    samples_per_class: self.parse_or("per-class", spc)?,
                    noise: self.parse_or("noise", noise)?,
                    image_shape: self.shape("shape", shape)?,
                })
            }
            dir => Ok(DatasetSource::Cifar10Binary {
                dir: PathBuf::from(dir),
            }),
        }
    }

    fn usize_list(&self, key: &str) -> Result<Vec<usize>, CliError> {
        self.list(key)
    }

    fn f64_list(&self, key: &str) -> Result<Vec<f64>, CliError> {
        self.list(key)
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>, CliError> {
        let text = self.required(key)?;
        text.split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| CliError::usage(format!("bad entry '{}' in --{}", p, key)))
            })
            .collect()
    }

    /// Serialize the resolved options as a rerunnable config file.
    fn snapshot(&self) -> String {
        let mut text = format!("# resolved configuration (command: {})\n", self.command);
        for (k, v) in &self.values {
            if k == "config" {
                continue; // the snapshot replaces the file it came from
            }
            let _ = writeln!(text, "{} = {}", k, v);
        }
        text
    }
}

/// `key = value` lines; `#` starts a comment; blank lines ignored.
fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read config {}: {}", path.display(), e)))?;
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::data(format!(
                "{}:{}: expected 'key = value', got '{}'",
                path.display(),
                lineno + 1,
                raw
            ))
        })?;
        out.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(out)
}

/// Parse argv (without the program name) and run the command.
pub fn dispatch(args: &[String]) -> i32 {
    if args.is_empty() || args[0] == "--help" || args[0] == "help" {
        eprint!("{}", USAGE);
        return if args.is_empty() { EXIT_USAGE } else { EXIT_OK };
    }
    let opts = match Options::parse(args) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {}", e.message);
            eprint!("{}", USAGE);
            return e.code;
        }
    };
    match run(&opts) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            if e.code == EXIT_USAGE {
                eprint!("{}", USAGE);
            }
            e.code
        }
    }
}

fn run(opts: &Options) -> Result<(), CliError> {
    let threads: usize = opts.parse_or("threads", 0)?;
    if threads > 0 {
        // Ignore the error when a global pool already exists (tests call
        // dispatch repeatedly in one process).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let out = opts.out_dir();
    fs::create_dir_all(&out)
        .map_err(|e| CliError::data(format!("cannot create {}: {}", out.display(), e)))?;
    match opts.command.as_str() {
        "score" => cmd_score(opts, &out),
        "search" => cmd_search(opts, &out),
        "gridsearch" => cmd_gridsearch(opts, &out),
        "evaluate" => cmd_evaluate(opts, &out),
        "epoch-sweep" => cmd_epoch_sweep(opts, &out),
        "bench-build" => cmd_bench_build(opts, &out),
        "kernel-dump" => cmd_kernel_dump(opts, &out),
        "dataset-gen" => cmd_dataset_gen(opts, &out),
        other => Err(CliError::usage(format!("unknown command '{}'", other))),
    }?;
    fs::write(out.join("snapshot.cfg"), opts.snapshot())?;
    Ok(())
}

fn info(opts: &Options, message: &str) {
    if !opts.flag("quiet") {
        eprintln!("{}", message);
    }
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    fs::write(path, content)
        .map_err(|e| CliError::data(format!("cannot write {}: {}", path.display(), e)))
}

const SCORE_CSV_HEADER: &str = "spec_hash,N,N_A,lambda,logdet_nk,log_na,score,wall_ms";

fn score_csv_row(hash: &str, s: &Score, wall_ms: f64) -> String {
    format!(
        "{},{},{},{},{},{},{},{:.3}",
        hash, s.n, s.n_a, s.lambda, s.logdet_nk, s.log_na, s.value, wall_ms
    )
}

/// Load the shared scoring batch for spec-file commands.
fn spec_scoring_batch(
    opts: &Options,
) -> Result<(crate::data::LabeledSet, Skeleton), CliError> {
    let splits = load_dataset(&opts.dataset()?, opts.seed()?)?;
    let mut rng = crate::seed::stream_rng(opts.seed()?, "score-batch", 0);
    let batch = splits.scorebatch.pick_batch(opts.batch_size()?, &mut rng);
    Ok((batch, opts.skeleton()?))
}

fn cmd_score(opts: &Options, out: &Path) -> Result<(), CliError> {
    let spec_paths: Vec<String> = opts.list("spec")?;
    let (batch, skeleton) = spec_scoring_batch(opts)?;
    let e_f = opts.e_f()?;
    let lambda = opts.lambda()?;
    let method = opts.method()?;

    let mut csv = String::from(SCORE_CSV_HEADER);
    csv.push('\n');
    let mut trace_csv = String::from("spec_hash,epoch,loss\n");
    for path in &spec_paths {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("cannot read spec {}: {}", path, e)))?;
        let spec = ArchSpec::from_json(&text)?;
        let start = Instant::now();
        let cfg = FastTrainConfig::with_epochs(opts.seed()?, e_f);
        let (mut net, trace) =
            fast_train(&spec, &skeleton, &batch.images, &batch.labels, &cfg)?;
        let score = if trace.diverged_at.is_some() {
            Score::neg_infinity(
                batch.len(),
                net.activation_units(),
                lambda.resolve(batch.len()),
            )
        } else {
            match method {
                Method::Das => das_score(&mut net, &batch.images, lambda)?,
                Method::Wot => wot_score(&mut net, &batch.images)?,
            }
        };
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        csv.push_str(&score_csv_row(spec.spec_hash(), &score, wall_ms));
        csv.push('\n');
        append_trace(&mut trace_csv, spec.spec_hash(), &trace);
        info(
            opts,
            &format!("{}: score {} ({} ms)", spec.spec_hash(), score.value, wall_ms as u64),
        );
    }
    write_file(&out.join("scores.csv"), &csv)?;
    if e_f > 0 {
        write_file(&out.join("trace.csv"), &trace_csv)?;
    }
    Ok(())
}

fn append_trace(csv: &mut String, hash: &str, trace: &TrainTrace) {
    for (epoch, loss) in trace.losses.iter().enumerate() {
        let _ = writeln!(csv, "{},{},{}", hash, epoch + 1, loss);
    }
}

fn cmd_search(opts: &Options, out: &Path) -> Result<(), CliError> {
    let cfg = SearchConfig {
        n_candidates: opts.parse_or("n", 10)?,
        method: opts.method()?,
        lambda_auto: matches!(opts.lambda()?, Lambda::Auto),
        lambda: match opts.lambda()? {
            Lambda::Fixed(v) => v,
            Lambda::Auto => 0.0,
        },
        e_f: opts.e_f()?,
        trials: opts.parse_or("trials", 1)?,
        seed: opts.seed()?,
    };
    let bench_store;
    let pool = if opts.flag("space") {
        SearchPool::Space {
            skeleton: opts.skeleton()?,
            dataset: opts.dataset()?,
        }
    } else {
        let dir = opts.required("bench")?;
        bench_store = load_bench(Path::new(dir))?;
        SearchPool::Bench(&bench_store)
    };
    let (trials, summary) = if opts.flag("baseline") {
        match &pool {
            SearchPool::Bench(bench) => {
                crate::search::random_baseline(bench, cfg.trials, cfg.seed)?
            }
            SearchPool::Space { .. } => {
                return Err(CliError::usage("--baseline needs --bench"));
            }
        }
    } else {
        run_search(&pool, &cfg)?
    };

    let mut csv = String::from("trial,chosen_hash,score,final_acc,all_neg_infinity,wall_s\n");
    for t in &trials {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{:.3}",
            t.trial,
            t.chosen_hash,
            t.score,
            t.final_acc.map(|a| a.to_string()).unwrap_or_default(),
            t.all_neg_infinity,
            t.wall_s
        );
    }
    write_file(&out.join("trials.csv"), &csv)?;
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::internal(e.to_string()))?;
    write_file(&out.join("summary.json"), &json)?;
    info(
        opts,
        &format!(
            "{} trial(s): mean_acc {} std {}",
            summary.trials, summary.mean_acc, summary.std_acc
        ),
    );
    Ok(())
}

fn cmd_gridsearch(opts: &Options, out: &Path) -> Result<(), CliError> {
    let bench = load_bench(Path::new(opts.required("bench")?))?;
    let lambdas = opts.f64_list("lambdas")?;
    let e_f = opts.e_f()?;
    let (best, curve) = grid_search_lambda(&bench, &lambdas, e_f, opts.seed()?)?;
    let mut csv = String::from("lambda,ktau\n");
    for (lam, kt) in &curve {
        let _ = writeln!(csv, "{},{}", lam, kt);
    }
    write_file(&out.join("lambda_curve.csv"), &csv)?;
    let json = serde_json::json!({ "best_lambda": best, "e_f": e_f, "points": curve.len() });
    write_file(&out.join("best_lambda.json"), &serde_json::to_string_pretty(&json).unwrap())?;
    info(opts, &format!("best lambda: {}", best));
    Ok(())
}

fn eval_report_csv(report: &EvalReport) -> String {
    let mut csv = String::from("spec_hash,score,final_acc\n");
    for row in &report.rows {
        let _ = writeln!(csv, "{},{},{}", row.spec_hash, row.score, row.final_acc);
    }
    csv
}

fn cmd_evaluate(opts: &Options, out: &Path) -> Result<(), CliError> {
    let bench = load_bench(Path::new(opts.required("bench")?))?;
    let e_f = opts.e_f()?;
    let report = evaluate_proxy(&bench, opts.method()?, opts.lambda()?, e_f, opts.seed()?)?;
    write_file(&out.join("eval.csv"), &eval_report_csv(&report))?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::internal(e.to_string()))?;
    write_file(&out.join("eval.json"), &json)?;
    info(
        opts,
        &format!(
            "{} over {} arch(s): ktau {}",
            report.method, report.n_archs, report.ktau
        ),
    );
    if opts.flag("ablation") {
        let e_f_on = if e_f == 0 { 30 } else { e_f };
        let grid = ablation_grid(&bench, e_f_on, opts.seed()?)?;
        let mut csv = String::from("decoupled,fast_training,ktau\n");
        for cell in &grid {
            let _ = writeln!(csv, "{},{},{}", cell.decoupled, cell.fast_training, cell.ktau);
        }
        write_file(&out.join("ablation.csv"), &csv)?;
    }
    Ok(())
}

fn cmd_epoch_sweep(opts: &Options, out: &Path) -> Result<(), CliError> {
    let bench = load_bench(Path::new(opts.required("bench")?))?;
    let epochs = opts.usize_list("epochs")?;
    let (curve, warnings) =
        epoch_sweep(&bench, &epochs, opts.method()?, opts.lambda()?, opts.seed()?)?;
    for w in &warnings {
        eprintln!("warning: {}", w);
    }
    let mut csv = String::from("epoch,ktau\n");
    for (epoch, kt) in &curve {
        let _ = writeln!(csv, "{},{}", epoch, kt);
    }
    write_file(&out.join("epoch_curve.csv"), &csv)?;
    Ok(())
}

fn cmd_bench_build(opts: &Options, out: &Path) -> Result<(), CliError> {
    let defaults = TrainConfig::default();
    let cfg = BenchConfig {
        seed: opts.seed()?,
        m: opts.parse_or("m", BenchConfig::default().m)?,
        skeleton: opts.skeleton()?,
        train: TrainConfig {
            epochs: opts.parse_or("epochs", defaults.epochs)?,
            batch_size: opts.parse_or("batch-size", defaults.batch_size)?,
            lr: opts.parse_or("lr", defaults.lr)?,
            momentum: opts.parse_or("momentum", defaults.momentum)?,
        },
        dataset: opts.dataset()?,
    };
    let bench = build_bench(&cfg, out)?;
    info(
        opts,
        &format!(
            "built {} record(s), {} failure(s) in {}",
            bench.records().len(),
            bench.manifest.failures.len(),
            out.display()
        ),
    );
    Ok(())
}

fn cmd_kernel_dump(opts: &Options, out: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(opts.required("spec")?)
        .map_err(|e| CliError::data(format!("cannot read spec: {}", e)))?;
    let spec = ArchSpec::from_json(&text)?;
    let (batch, skeleton) = spec_scoring_batch(opts)?;
    let cfg = FastTrainConfig::with_epochs(opts.seed()?, opts.e_f()?);
    let (mut net, _) = fast_train(&spec, &skeleton, &batch.images, &batch.labels, &cfg)?;
    let codes = extract_codes(&mut net, &batch.images)?;
    let kernel = hamming_kernel(&codes)?;
    let kernel = if opts.flag("normalized") {
        normalize_kernel(&kernel)
    } else {
        kernel
    };
    let stem = out.join(format!("kernel_{}", spec.spec_hash()));
    kernel_dump(&kernel, &stem)?;
    info(opts, &format!("wrote {}.csv and .pgm", stem.display()));
    Ok(())
}

fn cmd_dataset_gen(opts: &Options, out: &Path) -> Result<(), CliError> {
    let source = opts.dataset()?;
    match &source {
        DatasetSource::Synthetic { image_shape, .. } => {
            if *image_shape != (3, 32, 32) {
                return Err(CliError::usage(
                    "dataset-gen writes CIFAR-10 records; use --shape 3x32x32",
                ));
            }
        }
        DatasetSource::Cifar10Binary { .. } => {
            return Err(CliError::usage("dataset-gen generates synthetic data only"));
        }
    }
    let splits = load_dataset(&source, opts.seed()?)?;
    for (name, set) in [
        ("train_batch.bin", &splits.train),
        ("val_batch.bin", &splits.val),
        ("score_batch.bin", &splits.scorebatch),
    ] {
        let path = out.join(name);
        write_cifar_binary(set, &path)?;
        info(opts, &format!("{}: {} record(s)", path.display(), set.len()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(parts: &[&str]) -> Vec<String> {
        parts.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(&cfg, "seed = 5\nef = 30 # comment\n\n# full line comment\nlambda = 2.5\n").unwrap();
        let opts = Options::parse(&argv(&[
            "score",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "9",
        ]))
        .unwrap();
        assert_eq!(opts.seed().unwrap(), 9); // flag wins
        assert_eq!(opts.e_f().unwrap(), 30); // file survives
        assert_eq!(opts.lambda().unwrap(), Lambda::Fixed(2.5));
    }

    #[test]
    fn snapshot_round_trips_through_the_parser() {
        let opts = Options::parse(&argv(&[
            "evaluate", "--bench", "b", "--ef", "30", "--ablation", "--seed", "3",
        ]))
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let snap = dir.path().join("snapshot.cfg");
        fs::write(&snap, opts.snapshot()).unwrap();
        let back = Options::parse(&argv(&["evaluate", "--config", snap.to_str().unwrap()])).unwrap();
        assert_eq!(back.get("bench"), Some("b"));
        assert_eq!(back.e_f().unwrap(), 30);
        assert!(back.flag("ablation"));
        assert_eq!(back.seed().unwrap(), 3);
    }

    #[test]
    fn usage_errors() {
        assert!(Options::parse(&argv(&[])).is_err());
        assert!(Options::parse(&argv(&["score", "stray"])).is_err());
        assert!(Options::parse(&argv(&["score", "--ef"])).is_err());
        let opts = Options::parse(&argv(&["score", "--lambda", "zzz"])).unwrap();
        assert!(opts.lambda().is_err());
        let opts = Options::parse(&argv(&["score", "--method", "magic"])).unwrap();
        assert!(opts.method().is_err());
    }

    #[test]
    fn shape_parsing() {
        let opts = Options::parse(&argv(&["score", "--input", "3x16x16"])).unwrap();
        assert_eq!(opts.shape("input", (1, 1, 1)).unwrap(), (3, 16, 16));
        let opts = Options::parse(&argv(&["score", "--input", "3x16"])).unwrap();
        assert!(opts.shape("input", (1, 1, 1)).is_err());
    }

    #[test]
    fn dispatch_maps_error_classes_to_exit_codes() {
        // unknown command -> usage
        assert_eq!(dispatch(&argv(&["transmogrify"])), EXIT_USAGE);
        // missing bench manifest -> data error
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nothing");
        let out = dir.path().join("out");
        assert_eq!(
            dispatch(&argv(&[
                "evaluate",
                "--bench",
                missing.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ])),
            EXIT_DATA
        );
    }
}
