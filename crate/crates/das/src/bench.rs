//! DTB-mini: a desk-scale ground-truth benchmark.
//!
//! Randomly sampled architectures are fully trained on a small dataset;
//! each record keeps the final validation accuracy, the per-epoch accuracy
//! curve, and parameter checkpoints for the early epochs (1..5) plus the
//! final state, so proxies can be evaluated both at initialization and
//! against partially trained weights.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{load_dataset, DataError, DatasetSource, DatasetSplits, LabeledSet};
use crate::nn::checkpoint::{self, CheckpointError};
use crate::nn::{accuracy, Network, NnError};
use crate::seed::{fnv1a64, stream_rng, stream_seed};
use crate::space::{compile, sample_random_with, ArchSpec, Skeleton, SpaceError};

/// Early epochs whose weights are checkpointed, in addition to the final state.
pub const CHECKPOINT_EPOCHS: [usize; 5] = [1, 2, 3, 4, 5];

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bench manifest missing: {0}")]
    ManifestMissing(PathBuf),
    #[error("bad manifest {path}: {detail}")]
    ManifestFormat { path: PathBuf, detail: String },
    #[error("checkpoint corruption: {path} has digest {got}, manifest says {want}")]
    DigestMismatch {
        path: PathBuf,
        got: String,
        want: String,
    },
    #[error("need at least 2 architectures, got {0}")]
    TooFew(usize),
    #[error("training epochs must exceed {} to cover the checkpoint range, got {0}", CHECKPOINT_EPOCHS[4])]
    TooFewEpochs(usize),
    #[error("record {hash} has no checkpoint for epoch {epoch}")]
    MissingCheckpoint { hash: String, epoch: usize },
}

/// Full-training settings for benchmark records (SGD with momentum and a
/// cosine learning-rate schedule).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            lr: 0.05,
            momentum: 0.9,
        }
    }
}

impl TrainConfig {
    /// Cosine schedule over `epochs`, annealing from `lr` toward zero.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let t = (epoch - 1) as f64 / self.epochs as f64;
        0.5 * self.lr * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointRef {
    pub epoch: usize,
    /// Path relative to the bench directory.
    pub path: String,
    /// FNV-1a 64 over the file bytes, hex.
    pub digest: String,
}

/// One architecture's ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRecord {
    pub spec_nodes: usize,
    pub spec_edges: Vec<[usize; 2]>,
    pub spec_ops: Vec<crate::space::OpLabel>,
    pub spec_hash: String,
    /// Seed the record's initialization and training streams derive from.
    pub seed: u64,
    pub final_acc: f64,
    pub epoch_acc: Vec<(usize, f64)>,
    pub checkpoints: Vec<CheckpointRef>,
}

impl BenchRecord {
    pub fn spec(&self) -> Result<ArchSpec, SpaceError> {
        let edges: Vec<(usize, usize)> =
            self.spec_edges.iter().map(|e| (e[0], e[1])).collect();
        let spec = ArchSpec::new(self.spec_nodes, &edges, self.spec_ops.clone())?;
        debug_assert_eq!(spec.spec_hash(), self.spec_hash);
        Ok(spec)
    }

    pub fn checkpoint_for(&self, epoch: usize) -> Option<&CheckpointRef> {
        self.checkpoints.iter().find(|c| c.epoch == epoch)
    }
}

/// On-disk index of a built benchmark.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchManifest {
    pub version: u32,
    pub seed: u64,
    pub skeleton: Skeleton,
    pub train_cfg: TrainConfig,
    pub dataset: DatasetSource,
    /// Digest of the (skeleton, train_cfg, dataset) configuration.
    pub train_config_digest: String,
    pub records: Vec<BenchRecord>,
    /// Spec hashes whose training diverged; their records are omitted.
    pub failures: Vec<String>,
}

/// A loaded benchmark: manifest plus its base directory.
#[derive(Debug, Clone)]
pub struct Bench {
    pub dir: PathBuf,
    pub manifest: BenchManifest,
}

impl Bench {
    pub fn records(&self) -> &[BenchRecord] {
        &self.manifest.records
    }

    /// Regenerate the benchmark's dataset splits (deterministic).
    pub fn dataset(&self) -> Result<DatasetSplits, DataError> {
        load_dataset(&self.manifest.dataset, self.manifest.seed)
    }

    /// Compile a record's architecture and restore the weights of the
    /// requested epoch. Epoch 0 is the fresh initialization from the
    /// record's seed; other epochs load the stored checkpoint.
    pub fn restore(&self, record: &BenchRecord, epoch: usize) -> Result<Network, BenchError> {
        let spec = record.spec()?;
        let mut net = compile(&spec, &self.manifest.skeleton)?;
        if epoch == 0 {
            net.init_params(record.seed);
            return Ok(net);
        }
        let ck = record
            .checkpoint_for(epoch)
            .ok_or_else(|| BenchError::MissingCheckpoint {
                hash: record.spec_hash.clone(),
                epoch,
            })?;
        checkpoint::load(&mut net, &self.dir.join(&ck.path))?;
        Ok(net)
    }
}

/// Settings of a benchmark build.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    pub seed: u64,
    /// Number of architectures.
    pub m: usize,
    pub skeleton: Skeleton,
    pub train: TrainConfig,
    pub dataset: DatasetSource,
}

impl Default for BenchConfig {
    /// Desk-scale default: 50 architectures, synthetic data.
    fn default() -> Self {
        BenchConfig {
            seed: 0,
            m: 50,
            skeleton: Skeleton::default(),
            train: TrainConfig::default(),
            dataset: DatasetSource::synthetic_default(),
        }
    }
}

fn config_digest(cfg: &BenchConfig) -> String {
    let text = serde_json::to_string(&(&cfg.skeleton, &cfg.train, &cfg.dataset))
        .expect("config serializes");
    format!("{:016x}", fnv1a64(text.as_bytes()))
}

/// Sample, fully train, and checkpoint `m` distinct architectures.
/// Divergent records are recorded as failures and skipped; the build
/// continues. Workers run in parallel with per-record seed streams, so
/// results do not depend on scheduling.
pub fn build_bench(cfg: &BenchConfig, out_dir: &Path) -> Result<Bench, BenchError> {
    if cfg.m < 2 {
        return Err(BenchError::TooFew(cfg.m));
    }
    if cfg.train.epochs <= *CHECKPOINT_EPOCHS.last().unwrap() {
        return Err(BenchError::TooFewEpochs(cfg.train.epochs));
    }
    fs::create_dir_all(out_dir).map_err(|source| BenchError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let splits = load_dataset(&cfg.dataset, cfg.seed)?;

    // Distinct specs by hash.
    let mut rng = stream_rng(cfg.seed, "bench-sample", 0);
    let mut specs = Vec::with_capacity(cfg.m);
    let mut seen = HashSet::new();
    while specs.len() < cfg.m {
        let spec = sample_random_with(&mut rng)?;
        if seen.insert(spec.hash_u64()) {
            specs.push(spec);
        }
    }

    let results: Vec<Result<BenchRecord, (String, BenchError)>> = specs
        .par_iter()
        .map(|spec| {
            let seed = stream_seed(cfg.seed, "bench-record", spec.hash_u64());
            train_record(spec, seed, cfg, &splits, out_dir)
                .map_err(|e| (spec.spec_hash().to_string(), e))
        })
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for res in results {
        match res {
            Ok(r) => records.push(r),
            Err((hash, BenchError::Nn(NnError::Divergence { .. }))) => failures.push(hash),
            Err((_, e)) => return Err(e),
        }
    }

    let manifest = BenchManifest {
        version: MANIFEST_VERSION,
        seed: cfg.seed,
        skeleton: cfg.skeleton.clone(),
        train_cfg: cfg.train.clone(),
        dataset: cfg.dataset.clone(),
        train_config_digest: config_digest(cfg),
        records,
        failures,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|source| BenchError::Io { path, source })?;
    Ok(Bench {
        dir: out_dir.to_path_buf(),
        manifest,
    })
}

fn train_record(
    spec: &ArchSpec,
    seed: u64,
    cfg: &BenchConfig,
    splits: &DatasetSplits,
    out_dir: &Path,
) -> Result<BenchRecord, BenchError> {
    let mut net = compile(spec, &cfg.skeleton)?;
    net.init_params(seed);
    let train = &splits.train;
    let n_train = train.len();
    let mut epoch_acc = Vec::new();
    let mut checkpoints = Vec::new();
    for epoch in 1..=cfg.train.epochs {
        let lr = cfg.train.lr_at(epoch);
        let mut order: Vec<usize> = (0..n_train).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut stream_rng(seed, "bench-epoch", epoch as u64));
        for chunk in order.chunks(cfg.train.batch_size) {
            let batch = train.subset(chunk);
            net.forward(&batch.images)?;
            let (grads, loss) = net.backward(&batch.labels)?;
            if !loss.is_finite() {
                return Err(BenchError::Nn(NnError::Divergence { node: 0 }));
            }
            net.sgd_step(&grads, lr, cfg.train.momentum)?;
        }
        let acc = evaluate_accuracy(&mut net, &splits.val)?;
        epoch_acc.push((epoch, acc));
        if CHECKPOINT_EPOCHS.contains(&epoch) || epoch == cfg.train.epochs {
            let name = format!("{}_ep{}.ckpt", spec.spec_hash(), epoch);
            let path = out_dir.join(&name);
            checkpoint::save(&net, &path)?;
            let bytes = fs::read(&path).map_err(|source| BenchError::Io {
                path: path.clone(),
                source,
            })?;
            checkpoints.push(CheckpointRef {
                epoch,
                path: name,
                digest: format!("{:016x}", fnv1a64(&bytes)),
            });
        }
    }
    let final_acc = epoch_acc.last().unwrap().1;
    Ok(BenchRecord {
        spec_nodes: spec.num_nodes(),
        spec_edges: spec.edges().iter().map(|&(i, j)| [i, j]).collect(),
        spec_ops: spec.node_ops().to_vec(),
        spec_hash: spec.spec_hash().to_string(),
        seed,
        final_acc,
        epoch_acc,
        checkpoints,
    })
}

/// Accuracy of a network over a labeled set, evaluated in chunks.
pub fn evaluate_accuracy(net: &mut Network, set: &LabeledSet) -> Result<f64, BenchError> {
    let mut correct = 0.0;
    let chunk = 256;
    let mut i = 0;
    while i < set.len() {
        let end = (i + chunk).min(set.len());
        let idx: Vec<usize> = (i..end).collect();
        let sub = set.subset(&idx);
        let logits = net.forward(&sub.images)?;
        correct += accuracy(&logits, &sub.labels) * sub.len() as f64;
        i = end;
    }
    Ok(correct / set.len() as f64)
}

/// Load a manifest and verify every checkpoint file digest.
pub fn load_bench(dir: &Path) -> Result<Bench, BenchError> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(BenchError::ManifestMissing(path));
    }
    let text = fs::read_to_string(&path).map_err(|source| BenchError::Io {
        path: path.clone(),
        source,
    })?;
    let manifest: BenchManifest =
        serde_json::from_str(&text).map_err(|e| BenchError::ManifestFormat {
            path: path.clone(),
            detail: e.to_string(),
        })?;
    if manifest.version != MANIFEST_VERSION {
        return Err(BenchError::ManifestFormat {
            path,
            detail: format!("unsupported version {}", manifest.version),
        });
    }
    for record in &manifest.records {
        for ck in &record.checkpoints {
            let cpath = dir.join(&ck.path);
            let bytes = fs::read(&cpath).map_err(|source| BenchError::Io {
                path: cpath.clone(),
                source,
            })?;
            let got = format!("{:016x}", fnv1a64(&bytes));
            if got != ck.digest {
                return Err(BenchError::DigestMismatch {
                    path: cpath,
                    got,
                    want: ck.digest.clone(),
                });
            }
        }
    }
    Ok(Bench {
        dir: dir.to_path_buf(),
        manifest,
    })
}
