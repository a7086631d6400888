//! Sample/score/argmax search with repeated-trial statistics.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{Bench, BenchError};
use crate::data::{load_dataset, DataError, DatasetSource, LabeledSet};
use crate::eval::Method;
use crate::fasttrain::{fast_train, FastTrainConfig, FastTrainError};
use crate::proxy::{das_score, wot_score, Lambda, ProxyError};
use crate::seed::{stream_rng, stream_seed};
use crate::space::{sample_random_with, ArchSpec, Skeleton, SpaceError};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("search needs at least 1 candidate per trial")]
    NoCandidates,
    #[error("search needs at least 1 trial")]
    NoTrials,
    #[error("bench has no records to search")]
    EmptyBench,
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Proxy(#[from] ProxyError),
    #[error(transparent)]
    FastTrain(#[from] FastTrainError),
}

/// Settings of one search run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Candidates sampled per trial.
    pub n_candidates: usize,
    pub method: Method,
    /// Resolved against the scoring batch size.
    pub lambda_auto: bool,
    pub lambda: f64,
    pub e_f: usize,
    pub trials: usize,
    pub seed: u64,
}

impl SearchConfig {
    pub fn lambda(&self) -> Lambda {
        if self.lambda_auto {
            Lambda::Auto
        } else {
            Lambda::Fixed(self.lambda)
        }
    }
}

/// What a search samples from: a finite benchmark (candidates drawn
/// without replacement, ground-truth accuracy available) or the open
/// space (with replacement, no ground truth).
pub enum SearchPool<'a> {
    Bench(&'a Bench),
    Space {
        skeleton: Skeleton,
        dataset: DatasetSource,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub chosen_hash: String,
    pub score: f64,
    /// Ground-truth accuracy when searching a benchmark.
    pub final_acc: Option<f64>,
    /// All candidates scored NegInfinity; the tie-break picked the winner.
    pub all_neg_infinity: bool,
    pub wall_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchSummary {
    pub mean_acc: f64,
    pub std_acc: f64,
    pub mean_cost_s: f64,
    pub trials: usize,
}

/// Argmax by score with NegInfinity ranked last; ties broken by the lower
/// spec hash.
fn better(candidate: (f64, u64), best: (f64, u64)) -> bool {
    candidate.0 > best.0 || (candidate.0 == best.0 && candidate.1 < best.1)
}

/// Run `trials` independent sample-score-argmax searches.
pub fn run_search(pool: &SearchPool, cfg: &SearchConfig) -> Result<(Vec<TrialResult>, SearchSummary), SearchError> {
    if cfg.n_candidates == 0 {
        return Err(SearchError::NoCandidates);
    }
    if cfg.trials == 0 {
        return Err(SearchError::NoTrials);
    }
    // One shared scoring batch per run.
    let (batch, skeleton) = match pool {
        SearchPool::Bench(bench) => {
            if bench.records().is_empty() {
                return Err(SearchError::EmptyBench);
            }
            let splits = bench.dataset()?;
            let mut rng = stream_rng(cfg.seed, "search-batch", 0);
            (
                splits
                    .scorebatch
                    .pick_batch(crate::eval::DEFAULT_SCORE_BATCH, &mut rng),
                bench.manifest.skeleton.clone(),
            )
        }
        SearchPool::Space { skeleton, dataset } => {
            let splits = load_dataset(dataset, cfg.seed)?;
            let mut rng = stream_rng(cfg.seed, "search-batch", 0);
            (
                splits
                    .scorebatch
                    .pick_batch(crate::eval::DEFAULT_SCORE_BATCH, &mut rng),
                skeleton.clone(),
            )
        }
    };

    // Bench pools: candidate scores do not depend on the trial (fixed
    // per-record seeds, one shared batch), so score each record once.
    let cache: Option<Vec<f64>> = match pool {
        SearchPool::Bench(bench) => {
            let scores: Vec<Result<f64, SearchError>> = bench
                .records()
                .par_iter()
                .map(|r| score_candidate(&r.spec()?, &skeleton, &batch, cfg, r.seed))
                .collect();
            Some(scores.into_iter().collect::<Result<_, _>>()?)
        }
        SearchPool::Space { .. } => None,
    };

    let trials: Vec<Result<TrialResult, SearchError>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(pool, cfg, t, &batch, &skeleton, cache.as_deref()))
        .collect();
    let trials: Vec<TrialResult> = trials.into_iter().collect::<Result<_, _>>()?;

    let accs: Vec<f64> = trials.iter().filter_map(|t| t.final_acc).collect();
    let mean_acc = if accs.is_empty() {
        f64::NAN
    } else {
        accs.iter().sum::<f64>() / accs.len() as f64
    };
    let std_acc = if accs.is_empty() {
        f64::NAN
    } else {
        (accs.iter().map(|a| (a - mean_acc).powi(2)).sum::<f64>() / accs.len() as f64).sqrt()
    };
    let mean_cost_s = trials.iter().map(|t| t.wall_s).sum::<f64>() / trials.len() as f64;
    let summary = SearchSummary {
        mean_acc,
        std_acc,
        mean_cost_s,
        trials: trials.len(),
    };
    Ok((trials, summary))
}

fn run_trial(
    pool: &SearchPool,
    cfg: &SearchConfig,
    trial: usize,
    batch: &LabeledSet,
    skeleton: &Skeleton,
    cache: Option<&[f64]>,
) -> Result<TrialResult, SearchError> {
    let start = Instant::now();
    let mut rng = stream_rng(cfg.seed, "search-trial", trial as u64);
    // (spec, precomputed or computable score, ground truth)
    let candidates: Vec<(ArchSpec, f64, Option<f64>)> = match pool {
        SearchPool::Bench(bench) => {
            let scores = cache.expect("bench pools are pre-scored");
            let mut idx: Vec<usize> = (0..bench.records().len()).collect();
            idx.shuffle(&mut rng);
            idx.truncate(cfg.n_candidates.min(idx.len()));
            idx.into_iter()
                .map(|i| {
                    let r = &bench.records()[i];
                    Ok((r.spec()?, scores[i], Some(r.final_acc)))
                })
                .collect::<Result<_, SearchError>>()?
        }
        SearchPool::Space { .. } => {
            let mut out = Vec::with_capacity(cfg.n_candidates);
            for _ in 0..cfg.n_candidates {
                let spec = sample_random_with(&mut rng)?;
                let seed = stream_seed(cfg.seed, "search-init", spec.hash_u64());
                let score = score_candidate(&spec, skeleton, batch, cfg, seed)?;
                out.push((spec, score, None));
            }
            out
        }
    };

    let mut best: Option<(f64, u64, &(ArchSpec, f64, Option<f64>))> = None;
    let mut all_neg = true;
    for cand in &candidates {
        let (spec, score, _) = cand;
        if score.is_finite() {
            all_neg = false;
        }
        let key = (*score, spec.hash_u64());
        match &best {
            Some((bs, bh, _)) if !better(key, (*bs, *bh)) => {}
            _ => best = Some((key.0, key.1, cand)),
        }
    }
    let (score, _, chosen) = best.expect("at least one candidate");
    Ok(TrialResult {
        trial,
        chosen_hash: chosen.0.spec_hash().to_string(),
        score,
        final_acc: chosen.2,
        all_neg_infinity: all_neg,
        wall_s: start.elapsed().as_secs_f64(),
    })
}

fn score_candidate(
    spec: &ArchSpec,
    skeleton: &Skeleton,
    batch: &LabeledSet,
    cfg: &SearchConfig,
    seed: u64,
) -> Result<f64, SearchError> {
    let ft = FastTrainConfig::with_epochs(seed, cfg.e_f);
    let (mut net, trace) = fast_train(spec, skeleton, &batch.images, &batch.labels, &ft)?;
    if trace.diverged_at.is_some() {
        return Ok(f64::NEG_INFINITY);
    }
    let score = match cfg.method {
        Method::Wot => wot_score(&mut net, &batch.images)?,
        Method::Das => das_score(&mut net, &batch.images, cfg.lambda())?,
    };
    Ok(score.value)
}

/// Choose one record uniformly at random per trial, no scoring.
pub fn random_baseline(bench: &Bench, trials: usize, seed: u64) -> Result<(Vec<TrialResult>, SearchSummary), SearchError> {
    if trials == 0 {
        return Err(SearchError::NoTrials);
    }
    if bench.records().is_empty() {
        return Err(SearchError::EmptyBench);
    }
    let mut results = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = stream_rng(seed, "random-baseline", t as u64);
        let i = rand::Rng::gen_range(&mut rng, 0..bench.records().len());
        let r = &bench.records()[i];
        results.push(TrialResult {
            trial: t,
            chosen_hash: r.spec_hash.clone(),
            score: f64::NAN,
            final_acc: Some(r.final_acc),
            all_neg_infinity: false,
            wall_s: 0.0,
        });
    }
    let accs: Vec<f64> = results.iter().filter_map(|t| t.final_acc).collect();
    let mean_acc = accs.iter().sum::<f64>() / accs.len() as f64;
    let std_acc =
        (accs.iter().map(|a| (a - mean_acc).powi(2)).sum::<f64>() / accs.len() as f64).sqrt();
    let summary = SearchSummary {
        mean_acc,
        std_acc,
        mean_cost_s: 0.0,
        trials,
    };
    Ok((results, summary))
}
