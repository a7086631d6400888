//! Rank-correlation evaluation of proxy scores against trained accuracy:
//! Kendall tau-b, proxy evaluation over a benchmark, lambda grid search,
//! checkpoint epoch sweeps, and the 2x2 (decoupled x fast-training)
//! ablation grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{Bench, BenchError, BenchRecord};
use crate::data::{DataError, LabeledSet};
use crate::fasttrain::{fast_train, FastTrainConfig, FastTrainError};
use crate::proxy::{das_score, wot_score, Lambda, ProxyError, Score};
use crate::seed::stream_rng;
use crate::space::SpaceError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("input lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 observations, got {0}")]
    TooShort(usize),
    #[error("correlation undefined: all values equal in {0}")]
    Undefined(&'static str),
    #[error("fewer than 2 usable rows survived scoring")]
    TooFewRows,
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

/// Kendall tau-b (tie-corrected) rank correlation.
///
/// Computed with the O(n log n) sort-and-merge-count method: sort by
/// `(x, y)`, count discordant pairs as merge-sort swaps on `y`, and apply
/// the standard tie corrections.
pub fn kendall_tau(xs: &[f64], ys: &[f64]) -> Result<f64, EvalError> {
    if xs.len() != ys.len() {
        return Err(EvalError::LengthMismatch(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 2 {
        return Err(EvalError::TooShort(n));
    }
    let mut pairs: Vec<(f64, f64)> = xs.iter().cloned().zip(ys.iter().cloned()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    // Tie counts in x and joint ties in (x, y).
    let mut tied_x: u64 = 0;
    let mut tied_xy: u64 = 0;
    {
        let mut x_run = 1u64;
        let mut xy_run = 1u64;
        for i in 1..n {
            if pairs[i].0 == pairs[i - 1].0 {
                x_run += 1;
                if pairs[i].1 == pairs[i - 1].1 {
                    xy_run += 1;
                } else {
                    tied_xy += xy_run * (xy_run - 1) / 2;
                    xy_run = 1;
                }
            } else {
                tied_x += x_run * (x_run - 1) / 2;
                x_run = 1;
                tied_xy += xy_run * (xy_run - 1) / 2;
                xy_run = 1;
            }
        }
        tied_x += x_run * (x_run - 1) / 2;
        tied_xy += xy_run * (xy_run - 1) / 2;
    }

    // Discordant pairs: inversions of y in the x-sorted order.
    let mut ys_sorted: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = ys_sorted.clone();
    let swaps = merge_count(&mut ys_sorted, &mut buf, 0, n);

    let mut tied_y: u64 = 0;
    {
        let mut run = 1u64;
        for i in 1..n {
            if ys_sorted[i] == ys_sorted[i - 1] {
                run += 1;
            } else {
                tied_y += run * (run - 1) / 2;
                run = 1;
            }
        }
        tied_y += run * (run - 1) / 2;
    }

    let num_pairs = (n as u64) * (n as u64 - 1) / 2;
    if tied_x == num_pairs {
        return Err(EvalError::Undefined("x"));
    }
    if tied_y == num_pairs {
        return Err(EvalError::Undefined("y"));
    }
    let conc_minus_disc =
        num_pairs as i64 - tied_x as i64 - tied_y as i64 + tied_xy as i64 - 2 * swaps as i64;
    let denom = ((num_pairs - tied_x) as f64 * (num_pairs - tied_y) as f64).sqrt();
    Ok(conc_minus_disc as f64 / denom)
}

/// Merge sort over `v[lo..hi)` counting the swaps needed to sort.
fn merge_count(v: &mut [f64], buf: &mut [f64], lo: usize, hi: usize) -> u64 {
    if hi - lo < 2 {
        return 0;
    }
    let mid = (lo + hi) / 2;
    let mut swaps = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
    buf[lo..hi].copy_from_slice(&v[lo..hi]);
    let (mut i, mut j) = (lo, mid);
    for slot in lo..hi {
        if i < mid && (j >= hi || buf[i].total_cmp(&buf[j]).is_le()) {
            v[slot] = buf[i];
            i += 1;
        } else {
            v[slot] = buf[j];
            j += 1;
            swaps += (mid - i) as u64;
        }
    }
    swaps
}

/// Which score a study uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Wot,
    Das,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Wot => write!(f, "wot"),
            Method::Das => write!(f, "das"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRow {
    pub spec_hash: String,
    pub score: f64,
    pub final_acc: f64,
}

/// Result of scoring every benchmark record with one configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub lambda: f64,
    pub e_f: usize,
    pub ktau: f64,
    pub n_archs: usize,
    pub rows: Vec<EvalRow>,
}

/// The score decomposition of one record, from which any lambda's score
/// can be reassembled without re-running the network.
#[derive(Debug, Clone)]
pub struct ScoreParts {
    pub spec_hash: String,
    pub final_acc: f64,
    pub raw_value: f64,
    pub logdet_nk: f64,
    pub log_na: f64,
    pub n: usize,
}

impl ScoreParts {
    fn from_scores(record: &BenchRecord, wot: &Score, das: &Score) -> Self {
        ScoreParts {
            spec_hash: record.spec_hash.clone(),
            final_acc: record.final_acc,
            raw_value: wot.value,
            logdet_nk: das.logdet_nk,
            log_na: das.log_na,
            n: das.n,
        }
    }

    /// Score under a method/lambda. WOT is the raw-kernel route; DAS
    /// recombines the decoupled terms.
    pub fn score(&self, method: Method, lambda: Lambda) -> f64 {
        match method {
            Method::Wot => self.raw_value,
            Method::Das => {
                if self.logdet_nk.is_finite() {
                    self.logdet_nk + lambda.resolve(self.n) * self.log_na
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }
}

/// Draw the shared scoring mini-batch from the benchmark's held-out pool.
pub fn scoring_batch(bench: &Bench, batch_seed: u64, batch_size: usize) -> Result<LabeledSet, EvalError> {
    let splits = bench.dataset()?;
    let mut rng = stream_rng(batch_seed, "score-batch", 0);
    Ok(splits.scorebatch.pick_batch(batch_size, &mut rng))
}

/// Score every record at a fresh (optionally fast-trained) initialization
/// and return the per-record score decompositions. Records whose scoring
/// fails on configuration grounds propagate the error; divergence shows
/// up as NegInfinity scores.
pub fn score_bench_records(
    bench: &Bench,
    e_f: usize,
    batch: &LabeledSet,
) -> Result<Vec<ScoreParts>, EvalError> {
    let skel = &bench.manifest.skeleton;
    let results: Vec<Result<ScoreParts, EvalError>> = bench
        .records()
        .par_iter()
        .map(|record| {
            let spec = record.spec()?;
            let cfg = FastTrainConfig::with_epochs(record.seed, e_f);
            let (mut net, trace) = fast_train(&spec, skel, &batch.images, &batch.labels, &cfg)?;
            if trace.diverged_at.is_some() {
                let n = batch.len();
                let n_a = net.activation_units();
                let neg = Score::neg_infinity(n, n_a, n as f64);
                return Ok(ScoreParts::from_scores(record, &neg, &neg));
            }
            let wot = wot_score(&mut net, &batch.images)?;
            let das = das_score(&mut net, &batch.images, Lambda::Auto)?;
            Ok(ScoreParts::from_scores(record, &wot, &das))
        })
        .collect();
    results.into_iter().collect()
}

fn report_from_parts(
    parts: &[ScoreParts],
    method: Method,
    lambda: Lambda,
    e_f: usize,
) -> Result<EvalReport, EvalError> {
    if parts.len() < 2 {
        return Err(EvalError::TooFewRows);
    }
    let rows: Vec<EvalRow> = parts
        .iter()
        .map(|p| EvalRow {
            spec_hash: p.spec_hash.clone(),
            score: p.score(method, lambda),
            final_acc: p.final_acc,
        })
        .collect();
    let xs: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.final_acc).collect();
    let ktau = kendall_tau(&xs, &ys)?;
    let n = parts[0].n;
    Ok(EvalReport {
        method,
        lambda: match method {
            Method::Wot => n as f64,
            Method::Das => lambda.resolve(n),
        },
        e_f,
        ktau,
        n_archs: rows.len(),
        rows,
    })
}

/// Score every benchmark record with the requested configuration against
/// one fixed scoring batch and correlate with final accuracy.
pub fn evaluate_proxy(
    bench: &Bench,
    method: Method,
    lambda: Lambda,
    e_f: usize,
    batch_seed: u64,
) -> Result<EvalReport, EvalError> {
    let batch = scoring_batch(bench, batch_seed, DEFAULT_SCORE_BATCH)?;
    let parts = score_bench_records(bench, e_f, &batch)?;
    report_from_parts(&parts, method, lambda, e_f)
}

/// Default scoring mini-batch size.
pub const DEFAULT_SCORE_BATCH: usize = 64;

/// KTau per lambda over a shared scoring pass; argmax with first-index
/// tie-break.
pub fn grid_search_lambda(
    bench: &Bench,
    lambdas: &[f64],
    e_f: usize,
    batch_seed: u64,
) -> Result<(f64, Vec<(f64, f64)>), EvalError> {
    if lambdas.is_empty() {
        return Err(EvalError::TooShort(0));
    }
    let batch = scoring_batch(bench, batch_seed, DEFAULT_SCORE_BATCH)?;
    let parts = score_bench_records(bench, e_f, &batch)?;
    let mut curve = Vec::with_capacity(lambdas.len());
    for &lam in lambdas {
        let report = report_from_parts(&parts, Method::Das, Lambda::Fixed(lam), e_f)?;
        curve.push((lam, report.ktau));
    }
    let mut best = 0usize;
    for (i, &(_, kt)) in curve.iter().enumerate().skip(1) {
        if kt > curve[best].1 {
            best = i;
        }
    }
    Ok((curve[best].0, curve))
}

/// KTau per training epoch, scoring each record's restored checkpoint
/// (epoch 0 is the record's fresh initialization). Epochs without a
/// checkpoint are skipped and reported in the warning list.
pub fn epoch_sweep(
    bench: &Bench,
    epochs: &[usize],
    method: Method,
    lambda: Lambda,
    batch_seed: u64,
) -> Result<(Vec<(usize, f64)>, Vec<String>), EvalError> {
    let batch = scoring_batch(bench, batch_seed, DEFAULT_SCORE_BATCH)?;
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    for &epoch in epochs {
        if epoch != 0 {
            let missing: Vec<&BenchRecord> = bench
                .records()
                .iter()
                .filter(|r| r.checkpoint_for(epoch).is_none())
                .collect();
            if !missing.is_empty() {
                warnings.push(format!(
                    "epoch {}: {} record(s) lack a checkpoint; epoch skipped",
                    epoch,
                    missing.len()
                ));
                continue;
            }
        }
        let results: Vec<Result<(f64, f64), EvalError>> = bench
            .records()
            .par_iter()
            .map(|record| {
                let mut net = bench.restore(record, epoch)?;
                let score = match method {
                    Method::Wot => wot_score(&mut net, &batch.images)?,
                    Method::Das => das_score(&mut net, &batch.images, lambda)?,
                };
                Ok((score.value, record.final_acc))
            })
            .collect();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for r in results {
            let (s, a) = r?;
            xs.push(s);
            ys.push(a);
        }
        out.push((epoch, kendall_tau(&xs, &ys)?));
    }
    Ok((out, warnings))
}

/// One cell of the 2x2 ablation grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationCell {
    pub decoupled: bool,
    pub fast_training: bool,
    pub ktau: f64,
}

/// The 2x2 {decoupled} x {fast training} grid: decoupled off is the
/// raw-kernel score, on is DAS at the default lambda; fast training off
/// is e_f = 0, on is `e_f`.
pub fn ablation_grid(
    bench: &Bench,
    e_f: usize,
    batch_seed: u64,
) -> Result<Vec<AblationCell>, EvalError> {
    let batch = scoring_batch(bench, batch_seed, DEFAULT_SCORE_BATCH)?;
    let parts_zero = score_bench_records(bench, 0, &batch)?;
    let parts_fast = score_bench_records(bench, e_f, &batch)?;
    let mut grid = Vec::with_capacity(4);
    for (fast, parts, ef) in [(false, &parts_zero, 0), (true, &parts_fast, e_f)] {
        for decoupled in [false, true] {
            let (method, lambda) = if decoupled {
                (Method::Das, Lambda::Auto)
            } else {
                (Method::Wot, Lambda::Auto)
            };
            let report = report_from_parts(parts, method, lambda, ef)?;
            grid.push(AblationCell {
                decoupled,
                fast_training: fast,
                ktau: report.ktau,
            });
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exhaustive O(n^2) pair-enumeration tau-b, the independent oracle.
    pub fn kendall_tau_oracle(xs: &[f64], ys: &[f64]) -> f64 {
        let n = xs.len();
        let (mut conc, mut disc, mut tie_x, mut tie_y) = (0i64, 0i64, 0i64, 0i64);
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = xs[i].total_cmp(&xs[j]);
                let dy = ys[i].total_cmp(&ys[j]);
                match (dx, dy) {
                    (std::cmp::Ordering::Equal, std::cmp::Ordering::Equal) => {}
                    (std::cmp::Ordering::Equal, _) => tie_x += 1,
                    (_, std::cmp::Ordering::Equal) => tie_y += 1,
                    (a, b) if a == b => conc += 1,
                    _ => disc += 1,
                }
            }
        }
        let num = (conc - disc) as f64;
        let den = (((conc + disc + tie_x) as f64) * ((conc + disc + tie_y) as f64)).sqrt();
        num / den
    }

    #[test]
    fn identical_orderings_give_one() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [10.0, 20.0, 30.0, 40.0];
        assert_eq!(kendall_tau(&xs, &ys).unwrap(), 1.0);
    }

    #[test]
    fn reversed_orderings_give_minus_one() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(kendall_tau(&xs, &ys).unwrap(), -1.0);
    }

    #[test]
    fn single_swap_case_matches_pair_count() {
        // 4 elements, one discordant pair: tau = (5 - 1) / 6.
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [1.0, 3.0, 2.0, 4.0];
        let got = kendall_tau(&xs, &ys).unwrap();
        assert!((got - 4.0 / 6.0).abs() < 1e-15);
        assert!((got - kendall_tau_oracle(&xs, &ys)).abs() < 1e-15);
    }

    #[test]
    fn all_equal_input_is_undefined() {
        let xs = [2.0, 2.0, 2.0];
        let ys = [1.0, 2.0, 3.0];
        assert!(matches!(kendall_tau(&xs, &ys), Err(EvalError::Undefined("x"))));
        assert!(matches!(kendall_tau(&ys, &xs), Err(EvalError::Undefined("y"))));
    }

    #[test]
    fn neg_infinity_ties_are_handled() {
        let xs = [f64::NEG_INFINITY, f64::NEG_INFINITY, 1.0, 2.0];
        let ys = [0.1, 0.2, 0.3, 0.4];
        let got = kendall_tau(&xs, &ys).unwrap();
        assert!((got - kendall_tau_oracle(&xs, &ys)).abs() < 1e-12);
    }

    #[test]
    fn matches_oracle_on_random_data_with_ties() {
        use rand::Rng;
        let mut rng = crate::seed::stream_rng(11, "tau-test", 0);
        for trial in 0..50 {
            let n = rng.gen_range(2..60);
            // coarse grid to force ties
            let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64).collect();
            let ys: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64).collect();
            match kendall_tau(&xs, &ys) {
                Ok(got) => {
                    let want = kendall_tau_oracle(&xs, &ys);
                    assert!(
                        (got - want).abs() < 1e-12,
                        "trial {}: got {} want {}",
                        trial,
                        got,
                        want
                    );
                }
                Err(EvalError::Undefined(_)) => {
                    let all_x = xs.windows(2).all(|w| w[0] == w[1]);
                    let all_y = ys.windows(2).all(|w| w[0] == w[1]);
                    assert!(all_x || all_y);
                }
                Err(e) => panic!("unexpected error: {}", e),
            }
        }
    }

    #[test]
    fn invariant_under_increasing_transform() {
        let xs = [0.3, 1.5, -2.0, 0.9, 4.2, 4.2];
        let ys = [1.0, 0.5, 0.7, 2.0, 1.1, -0.4];
        let base = kendall_tau(&xs, &ys).unwrap();
        let xs2: Vec<f64> = xs.iter().map(|v| (v * 0.5).exp()).collect();
        let ys2: Vec<f64> = ys.iter().map(|v| v * 3.0 + 7.0).collect();
        assert_eq!(kendall_tau(&xs2, &ys).unwrap(), base);
        assert_eq!(kendall_tau(&xs, &ys2).unwrap(), base);
    }
}
