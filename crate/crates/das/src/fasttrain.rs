//! Fast training: overfit the scoring mini-batch for a few epochs, then
//! score. With one mini-batch, an epoch is exactly one full-batch
//! gradient step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{NnError};
use crate::proxy::{das_score, Lambda, ProxyError, Score};
use crate::space::{compile, ArchSpec, Skeleton, SpaceError};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum FastTrainError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Proxy(#[from] ProxyError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("labels length {labels} does not match batch size {batch}")]
    LabelMismatch { labels: usize, batch: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FastTrainConfig {
    /// Epochs over the single scoring mini-batch; 0 skips training.
    pub e_f: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl FastTrainConfig {
    pub fn zero_cost(seed: u64) -> Self {
        FastTrainConfig {
            e_f: 0,
            lr: 0.01,
            momentum: 0.9,
            seed,
        }
    }

    pub fn with_epochs(seed: u64, e_f: usize) -> Self {
        FastTrainConfig {
            e_f,
            ..FastTrainConfig::zero_cost(seed)
        }
    }
}

/// Per-epoch loss record of one fast-training run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    pub losses: Vec<f64>,
    /// Epoch at which the loss went non-finite, if it did.
    pub diverged_at: Option<usize>,
}

/// Compile, initialize from the config seed, and run `e_f` full-batch SGD
/// steps on the mini-batch. Scoring and training share the one
/// initialization. Divergence is recorded in the trace instead of
/// aborting, so sweeps survive bad seeds.
pub fn fast_train(
    spec: &ArchSpec,
    skel: &Skeleton,
    batch: &Tensor,
    labels: &[usize],
    cfg: &FastTrainConfig,
) -> Result<(crate::nn::Network, TrainTrace), FastTrainError> {
    if labels.len() != batch.shape()[0] {
        return Err(FastTrainError::LabelMismatch {
            labels: labels.len(),
            batch: batch.shape()[0],
        });
    }
    let mut net = compile(spec, skel)?;
    net.init_params(cfg.seed);
    let mut trace = TrainTrace::default();
    for epoch in 0..cfg.e_f {
        net.forward(batch)?;
        let (grads, loss) = net.backward(labels)?;
        trace.losses.push(loss);
        if !loss.is_finite() {
            trace.diverged_at = Some(epoch);
            return Ok((net, trace));
        }
        if let Err(NnError::Divergence { .. }) = net.sgd_step(&grads, cfg.lr, cfg.momentum) {
            trace.diverged_at = Some(epoch);
            return Ok((net, trace));
        }
    }
    Ok((net, trace))
}

/// [`fast_train`] followed by a DAS scoring pass on the same mini-batch.
/// A diverged run scores NegInfinity.
pub fn fast_train_then_score(
    spec: &ArchSpec,
    skel: &Skeleton,
    batch: &Tensor,
    labels: &[usize],
    cfg: &FastTrainConfig,
    lambda: Lambda,
) -> Result<(Score, TrainTrace), FastTrainError> {
    let (mut net, trace) = fast_train(spec, skel, batch, labels, cfg)?;
    if trace.diverged_at.is_some() {
        let n = batch.shape()[0];
        let n_a = net.activation_units();
        return Ok((Score::neg_infinity(n, n_a, lambda.resolve(n)), trace));
    }
    let score = das_score(&mut net, batch, lambda)?;
    Ok((score, trace))
}
