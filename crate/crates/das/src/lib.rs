//! Training-free scoring of neural architectures from activation patterns.
//!
//! The crate is organized around a small pipeline:
//!
//! * [`tensor`] / [`nn`] — a minimal dense-tensor network engine with
//!   ReLU activation-mask capture and reverse-mode gradients for SGD.
//! * [`space`] — a cell-based architecture search space: sample, validate,
//!   and compile cell specs into runnable networks.
//! * [`proxy`] — activation codes, Hamming kernels, log-determinants, and
//!   the WOT / DAS scores.
//! * [`fasttrain`] — overfit the scoring mini-batch for a few epochs before
//!   re-scoring.
//! * [`data`] / [`bench`] — synthetic and CIFAR-10 binary data sources, and
//!   a desk-scale ground-truth benchmark (trained architectures with
//!   early-epoch checkpoints).
//! * [`eval`] — Kendall tau-b rank correlation, lambda grid search, epoch
//!   sweeps, and the 2x2 ablation grid.
//! * [`search`] — sample/score/argmax search with repeated-trial statistics.
//! * [`cli`] — the `das` command-line front end.

pub mod bench;
pub mod cli;
pub mod data;
pub mod eval;
pub mod fasttrain;
pub mod nn;
pub mod proxy;
pub mod search;
pub mod seed;
pub mod space;
pub mod tensor;
