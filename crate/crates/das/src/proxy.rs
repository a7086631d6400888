//! Activation codes, Hamming kernels, log-determinants, and the WOT and
//! DAS scores.
//!
//! A network's reaction to a mini-batch is summarized by one binary code
//! per input: the on/off state of every ReLU unit, flattened in layer-major
//! order. The pairwise code-agreement kernel `K[i][j] = N_A - d_H(c_i, c_j)`
//! (with `N_A` the activation-unit count and `d_H` the Hamming distance)
//! is scored by its log-determinant. The raw-kernel score decomposes as
//! `log|K| = log|K / N_A| + N * ln(N_A)`; replacing the batch-size factor
//! `N` with a free coefficient `lambda` gives the DAS score.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::nn::{Network, NnError};
use crate::tensor::Tensor;

/// Default coefficient on the activation term: two thirds of the batch size.
pub fn auto_lambda(batch_size: usize) -> f64 {
    2.0 / 3.0 * batch_size as f64
}

/// Coefficient on `ln(N_A)` in the DAS score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda {
    /// `(2/3) * N` for batch size N.
    Auto,
    Fixed(f64),
}

impl Lambda {
    pub fn resolve(&self, batch_size: usize) -> f64 {
        match *self {
            Lambda::Auto => auto_lambda(batch_size),
            Lambda::Fixed(v) => v,
        }
    }
}

impl fmt::Display for Lambda {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lambda::Auto => write!(f, "auto"),
            Lambda::Fixed(v) => write!(f, "{}", v),
        }
    }
}

#[derive(Debug, Error)]
pub enum ProxyError {
    #[error("scoring unsupported: network has no ReLU layers")]
    NoActivations,
    #[error("scoring needs a batch of at least 2 inputs, got {0}")]
    BatchTooSmall(usize),
    #[error("internal consistency: codes of unequal length ({0} vs {1})")]
    CodeLengthMismatch(usize, usize),
    #[error("need at least 2 codes, got {0}")]
    TooFewCodes(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Per-input binary string of ReLU on/off states, packed 64 bits per word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationCode {
    words: Vec<u64>,
    n_a: usize,
}

impl ActivationCode {
    pub fn from_bits(bits: impl IntoIterator<Item = bool>) -> Self {
        let mut words = Vec::new();
        let mut n_a = 0usize;
        for bit in bits {
            if n_a % 64 == 0 {
                words.push(0);
            }
            if bit {
                *words.last_mut().unwrap() |= 1u64 << (n_a % 64);
            }
            n_a += 1;
        }
        ActivationCode { words, n_a }
    }

    pub fn len(&self) -> usize {
        self.n_a
    }

    pub fn is_empty(&self) -> bool {
        self.n_a == 0
    }

    pub fn bit(&self, k: usize) -> bool {
        debug_assert!(k < self.n_a);
        (self.words[k / 64] >> (k % 64)) & 1 == 1
    }

    pub fn flip_bit(&mut self, k: usize) {
        assert!(k < self.n_a);
        self.words[k / 64] ^= 1u64 << (k % 64);
    }

    /// Hamming distance via XOR + popcount over packed words.
    pub fn hamming(&self, other: &Self) -> usize {
        debug_assert_eq!(self.n_a, other.n_a);
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Raw,
    Normalized,
}

/// Symmetric N x N matrix of pairwise activation-code statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    n: usize,
    entries: Vec<f64>,
    kind: KernelKind,
    /// Activation-unit count of the codes the kernel came from.
    n_a: usize,
}

impl KernelMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn n_a(&self) -> usize {
        self.n_a
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Reorder rows and columns by a permutation of 0..n.
    pub fn permuted(&self, perm: &[usize]) -> KernelMatrix {
        assert_eq!(perm.len(), self.n);
        let mut entries = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            for j in 0..self.n {
                entries[i * self.n + j] = self.entry(perm[i], perm[j]);
            }
        }
        KernelMatrix {
            n: self.n,
            entries,
            kind: self.kind,
            n_a: self.n_a,
        }
    }
}

/// One code per input: bit k is the on/off state of the k-th activation
/// unit in fixed layer-major, element-major order. Runs a forward pass.
pub fn extract_codes(net: &mut Network, batch: &Tensor) -> Result<Vec<ActivationCode>, ProxyError> {
    let n = batch.shape()[0];
    if n < 2 {
        return Err(ProxyError::BatchTooSmall(n));
    }
    if net.num_relu_layers() == 0 {
        return Err(ProxyError::NoActivations);
    }
    net.forward(batch)?;
    let masks = net.relu_mask_buffer();
    let mut codes = Vec::with_capacity(n);
    for i in 0..n {
        let mut bits = Vec::with_capacity(net.activation_units());
        for (k, mask) in masks.iter().enumerate() {
            let per = net.relu_layer_elems(k);
            bits.extend_from_slice(&mask_slice(mask, i, per));
        }
        codes.push(ActivationCode::from_bits(bits));
    }
    Ok(codes)
}

fn mask_slice(mask: &[bool], sample: usize, per: usize) -> &[bool] {
    &mask[sample * per..(sample + 1) * per]
}

/// Raw kernel: `entries[i][j] = N_A - d_H(c_i, c_j)`.
pub fn hamming_kernel(codes: &[ActivationCode]) -> Result<KernelMatrix, ProxyError> {
    if codes.len() < 2 {
        return Err(ProxyError::TooFewCodes(codes.len()));
    }
    let n_a = codes[0].len();
    for c in codes {
        if c.len() != n_a {
            return Err(ProxyError::CodeLengthMismatch(n_a, c.len()));
        }
    }
    let n = codes.len();
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        entries[i * n + i] = n_a as f64;
        for j in (i + 1)..n {
            let v = (n_a - codes[i].hamming(&codes[j])) as f64;
            entries[i * n + j] = v;
            entries[j * n + i] = v;
        }
    }
    Ok(KernelMatrix {
        n,
        entries,
        kind: KernelKind::Raw,
        n_a,
    })
}

/// Divide every entry by `N_A`: `entry[i][j] = 1 - d_H(c_i, c_j) / N_A`.
pub fn normalize_kernel(k: &KernelMatrix) -> KernelMatrix {
    assert_eq!(k.kind, KernelKind::Raw, "normalize_kernel expects a raw kernel");
    let n_a = k.n_a as f64;
    KernelMatrix {
        n: k.n,
        entries: k.entries.iter().map(|v| v / n_a).collect(),
        kind: KernelKind::Normalized,
        n_a: k.n_a,
    }
}

/// Natural log of the determinant via pivoted LU in double precision.
/// Returns `f64::NEG_INFINITY` when the determinant is zero, negative,
/// or non-finite (the sentinel ranks below every finite score).
pub fn log_det(k: &KernelMatrix) -> f64 {
    log_det_dense(k.n, &k.entries)
}

/// LU-based log-determinant over a dense row-major matrix.
pub fn log_det_dense(n: usize, entries: &[f64]) -> f64 {
    debug_assert_eq!(entries.len(), n * n);
    if entries.iter().any(|v| !v.is_finite()) {
        return f64::NEG_INFINITY;
    }
    let mut a = entries.to_vec();
    let mut negative = false;
    let mut log_abs = 0.0f64;
    for col in 0..n {
        let mut piv = col;
        let mut max = a[col * n + col].abs();
        for r in (col + 1)..n {
            let v = a[r * n + col].abs();
            if v > max {
                max = v;
                piv = r;
            }
        }
        if max == 0.0 {
            return f64::NEG_INFINITY;
        }
        if piv != col {
            for c in 0..n {
                a.swap(col * n + c, piv * n + c);
            }
            negative = !negative;
        }
        let pivot = a[col * n + col];
        if pivot < 0.0 {
            negative = !negative;
        }
        log_abs += pivot.abs().ln();
        for r in (col + 1)..n {
            let f = a[r * n + col] / pivot;
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r * n + c] -= f * a[col * n + c];
            }
        }
    }
    if negative || !log_abs.is_finite() {
        f64::NEG_INFINITY
    } else {
        log_abs
    }
}

/// A proxy score with its decomposition into the distinguishing term
/// (`logdet_nk`), the activation term (`log_na`), and the coefficient
/// joining them. When `value` is finite it equals
/// `logdet_nk + lambda * log_na` exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub value: f64,
    pub logdet_nk: f64,
    pub log_na: f64,
    pub lambda: f64,
    pub n: usize,
    pub n_a: usize,
}

impl Score {
    pub fn neg_infinity(n: usize, n_a: usize, lambda: f64) -> Self {
        Score {
            value: f64::NEG_INFINITY,
            logdet_nk: f64::NEG_INFINITY,
            log_na: if n_a > 0 { (n_a as f64).ln() } else { 0.0 },
            lambda,
            n,
            n_a,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }
}

/// Log-determinant of the raw kernel. The stored components are derived
/// through the decoupling identity with `lambda = N`.
pub fn wot_score(net: &mut Network, batch: &Tensor) -> Result<Score, ProxyError> {
    let codes = extract_codes(net, batch)?;
    let kernel = hamming_kernel(&codes)?;
    let n = kernel.n();
    let n_a = kernel.n_a();
    let log_na = (n_a as f64).ln();
    let value = log_det(&kernel);
    if !value.is_finite() {
        return Ok(Score::neg_infinity(n, n_a, n as f64));
    }
    Ok(Score {
        value,
        logdet_nk: value - n as f64 * log_na,
        log_na,
        lambda: n as f64,
        n,
        n_a,
    })
}

/// `log|NK_H| + lambda * ln(N_A)` over the normalized kernel. With
/// `lambda = N` this reproduces the raw-kernel score up to roundoff.
pub fn das_score(net: &mut Network, batch: &Tensor, lambda: Lambda) -> Result<Score, ProxyError> {
    let codes = extract_codes(net, batch)?;
    let kernel = hamming_kernel(&codes)?;
    das_score_from_kernel(&kernel, lambda)
}

/// DAS score of an already-computed raw kernel.
pub fn das_score_from_kernel(kernel: &KernelMatrix, lambda: Lambda) -> Result<Score, ProxyError> {
    assert_eq!(kernel.kind(), KernelKind::Raw);
    let n = kernel.n();
    let n_a = kernel.n_a();
    let lam = lambda.resolve(n);
    let normalized = normalize_kernel(kernel);
    let logdet_nk = log_det(&normalized);
    if !logdet_nk.is_finite() {
        return Ok(Score::neg_infinity(n, n_a, lam));
    }
    let log_na = (n_a as f64).ln();
    Ok(Score {
        value: logdet_nk + lam * log_na,
        logdet_nk,
        log_na,
        lambda: lam,
        n,
        n_a,
    })
}

/// Write the kernel as CSV and as an 8-bit grayscale PGM (`<stem>.csv`,
/// `<stem>.pgm`). Entry 1.0 maps to white and 0.0 to black; raw kernels
/// are scaled by `1 / N_A` first.
pub fn kernel_dump(k: &KernelMatrix, stem: &Path) -> Result<(), ProxyError> {
    let io_err = |path: PathBuf| move |source: std::io::Error| ProxyError::Io { path, source };

    let csv_path = stem.with_extension("csv");
    let mut csv = String::new();
    for i in 0..k.n {
        for j in 0..k.n {
            if j > 0 {
                csv.push(',');
            }
            csv.push_str(&format!("{}", k.entry(i, j)));
        }
        csv.push('\n');
    }
    fs::write(&csv_path, csv).map_err(io_err(csv_path.clone()))?;

    let scale = match k.kind {
        KernelKind::Raw => 1.0 / k.n_a as f64,
        KernelKind::Normalized => 1.0,
    };
    let pgm_path = stem.with_extension("pgm");
    let mut pgm: Vec<u8> = format!("P5\n{} {}\n255\n", k.n, k.n).into_bytes();
    for v in &k.entries {
        let gray = (v * scale * 255.0).round().clamp(0.0, 255.0) as u8;
        pgm.push(gray);
    }
    let mut file = fs::File::create(&pgm_path).map_err(io_err(pgm_path.clone()))?;
    file.write_all(&pgm).map_err(io_err(pgm_path))?;
    Ok(())
}
