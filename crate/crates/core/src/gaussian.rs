//! Diagonal-Gaussian posteriors and the distances built on them.
//!
//! Two flavours of every operation live here: plain `f64` versions on
//! [`DiagonalGaussian`] (used by evaluation code and as readable reference
//! formulas) and differentiable versions on [`PosteriorBatch`], whose mean
//! and variance are nodes on a [`Tape`].
//!
//! The kernel between two Gaussians is their density-overlap integral
//!
//! ```text
//! k(a, b) = prod_d (2 pi (var_a,d + var_b,d))^(-1/2) exp(-(mean_a,d - mean_b,d)^2 / (2 (var_a,d + var_b,d)))
//! ```
//!
//! and the adversarial similarity distance between two posterior
//! populations is the biased (V-statistic) squared MMD under that kernel,
//! evaluated on the posterior parameters before any sampling.

use std::f64::consts::PI;

use ndarray::Array2;
use thiserror::Error;

use crate::diffmath::{DiffError, Matrix, Tape, Value};

/// Variances are floored here before any KL or kernel evaluation.
pub const VAR_FLOOR: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaussianError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("empty posterior batch")]
    EmptyBatch,
    #[error("variance must be finite and positive, got {0}")]
    InvalidVariance(f64),
    #[error("mean must be finite, got {0}")]
    InvalidMean(f64),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

pub type Result<T> = std::result::Result<T, GaussianError>;

/// `N(mean, diag(var))`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(GaussianError::DimensionMismatch {
                left: mean.len(),
                right: var.len(),
            });
        }
        if let Some(&m) = mean.iter().find(|m| !m.is_finite()) {
            return Err(GaussianError::InvalidMean(m));
        }
        if let Some(&v) = var.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
            return Err(GaussianError::InvalidVariance(v));
        }
        Ok(Self { mean, var })
    }

    pub fn standard(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            var: vec![1.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    fn floored_var(&self, d: usize) -> f64 {
        self.var[d].max(VAR_FLOOR)
    }

    /// `mean + sqrt(var) * eps`.
    pub fn reparameterize(&self, eps: &[f64]) -> Result<Vec<f64>> {
        self.same_dim(eps.len())?;
        Ok(self
            .mean
            .iter()
            .zip(&self.var)
            .zip(eps)
            .map(|((m, v), e)| m + v.sqrt() * e)
            .collect())
    }

    /// `KL(self || N(0, I))`.
    pub fn kl_to_prior(&self) -> f64 {
        0.5 * (0..self.dim())
            .map(|d| {
                let v = self.floored_var(d);
                self.mean[d] * self.mean[d] + v - 1.0 - v.ln()
            })
            .sum::<f64>()
    }

    /// `KL(self || other)`.
    pub fn kl_between(&self, other: &Self) -> Result<f64> {
        self.same_dim(other.dim())?;
        Ok((0..self.dim())
            .map(|d| {
                let (va, vb) = (self.floored_var(d), other.floored_var(d));
                let diff = self.mean[d] - other.mean[d];
                0.5 * (vb / va).ln() + (va + diff * diff) / (2.0 * vb) - 0.5
            })
            .sum())
    }

    fn same_dim(&self, other: usize) -> Result<()> {
        if self.dim() != other {
            return Err(GaussianError::DimensionMismatch {
                left: self.dim(),
                right: other,
            });
        }
        Ok(())
    }
}

/// Density-overlap kernel `∫ N(z; a) N(z; b) dz`.
pub fn kernel_k(a: &DiagonalGaussian, b: &DiagonalGaussian) -> Result<f64> {
    a.same_dim(b.dim())?;
    let log_k: f64 = (0..a.dim())
        .map(|d| {
            let s = a.floored_var(d) + b.floored_var(d);
            let diff = a.mean[d] - b.mean[d];
            -0.5 * (2.0 * PI * s).ln() - 0.5 * diff * diff / s
        })
        .sum();
    Ok(log_k.exp())
}

/// Plain evaluation of [`as_distance`].
pub fn as_distance_plain(r: &[DiagonalGaussian], g: &[DiagonalGaussian]) -> Result<f64> {
    if r.is_empty() || g.is_empty() {
        return Err(GaussianError::EmptyBatch);
    }
    let mean_kernel = |xs: &[DiagonalGaussian], ys: &[DiagonalGaussian]| -> Result<f64> {
        let mut acc = 0.0;
        for x in xs {
            for y in ys {
                acc += kernel_k(x, y)?;
            }
        }
        Ok(acc / (xs.len() * ys.len()) as f64)
    };
    Ok(mean_kernel(r, r)? + mean_kernel(g, g)? - 2.0 * mean_kernel(r, g)?)
}

/// A batch of posteriors held on a tape: `mean` and `var` are `B x n`.
#[derive(Debug, Clone, Copy)]
pub struct PosteriorBatch {
    pub mean: Value,
    pub var: Value,
}

impl PosteriorBatch {
    pub fn new(tape: &Tape, mean: Value, var: Value) -> Result<Self> {
        let (ms, vs) = (tape.shape(mean), tape.shape(var));
        if ms != vs {
            return Err(GaussianError::DimensionMismatch { left: ms.1, right: vs.1 });
        }
        if ms.0 == 0 {
            return Err(GaussianError::EmptyBatch);
        }
        Ok(Self { mean, var })
    }

    /// Places `entries` on the tape, as leaves when `trainable`.
    pub fn from_gaussians(tape: &mut Tape, entries: &[DiagonalGaussian], trainable: bool) -> Result<Self> {
        let first = entries.first().ok_or(GaussianError::EmptyBatch)?;
        let n = first.dim();
        let mut mean = Array2::zeros((entries.len(), n));
        let mut var = Array2::zeros((entries.len(), n));
        for (i, g) in entries.iter().enumerate() {
            first.same_dim(g.dim())?;
            for d in 0..n {
                mean[[i, d]] = g.mean[d];
                var[[i, d]] = g.var[d];
            }
        }
        let (mean, var) = if trainable {
            (tape.leaf(mean), tape.leaf(var))
        } else {
            (tape.constant(mean), tape.constant(var))
        };
        Self::new(tape, mean, var)
    }

    /// Reads the current entries back off the tape.
    pub fn to_gaussians(&self, tape: &Tape) -> Vec<DiagonalGaussian> {
        let (mean, var) = (tape.value(self.mean), tape.value(self.var));
        mean.outer_iter()
            .zip(var.outer_iter())
            .map(|(m, v)| DiagonalGaussian {
                mean: m.to_vec(),
                var: v.to_vec(),
            })
            .collect()
    }

    pub fn len(&self, tape: &Tape) -> usize {
        tape.shape(self.mean).0
    }

    pub fn dim(&self, tape: &Tape) -> usize {
        tape.shape(self.mean).1
    }

    fn floored_var(&self, tape: &mut Tape) -> Result<Value> {
        Ok(tape.clamp(self.var, VAR_FLOOR, f64::INFINITY)?)
    }

    /// `z = mean + sqrt(var) * eps` for a `B x n` block of standard-normal noise.
    pub fn reparameterize(&self, tape: &mut Tape, eps: &Matrix) -> Result<Value> {
        let (b, n) = tape.shape(self.mean);
        if eps.dim() != (b, n) {
            return Err(GaussianError::DimensionMismatch {
                left: n,
                right: eps.ncols(),
            });
        }
        let eps = tape.constant(eps.clone());
        let sd = tape.sqrt(self.var)?;
        let noise = tape.mul(sd, eps)?;
        Ok(tape.add(self.mean, noise)?)
    }

    /// Per-row `KL(q || N(0, I))`, `B x 1`.
    pub fn kl_to_prior(&self, tape: &mut Tape) -> Result<Value> {
        let var = self.floored_var(tape)?;
        let mean_sq = tape.square(self.mean)?;
        let log_var = tape.log(var)?;
        let t = tape.add(mean_sq, var)?;
        let t = tape.sub(t, log_var)?;
        let t = tape.shift(t, -1.0)?;
        let t = tape.row_sum(t)?;
        Ok(tape.scale(t, 0.5)?)
    }

    /// Per-row `KL(self_i || other_i)` for equally sized batches, `B x 1`.
    pub fn kl_between(&self, tape: &mut Tape, other: &Self) -> Result<Value> {
        let (sa, sb) = (tape.shape(self.mean), tape.shape(other.mean));
        if sa != sb {
            return Err(GaussianError::DimensionMismatch { left: sa.1, right: sb.1 });
        }
        let va = self.floored_var(tape)?;
        let vb = other.floored_var(tape)?;
        let ratio = tape.div(vb, va)?;
        let log_ratio = tape.log(ratio)?;
        let log_term = tape.scale(log_ratio, 0.5)?;
        let diff = tape.sub(self.mean, other.mean)?;
        let diff_sq = tape.square(diff)?;
        let num = tape.add(va, diff_sq)?;
        let two_vb = tape.scale(vb, 2.0)?;
        let quad = tape.div(num, two_vb)?;
        let t = tape.add(log_term, quad)?;
        let t = tape.shift(t, -0.5)?;
        Ok(tape.row_sum(t)?)
    }
}

/// Pairwise kernel matrix `K[i, j] = k(a_i, b_j)`, `Ba x Bb`.
pub fn kernel_matrix(tape: &mut Tape, a: &PosteriorBatch, b: &PosteriorBatch) -> Result<Value> {
    let (n_a, n_b) = (a.dim(tape), b.dim(tape));
    if n_a != n_b {
        return Err(GaussianError::DimensionMismatch { left: n_a, right: n_b });
    }
    let var_a = a.floored_var(tape)?;
    let var_b = b.floored_var(tape)?;
    let pa = tape.concat_cols(a.mean, var_a)?;
    let pb = tape.concat_cols(b.mean, var_b)?;
    Ok(tape.gauss_kernel(pa, pb)?)
}

/// Adversarial similarity distance between two posterior populations:
/// `mean K(r, r) + mean K(g, g) - 2 mean K(r, g)`, a `1x1` value.
pub fn as_distance(tape: &mut Tape, r: &PosteriorBatch, g: &PosteriorBatch) -> Result<Value> {
    Ok(as_distances(tape, r, &[g])?[0])
}

/// [`as_distance`] from one reference population to several others, sharing
/// the `K(r, r)` term.
pub fn as_distances(tape: &mut Tape, r: &PosteriorBatch, gs: &[&PosteriorBatch]) -> Result<Vec<Value>> {
    let k_rr = kernel_matrix(tape, r, r)?;
    let m_rr = tape.mean(k_rr)?;
    gs.iter()
        .map(|g| {
            let k_gg = kernel_matrix(tape, g, g)?;
            let k_rg = kernel_matrix(tape, r, g)?;
            let m_gg = tape.mean(k_gg)?;
            let m_rg = tape.mean(k_rg)?;
            let within = tape.add(m_rr, m_gg)?;
            let cross = tape.scale(m_rg, 2.0)?;
            Ok(tape.sub(within, cross)?)
        })
        .collect()
}
