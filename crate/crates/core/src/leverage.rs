//! Exact leverage scores of `W^{1/2} A`, a noise-injected estimator with the
//! multiplicative-error contract, and a spectral comparison of reweighted
//! Gram matrices.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{GlmError, Result};
use crate::matrix_io::RowMatrix;
use crate::oracles::{noisy_factor, MatrixOracle, NoiseConfig, OracleKind, QueryLedger};

/// Relative singular-value cutoff for the pseudoinverse.
pub const RANK_CUTOFF: f64 = 1e-12;

/// Cached `V_k S_k^{-1}` from an SVD of `W^{1/2} A`, so that
/// `sigma_i = w_i * |P^T a_i|^2`.
#[derive(Debug, Clone)]
pub struct LeverageFactor {
    projector: DMatrix<f64>,
    rank: usize,
}

impl LeverageFactor {
    pub fn build(a: &RowMatrix, w: &[f64]) -> Result<Self> {
        check_weights(a, w)?;
        let n = a.ncols();
        let rows: Vec<usize> = (0..a.nrows()).filter(|&i| w[i] > 0.0).collect();
        let scale: Vec<f64> = rows.iter().map(|&i| w[i].sqrt()).collect();
        if rows.is_empty() || n == 0 {
            return Ok(LeverageFactor {
                projector: DMatrix::zeros(n, 0),
                rank: 0,
            });
        }
        let b = a.scaled_dense_rows(&rows, &scale);
        // Reduce tall matrices to their triangular factor first; the row
        // space and singular values are unchanged.
        let core = if b.nrows() > n { b.qr().r() } else { b };
        let svd = core.svd(false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| GlmError::NonFiniteResult("SVD did not produce right singular vectors".into()))?;
        let s = &svd.singular_values;
        let s_max = s.iter().cloned().fold(0.0, f64::max);
        if !s_max.is_finite() {
            return Err(GlmError::NonFiniteResult("non-finite singular value in W^1/2 A".into()));
        }
        let cutoff = RANK_CUTOFF * s_max;
        let kept: Vec<usize> = (0..s.len()).filter(|&k| s[k] > cutoff && s[k] > 0.0).collect();
        let mut projector = DMatrix::zeros(n, kept.len());
        for (col, &k) in kept.iter().enumerate() {
            for j in 0..n {
                projector[(j, col)] = v_t[(k, j)] / s[k];
            }
        }
        Ok(LeverageFactor {
            projector,
            rank: kept.len(),
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// `|P^T a_i|^2 = a_i^T (A^T W A)^+ a_i`.
    pub fn quadratic_form(&self, a: &RowMatrix, i: usize) -> f64 {
        let (cols, vals) = a.row(i);
        let mut acc = vec![0.0; self.rank];
        for (&j, &v) in cols.iter().zip(vals) {
            for (k, slot) in acc.iter_mut().enumerate() {
                *slot += v * self.projector[(j, k)];
            }
        }
        acc.iter().map(|x| x * x).sum()
    }

    pub fn score(&self, a: &RowMatrix, w: &[f64], i: usize) -> f64 {
        if w[i] == 0.0 {
            return 0.0;
        }
        w[i] * self.quadratic_form(a, i)
    }
}

fn check_weights(a: &RowMatrix, w: &[f64]) -> Result<()> {
    if w.len() != a.nrows() {
        return Err(GlmError::DimensionMismatch(format!(
            "weight vector has {} entries, matrix has {} rows",
            w.len(),
            a.nrows()
        )));
    }
    if let Some(i) = w.iter().position(|&x| !(x >= 0.0 && x.is_finite())) {
        return Err(GlmError::invalid(format!("weight {i} is {} (must be finite and >= 0)", w[i])));
    }
    Ok(())
}

/// `sigma_i = w_i a_i^T (A^T W A)^+ a_i` for every row.
pub fn exact_leverage(a: &RowMatrix, w: &[f64]) -> Result<Vec<f64>> {
    let factor = LeverageFactor::build(a, w)?;
    let scores: Vec<f64> = (0..a.nrows())
        .into_par_iter()
        .map(|i| factor.score(a, w, i))
        .collect();
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(GlmError::NonFiniteResult(format!("leverage score of row {i} is not finite")));
    }
    Ok(scores)
}

/// Serves `sigma~_i = noisy_factor * sigma_i` from a cached factorization.
/// Each query charges one row query (plus its element reads) and one weight
/// query to the ledger.
#[derive(Debug)]
pub struct LeverageEstimator<'a> {
    matrix: &'a RowMatrix,
    weights: Vec<f64>,
    factor: LeverageFactor,
    noise: NoiseConfig,
    tag: String,
    ledger: &'a QueryLedger,
}

impl<'a> LeverageEstimator<'a> {
    pub fn epsilon(&self) -> f64 {
        if self.noise.enabled {
            self.noise.epsilon
        } else {
            0.0
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn rank(&self) -> usize {
        self.factor.rank()
    }

    /// Noise-free score, not charged to the ledger.
    pub fn exact(&self, i: usize) -> f64 {
        self.factor.score(self.matrix, &self.weights, i)
    }

    pub fn query(&self, i: usize) -> Result<f64> {
        let oracle = MatrixOracle::new(self.matrix, self.ledger);
        oracle.row(i)?;
        self.ledger.charge(OracleKind::WeightEval, 1);
        Ok(self.exact(i) * noisy_factor(&self.noise, &self.tag, i as u64))
    }

    /// Queries every index in order.
    pub fn query_all(&self) -> Result<Vec<f64>> {
        (0..self.matrix.nrows()).map(|i| self.query(i)).collect()
    }
}

/// Builds an estimator whose answers are within a `1 +- epsilon` factor of
/// the exact leverage scores. `tag` separates independent noise streams.
pub fn mod_lev_approx<'a>(
    a: &'a RowMatrix,
    w: &[f64],
    epsilon: f64,
    noise: &NoiseConfig,
    tag: &str,
    ledger: &'a QueryLedger,
) -> Result<LeverageEstimator<'a>> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(GlmError::invalid(format!("estimator epsilon must lie in (0, 1], got {epsilon}")));
    }
    // Noise factors must stay positive, so epsilon = 1 is served as just below 1.
    let eps = if noise.enabled { epsilon.min(1.0 - 1e-9) } else { 0.0 };
    let factor = LeverageFactor::build(a, w)?;
    Ok(LeverageEstimator {
        matrix: a,
        weights: w.to_vec(),
        factor,
        noise: NoiseConfig { epsilon: eps, ..*noise },
        tag: tag.to_string(),
        ledger,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralReport {
    pub passed: bool,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub tolerance: f64,
}

/// Extremal generalized eigenvalues of `A^T W~ A` relative to `A^T A`.
/// `weights` are sparse `(row, weight)` pairs; repeated rows accumulate.
pub fn spectral_check(a: &RowMatrix, weights: &[(usize, f64)], tol: f64) -> Result<SpectralReport> {
    let n = a.ncols();
    let mut full = DMatrix::<f64>::zeros(n, n);
    let mut sparse = DMatrix::<f64>::zeros(n, n);
    let add_row = |g: &mut DMatrix<f64>, i: usize, w: f64| {
        let (cols, vals) = a.row(i);
        for (&j, &u) in cols.iter().zip(vals) {
            for (&k, &v) in cols.iter().zip(vals) {
                g[(j, k)] += w * u * v;
            }
        }
    };
    for i in 0..a.nrows() {
        add_row(&mut full, i, 1.0);
    }
    for &(i, w) in weights {
        if i >= a.nrows() {
            return Err(GlmError::IndexOutOfRange {
                what: "sparsifier index",
                index: i,
                bound: a.nrows(),
            });
        }
        add_row(&mut sparse, i, w);
    }
    let chol = full
        .cholesky()
        .ok_or_else(|| GlmError::RankDeficient("A^T A is not positive definite".into()))?;
    let l = chol.l();
    let pivots: Vec<f64> = (0..n).map(|k| l[(k, k)] * l[(k, k)]).collect();
    let top = pivots.iter().cloned().fold(0.0, f64::max);
    if pivots.iter().any(|&p| p <= RANK_CUTOFF * top) {
        return Err(GlmError::RankDeficient("A^T A is numerically singular".into()));
    }
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| GlmError::RankDeficient("Cholesky factor is singular".into()))?;
    let reduced = &l_inv * sparse * l_inv.transpose();
    let sym = (&reduced + reduced.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    let min_ratio = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_ratio = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(SpectralReport {
        passed: min_ratio >= 1.0 - tol && max_ratio <= 1.0 + tol,
        min_ratio,
        max_ratio,
        tolerance: tol,
    })
}

/// `A^T W A` as a dense matrix (used by explicit checks).
pub fn weighted_gram(a: &RowMatrix, w: &[f64]) -> DMatrix<f64> {
    let n = a.ncols();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..a.nrows() {
        if w[i] == 0.0 {
            continue;
        }
        let (cols, vals) = a.row(i);
        for (&j, &u) in cols.iter().zip(vals) {
            for (&k, &v) in cols.iter().zip(vals) {
                g[(j, k)] += w[i] * u * v;
            }
        }
    }
    g
}

/// Moore-Penrose pseudoinverse of a symmetric PSD matrix with the module's
/// relative cutoff.
pub fn psd_pseudoinverse(g: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = g.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cutoff = RANK_CUTOFF * top;
    let inv = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| if l > cutoff && l > 0.0 { 1.0 / l } else { 0.0 }),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}
