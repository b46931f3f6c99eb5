//! Query-counted views over concrete data, the deterministic noise source
//! standing in for the estimators' multiplicative error, and the runtime
//! cost-model evaluator.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GlmError, Result};
use crate::matrix_io::RowMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OracleKind {
    MatrixElement,
    MatrixIndex,
    MatrixRow,
    LossEval,
    WeightEval,
    OverestimateEval,
}

impl OracleKind {
    pub const ALL: [OracleKind; 6] = [
        OracleKind::MatrixElement,
        OracleKind::MatrixIndex,
        OracleKind::MatrixRow,
        OracleKind::LossEval,
        OracleKind::WeightEval,
        OracleKind::OverestimateEval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OracleKind::MatrixElement => "matrix-element",
            OracleKind::MatrixIndex => "matrix-index",
            OracleKind::MatrixRow => "matrix-row",
            OracleKind::LossEval => "loss-eval",
            OracleKind::WeightEval => "weight-eval",
            OracleKind::OverestimateEval => "overestimate-eval",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

/// Per-oracle call counters. Counters only grow until [`QueryLedger::reset`].
#[derive(Debug, Default)]
pub struct QueryLedger {
    counts: [AtomicU64; 6],
}

impl QueryLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn charge(&self, kind: OracleKind, n: u64) {
        self.counts[kind.slot()].fetch_add(n, Ordering::Relaxed);
    }

    pub fn count(&self, kind: OracleKind) -> u64 {
        self.counts[kind.slot()].load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        for c in &self.counts {
            c.store(0, Ordering::Relaxed);
        }
    }

    pub fn snapshot(&self) -> BTreeMap<String, u64> {
        OracleKind::ALL
            .iter()
            .map(|&k| (k.name().to_string(), self.count(k)))
            .collect()
    }
}

/// Element, index and row access to a [`RowMatrix`], charging the ledger.
#[derive(Debug, Clone, Copy)]
pub struct MatrixOracle<'a> {
    matrix: &'a RowMatrix,
    ledger: &'a QueryLedger,
}

impl<'a> MatrixOracle<'a> {
    pub fn new(matrix: &'a RowMatrix, ledger: &'a QueryLedger) -> Self {
        MatrixOracle { matrix, ledger }
    }

    pub fn matrix(&self) -> &'a RowMatrix {
        self.matrix
    }

    fn check_row(&self, i: usize) -> Result<()> {
        if i >= self.matrix.nrows() {
            return Err(GlmError::IndexOutOfRange {
                what: "row",
                index: i,
                bound: self.matrix.nrows(),
            });
        }
        Ok(())
    }

    /// `a_ij`.
    pub fn element(&self, i: usize, j: usize) -> Result<f64> {
        self.check_row(i)?;
        if j >= self.matrix.ncols() {
            return Err(GlmError::IndexOutOfRange {
                what: "column",
                index: j,
                bound: self.matrix.ncols(),
            });
        }
        self.ledger.charge(OracleKind::MatrixElement, 1);
        Ok(self.matrix.get(i, j))
    }

    /// Column of the `k`-th stored entry of row `i`.
    pub fn index(&self, i: usize, k: usize) -> Result<usize> {
        self.check_row(i)?;
        let (cols, _) = self.matrix.row(i);
        let col = *cols.get(k).ok_or(GlmError::IndexOutOfRange {
            what: "row entry",
            index: k,
            bound: cols.len(),
        })?;
        self.ledger.charge(OracleKind::MatrixIndex, 1);
        Ok(col)
    }

    /// Whole sparse row; also charges one element query per stored entry.
    pub fn row(&self, i: usize) -> Result<(&'a [usize], &'a [f64])> {
        self.check_row(i)?;
        self.ledger.charge(OracleKind::MatrixRow, 1);
        self.ledger
            .charge(OracleKind::MatrixElement, self.matrix.row_nnz(i) as u64);
        Ok(self.matrix.row(i))
    }
}

/// Multiplicative noise settings. When enabled every factor lies in
/// `[1 - epsilon, 1 + epsilon]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub epsilon: f64,
    pub seed: u64,
    pub enabled: bool,
}

impl NoiseConfig {
    pub fn disabled() -> Self {
        NoiseConfig {
            epsilon: 0.0,
            seed: 0,
            enabled: false,
        }
    }

    pub fn enabled(epsilon: f64, seed: u64) -> Result<Self> {
        let cfg = NoiseConfig {
            epsilon,
            seed,
            enabled: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_epsilon(self, epsilon: f64) -> Self {
        NoiseConfig { epsilon, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(GlmError::invalid(format!(
                "noise epsilon must lie in [0, 1), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

// FNV-1a, fixed so that streams are stable across toolchains.
fn tag_hash(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic factor in `[1 - eps, 1 + eps]` keyed by `(seed, tag, index)`;
/// exactly `1.0` when noise is disabled.
pub fn noisy_factor(cfg: &NoiseConfig, tag: &str, index: u64) -> f64 {
    if !cfg.enabled || cfg.epsilon == 0.0 {
        return 1.0;
    }
    let key = cfg.seed ^ tag_hash(tag).rotate_left(17) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let u: f64 = rng.gen_range(-1.0..=1.0);
    1.0 + cfg.epsilon * u
}

/// Leading-order cost terms, up to polylog factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    /// `r * sqrt(m n) / eps`, times the scale factor.
    pub quantum_leading: f64,
    /// `n^3` (matrix multiplication exponent fixed at 3), times the scale factor.
    pub dense_linear_algebra: f64,
    /// `n r^2`, times the scale factor.
    pub sparse_gram: f64,
    /// Sum of the three quantum terms.
    pub quantum_total: f64,
    /// `m r`, the classical input-reading cost.
    pub classical: f64,
    /// `log2(scale_ratio) + 1`.
    pub scale_factor: f64,
    pub annotation: String,
}

pub fn quantum_budget(m: f64, n: f64, r: f64, epsilon: f64, scale_ratio: f64) -> Result<BudgetReport> {
    let finite = [m, n, r, epsilon, scale_ratio].iter().all(|v| v.is_finite());
    if !finite || !(m >= n && n >= r && r >= 1.0) {
        return Err(GlmError::invalid(format!(
            "budget requires m >= n >= r >= 1, got m={m}, n={n}, r={r}"
        )));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(GlmError::invalid(format!("budget requires epsilon in (0, 1], got {epsilon}")));
    }
    if scale_ratio < 1.0 {
        return Err(GlmError::invalid(format!("scale ratio must be >= 1, got {scale_ratio}")));
    }
    let scale_factor = scale_ratio.log2() + 1.0;
    let quantum_leading = r * (m * n).sqrt() / epsilon * scale_factor;
    let dense_linear_algebra = n.powi(3) * scale_factor;
    let sparse_gram = n * r * r * scale_factor;
    Ok(BudgetReport {
        quantum_leading,
        dense_linear_algebra,
        sparse_gram,
        quantum_total: quantum_leading + dense_linear_algebra + sparse_gram,
        classical: m * r,
        scale_factor,
        annotation: "up to polylog(m, n, 1/eps) factors".to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn element_query_counts() {
        let a = RowMatrix::identity(3);
        let ledger = QueryLedger::new();
        let o = MatrixOracle::new(&a, &ledger);
        assert_eq!(o.element(1, 1).unwrap(), 1.0);
        assert_eq!(ledger.count(OracleKind::MatrixElement), 1);
    }

    #[test]
    fn index_query_looks_up_column() {
        let a = RowMatrix::from_sparse_rows(3, vec![vec![(2, 5.0)]]).unwrap();
        let ledger = QueryLedger::new();
        let o = MatrixOracle::new(&a, &ledger);
        assert_eq!(o.index(0, 0).unwrap(), 2);
        assert!(o.index(0, 1).is_err());
        assert!(o.element(3, 0).is_err());
    }

    #[test]
    fn row_query_charges_elements() {
        let a = RowMatrix::from_dense_rows(&[vec![1.0, 2.0, 3.0, 4.0, 0.0]]).unwrap();
        let ledger = QueryLedger::new();
        MatrixOracle::new(&a, &ledger).row(0).unwrap();
        assert_eq!(ledger.count(OracleKind::MatrixRow), 1);
        assert_eq!(ledger.count(OracleKind::MatrixElement), 4);
        ledger.reset();
        assert_eq!(ledger.count(OracleKind::MatrixElement), 0);
    }

    #[test]
    fn disabled_noise_is_identity() {
        assert_eq!(noisy_factor(&NoiseConfig::disabled(), "x", 5), 1.0);
    }

    #[test]
    fn noise_is_bounded_and_repeatable() {
        let cfg = NoiseConfig::enabled(0.1, 42).unwrap();
        for i in 0..200 {
            let f = noisy_factor(&cfg, "lev", i);
            assert!((0.9..=1.1).contains(&f));
            assert_eq!(f, noisy_factor(&cfg, "lev", i));
        }
    }

    #[test]
    fn noise_varies_over_indices() {
        let cfg = NoiseConfig::enabled(0.1, 7).unwrap();
        let vals: Vec<f64> = (0..1000).map(|i| noisy_factor(&cfg, "t", i)).collect();
        let mean = vals.iter().sum::<f64>() / 1000.0;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 1000.0;
        // uniform on [0.9, 1.1] has variance 0.01/3
        assert!((mean - 1.0).abs() < 0.01);
        assert!(var > 0.002 && var < 0.0045, "variance {var}");
        let distinct: std::collections::BTreeSet<u64> = vals.iter().map(|v| v.to_bits()).collect();
        assert!(distinct.len() > 990);
    }

    #[test]
    fn budget_example() {
        let b = quantum_budget(1e6, 100.0, 100.0, 0.5, 1.0).unwrap();
        assert!((b.quantum_leading - 2e6).abs() < 1e-6);
        assert_eq!(b.classical, 1e8);
        let n = 50.0;
        let m = 1e4;
        let b = quantum_budget(m, n, n, 1.0, 1.0).unwrap();
        assert!((b.quantum_leading - n * (m * n).sqrt()).abs() < 1e-6);
        assert!(quantum_budget(m, n, n, 0.0, 1.0).is_err());
        assert!(quantum_budget(10.0, 20.0, 1.0, 0.5, 1.0).is_err());
    }
}
