//! Regression problems reduced to sparsifiable objectives: embeddings for
//! ridge, lasso, multiple-response and bias terms, inner solvers for the
//! reweighted problems, and full-data reference solves.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GlmError, Result};
use crate::losses::{LossKind, ProperLossFamily, ScaledLoss};
use crate::matrix_io::{augment_bias, ResponseVector, RowMatrix};
use crate::oracles::QueryLedger;
use crate::sparsifier::{qglm_sparsify, SparsifyConfig, SparsifyDiagnostics};

/// Floor on `|r|` inside IRLS weights.
pub const IRLS_FLOOR: f64 = 1e-10;
pub const REFERENCE_TOL: f64 = 1e-10;
pub const REFERENCE_MAX_ITER: usize = 10_000;
pub const LASSO_GAP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemKind {
    Linear,
    Multiple,
    Ridge { lambda: f64 },
    Lasso { lambda: f64 },
    EllP { p: f64 },
    GammaP { p: f64 },
}

impl ProblemKind {
    fn residual_loss(&self) -> LossKind {
        match *self {
            ProblemKind::EllP { p } => LossKind::EllP { p },
            ProblemKind::GammaP { p } => LossKind::GammaP { p },
            _ => LossKind::Quadratic,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProblemKind::Linear => "linear",
            ProblemKind::Multiple => "multiple",
            ProblemKind::Ridge { .. } => "ridge",
            ProblemKind::Lasso { .. } => "lasso",
            ProblemKind::EllP { .. } => "ell_p",
            ProblemKind::GammaP { .. } => "gamma_p",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Vector(ResponseVector),
    /// `m x N` responses for multiple regression.
    Matrix(DMatrix<f64>),
}

#[derive(Debug, Clone)]
pub struct RegressionProblem {
    pub kind: ProblemKind,
    pub a: RowMatrix,
    pub response: Response,
}

impl RegressionProblem {
    pub fn new(kind: ProblemKind, a: RowMatrix, b: ResponseVector) -> Result<Self> {
        Self::build(kind, a, Response::Vector(b))
    }

    pub fn multiple(a: RowMatrix, b: DMatrix<f64>) -> Result<Self> {
        Self::build(ProblemKind::Multiple, a, Response::Matrix(b))
    }

    fn build(kind: ProblemKind, a: RowMatrix, response: Response) -> Result<Self> {
        match kind {
            ProblemKind::Ridge { lambda } | ProblemKind::Lasso { lambda } if !(lambda >= 0.0 && lambda.is_finite()) => {
                return Err(GlmError::invalid(format!("lambda must be finite and >= 0, got {lambda}")));
            }
            ProblemKind::EllP { p } | ProblemKind::GammaP { p } if !(p > 0.0 && p <= 2.0) => {
                return Err(GlmError::invalid(format!("p must lie in (0, 2], got {p}")));
            }
            _ => {}
        }
        let rows = match &response {
            Response::Vector(b) => {
                if kind == ProblemKind::Multiple {
                    return Err(GlmError::invalid("multiple regression needs a response matrix"));
                }
                b.len()
            }
            Response::Matrix(b) => {
                if kind != ProblemKind::Multiple {
                    return Err(GlmError::invalid("a response matrix is only valid for multiple regression"));
                }
                if b.ncols() == 0 {
                    return Err(GlmError::invalid("response matrix has no columns"));
                }
                if b.iter().any(|v| !v.is_finite()) {
                    return Err(GlmError::NonFiniteResult("response matrix has non-finite entries".into()));
                }
                b.nrows()
            }
        };
        if rows != a.nrows() {
            return Err(GlmError::DimensionMismatch(format!(
                "matrix has {} rows but response has {rows}",
                a.nrows()
            )));
        }
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(GlmError::invalid("empty design matrix"));
        }
        Ok(RegressionProblem { kind, a, response })
    }

    /// Number of response columns (1 unless multiple).
    pub fn columns(&self) -> usize {
        match &self.response {
            Response::Vector(_) => 1,
            Response::Matrix(b) => b.ncols(),
        }
    }

    /// Length of the (flattened, column-major) solution vector.
    pub fn solution_len(&self) -> usize {
        self.a.ncols() * self.columns()
    }

    fn column(&self, k: usize) -> Vec<f64> {
        match &self.response {
            Response::Vector(b) => b.as_slice().to_vec(),
            Response::Matrix(b) => b.column(k).iter().copied().collect(),
        }
    }

    /// The original objective at `x` (column-major `vec(X)` for multiple).
    pub fn objective(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.solution_len() {
            return Err(GlmError::DimensionMismatch(format!(
                "solution has {} entries, expected {}",
                x.len(),
                self.solution_len()
            )));
        }
        let n = self.a.ncols();
        let loss = self.kind.residual_loss();
        let mut total = 0.0;
        for k in 0..self.columns() {
            let b = self.column(k);
            let xk = &x[k * n..(k + 1) * n];
            total += self
                .a
                .mul_vec(xk)
                .iter()
                .zip(&b)
                .map(|(ax, bi)| loss.value(ax - bi))
                .sum::<f64>();
        }
        total += match self.kind {
            ProblemKind::Ridge { lambda } => lambda * x.iter().map(|v| v * v).sum::<f64>(),
            ProblemKind::Lasso { lambda } => lambda * x.iter().map(|v| v.abs()).sum::<f64>(),
            _ => 0.0,
        };
        Ok(total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeHint {
    pub s_min: f64,
    pub s_max: f64,
    /// True when the data-driven defaults were degenerate and a fixed
    /// fallback range was used.
    pub fallback: bool,
}

/// Sparsifiable form `sum_i f_i(<row_i, (x, -1)>)` of a problem.
#[derive(Debug, Clone)]
pub struct Embedding {
    /// Rows handed to the sparsifier; has a trailing response column when
    /// `bias` is set.
    pub matrix: RowMatrix,
    /// Same rows without the response column.
    pub design: RowMatrix,
    pub targets: Vec<f64>,
    pub family: ProperLossFamily,
    pub bias: bool,
    /// Rows `0..data_rows` carry data; the rest are regularizer rows.
    pub data_rows: usize,
    pub range: RangeHint,
}

impl Embedding {
    /// Embedded argument for a solution `x`: `(x, -1)` with a bias column.
    pub fn lift(&self, x: &[f64]) -> Vec<f64> {
        let mut v = x.to_vec();
        if self.bias {
            v.push(-1.0);
        }
        v
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.family.objective(&self.matrix, &self.lift(x))
    }
}

fn stacked_rows(problem: &RegressionProblem) -> (Vec<Vec<(usize, f64)>>, Vec<f64>, Vec<ScaledLoss>) {
    let a = &problem.a;
    let n = a.ncols();
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    let mut losses = Vec::new();
    let quad = ScaledLoss {
        kind: LossKind::Quadratic,
        scale: 1.0,
    };
    match (&problem.kind, &problem.response) {
        (ProblemKind::Multiple, Response::Matrix(b)) => {
            for k in 0..b.ncols() {
                for i in 0..a.nrows() {
                    let (cols, vals) = a.row(i);
                    rows.push(cols.iter().map(|&j| j + k * n).zip(vals.iter().copied()).collect());
                    targets.push(b[(i, k)]);
                    losses.push(quad);
                }
            }
        }
        (kind, Response::Vector(b)) => {
            let residual = ScaledLoss {
                kind: kind.residual_loss(),
                scale: 1.0,
            };
            for i in 0..a.nrows() {
                let (cols, vals) = a.row(i);
                rows.push(cols.iter().copied().zip(vals.iter().copied()).collect());
                targets.push(b.as_slice()[i]);
                losses.push(residual);
            }
            match *kind {
                ProblemKind::Ridge { lambda } if lambda > 0.0 => {
                    for j in 0..n {
                        rows.push(vec![(j, lambda.sqrt())]);
                        targets.push(0.0);
                        losses.push(quad);
                    }
                }
                ProblemKind::Lasso { lambda } if lambda > 0.0 => {
                    for j in 0..n {
                        rows.push(vec![(j, 1.0)]);
                        targets.push(0.0);
                        losses.push(ScaledLoss {
                            kind: LossKind::Absolute,
                            scale: lambda,
                        });
                    }
                }
                _ => {}
            }
        }
        _ => unreachable!("validated at construction"),
    }
    (rows, targets, losses)
}

fn family_from(losses: Vec<ScaledLoss>) -> Result<ProperLossFamily> {
    let first = losses[0];
    if losses.iter().all(|l| *l == first) && first.scale == 1.0 {
        ProperLossFamily::uniform(first.kind, losses.len())
    } else {
        ProperLossFamily::mixed(losses)
    }
}

/// Embeds the problem and computes default range endpoints for `epsilon`.
pub fn embed(problem: &RegressionProblem, epsilon: f64) -> Result<Embedding> {
    let (rows, targets, losses) = stacked_rows(problem);
    let ncols = problem.solution_len();
    let design = RowMatrix::from_sparse_rows(ncols, rows)?;
    let target_vec = ResponseVector::new(targets.clone())?;
    let bias = !target_vec.is_zero();
    let matrix = if bias { augment_bias(&design, &target_vec)? } else { design.clone() };
    let family = family_from(losses)?;
    let range = default_range(problem, epsilon)?;
    Ok(Embedding {
        matrix,
        design,
        targets,
        family,
        bias,
        data_rows: problem.a.nrows() * problem.columns(),
        range,
    })
}

/// Least squares on every `k`-th row, used as a cheap warm start.
fn subsample_least_squares(problem: &RegressionProblem) -> Result<Vec<f64>> {
    let a = &problem.a;
    let (m, n) = (a.nrows(), a.ncols());
    let stride = (m / (20 * n).max(200)).max(1);
    let rows: Vec<usize> = (0..m).step_by(stride).collect();
    let ones = vec![1.0; rows.len()];
    let d = a.scaled_dense_rows(&rows, &ones);
    let mut x = Vec::with_capacity(problem.solution_len());
    for k in 0..problem.columns() {
        let b = problem.column(k);
        let rhs = DVector::from_iterator(rows.len(), rows.iter().map(|&i| b[i]));
        x.extend(dense_least_squares(d.clone(), rhs)?);
    }
    Ok(x)
}

/// `s_max = min{F(0), 10 F(x_ls)}`, `s_min = max{1e-12 F(0), eps F(x_ls)/m^4}`.
pub fn default_range(problem: &RegressionProblem, epsilon: f64) -> Result<RangeHint> {
    let x_ls = subsample_least_squares(problem)?;
    let f_ls = problem.objective(&x_ls)?;
    let f0 = problem.objective(&vec![0.0; problem.solution_len()])?;
    let m = problem.a.nrows() as f64;
    let s_max = f0.min(10.0 * f_ls);
    let s_min = (1e-12 * f0).max(epsilon * f_ls / m.powi(4));
    if s_min > 0.0 && s_min < s_max && s_max.is_finite() {
        Ok(RangeHint {
            s_min,
            s_max,
            fallback: false,
        })
    } else {
        let top = f0.max(10.0 * f_ls).max(1.0);
        Ok(RangeHint {
            s_min: 1e-12 * top,
            s_max: top,
            fallback: true,
        })
    }
}

/// Minimum-norm least squares via QR followed by an SVD of the triangle.
fn dense_least_squares(b: DMatrix<f64>, rhs: DVector<f64>) -> Result<Vec<f64>> {
    let n = b.ncols();
    let (core, y) = if b.nrows() > n {
        let qr = b.qr();
        let mut y = rhs;
        qr.q_tr_mul(&mut y);
        (qr.r(), y.rows(0, n).into_owned())
    } else {
        (b, rhs)
    };
    let svd = core.svd(true, true);
    let top = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let x = svd
        .solve(&y, 1e-12 * top)
        .map_err(|e| GlmError::NonFiniteResult(format!("least squares failed: {e}")))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(GlmError::NonFiniteResult("least squares produced non-finite values".into()));
    }
    Ok(x.iter().copied().collect())
}

/// `argmin_x sum_k u_k (<d_{rows_k}, x> - t_{rows_k})^2`.
pub fn weighted_least_squares(design: &RowMatrix, targets: &[f64], rows: &[usize], weights: &[f64]) -> Result<Vec<f64>> {
    let scale: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let d = design.scaled_dense_rows(rows, &scale);
    let rhs = DVector::from_iterator(rows.len(), rows.iter().zip(&scale).map(|(&i, s)| s * targets[i]));
    dense_least_squares(d, rhs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IrlsOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Objective after each accepted iterate, starting with the warm start.
    pub objectives: Vec<f64>,
    pub converged: bool,
}

/// `d/ds G(s)` where `g(r) = G(r^2)`, evaluated at `s = max(r^2, floor^2)`.
fn irls_weight(loss: &ScaledLoss, r: f64) -> f64 {
    let s = (r * r).max(IRLS_FLOOR * IRLS_FLOOR);
    let base = match loss.kind {
        LossKind::Quadratic => 1.0,
        LossKind::Absolute => 0.5 * s.powf(-0.5),
        LossKind::EllP { p } => 0.5 * p * s.powf(0.5 * p - 1.0),
        LossKind::GammaP { p } => {
            if s <= 1.0 {
                0.5 * p
            } else {
                0.5 * p * s.powf(0.5 * p - 1.0)
            }
        }
    };
    loss.scale * base
}

/// Damped iteratively reweighted least squares for
/// `min_x sum_k w_k f_{rows_k}(<d_{rows_k}, x> - t_{rows_k})`, with a
/// backtracking step so the objective never increases.
#[allow(clippy::too_many_arguments)]
pub fn weighted_irls(
    design: &RowMatrix,
    targets: &[f64],
    family: &ProperLossFamily,
    rows: &[usize],
    weights: &[f64],
    x0: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<IrlsOutcome> {
    let objective = |x: &[f64]| -> f64 {
        rows.iter()
            .zip(weights)
            .map(|(&i, w)| w * family.value(i, design.row_dot(i, x) - targets[i]))
            .sum()
    };
    let mut x = x0;
    let mut current = objective(&x);
    let mut objectives = vec![current];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let u: Vec<f64> = rows
            .iter()
            .zip(weights)
            .map(|(&i, w)| w * irls_weight(&family.member(i), design.row_dot(i, &x) - targets[i]))
            .collect();
        let proposal = weighted_least_squares(design, targets, rows, &u)?;
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&proposal).map(|(a, b)| a + step * (b - a)).collect();
            let value = objective(&trial);
            if value <= current {
                accepted = Some((trial, value));
                break;
            }
            step *= 0.5;
        }
        let Some((next, value)) = accepted else {
            converged = true;
            break;
        };
        let moved = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = 1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let decrease = current - value;
        x = next;
        current = value;
        objectives.push(current);
        if decrease <= tol * current.max(f64::MIN_POSITIVE) || moved <= tol * scale {
            converged = true;
            break;
        }
    }
    Ok(IrlsOutcome {
        x,
        iterations,
        objectives,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LassoOutcome {
    pub x: Vec<f64>,
    pub sweeps: usize,
    pub relative_gap: f64,
    pub converged: bool,
}

/// Cyclic coordinate descent for
/// `min_x sum_k u_k (<d_k, x> - t_k)^2 + sum_j mu_j |x_j|`, stopped on the
/// relative duality gap.
pub fn weighted_lasso_cd(
    design: &RowMatrix,
    targets: &[f64],
    rows: &[usize],
    weights: &[f64],
    penalties: &[f64],
    tol: f64,
    max_sweeps: usize,
) -> Result<LassoOutcome> {
    let n = design.ncols();
    if penalties.len() != n {
        return Err(GlmError::DimensionMismatch("one penalty per coordinate required".into()));
    }
    let scale: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let xm = design.scaled_dense_rows(rows, &scale);
    let y = DVector::from_iterator(rows.len(), rows.iter().zip(&scale).map(|(&i, s)| s * targets[i]));
    let col_sq: Vec<f64> = (0..n).map(|j| xm.column(j).norm_squared()).collect();
    let half: Vec<f64> = penalties.iter().map(|p| 0.5 * p).collect();
    let mut x = DVector::zeros(n);
    let mut r = y.clone();
    let primal = |r: &DVector<f64>, x: &DVector<f64>| {
        0.5 * r.norm_squared() + x.iter().zip(&half).map(|(v, h)| h * v.abs()).sum::<f64>()
    };
    let gap_of = |r: &DVector<f64>, x: &DVector<f64>| {
        let corr = xm.transpose() * r;
        let mut s: f64 = 1.0;
        for j in 0..n {
            let c = corr[j].abs();
            if c > half[j] {
                s = s.min(if c > 0.0 { half[j] / c } else { 1.0 });
            }
        }
        let dual = 0.5 * y.norm_squared() - 0.5 * (&y - r * s).norm_squared();
        let p = primal(r, x);
        ((p - dual) / p.max(f64::MIN_POSITIVE)).max(0.0)
    };
    let mut gap = gap_of(&r, &x);
    let mut sweeps = 0;
    while gap > tol && sweeps < max_sweeps {
        sweeps += 1;
        let mut moved: f64 = 0.0;
        for j in 0..n {
            if col_sq[j] == 0.0 {
                continue;
            }
            let col = xm.column(j);
            let rho = col.dot(&r) + col_sq[j] * x[j];
            let new = soft_threshold(rho, half[j]) / col_sq[j];
            let delta = new - x[j];
            if delta != 0.0 {
                r.axpy(-delta, &col, 1.0);
                x[j] = new;
                moved = moved.max(delta.abs());
            }
        }
        gap = gap_of(&r, &x);
        if moved <= 1e-15 * (1.0 + x.amax()) {
            break;
        }
    }
    Ok(LassoOutcome {
        x: x.iter().copied().collect(),
        sweeps,
        relative_gap: gap,
        converged: gap <= tol,
    })
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

fn all_rows(m: usize) -> (Vec<usize>, Vec<f64>) {
    ((0..m).collect(), vec![1.0; m])
}

/// High-accuracy full-data solve: closed form for quadratic kinds, IRLS for
/// `l_p` and `gamma_p`, coordinate descent for lasso.
pub fn reference_solve(problem: &RegressionProblem) -> Result<ReferenceSolution> {
    let emb = embed(problem, 0.5)?;
    let m_all = emb.design.nrows();
    let (x, iterations) = match problem.kind {
        ProblemKind::Linear | ProblemKind::Ridge { .. } | ProblemKind::Multiple => {
            let (rows, w) = all_rows(m_all);
            (weighted_least_squares(&emb.design, &emb.targets, &rows, &w)?, 1)
        }
        ProblemKind::EllP { .. } | ProblemKind::GammaP { .. } => {
            let (rows, w) = all_rows(m_all);
            let x0 = weighted_least_squares(&emb.design, &emb.targets, &rows, &w)?;
            let out = weighted_irls(&emb.design, &emb.targets, &emb.family, &rows, &w, x0, REFERENCE_TOL, REFERENCE_MAX_ITER)?;
            if !out.converged {
                return Err(GlmError::NonConvergence {
                    what: "reference IRLS".into(),
                    iterations: out.iterations,
                });
            }
            (out.x, out.iterations)
        }
        ProblemKind::Lasso { lambda } => {
            let (rows, w) = all_rows(problem.a.nrows());
            let penalties = vec![lambda; problem.a.ncols()];
            let out = weighted_lasso_cd(&emb.design, &emb.targets, &rows, &w, &penalties, LASSO_GAP_TOL, 1_000_000)?;
            if !out.converged {
                return Err(GlmError::NonConvergence {
                    what: format!("reference lasso (relative gap {:e})", out.relative_gap),
                    iterations: out.sweeps,
                });
            }
            (out.x, out.sweeps)
        }
    };
    let objective = problem.objective(&x)?;
    Ok(ReferenceSolution { x, objective, iterations })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub epsilon: f64,
    pub sparsify: SparsifyConfig,
    pub s_min: Option<f64>,
    pub s_max: Option<f64>,
    /// Also run [`reference_solve`] and report the ratio.
    pub reference: bool,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
}

impl SolveConfig {
    pub fn new(epsilon: f64, seed: u64) -> Self {
        SolveConfig {
            epsilon,
            sparsify: SparsifyConfig::with_seed(seed),
            s_min: None,
            s_max: None,
            reference: true,
            inner_tol: REFERENCE_TOL,
            inner_max_iter: REFERENCE_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub kind: ProblemKind,
    /// Column-major `vec(X)` for multiple regression.
    pub solution: Vec<f64>,
    pub columns: usize,
    pub objective_full: f64,
    /// Reweighted objective of the sparsified problem at the solution.
    pub objective_sparse: f64,
    pub reference_objective: Option<f64>,
    pub ratio_to_reference: Option<f64>,
    pub iterations: usize,
    pub seed: u64,
    pub range: RangeHint,
    pub sparsifier_nnz: usize,
    pub sparsify: SparsifyDiagnostics,
}

/// Sparsify the embedded objective, minimize the reweighted problem and
/// evaluate the minimizer on the full data.
pub fn solve(problem: &RegressionProblem, cfg: &SolveConfig, ledger: &QueryLedger) -> Result<SolveReport> {
    if !(cfg.epsilon > 0.0 && cfg.epsilon < 1.0) {
        return Err(GlmError::invalid(format!("epsilon must lie in (0, 1), got {}", cfg.epsilon)));
    }
    let emb = embed(problem, cfg.epsilon)?;
    let mut range = emb.range;
    if let Some(v) = cfg.s_min {
        range.s_min = v;
    }
    if let Some(v) = cfg.s_max {
        range.s_max = v;
    }

    let (solution, iterations, objective_sparse, diagnostics, nnz) = if problem.kind == ProblemKind::Multiple {
        solve_multiple(problem, cfg, range, ledger)?
    } else {
        let out = qglm_sparsify(&emb.matrix, &emb.family, cfg.epsilon, range.s_min, range.s_max, &cfg.sparsify, ledger)?;
        let sp = out.sparsifier;
        let (x, iters) = inner_solve(problem, &emb, &sp.indices, &sp.weights, cfg)?;
        let lifted = emb.lift(&x);
        let sparse_obj = emb.family.weighted_objective(&emb.matrix, &lifted, &sp.pairs());
        (x, iters, sparse_obj, out.diagnostics, sp.indices.len())
    };

    let objective_full = problem.objective(&solution)?;
    let reference_objective = if cfg.reference {
        Some(reference_solve(problem)?.objective)
    } else {
        None
    };
    let ratio_to_reference = reference_objective.map(|r| {
        if r > 0.0 {
            objective_full / r
        } else if objective_full <= 1e-12 {
            1.0
        } else {
            f64::INFINITY
        }
    });
    Ok(SolveReport {
        kind: problem.kind,
        solution,
        columns: problem.columns(),
        objective_full,
        objective_sparse,
        reference_objective,
        ratio_to_reference,
        iterations,
        seed: cfg.sparsify.seed,
        range,
        sparsifier_nnz: nnz,
        sparsify: diagnostics,
    })
}

fn inner_solve(
    problem: &RegressionProblem,
    emb: &Embedding,
    indices: &[usize],
    weights: &[f64],
    cfg: &SolveConfig,
) -> Result<(Vec<f64>, usize)> {
    match problem.kind {
        ProblemKind::Linear | ProblemKind::Ridge { .. } => {
            Ok((weighted_least_squares(&emb.design, &emb.targets, indices, weights)?, 1))
        }
        ProblemKind::EllP { .. } | ProblemKind::GammaP { .. } => {
            let x0 = weighted_least_squares(&emb.design, &emb.targets, indices, weights)?;
            let out = weighted_irls(&emb.design, &emb.targets, &emb.family, indices, weights, x0, cfg.inner_tol, cfg.inner_max_iter)?;
            if !out.converged {
                return Err(GlmError::NonConvergence {
                    what: "IRLS on the sparsified objective".into(),
                    iterations: out.iterations,
                });
            }
            Ok((out.x, out.iterations))
        }
        ProblemKind::Lasso { lambda } => {
            let n = problem.a.ncols();
            let mut penalties = vec![0.0; n];
            let mut rows = Vec::new();
            let mut w = Vec::new();
            for (&i, &wi) in indices.iter().zip(weights) {
                if i < emb.data_rows {
                    rows.push(i);
                    w.push(wi);
                } else {
                    penalties[i - emb.data_rows] = lambda * wi;
                }
            }
            let out = weighted_lasso_cd(&emb.design, &emb.targets, &rows, &w, &penalties, LASSO_GAP_TOL, cfg.inner_max_iter * 100)?;
            Ok((out.x, out.sweeps))
        }
        ProblemKind::Multiple => unreachable!("handled by solve_multiple"),
    }
}

type MultipleSolve = (Vec<f64>, usize, f64, SparsifyDiagnostics, usize);

/// One sparsifier for `[A | B]`, then a weighted least-squares solve per column.
fn solve_multiple(problem: &RegressionProblem, cfg: &SolveConfig, range: RangeHint, ledger: &QueryLedger) -> Result<MultipleSolve> {
    let Response::Matrix(b) = &problem.response else {
        unreachable!("validated at construction")
    };
    let a = &problem.a;
    let (m, n) = (a.nrows(), a.ncols());
    let joined_rows: Vec<Vec<(usize, f64)>> = (0..m)
        .map(|i| {
            let (cols, vals) = a.row(i);
            let mut row: Vec<(usize, f64)> = cols.iter().copied().zip(vals.iter().copied()).collect();
            row.extend((0..b.ncols()).map(|k| (n + k, b[(i, k)])));
            row
        })
        .collect();
    let joined = RowMatrix::from_sparse_rows(n + b.ncols(), joined_rows)?;
    let family = ProperLossFamily::quadratic(m)?;
    let out = qglm_sparsify(&joined, &family, cfg.epsilon, range.s_min, range.s_max, &cfg.sparsify, ledger)?;
    let sp = &out.sparsifier;
    let mut solution = Vec::with_capacity(n * b.ncols());
    let mut sparse_obj = 0.0;
    for k in 0..b.ncols() {
        let col: Vec<f64> = b.column(k).iter().copied().collect();
        let x = weighted_least_squares(a, &col, &sp.indices, &sp.weights)?;
        sparse_obj += sp
            .indices
            .iter()
            .zip(&sp.weights)
            .map(|(&i, w)| w * (a.row_dot(i, &x) - col[i]).powi(2))
            .sum::<f64>();
        solution.extend(x);
    }
    Ok((solution, b.ncols(), sparse_obj, out.diagnostics.clone(), sp.indices.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small() -> (RowMatrix, ResponseVector) {
        let a = RowMatrix::from_dense_rows(&[
            vec![1.0, 0.5],
            vec![0.2, 1.0],
            vec![1.0, 1.0],
            vec![-1.0, 0.3],
            vec![0.4, -0.8],
        ])
        .unwrap();
        let b = ResponseVector::new(vec![1.0, 2.0, 0.5, -1.0, 0.3]).unwrap();
        (a, b)
    }

    #[test]
    fn ridge_embedding_block() {
        let a = RowMatrix::from_dense_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let p = RegressionProblem::new(ProblemKind::Ridge { lambda: 4.0 }, a, ResponseVector::zeros(2)).unwrap();
        let e = embed(&p, 0.5).unwrap();
        assert_eq!(e.matrix.nrows(), 4);
        assert_eq!(e.matrix.ncols(), 2);
        assert_eq!(e.matrix.get(2, 0), 2.0);
        assert_eq!(e.matrix.get(3, 1), 2.0);
        assert_eq!(e.matrix.get(2, 1), 0.0);
        assert!(!e.bias);
    }

    #[test]
    fn lasso_regularizer_row() {
        let (a, b) = small();
        let p = RegressionProblem::new(ProblemKind::Lasso { lambda: 0.5 }, a, b).unwrap();
        let e = embed(&p, 0.5).unwrap();
        assert_eq!(e.family.value(5 + 1, -2.0), 1.0);
        assert_eq!(e.family.value(0, -2.0), 4.0);
    }

    #[test]
    fn embedding_matches_objective() {
        let (a, b) = small();
        let x = [0.3, -0.7];
        for kind in [
            ProblemKind::Linear,
            ProblemKind::Ridge { lambda: 0.7 },
            ProblemKind::Lasso { lambda: 0.7 },
            ProblemKind::EllP { p: 1.3 },
            ProblemKind::GammaP { p: 1.0 },
        ] {
            let p = RegressionProblem::new(kind, a.clone(), b.clone()).unwrap();
            let e = embed(&p, 0.5).unwrap();
            assert_relative_eq!(e.objective(&x), p.objective(&x).unwrap(), max_relative = 1e-12);
        }
        let bm = DMatrix::from_row_slice(5, 2, &[1.0, 0.0, 2.0, 1.0, 0.5, 0.5, -1.0, 2.0, 0.3, 0.1]);
        let p = RegressionProblem::multiple(a, bm).unwrap();
        let e = embed(&p, 0.5).unwrap();
        let xv = [0.3, -0.7, 1.0, 0.2];
        assert_relative_eq!(e.objective(&xv), p.objective(&xv).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn rejects_bad_parameters() {
        let (a, b) = small();
        assert!(RegressionProblem::new(ProblemKind::Ridge { lambda: -1.0 }, a.clone(), b.clone()).is_err());
        assert!(RegressionProblem::new(ProblemKind::EllP { p: 3.0 }, a, b).is_err());
    }

    #[test]
    fn identity_interpolates() {
        let a = RowMatrix::identity(4);
        let b = ResponseVector::new(vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let p = RegressionProblem::new(ProblemKind::Linear, a, b).unwrap();
        let ledger = QueryLedger::new();
        let r = solve(&p, &SolveConfig::new(0.3, 1), &ledger).unwrap();
        for (x, t) in r.solution.iter().zip([1.0, -2.0, 3.0, 0.5]) {
            assert_relative_eq!(*x, t, max_relative = 1e-10);
        }
        assert!(r.objective_full < 1e-20);
    }

    #[test]
    fn lasso_zero_when_lambda_large() {
        let (a, b) = small();
        let atb: f64 = (0..2)
            .map(|j| (0..5).map(|i| a.get(i, j) * b.as_slice()[i]).sum::<f64>().abs())
            .fold(0.0, f64::max);
        let p = RegressionProblem::new(ProblemKind::Lasso { lambda: 2.0 * atb * 1.01 }, a, b).unwrap();
        let r = reference_solve(&p).unwrap();
        assert!(r.x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn irls_is_monotone() {
        let (a, b) = small();
        let p = RegressionProblem::new(ProblemKind::EllP { p: 1.0 }, a, b).unwrap();
        let e = embed(&p, 0.5).unwrap();
        let (rows, w) = all_rows(5);
        let x0 = weighted_least_squares(&e.design, &e.targets, &rows, &w).unwrap();
        let out = weighted_irls(&e.design, &e.targets, &e.family, &rows, &w, x0, 1e-12, 1000).unwrap();
        assert!(out.objectives.windows(2).all(|p| p[1] <= p[0]));
        assert!(out.converged);
    }
}
