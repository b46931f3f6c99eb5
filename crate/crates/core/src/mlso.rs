//! Multiscale weight schemes: the log-ratio metric, the fixed-point update
//! map, approximate-weight checks, weight initialization and the
//! contraction-then-recursion driver producing leverage overestimates.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{GlmError, Result};
use crate::leverage::{exact_leverage, mod_lev_approx, psd_pseudoinverse, weighted_gram, LeverageEstimator};
use crate::losses::{find_anchor, make_modified, ProperLossFamily, ProperParams};
use crate::matrix_io::RowMatrix;
use crate::oracles::{NoiseConfig, OracleKind, QueryLedger};

/// Leverage scores at or below this are treated as zero.
pub const DEGENERATE_LEVERAGE: f64 = 1e-14;
/// Stand-in weight for degenerate rows without a finite small-argument limit.
pub const CLAMPED_WEIGHT: f64 = 1e-300;
/// Contraction rounds are clamped to `[1, MAX_ROUNDS]`.
pub const MAX_ROUNDS: usize = 200;
/// Maximum number of times the initialization factor is doubled.
pub const MAX_BETA_DOUBLINGS: usize = 10;
/// Multiscale estimator accuracy.
pub const MLSO_EPSILON: f64 = 0.1;

const CHECK_SLACK: f64 = 1e-9;

/// `d(u, w) = max_i |ln(u_i / w_i)|`.
pub fn metric_d(u: &[f64], w: &[f64]) -> Result<f64> {
    if u.len() != w.len() {
        return Err(GlmError::DimensionMismatch(format!("{} vs {} entries", u.len(), w.len())));
    }
    let mut d: f64 = 0.0;
    for (k, (&x, &y)) in u.iter().zip(w).enumerate() {
        if !(x > 0.0 && y > 0.0) {
            return Err(GlmError::invalid(format!("metric needs positive entries, index {k} has ({x}, {y})")));
        }
        d = d.max((x / y).ln().abs());
    }
    Ok(d)
}

/// Metric restricted to the indices where `mask` is true.
fn masked_metric(u: &[f64], w: &[f64], mask: &[bool]) -> f64 {
    u.iter()
        .zip(w)
        .zip(mask)
        .filter(|(_, &keep)| keep)
        .map(|((x, y), _)| (x / y).ln().abs())
        .fold(0.0, f64::max)
}

fn check_positive(w: &[f64], what: &str) -> Result<()> {
    if let Some(k) = w.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(GlmError::invalid(format!("{what}[{k}] = {} must be positive", w[k])));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhiUpdate {
    pub weights: Vec<f64>,
    /// Indices whose leverage was numerically zero.
    pub degenerate: Vec<usize>,
    /// Degenerate indices without a finite limit, set to [`CLAMPED_WEIGHT`].
    pub clamped: Vec<usize>,
}

/// `phi_s(w)_i = (1/s) f_i(sqrt(tau_i)) / tau_i` with `tau_i = sigma_i / w_i`,
/// using the estimator's (noisy) scores when one is supplied. The estimator
/// must have been built for the same `w`.
pub fn update_phi(
    a: &RowMatrix,
    family: &ProperLossFamily,
    w: &[f64],
    s: f64,
    estimator: Option<&LeverageEstimator>,
) -> Result<PhiUpdate> {
    check_positive(w, "w")?;
    if !(s > 0.0 && s.is_finite()) {
        return Err(GlmError::invalid(format!("scale must be positive, got {s}")));
    }
    if w.len() != a.nrows() || family.len() != a.nrows() {
        return Err(GlmError::DimensionMismatch(format!(
            "matrix has {} rows, weights {}, family {}",
            a.nrows(),
            w.len(),
            family.len()
        )));
    }
    let sigma = match estimator {
        Some(est) => {
            if est.weights() != w {
                return Err(GlmError::invalid("estimator was built for different weights"));
            }
            est.query_all()?
        }
        None => exact_leverage(a, w)?,
    };
    let mut out = PhiUpdate {
        weights: Vec::with_capacity(w.len()),
        degenerate: Vec::new(),
        clamped: Vec::new(),
    };
    for i in 0..w.len() {
        let value = if sigma[i] <= DEGENERATE_LEVERAGE {
            out.degenerate.push(i);
            match family.ratio_limit_at_zero(i) {
                Some(limit) if limit > 0.0 => limit / s,
                _ => {
                    out.clamped.push(i);
                    CLAMPED_WEIGHT
                }
            }
        } else {
            family.ratio_at_sqrt(i, sigma[i] / w[i]) / s
        };
        if !value.is_finite() {
            return Err(GlmError::NonFiniteResult(format!("updated weight {i} is {value}")));
        }
        out.weights.push(value.max(CLAMPED_WEIGHT));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApproxWeightCheck {
    /// Sandwich `s/alpha <= f_i(u_i)/(w_i u_i^2) <= alpha s` with
    /// `u_i = |M^{-1/2} a_i|`.
    pub by_definition: bool,
    /// `d(w, phi_s(w)) <= ln(alpha)`.
    pub by_fixed_point: bool,
    /// Largest `|ln(ratio_i / s)|` over non-degenerate rows.
    pub max_log_ratio: f64,
    pub skipped: usize,
}

/// Evaluates both characterizations of an `alpha`-approximate weight.
/// Rows with numerically zero leverage are skipped by both.
pub fn check_approx_weight(
    a: &RowMatrix,
    family: &ProperLossFamily,
    w: &[f64],
    s: f64,
    alpha: f64,
) -> Result<ApproxWeightCheck> {
    check_positive(w, "w")?;
    if !(s > 0.0) || !(alpha >= 1.0) {
        return Err(GlmError::invalid(format!("need s > 0 and alpha >= 1, got s={s}, alpha={alpha}")));
    }
    let m = a.nrows();
    if w.len() != m || family.len() != m {
        return Err(GlmError::DimensionMismatch("weights, family and matrix disagree".into()));
    }
    let log_alpha = alpha.ln();

    let m_inv = psd_pseudoinverse(&weighted_gram(a, w));
    let mut def_ok = true;
    let mut max_log_ratio: f64 = 0.0;
    let mut skipped = 0;
    let mut mask = vec![false; m];
    for i in 0..m {
        let (cols, vals) = a.row(i);
        let mut q = 0.0;
        for (&j, &u) in cols.iter().zip(vals) {
            for (&k, &v) in cols.iter().zip(vals) {
                q += u * m_inv[(j, k)] * v;
            }
        }
        if w[i] * q <= DEGENERATE_LEVERAGE {
            skipped += 1;
            continue;
        }
        mask[i] = true;
        let ratio = family.value(i, q.sqrt()) / (w[i] * q);
        let lr = (ratio / s).ln().abs();
        max_log_ratio = max_log_ratio.max(lr);
        if lr > log_alpha + CHECK_SLACK {
            def_ok = false;
        }
    }

    let phi = update_phi(a, family, w, s, None)?;
    for &i in &phi.degenerate {
        mask[i] = false;
    }
    let fixed = masked_metric(w, &phi.weights, &mask);
    Ok(ApproxWeightCheck {
        by_definition: def_ok,
        by_fixed_point: fixed <= log_alpha + CHECK_SLACK,
        max_log_ratio,
        skipped,
    })
}

/// True iff `w` is an `alpha`-approximate weight at scale `s`.
pub fn is_approx_weight(a: &RowMatrix, family: &ProperLossFamily, w: &[f64], s: f64, alpha: f64) -> Result<bool> {
    Ok(check_approx_weight(a, family, w, s, alpha)?.by_definition)
}

#[derive(Debug, Clone)]
pub struct InitBundle {
    pub family: ProperLossFamily,
    pub w0: Vec<f64>,
    pub beta: f64,
    pub beta_doublings: usize,
    pub anchors: Vec<f64>,
    pub c_init: f64,
    pub delta_init: f64,
    pub s_max: f64,
    /// Rows whose initial leverage was numerically zero (weight clamped).
    pub flagged: Vec<usize>,
}

/// `2 (2L/c)^{2/theta}`.
pub fn c_init(params: &ProperParams) -> f64 {
    2.0 * (2.0 * params.lipschitz / params.c).powf(2.0 / params.theta)
}

/// Initial weight and bumped family: anchors with `f_i(t_i) in [s_max/2, s_max]`,
/// `h_i = t_i^{-2}`, `w0_i = delta h_i / sigma~_i(H^{1/2} A)` with a
/// half-accurate estimate, and `f0_i(t) = f_i(t) + s_max w0_i t^2`.
pub fn weight_initialize(
    a: &RowMatrix,
    family: &ProperLossFamily,
    s_max: f64,
    delta_init: f64,
    noise: &NoiseConfig,
    ledger: &QueryLedger,
) -> Result<InitBundle> {
    if !(delta_init > 0.0 && delta_init.is_finite()) {
        return Err(GlmError::invalid(format!("delta_init must be positive, got {delta_init}")));
    }
    if !(s_max > 0.0 && s_max.is_finite()) {
        return Err(GlmError::invalid(format!("s_max must be positive, got {s_max}")));
    }
    let m = a.nrows();
    if family.len() != m {
        return Err(GlmError::DimensionMismatch(format!("family has {} members, matrix {} rows", family.len(), m)));
    }
    let mut anchors = Vec::with_capacity(m);
    for i in 0..m {
        let found = find_anchor(family, i, 0.5 * s_max, s_max)?;
        ledger.charge(OracleKind::LossEval, found.evaluations);
        anchors.push(found.x);
    }
    let h: Vec<f64> = anchors.iter().map(|t| t.powi(-2)).collect();
    let est = mod_lev_approx(a, &h, 0.5, noise, "init-leverage", ledger)?;
    let sigma = est.query_all()?;
    let mut flagged = Vec::new();
    let w0: Vec<f64> = (0..m)
        .map(|i| {
            if sigma[i] <= DEGENERATE_LEVERAGE {
                flagged.push(i);
                delta_init * h[i]
            } else {
                delta_init * h[i] / sigma[i]
            }
        })
        .collect();
    check_positive(&w0, "w0")?;
    let modified = make_modified(family, s_max, &w0)?;

    let params = family.params();
    let base = 1.5 * (2.0 * params.lipschitz / params.c).powf(4.0 / params.theta) * m as f64 / delta_init;
    let mut beta = 2.0 * base;
    let mut doublings = 0;
    while !is_approx_weight(a, &modified, &w0, s_max, beta)? {
        if doublings == MAX_BETA_DOUBLINGS {
            return Err(GlmError::InvariantViolation(format!(
                "initial weight is not approximate at beta = {beta:e} after {doublings} doublings"
            )));
        }
        beta *= 2.0;
        doublings += 1;
    }
    Ok(InitBundle {
        family: modified,
        w0,
        beta,
        beta_doublings: doublings,
        anchors,
        c_init: c_init(&params),
        delta_init,
        s_max,
        flagged,
    })
}

/// Per-scale weights `w^(j)` for `j in [j_min, j_max]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightScheme {
    pub j_min: i32,
    pub j_max: i32,
    pub alpha: f64,
    pub weights: BTreeMap<i32, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeCertificate {
    pub passed: bool,
    pub log_alpha: f64,
    /// `max_j d(w^(j), phi_{2^j}(w^(j)))` over non-degenerate rows.
    pub max_fixed_point_distance: f64,
    /// `max_j d(w^(j+1), w^(j))`.
    pub max_consecutive_distance: f64,
}

impl WeightScheme {
    pub fn scales(&self) -> impl Iterator<Item = i32> + '_ {
        self.weights.keys().copied()
    }

    /// Checks both scheme conditions with exact leverage scores.
    pub fn certify(&self, a: &RowMatrix, family: &ProperLossFamily) -> Result<SchemeCertificate> {
        let mut fixed: f64 = 0.0;
        for (&j, w) in &self.weights {
            let phi = update_phi(a, family, w, 2f64.powi(j), None)?;
            let mut mask = vec![true; w.len()];
            for &i in &phi.degenerate {
                mask[i] = false;
            }
            fixed = fixed.max(masked_metric(w, &phi.weights, &mask));
        }
        let mut consecutive: f64 = 0.0;
        for j in self.j_min..self.j_max {
            consecutive = consecutive.max(metric_d(&self.weights[&(j + 1)], &self.weights[&j])?);
        }
        let log_alpha = self.alpha.ln();
        Ok(SchemeCertificate {
            passed: fixed <= log_alpha + CHECK_SLACK && consecutive <= log_alpha + CHECK_SLACK,
            log_alpha,
            max_fixed_point_distance: fixed,
            max_consecutive_distance: consecutive,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverestimateVector {
    pub z: Vec<f64>,
    /// `|z|_1`.
    pub tau: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QmlsoDiagnostics {
    pub rounds: usize,
    pub rounds_clamped: bool,
    pub contraction: f64,
    pub contraction_constant: f64,
    /// `d(w_t, phi~(w_t))` for each contraction round `t`.
    pub round_distances: Vec<f64>,
    /// Number of (scale, row) pairs hit by degenerate-leverage handling.
    pub degenerate_rows: usize,
    pub clamped_rows: usize,
    pub tau_bound: f64,
}

#[derive(Debug, Clone)]
pub struct QmlsoOutput {
    pub scheme: WeightScheme,
    pub overestimates: OverestimateVector,
    pub diagnostics: QmlsoDiagnostics,
}

/// `4 (C^{3/(1-delta)})^2`.
pub fn certified_alpha(params: &ProperParams) -> f64 {
    let a = params.contraction_constant().powf(3.0 / (1.0 - params.contraction()));
    4.0 * a * a
}

/// Number of contraction rounds, clamped to `[1, MAX_ROUNDS]`; the flag is
/// set when the raw value fell outside that range or was undefined.
pub fn contraction_rounds(params: &ProperParams, beta: f64, epsilon: f64) -> (usize, bool) {
    let c = params.contraction_constant();
    let delta = params.contraction();
    let target = ((1.0 - epsilon) / (1.0 + epsilon).powi(2) * c).ln().ln();
    let raw = ((target - beta.ln().ln()) / delta.ln()).ceil();
    if !raw.is_finite() {
        return (1, true);
    }
    if raw < 1.0 {
        (1, true)
    } else if raw > MAX_ROUNDS as f64 {
        (MAX_ROUNDS, true)
    } else {
        (raw as usize, false)
    }
}

/// Multiscale overestimates from a `beta`-approximate weight at scale
/// `2^{j_max}`. Requires `j_min < j_max`.
#[allow(clippy::too_many_arguments)]
pub fn qmlso(
    a: &RowMatrix,
    family: &ProperLossFamily,
    w0: &[f64],
    j_min: i32,
    j_max: i32,
    beta: f64,
    epsilon: f64,
    noise: &NoiseConfig,
    ledger: &QueryLedger,
) -> Result<QmlsoOutput> {
    if j_min >= j_max {
        return Err(GlmError::invalid(format!("need j_min < j_max, got {j_min} >= {j_max}")));
    }
    qmlso_range(a, family, w0, j_min, j_max, beta, epsilon, noise, ledger)
}

/// As [`qmlso`] but also accepts a single scale (`j_min == j_max`), used
/// when the loss family is homogeneous.
#[allow(clippy::too_many_arguments)]
pub(crate) fn qmlso_range(
    a: &RowMatrix,
    family: &ProperLossFamily,
    w0: &[f64],
    j_min: i32,
    j_max: i32,
    beta: f64,
    epsilon: f64,
    noise: &NoiseConfig,
    ledger: &QueryLedger,
) -> Result<QmlsoOutput> {
    if j_min > j_max {
        return Err(GlmError::invalid(format!("need j_min <= j_max, got {j_min} > {j_max}")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(GlmError::invalid(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if !(beta >= 1.0) {
        return Err(GlmError::invalid(format!("beta must be >= 1, got {beta}")));
    }
    check_positive(w0, "w0")?;
    if w0.len() != a.nrows() {
        return Err(GlmError::DimensionMismatch("w0 length differs from row count".into()));
    }
    let params = family.params();
    let (rounds, rounds_clamped) = contraction_rounds(&params, beta, epsilon);
    let mut degenerate_rows = 0;
    let mut clamped_rows = 0;
    let mut tally = |u: &PhiUpdate| {
        degenerate_rows += u.degenerate.len();
        clamped_rows += u.clamped.len();
    };

    let s_top = 2f64.powi(j_max);
    let mut w = w0.to_vec();
    let mut round_distances = Vec::with_capacity(rounds);
    for t in 0..rounds {
        let est = mod_lev_approx(a, &w, epsilon, noise, &format!("mlso-round-{t}"), ledger)?;
        let next = update_phi(a, family, &w, s_top, Some(&est))?;
        tally(&next);
        round_distances.push(metric_d(&w, &next.weights)?);
        w = next.weights;
    }

    let mut weights = BTreeMap::new();
    let mut z = vec![0.0; a.nrows()];
    let mut exact_max = vec![0.0f64; a.nrows()];
    let mut j = j_max;
    loop {
        let est = mod_lev_approx(a, &w, epsilon, noise, &format!("mlso-scale-{j}"), ledger)?;
        for (i, zi) in z.iter_mut().enumerate() {
            *zi += est.query(i)?;
            exact_max[i] = exact_max[i].max(est.exact(i));
        }
        let next = if j > j_min {
            let u = update_phi(a, family, &w, 2f64.powi(j - 1), Some(&est))?;
            tally(&u);
            Some(u.weights)
        } else {
            None
        };
        weights.insert(j, std::mem::take(&mut w));
        match next {
            Some(nw) => {
                w = nw;
                j -= 1;
            }
            None => break,
        }
    }
    for zi in &mut z {
        *zi /= 1.0 - epsilon;
    }

    let n = a.ncols() as f64;
    let scales = (j_max - j_min + 1) as f64;
    let tau: f64 = z.iter().sum();
    let tau_bound = (1.0 + epsilon) / (1.0 - epsilon) * scales * n;
    if let Some(i) = (0..z.len()).find(|&i| z[i] < exact_max[i] * (1.0 - 1e-12)) {
        return Err(GlmError::InvariantViolation(format!(
            "overestimate z[{i}] = {} is below the multiscale leverage {}",
            z[i], exact_max[i]
        )));
    }
    if tau > tau_bound * (1.0 + 1e-12) {
        return Err(GlmError::InvariantViolation(format!("|z|_1 = {tau} exceeds {tau_bound}")));
    }
    Ok(QmlsoOutput {
        scheme: WeightScheme {
            j_min,
            j_max,
            alpha: certified_alpha(&params),
            weights,
        },
        overestimates: OverestimateVector { z, tau, epsilon },
        diagnostics: QmlsoDiagnostics {
            rounds,
            rounds_clamped,
            contraction: params.contraction(),
            contraction_constant: params.contraction_constant(),
            round_distances,
            degenerate_rows,
            clamped_rows,
            tau_bound,
        },
    })
}
