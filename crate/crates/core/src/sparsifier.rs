//! Importance-sampling sparsifier: proportional multi-sampling against
//! leverage overestimates, a noisy sum estimate, reweighting, and an
//! empirical range-restricted validator.

use std::collections::BTreeMap;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GlmError, Result};
use crate::losses::{FamilySpec, ProperLossFamily};
use crate::matrix_io::RowMatrix;
use crate::mlso::{qmlso_range, weight_initialize, QmlsoOutput, MLSO_EPSILON};
use crate::oracles::{noisy_factor, NoiseConfig, OracleKind, QueryLedger};

/// Default sample-count constant in `M = ceil(C_M |z|_1 ln(max(m,3)) / eps^2)`.
pub const DEFAULT_C_M: f64 = 8.0;
/// Accuracy of the sum estimate.
pub const SUM_EPSILON: f64 = 0.1;
/// Slack factor paired with [`SUM_EPSILON`] in the reweighting denominator.
pub const REWEIGHT_SLACK: f64 = 1.1;
/// Human-readable form of the initialization parameter.
pub const DELTA_INIT_FORMULA: &str = "delta_init = (eps/2) * s_min / (8 * m^3 * s_max)";
/// Cap on the number of samples, to keep runs bounded.
pub const MAX_SAMPLES: usize = 50_000_000;

const SAMPLER_STREAM: u64 = 0x5eed_5a3b_1e00_0001;

/// Draws `count` indices independently with probability `z_i / |z|_1`.
pub fn multi_sample(z: &[f64], count: usize, seed: u64, ledger: &QueryLedger) -> Result<Vec<usize>> {
    if count == 0 {
        return Err(GlmError::invalid("sample count must be at least 1"));
    }
    if z.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(GlmError::invalid("overestimates must be finite and nonnegative"));
    }
    let dist = WeightedIndex::new(z).map_err(|e| GlmError::invalid(format!("cannot sample from overestimates: {e}")))?;
    ledger.charge(OracleKind::OverestimateEval, (z.len() + count) as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SAMPLER_STREAM);
    Ok((0..count).map(|_| dist.sample(&mut rng)).collect())
}

/// `|z|_1` up to a deterministic `1 +- epsilon_sum` factor when noise is on.
pub fn sum_estimate(z: &[f64], epsilon_sum: f64, noise: &NoiseConfig) -> Result<f64> {
    if !(epsilon_sum > 0.0 && epsilon_sum < 1.0) {
        return Err(GlmError::invalid(format!("epsilon_sum must lie in (0, 1), got {epsilon_sum}")));
    }
    let total: f64 = z.iter().sum();
    Ok(total * noisy_factor(&noise.with_epsilon(epsilon_sum), "sum-estimate", 0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sparsifier {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    #[serde(rename = "M")]
    pub samples: usize,
    pub nu_tilde: f64,
    pub epsilon: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilySpec>,
}

impl Sparsifier {
    /// Sorted `(index, weight)` pairs.
    pub fn pairs(&self) -> Vec<(usize, f64)> {
        self.indices.iter().copied().zip(self.weights.iter().copied()).collect()
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn weight_map(&self) -> BTreeMap<usize, f64> {
        self.pairs().into_iter().collect()
    }

    /// Dense length-`m` weight vector.
    pub fn dense_weights(&self, m: usize) -> Result<Vec<f64>> {
        let mut w = vec![0.0; m];
        for (i, v) in self.pairs() {
            *w.get_mut(i).ok_or(GlmError::IndexOutOfRange {
                what: "sparsifier index",
                index: i,
                bound: m,
            })? = v;
        }
        Ok(w)
    }

    /// Structural invariants: matching lengths, strictly increasing indices,
    /// positive finite weights, support no larger than the sample count.
    pub fn validate(&self) -> Result<()> {
        if self.indices.len() != self.weights.len() {
            return Err(GlmError::invalid("indices and weights differ in length"));
        }
        if self.indices.windows(2).any(|p| p[0] >= p[1]) {
            return Err(GlmError::invalid("sparsifier indices must be strictly increasing"));
        }
        if let Some(w) = self.weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(GlmError::invalid(format!("sparsifier weight {w} is not positive")));
        }
        if self.indices.len() > self.samples {
            return Err(GlmError::invalid("support exceeds the sample count"));
        }
        Ok(())
    }

    /// Checks that every index addresses a row of an `m`-row matrix.
    pub fn check_rows(&self, m: usize) -> Result<()> {
        match self.indices.iter().find(|&&i| i >= m) {
            Some(&i) => Err(GlmError::IndexOutOfRange {
                what: "sparsifier index",
                index: i,
                bound: m,
            }),
            None => Ok(()),
        }
    }

    pub fn to_json(&self, pretty: bool) -> Result<String> {
        Ok(if pretty {
            serde_json::to_string_pretty(self)?
        } else {
            serde_json::to_string(self)?
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let sp: Sparsifier = serde_json::from_str(text)?;
        sp.validate()?;
        Ok(sp)
    }

    /// One `index weight` pair per line.
    pub fn to_text(&self) -> String {
        self.pairs().iter().map(|(i, w)| format!("{i} {w:?}\n")).collect()
    }

    /// Parses the two-column format; metadata fields are left at defaults
    /// (`samples` is set to the number of pairs).
    pub fn pairs_from_text(text: &str) -> Result<Vec<(usize, f64)>> {
        let mut out = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let parse_err = |message: String| GlmError::Parse { line: k + 1, message };
            let i = parts
                .next()
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| parse_err("expected an index".into()))?;
            let w = parts
                .next()
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| parse_err("expected a weight".into()))?;
            if parts.next().is_some() {
                return Err(parse_err("expected exactly two columns".into()));
            }
            out.push((i, w));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsifyConfig {
    pub c_m: f64,
    pub seed: u64,
    /// Injects estimator noise (seeded by `seed`) when true.
    pub noise: bool,
    /// Collapse the scale range to one scale for homogeneous families.
    pub homogeneous_fast_path: bool,
}

impl Default for SparsifyConfig {
    fn default() -> Self {
        SparsifyConfig {
            c_m: DEFAULT_C_M,
            seed: 0,
            noise: true,
            homogeneous_fast_path: true,
        }
    }
}

impl SparsifyConfig {
    pub fn with_seed(seed: u64) -> Self {
        SparsifyConfig { seed, ..Self::default() }
    }

    fn noise_config(&self) -> NoiseConfig {
        NoiseConfig {
            epsilon: MLSO_EPSILON,
            seed: self.seed,
            enabled: self.noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparsifyDiagnostics {
    pub internal_epsilon: f64,
    pub j_min: i32,
    pub j_max: i32,
    pub scales: usize,
    pub homogeneous: bool,
    pub delta_init: f64,
    pub beta: f64,
    pub beta_doublings: usize,
    pub init_flagged_rows: usize,
    pub rounds: usize,
    pub rounds_clamped: bool,
    pub alpha: f64,
    pub tau: f64,
    pub tau_bound: f64,
    pub samples: usize,
    pub samples_capped: bool,
    pub nnz: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SparsifyOutcome {
    pub sparsifier: Sparsifier,
    pub diagnostics: SparsifyDiagnostics,
    pub mlso: QmlsoOutput,
    /// The family the multiscale weights were computed for (with bump).
    pub modified_family: ProperLossFamily,
}

/// Builds `w~` with `|F~(x) - F(x)| <= eps F(x)` (w.h.p.) whenever
/// `s_min <= F(x) <= s_max`.
pub fn qglm_sparsify(
    a: &RowMatrix,
    family: &ProperLossFamily,
    epsilon: f64,
    s_min: f64,
    s_max: f64,
    cfg: &SparsifyConfig,
    ledger: &QueryLedger,
) -> Result<SparsifyOutcome> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(GlmError::invalid(format!("epsilon must lie in (0, 1], got {epsilon}")));
    }
    if !(s_min > 0.0 && s_min < s_max && s_max.is_finite()) {
        return Err(GlmError::DegenerateRange(format!("need 0 < s_min < s_max, got [{s_min}, {s_max}]")));
    }
    if !(cfg.c_m > 0.0 && cfg.c_m.is_finite()) {
        return Err(GlmError::invalid(format!("C_M must be positive, got {}", cfg.c_m)));
    }
    let m = a.nrows();
    if family.len() != m {
        return Err(GlmError::DimensionMismatch(format!("family has {} members, matrix {} rows", family.len(), m)));
    }
    let mut warnings = Vec::new();
    let r = a.max_row_nnz().max(1);
    if epsilon > 1.0 / r as f64 {
        warnings.push(format!("epsilon {epsilon} exceeds 1/r = {} (r = max row nonzeros)", 1.0 / r as f64));
    }

    let eps = epsilon / 2.0;
    let mf = m as f64;
    let delta_init = eps * s_min / (8.0 * mf.powi(3) * s_max);
    let j_max = s_max.log2().ceil() as i32;
    let homogeneous = cfg.homogeneous_fast_path && family.homogeneous_degree().is_some();
    let j_min = if homogeneous {
        j_max
    } else {
        (s_min.log2() - 4.0 * mf.log2()).floor() as i32
    };
    let s_top = 2f64.powi(j_max);
    let noise = cfg.noise_config();

    let init = weight_initialize(a, family, s_top, delta_init, &noise, ledger)?;
    if !init.flagged.is_empty() {
        warnings.push(format!("{} rows had zero initial leverage", init.flagged.len()));
    }
    let mlso = qmlso_range(a, &init.family, &init.w0, j_min, j_max, init.beta, MLSO_EPSILON, &noise, ledger)?;
    if mlso.diagnostics.rounds_clamped {
        warnings.push(format!("contraction rounds clamped to {}", mlso.diagnostics.rounds));
    }
    let z = &mlso.overestimates.z;
    let tau = mlso.overestimates.tau;

    let raw = (cfg.c_m * tau * mf.max(3.0).ln() / (eps * eps)).ceil();
    let samples_capped = raw > MAX_SAMPLES as f64;
    if samples_capped {
        warnings.push(format!("sample count {raw:e} capped at {MAX_SAMPLES}"));
    }
    let samples = (raw as usize).clamp(1, MAX_SAMPLES);
    let draws = multi_sample(z, samples, cfg.seed, ledger)?;
    let nu_tilde = sum_estimate(z, SUM_EPSILON, &noise)?;

    let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
    let scale = nu_tilde / (REWEIGHT_SLACK * samples as f64);
    for &i in &draws {
        *acc.entry(i).or_insert(0.0) += scale / z[i];
    }
    let (indices, weights): (Vec<usize>, Vec<f64>) = acc.into_iter().unzip();
    let sparsifier = Sparsifier {
        indices,
        weights,
        samples,
        nu_tilde,
        epsilon,
        s_min,
        s_max,
        seed: cfg.seed,
        family: None,
    };
    sparsifier.validate()?;
    let diagnostics = SparsifyDiagnostics {
        internal_epsilon: eps,
        j_min,
        j_max,
        scales: (j_max - j_min + 1) as usize,
        homogeneous,
        delta_init,
        beta: init.beta,
        beta_doublings: init.beta_doublings,
        init_flagged_rows: init.flagged.len(),
        rounds: mlso.diagnostics.rounds,
        rounds_clamped: mlso.diagnostics.rounds_clamped,
        alpha: mlso.scheme.alpha,
        tau,
        tau_bound: mlso.diagnostics.tau_bound,
        samples,
        samples_capped,
        nnz: sparsifier.nnz(),
        warnings,
    };
    Ok(SparsifyOutcome {
        sparsifier,
        diagnostics,
        mlso,
        modified_family: init.family,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub points: usize,
    pub epsilon: f64,
    pub max_relative_error: f64,
    pub mean_relative_error: f64,
    pub violations: usize,
    pub violation_fraction: f64,
}

/// Point `x` with `F(x)` close to `target`, along the ray through `dir`.
/// Returns `None` when the ray is flat (`F` constant along it).
pub fn scale_to_target(a: &RowMatrix, family: &ProperLossFamily, dir: &[f64], target: f64) -> Option<Vec<f64>> {
    let eval = |lam: f64| {
        let x: Vec<f64> = dir.iter().map(|v| v * lam).collect();
        family.objective(a, &x)
    };
    let f1 = eval(1.0);
    if !(f1 > 0.0 && f1.is_finite()) {
        return None;
    }
    let lam = match family.homogeneous_degree() {
        Some(d) => (target / f1).powf(1.0 / d),
        None => {
            let (mut lo, mut hi) = (0.0, 1.0);
            if f1 < target {
                let mut tries = 0;
                while eval(hi) < target {
                    lo = hi;
                    hi *= 2.0;
                    tries += 1;
                    if tries > 2000 {
                        return None;
                    }
                }
            } else {
                let mut tries = 0;
                while eval(hi / 2.0) >= target {
                    hi /= 2.0;
                    tries += 1;
                    if tries > 2000 {
                        return None;
                    }
                }
                lo = hi / 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if eval(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-15 * hi {
                    break;
                }
            }
            0.5 * (lo + hi)
        }
    };
    Some(dir.iter().map(|v| v * lam).collect())
}

/// Random in-range test points: a Gaussian direction scaled so that `F`
/// hits a log-uniform target in `[s_min, s_max]`.
pub fn in_range_points(
    a: &RowMatrix,
    family: &ProperLossFamily,
    s_min: f64,
    s_max: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if !(s_min > 0.0 && s_min <= s_max) {
        return Err(GlmError::DegenerateRange(format!("invalid range [{s_min}, {s_max}]")));
    }
    let n = a.ncols();
    let zero = vec![0.0; n];
    if family.objective(a, &zero) > s_max {
        return Err(GlmError::DegenerateRange("F(0) already exceeds s_max".into()));
    }
    let attempts = 100;
    (0..count)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            for _ in 0..attempts {
                let dir: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                let target = (rng.gen_range(s_min.ln()..=s_max.ln())).exp();
                if let Some(x) = scale_to_target(a, family, &dir, target) {
                    let f = family.objective(a, &x);
                    let tol = 1e-9 * s_max;
                    if f >= s_min - tol && f <= s_max + tol {
                        return Ok(x);
                    }
                }
            }
            Err(GlmError::DegenerateRange(format!(
                "could not place test point {k} in [{s_min}, {s_max}] after {attempts} attempts"
            )))
        })
        .collect()
}

/// Compares `F` and `F~` on random in-range points; a point violates when
/// `|F~ - F| > eps F`.
pub fn validate_sparsifier(
    a: &RowMatrix,
    family: &ProperLossFamily,
    sp: &Sparsifier,
    num_points: usize,
    seed: u64,
) -> Result<ValidationReport> {
    if num_points == 0 {
        return Err(GlmError::invalid("num_points must be at least 1"));
    }
    sp.check_rows(a.nrows())?;
    let pairs = sp.pairs();
    let points = in_range_points(a, family, sp.s_min, sp.s_max, num_points, seed)?;
    let errors: Vec<f64> = points
        .par_iter()
        .map(|x| {
            let f = family.objective(a, x);
            let ft = family.weighted_objective(a, x, &pairs);
            (ft - f).abs() / f
        })
        .collect();
    let violations = errors.iter().filter(|&&e| e > sp.epsilon).count();
    Ok(ValidationReport {
        points: num_points,
        epsilon: sp.epsilon,
        max_relative_error: errors.iter().cloned().fold(0.0, f64::max),
        mean_relative_error: errors.iter().sum::<f64>() / num_points as f64,
        violations,
        violation_fraction: violations as f64 / num_points as f64,
    })
}
