//! Proper loss families `f_i : R -> R_+` with certified `(L, theta, c)`,
//! a sampled properness falsifier, anchor search and the quadratic-bump
//! modification used by weight initialization.
//!
//! A family is `(L, theta, c)`-proper when every `h_i = sqrt(f_i)` satisfies
//!
//! * `|h_i(x) - h_i(y)| <= L * h_i(x - y)` (auto-Lipschitz), and
//! * `h_i(lambda * x) >= c * lambda^theta * h_i(x)` for `lambda >= 1`.

use std::cell::Cell;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{GlmError, Result};
use crate::matrix_io::RowMatrix;

/// Evaluation budget multiplier for [`find_anchor`].
pub const ANCHOR_BUDGET_K: f64 = 64.0;

const PROPERNESS_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    /// `t^2`
    Quadratic,
    /// `|t|`
    Absolute,
    /// `|t|^p`, `p in (0, 2]`
    EllP { p: f64 },
    /// `p/2 t^2` on `|t| <= 1`, `|t|^p - (1 - p/2)` outside; `p = 1` is Huber.
    GammaP { p: f64 },
}

impl LossKind {
    fn validate(&self) -> Result<()> {
        match *self {
            LossKind::EllP { p } | LossKind::GammaP { p } if !(p > 0.0 && p <= 2.0) => {
                Err(GlmError::invalid(format!("exponent p must lie in (0, 2], got {p}")))
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match *self {
            LossKind::Quadratic => t * t,
            LossKind::Absolute => t.abs(),
            LossKind::EllP { p } => t.abs().powf(p),
            LossKind::GammaP { p } => {
                let a = t.abs();
                if a <= 1.0 {
                    0.5 * p * t * t
                } else {
                    a.powf(p) - (1.0 - 0.5 * p)
                }
            }
        }
    }

    /// `f(sqrt(t)) / t` for `t > 0`, evaluated without forming `sqrt(t)^2`.
    pub fn ratio_at_sqrt(&self, t: f64) -> f64 {
        match *self {
            LossKind::Quadratic => 1.0,
            LossKind::Absolute => t.powf(-0.5),
            LossKind::EllP { p } => t.powf(0.5 * p - 1.0),
            LossKind::GammaP { p } => {
                if t <= 1.0 {
                    0.5 * p
                } else {
                    (t.powf(0.5 * p) - (1.0 - 0.5 * p)) / t
                }
            }
        }
    }

    /// Limit of `f(sqrt(t)) / t` as `t -> 0+`, when finite.
    pub fn ratio_limit_at_zero(&self) -> Option<f64> {
        match *self {
            LossKind::Quadratic => Some(1.0),
            LossKind::Absolute => None,
            LossKind::EllP { p } => (p == 2.0).then_some(1.0),
            LossKind::GammaP { p } => Some(0.5 * p),
        }
    }

    /// Degree `d` with `f(lambda t) = |lambda|^d f(t)`, if any.
    pub fn homogeneous_degree(&self) -> Option<f64> {
        match *self {
            LossKind::Quadratic => Some(2.0),
            LossKind::Absolute => Some(1.0),
            LossKind::EllP { p } => Some(p),
            LossKind::GammaP { .. } => None,
        }
    }

    /// Analytically certified `(L, theta, c)`.
    pub fn certified_params(&self) -> ProperParams {
        match *self {
            LossKind::Quadratic => ProperParams::new(1.0, 1.0, 1.0),
            LossKind::Absolute => ProperParams::new(1.0, 0.5, 1.0),
            LossKind::EllP { p } | LossKind::GammaP { p } => ProperParams::new(1.0, 0.5 * p, 1.0),
        }
    }
}

/// `scale * kind(t)`; positive scaling preserves properness constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledLoss {
    pub kind: LossKind,
    pub scale: f64,
}

impl ScaledLoss {
    pub fn new(kind: LossKind, scale: f64) -> Result<Self> {
        kind.validate()?;
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(GlmError::invalid(format!("loss scale must be positive, got {scale}")));
        }
        Ok(ScaledLoss { kind, scale })
    }

    pub fn unit(kind: LossKind) -> Result<Self> {
        Self::new(kind, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProperParams {
    pub lipschitz: f64,
    pub theta: f64,
    pub c: f64,
}

impl ProperParams {
    pub fn new(lipschitz: f64, theta: f64, c: f64) -> Self {
        ProperParams { lipschitz, theta, c }
    }

    /// Contraction factor `max{1/2, |theta - 2| / 2}` of the weight update.
    pub fn contraction(&self) -> f64 {
        f64::max(0.5, (self.theta - 2.0).abs() / 2.0)
    }

    /// `max{2L/c, 1/c}`.
    pub fn contraction_constant(&self) -> f64 {
        f64::max(2.0 * self.lipschitz / self.c, 1.0 / self.c)
    }

    fn validate(&self) -> Result<()> {
        let ok = self.lipschitz > 0.0 && self.c > 0.0 && self.theta > 0.0 && self.theta < 4.0;
        if !ok {
            return Err(GlmError::invalid(format!(
                "proper parameters need L > 0, c > 0, theta in (0, 4); got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Members {
    Uniform(ScaledLoss),
    PerIndex(Vec<ScaledLoss>),
}

/// A family of `m` losses sharing declared properness constants, with an
/// optional per-index quadratic bump `q_i t^2`.
#[derive(Debug)]
pub struct ProperLossFamily {
    m: usize,
    members: Members,
    bump: Option<Vec<f64>>,
    params: ProperParams,
    evaluations: AtomicU64,
}

impl Clone for ProperLossFamily {
    fn clone(&self) -> Self {
        ProperLossFamily {
            m: self.m,
            members: self.members.clone(),
            bump: self.bump.clone(),
            params: self.params,
            evaluations: AtomicU64::new(0),
        }
    }
}

impl ProperLossFamily {
    pub fn uniform(kind: LossKind, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(GlmError::invalid("family must have at least one member"));
        }
        let loss = ScaledLoss::unit(kind)?;
        Ok(ProperLossFamily {
            m,
            members: Members::Uniform(loss),
            bump: None,
            params: kind.certified_params(),
            evaluations: AtomicU64::new(0),
        })
    }

    pub fn quadratic(m: usize) -> Result<Self> {
        Self::uniform(LossKind::Quadratic, m)
    }

    pub fn ell_p(p: f64, m: usize) -> Result<Self> {
        Self::uniform(LossKind::EllP { p }, m)
    }

    pub fn gamma_p(p: f64, m: usize) -> Result<Self> {
        Self::uniform(LossKind::GammaP { p }, m)
    }

    /// Per-index losses; declared constants are the weakest over members.
    pub fn mixed(members: Vec<ScaledLoss>) -> Result<Self> {
        if members.is_empty() {
            return Err(GlmError::invalid("family must have at least one member"));
        }
        for mem in &members {
            mem.kind.validate()?;
        }
        let params = members.iter().fold(
            ProperParams::new(0.0, f64::INFINITY, f64::INFINITY),
            |acc, mem| {
                let p = mem.kind.certified_params();
                ProperParams::new(acc.lipschitz.max(p.lipschitz), acc.theta.min(p.theta), acc.c.min(p.c))
            },
        );
        Ok(ProperLossFamily {
            m: members.len(),
            members: Members::PerIndex(members),
            bump: None,
            params,
            evaluations: AtomicU64::new(0),
        })
    }

    /// Replace the declared constants (they are not re-certified here).
    pub fn with_params(mut self, params: ProperParams) -> Result<Self> {
        params.validate()?;
        self.params = params;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn params(&self) -> ProperParams {
        self.params
    }

    pub fn member(&self, i: usize) -> ScaledLoss {
        match &self.members {
            Members::Uniform(l) => *l,
            Members::PerIndex(v) => v[i],
        }
    }

    pub fn bump(&self, i: usize) -> f64 {
        self.bump.as_ref().map_or(0.0, |q| q[i])
    }

    pub fn has_bump(&self) -> bool {
        self.bump.is_some()
    }

    /// Short description of the member kinds, e.g. `"gamma_p(1)"` or `"mixed"`.
    pub fn describe(&self) -> String {
        let base = match &self.members {
            Members::Uniform(l) => match l.kind {
                LossKind::Quadratic => "quadratic".to_string(),
                LossKind::Absolute => "absolute".to_string(),
                LossKind::EllP { p } => format!("ell_p({p})"),
                LossKind::GammaP { p } => format!("gamma_p({p})"),
            },
            Members::PerIndex(_) => "mixed".to_string(),
        };
        if self.has_bump() {
            format!("{base}+bump")
        } else {
            base
        }
    }

    /// Uncounted `f_i(t)`; used for objective evaluation outside the oracle.
    pub fn value(&self, i: usize, t: f64) -> f64 {
        let mem = self.member(i);
        mem.scale * mem.kind.value(t) + self.bump(i) * t * t
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.m {
            return Err(GlmError::IndexOutOfRange {
                what: "loss index",
                index: i,
                bound: self.m,
            });
        }
        Ok(())
    }

    /// Counted `f_i(x)`.
    pub fn eval(&self, i: usize, x: f64) -> Result<f64> {
        self.check_index(i)?;
        Ok(self.counted_value(i, x))
    }

    pub(crate) fn counted_value(&self, i: usize, x: f64) -> f64 {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        self.value(i, x)
    }

    /// Counted `f_i(sqrt(t)) / t` for `t > 0`.
    pub fn ratio_at_sqrt(&self, i: usize, t: f64) -> f64 {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let mem = self.member(i);
        mem.scale * mem.kind.ratio_at_sqrt(t) + self.bump(i)
    }

    pub fn ratio_limit_at_zero(&self, i: usize) -> Option<f64> {
        let mem = self.member(i);
        mem.kind
            .ratio_limit_at_zero()
            .map(|l| mem.scale * l + self.bump(i))
    }

    /// Number of counted evaluations performed so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }

    /// Common degree when every member is homogeneous of the same degree.
    /// A bump keeps homogeneity only for degree 2.
    pub fn homogeneous_degree(&self) -> Option<f64> {
        let degree = match &self.members {
            Members::Uniform(l) => l.kind.homogeneous_degree()?,
            Members::PerIndex(v) => {
                let d = v[0].kind.homogeneous_degree()?;
                for mem in v {
                    if mem.kind.homogeneous_degree() != Some(d) {
                        return None;
                    }
                }
                d
            }
        };
        if self.has_bump() && degree != 2.0 {
            return None;
        }
        Some(degree)
    }

    /// `F(x) = sum_i f_i(<a_i, x>)`.
    pub fn objective(&self, a: &RowMatrix, x: &[f64]) -> f64 {
        (0..a.nrows()).map(|i| self.value(i, a.row_dot(i, x))).sum()
    }

    /// `sum_k w_k f_{i_k}(<a_{i_k}, x>)` over sparse `(index, weight)` pairs.
    pub fn weighted_objective(&self, a: &RowMatrix, x: &[f64], weights: &[(usize, f64)]) -> f64 {
        weights
            .iter()
            .map(|&(i, w)| w * self.value(i, a.row_dot(i, x)))
            .sum()
    }

    /// Representative indices for sampled checks: all distinct members when
    /// few, otherwise an evenly spaced subset.
    fn probe_indices(&self, cap: usize) -> Vec<usize> {
        match (&self.members, &self.bump) {
            (Members::Uniform(_), None) => vec![0],
            _ if self.m <= cap => (0..self.m).collect(),
            _ => (0..cap).map(|k| k * (self.m - 1) / (cap - 1)).collect(),
        }
    }
}

/// Per-index family description for CLI configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyOverride {
    pub index: usize,
    #[serde(flatten)]
    pub kind: LossKind,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overrides: Vec<FamilyOverride>,
}

impl FamilySpec {
    pub fn base_kind(&self) -> Result<LossKind> {
        let need_p = || {
            self.p
                .ok_or_else(|| GlmError::invalid(format!("family '{}' requires p", self.kind)))
        };
        let kind = match self.kind.as_str() {
            "quadratic" => LossKind::Quadratic,
            "absolute" => LossKind::Absolute,
            "ell_p" => LossKind::EllP { p: need_p()? },
            "gamma_p" | "huber" => LossKind::GammaP {
                p: if self.kind == "huber" { 1.0 } else { need_p()? },
            },
            other => return Err(GlmError::invalid(format!("unknown family kind '{other}'"))),
        };
        kind.validate()?;
        Ok(kind)
    }

    pub fn build(&self, m: usize) -> Result<ProperLossFamily> {
        let kind = self.base_kind()?;
        if self.overrides.is_empty() {
            return ProperLossFamily::uniform(kind, m);
        }
        let mut members = vec![ScaledLoss::unit(kind)?; m];
        for ov in &self.overrides {
            if ov.index >= m {
                return Err(GlmError::IndexOutOfRange {
                    what: "override index",
                    index: ov.index,
                    bound: m,
                });
            }
            members[ov.index] = ScaledLoss::new(ov.kind, ov.scale)?;
        }
        ProperLossFamily::mixed(members)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropernessViolation {
    pub index: usize,
    pub property: &'static str,
    pub x: f64,
    /// Second argument (`x'` for auto-Lipschitz, `lambda` for homogeneity).
    pub y: f64,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropernessReport {
    pub passed: bool,
    pub checks: usize,
    pub violation_count: usize,
    /// First few violations, for diagnostics.
    pub violations: Vec<PropernessViolation>,
}

/// Search the grid `x, x' in [-lambda_max, lambda_max]` (log spaced) and
/// `lambda in [1, lambda_max]` for violations of the declared constants.
/// Passing is necessary but not sufficient for properness.
pub fn verify_properness(family: &ProperLossFamily, grid_size: usize, lambda_max: f64) -> Result<PropernessReport> {
    if grid_size < 10 {
        return Err(GlmError::invalid("grid_size must be at least 10"));
    }
    if !(lambda_max > 1.0 && lambda_max.is_finite()) {
        return Err(GlmError::invalid("lambda_max must be finite and > 1"));
    }
    let ProperParams { lipschitz, theta, c } = family.params();
    let log_span = lambda_max.ln();
    let log_grid = |k: usize, lo: f64| (lo + (log_span - lo) * k as f64 / (grid_size - 1) as f64).exp();
    let mut xs = vec![0.0];
    for k in 0..grid_size {
        let v = log_grid(k, -log_span);
        xs.push(v);
        xs.push(-v);
    }
    let lambdas: Vec<f64> = (0..grid_size).map(|k| log_grid(k, 0.0)).collect();

    let mut report = PropernessReport {
        passed: true,
        checks: 0,
        violation_count: 0,
        violations: Vec::new(),
    };
    let record = |report: &mut PropernessReport, v: PropernessViolation| {
        report.passed = false;
        report.violation_count += 1;
        if report.violations.len() < 16 {
            report.violations.push(v);
        }
    };
    let exceeds = |lhs: f64, rhs: f64| lhs > rhs + PROPERNESS_SLACK * lhs.abs().max(rhs.abs()).max(1.0);

    for i in family.probe_indices(32) {
        let h = |t: f64| family.value(i, t).sqrt();
        for &x in &xs {
            for &y in &xs {
                report.checks += 1;
                let lhs = (h(x) - h(y)).abs();
                let rhs = lipschitz * h(x - y);
                if exceeds(lhs, rhs) {
                    record(&mut report, PropernessViolation { index: i, property: "auto-lipschitz", x, y, lhs, rhs });
                }
            }
            for &lam in &lambdas {
                report.checks += 1;
                let lhs = c * lam.powf(theta) * h(x);
                let rhs = h(lam * x);
                if exceeds(lhs, rhs) {
                    record(&mut report, PropernessViolation { index: i, property: "lower-homogeneity", x, y: lam, lhs, rhs });
                }
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorSearch {
    pub x: f64,
    pub evaluations: u64,
}

/// Find `x > 0` with `s_min <= f_i(x) <= s_max` by exponential search from
/// `x = 1` followed by bisection on `h_i = sqrt(f_i)`.
///
/// The bisection stops once `L * h_i(half_width) <= sqrt(s_max) - sqrt(s_min)`;
/// for a proper member the midpoint is accepted at that point, so a miss
/// there (or running past the evaluation budget) is reported as an error.
pub fn find_anchor(family: &ProperLossFamily, i: usize, s_min: f64, s_max: f64) -> Result<AnchorSearch> {
    family.check_index(i)?;
    if !(s_min > 0.0 && s_min < s_max && s_max.is_finite()) {
        return Err(GlmError::invalid(format!(
            "anchor search needs 0 < s_min < s_max, got [{s_min}, {s_max}]"
        )));
    }
    let lipschitz = family.params().lipschitz;
    let (h_min, h_max) = (s_min.sqrt(), s_max.sqrt());
    let evaluations = Cell::new(0u64);
    let h = |t: f64| {
        evaluations.set(evaluations.get() + 1);
        family.counted_value(i, t).sqrt()
    };
    let fail = |reason: String| GlmError::AnchorSearch { index: i, reason };

    let h1 = h(1.0);
    let f1 = h1 * h1;
    let log_f1 = if f1 > 0.0 { f1.log2().abs() } else { 2000.0 };
    let budget = (ANCHOR_BUDGET_K * (1.0 + (s_max / s_min).log2() + log_f1)).ceil() as u64;
    let within = |v: f64| v >= h_min && v <= h_max;
    if within(h1) {
        return Ok(AnchorSearch { x: 1.0, evaluations: 1 });
    }

    // Bracket [lo, hi] with h(lo) < h_min and h(hi) > h_max.
    let (mut lo, mut hi);
    if h1 < h_min {
        let mut x = 1.0;
        loop {
            x *= 2.0;
            let hx = h(x);
            if within(hx) {
                return Ok(AnchorSearch { x, evaluations: evaluations.get() });
            }
            if hx > h_max {
                lo = x / 2.0;
                hi = x;
                break;
            }
            if evaluations.get() >= budget || !x.is_finite() {
                return Err(fail(format!("doubling exhausted {} evaluations", evaluations.get())));
            }
        }
    } else {
        let mut x = 1.0;
        loop {
            x /= 2.0;
            let hx = h(x);
            if within(hx) {
                return Ok(AnchorSearch { x, evaluations: evaluations.get() });
            }
            if hx < h_min {
                lo = x;
                hi = 2.0 * x;
                break;
            }
            if evaluations.get() >= budget || x == 0.0 {
                return Err(fail(format!("halving exhausted {} evaluations", evaluations.get())));
            }
        }
    }

    let gap = h_max - h_min;
    loop {
        let mid = 0.5 * (lo + hi);
        let hm = h(mid);
        if within(hm) {
            return Ok(AnchorSearch { x: mid, evaluations: evaluations.get() });
        }
        let half = 0.5 * (hi - lo);
        if lipschitz * h(half) <= gap {
            return Err(fail(format!(
                "midpoint {mid} rejected although L*h(half-width) <= gap; family is not proper"
            )));
        }
        if hm < h_min {
            lo = mid;
        } else {
            hi = mid;
        }
        if evaluations.get() >= budget {
            return Err(fail(format!("bisection exhausted budget of {budget} evaluations")));
        }
    }
}

/// `f_i°(t) = f_i(t) + s_max * w0_i * t^2`, declared `(max{1, L}, theta, c)`.
pub fn make_modified(family: &ProperLossFamily, s_max: f64, w0: &[f64]) -> Result<ProperLossFamily> {
    if w0.len() != family.len() {
        return Err(GlmError::DimensionMismatch(format!(
            "weight vector has {} entries, family has {}",
            w0.len(),
            family.len()
        )));
    }
    if let Some(k) = w0.iter().position(|&w| !(w >= 0.0 && w.is_finite())) {
        return Err(GlmError::invalid(format!("w0[{k}] = {} is negative or non-finite", w0[k])));
    }
    if !(s_max > 0.0 && s_max.is_finite()) {
        return Err(GlmError::invalid("s_max must be positive"));
    }
    let mut out = family.clone();
    let bump: Vec<f64> = (0..family.len()).map(|i| family.bump(i) + s_max * w0[i]).collect();
    out.bump = if bump.iter().all(|&q| q == 0.0) { family.bump.clone() } else { Some(bump) };
    let p = family.params();
    out.params = ProperParams::new(p.lipschitz.max(1.0), p.theta, p.c);
    Ok(out)
}
