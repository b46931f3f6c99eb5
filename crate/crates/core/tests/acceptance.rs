//! Acceptance suite. Runs every criterion in sequence (so the wall-clock
//! budgets are measured without contention), prints one PASS/FAIL line per
//! criterion and exits non-zero if any criterion fails.
//!
//! Optional positional arguments filter criteria by substring, e.g.
//! `cargo test --test acceptance -- c07`.

use std::panic::{self, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;

use glmsparse::leverage::{exact_leverage, mod_lev_approx, spectral_check};
use glmsparse::losses::{find_anchor, verify_properness, LossKind, ProperLossFamily, ScaledLoss, ANCHOR_BUDGET_K};
use glmsparse::matrix_io::{ResponseVector, RowMatrix};
use glmsparse::mlso::{check_approx_weight, qmlso, update_phi, weight_initialize, metric_d};
use glmsparse::oracles::{NoiseConfig, QueryLedger};
use glmsparse::regressors::{reference_solve, solve, ProblemKind, RegressionProblem, SolveConfig};
use glmsparse::sparsifier::{in_range_points, multi_sample, qglm_sparsify, sum_estimate, validate_sparsifier, SparsifyConfig};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(m: usize, n: usize, r: &mut ChaCha8Rng) -> RowMatrix {
    let rows: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| r.sample(StandardNormal)).collect()).collect();
    RowMatrix::from_dense_rows(&rows).unwrap()
}

/// Gaussian rows, a few of them inflated so that leverage is non-uniform.
fn planted(m: usize, n: usize, r: &mut ChaCha8Rng) -> RowMatrix {
    let rows: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let boost = if i % 97 == 0 { 8.0 } else { 1.0 };
            (0..n).map(|_| boost * r.sample::<f64, _>(StandardNormal)).collect()
        })
        .collect();
    RowMatrix::from_dense_rows(&rows).unwrap()
}

fn log_uniform(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    r.gen_range(lo.ln()..=hi.ln()).exp()
}

/// Independent leverage oracle: left singular vectors of `W^{1/2} A`
/// computed directly (no QR reduction, no cached projector).
fn oracle_leverage(a: &RowMatrix, w: &[f64]) -> (Vec<f64>, usize) {
    let mut d = a.to_dense();
    for i in 0..d.nrows() {
        let s = w[i].sqrt();
        d.row_mut(i).scale_mut(s);
    }
    let m = d.nrows();
    let svd = d.svd(true, false);
    let u = svd.u.unwrap();
    let top = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| top > 0.0 && svd.singular_values[k] > 1e-12 * top)
        .collect();
    let sigma = (0..m).map(|i| keep.iter().map(|&k| u[(i, k)].powi(2)).sum()).collect();
    (sigma, keep.len())
}

fn contraction_families(m: usize) -> Vec<(&'static str, ProperLossFamily)> {
    vec![
        ("ell_0.5", ProperLossFamily::ell_p(0.5, m).unwrap()),
        ("ell_1", ProperLossFamily::ell_p(1.0, m).unwrap()),
        ("ell_2", ProperLossFamily::ell_p(2.0, m).unwrap()),
        ("gamma_1", ProperLossFamily::gamma_p(1.0, m).unwrap()),
    ]
}

fn c01_leverage() -> Check {
    let mut r = rng(101);
    let mut worst_sum: f64 = 0.0;
    let mut worst_scale: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    for t in 0..50 {
        let m = r.gen_range(20..=2000);
        let n = r.gen_range(1..=30usize.min(m));
        let density = [1.0, 0.3, 0.05][t % 3];
        let mut rows: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                (0..n)
                    .map(|_| if r.gen::<f64>() < density { r.sample(StandardNormal) } else { 0.0 })
                    .collect()
            })
            .collect();
        if t % 5 == 4 && n >= 2 {
            // duplicated column => rank deficiency
            for row in rows.iter_mut() {
                row[n - 1] = 2.0 * row[0];
            }
        }
        let a = RowMatrix::from_dense_rows(&rows).unwrap();
        let w: Vec<f64> = (0..m)
            .map(|_| if t % 2 == 0 { 1.0 } else if r.gen::<f64>() < 0.1 { 0.0 } else { log_uniform(&mut r, 0.1, 10.0) })
            .collect();
        let sigma = exact_leverage(&a, &w).map_err(|e| e.to_string())?;
        let (oracle, rank) = oracle_leverage(&a, &w);
        let sum: f64 = sigma.iter().sum();
        worst_sum = worst_sum.max((sum - rank as f64).abs());
        ensure((sum - rank as f64).abs() <= 1e-8, || format!("instance {t}: sum {sum} vs rank {rank}"))?;
        ensure(sigma.iter().all(|&s| (0.0..=1.0 + 1e-12).contains(&s)), || format!("instance {t}: score outside [0, 1]"))?;
        for (i, (s, o)) in sigma.iter().zip(&oracle).enumerate() {
            worst_oracle = worst_oracle.max((s - o).abs());
            ensure((s - o).abs() <= 1e-8, || format!("instance {t} row {i}: {s} vs oracle {o}"))?;
        }
        let alpha = log_uniform(&mut r, 1e-3, 1e3);
        let scaled: Vec<f64> = w.iter().map(|v| alpha * v).collect();
        let sigma2 = exact_leverage(&a, &scaled).map_err(|e| e.to_string())?;
        for (s, s2) in sigma.iter().zip(&sigma2) {
            worst_scale = worst_scale.max((s - s2).abs());
        }
        ensure(worst_scale <= 1e-10, || format!("instance {t}: scale invariance off by {worst_scale:e}"))?;
    }
    Ok(format!(
        "50 matrices; max |sum - rank| = {worst_sum:.1e}, max scale drift = {worst_scale:.1e}, max oracle diff = {worst_oracle:.1e}"
    ))
}

fn c02_contraction() -> Check {
    let mut r = rng(202);
    let a = gaussian(300, 6, &mut r);
    let ledger = QueryLedger::new();
    let (eps, eps2) = (0.1, 0.1);
    let mut worst_margin = f64::INFINITY;
    for (name, family) in contraction_families(300) {
        let params = family.params();
        let delta = params.contraction();
        let c = params.contraction_constant();
        for k in 0..100u64 {
            let w: Vec<f64> = (0..300).map(|_| log_uniform(&mut r, 0.05, 20.0)).collect();
            let spread: f64 = r.gen_range(0.0..4.0);
            let w2: Vec<f64> = w.iter().map(|v| v * r.gen_range(-spread..=spread).exp()).collect();
            let s = log_uniform(&mut r, 1e-2, 1e2);
            let n1 = NoiseConfig::enabled(eps, 1000 + k).unwrap();
            let n2 = NoiseConfig::enabled(eps2, 5000 + k).unwrap();
            let e1 = mod_lev_approx(&a, &w, eps, &n1, "c2-left", &ledger).map_err(|e| e.to_string())?;
            let e2 = mod_lev_approx(&a, &w2, eps2, &n2, "c2-right", &ledger).map_err(|e| e.to_string())?;
            let p1 = update_phi(&a, &family, &w, s, Some(&e1)).map_err(|e| e.to_string())?;
            let p2 = update_phi(&a, &family, &w2, s, Some(&e2)).map_err(|e| e.to_string())?;
            let lhs = metric_d(&p1.weights, &p2.weights).map_err(|e| e.to_string())?;
            let rhs = delta * metric_d(&w, &w2).unwrap() + c.ln() + ((1.0 + eps) / (1.0 - eps2)).ln();
            worst_margin = worst_margin.min(rhs - lhs);
            ensure(lhs <= rhs + 1e-9, || format!("{name} pair {k}: {lhs} > {rhs}"))?;
        }
    }
    Ok(format!("4 families x 100 pairs; smallest margin {worst_margin:.3}"))
}

fn c03_quadratic_fixed_point() -> Check {
    let mut r = rng(303);
    let a = gaussian(120, 5, &mut r);
    let family = ProperLossFamily::quadratic(120).unwrap();
    let ledger = QueryLedger::new();
    for k in 0..20u64 {
        let w: Vec<f64> = (0..120).map(|_| log_uniform(&mut r, 1e-3, 1e3)).collect();
        let s = log_uniform(&mut r, 1e-4, 1e4);
        let exact = update_phi(&a, &family, &w, s, None).map_err(|e| e.to_string())?;
        let noise = NoiseConfig::enabled(0.1, k).unwrap();
        let est = mod_lev_approx(&a, &w, 0.1, &noise, "c3", &ledger).map_err(|e| e.to_string())?;
        let noisy = update_phi(&a, &family, &w, s, Some(&est)).map_err(|e| e.to_string())?;
        ensure(exact.weights.iter().chain(&noisy.weights).all(|&v| v == 1.0 / s), || {
            format!("trial {k}: phi is not exactly 1/s")
        })?;
    }
    for k in 0..5u64 {
        let w0: Vec<f64> = (0..120).map(|_| log_uniform(&mut r, 1e-3, 1e3)).collect();
        let j_max = r.gen_range(-3..6);
        let out = qmlso(&a, &family, &w0, j_max - 4, j_max, 1e8, 0.1, &NoiseConfig::enabled(0.1, k).unwrap(), &ledger)
            .map_err(|e| e.to_string())?;
        let top = 2f64.powi(-j_max);
        ensure(out.scheme.weights[&j_max].iter().all(|&v| v == top), || format!("qmlso {k}: top weights not 2^-j_max"))?;
        ensure(out.diagnostics.round_distances.iter().skip(1).all(|&d| d == 0.0), || {
            format!("qmlso {k}: iterate moved after the first round: {:?}", out.diagnostics.round_distances)
        })?;
    }
    Ok("20 exact updates equal 1/s bitwise; 5 runs fixed after one round".into())
}

fn init_instance(
    r: &mut ChaCha8Rng,
    family_of: &dyn Fn(usize) -> ProperLossFamily,
) -> (RowMatrix, ProperLossFamily, i32, i32, f64) {
    let m = r.gen_range(60..=200);
    let n = r.gen_range(3..=8);
    let a = gaussian(m, n, r);
    let family = family_of(m);
    let j_max = r.gen_range(2..=8);
    let j_min = j_max - r.gen_range(3..=10);
    let s_min = 2f64.powi(j_min);
    let s_max = 2f64.powi(j_max);
    let delta = 0.05 * s_min / (8.0 * (m as f64).powi(3) * s_max);
    (a, family, j_min, j_max, delta)
}

fn family_makers() -> Vec<(&'static str, Box<dyn Fn(usize) -> ProperLossFamily>)> {
    vec![
        ("ell_0.5", Box::new(|m| ProperLossFamily::ell_p(0.5, m).unwrap())),
        ("ell_1", Box::new(|m| ProperLossFamily::ell_p(1.0, m).unwrap())),
        ("ell_2", Box::new(|m| ProperLossFamily::ell_p(2.0, m).unwrap())),
        ("gamma_1", Box::new(|m| ProperLossFamily::gamma_p(1.0, m).unwrap())),
    ]
}

fn c04_scheme_certification() -> Check {
    let mut r = rng(404);
    let mut count = 0;
    for (name, make) in family_makers() {
        for k in 0..10u64 {
            let (a, family, j_min, j_max, delta) = init_instance(&mut r, make.as_ref());
            let ledger = QueryLedger::new();
            let noise = NoiseConfig::enabled(0.1, k).unwrap();
            let init = weight_initialize(&a, &family, 2f64.powi(j_max), delta, &noise, &ledger).map_err(|e| e.to_string())?;
            let out = qmlso(&a, &init.family, &init.w0, j_min, j_max, init.beta, 0.1, &noise, &ledger)
                .map_err(|e| format!("{name} {k}: {e}"))?;
            let p = init.family.params();
            let delta_c = f64::max(0.5, (p.theta - 2.0).abs() / 2.0);
            let c = f64::max(2.0 * p.lipschitz / p.c, 1.0 / p.c);
            let alpha = 4.0 * c.powf(6.0 / (1.0 - delta_c));
            ensure((out.scheme.alpha / alpha - 1.0).abs() < 1e-12, || format!("{name}: alpha {} vs {alpha}", out.scheme.alpha))?;
            let cert = out.scheme.certify(&a, &init.family).map_err(|e| e.to_string())?;
            ensure(cert.passed, || format!("{name} {k}: scheme fails certification: {cert:?}"))?;
            let z = &out.overestimates.z;
            for (j, w) in &out.scheme.weights {
                let (sigma, _) = oracle_leverage(&a, w);
                for i in 0..z.len() {
                    ensure(z[i] >= sigma[i] * (1.0 - 1e-9), || format!("{name} {k}: z[{i}] below leverage at scale {j}"))?;
                }
            }
            let scales = (j_max - j_min + 1) as f64;
            let bound = 1.1 / 0.9 * scales * a.ncols() as f64;
            let tau: f64 = z.iter().sum();
            ensure(tau <= bound, || format!("{name} {k}: |z|_1 = {tau} > {bound}"))?;
            count += 1;
        }
    }
    Ok(format!("{count} schemes certified"))
}

fn c05_initialization() -> Check {
    let mut r = rng(505);
    let mut worst_ratio: f64 = 0.0;
    for (name, make) in family_makers() {
        for k in 0..10u64 {
            let (a, family, _, j_max, delta) = init_instance(&mut r, make.as_ref());
            let s_max = 2f64.powi(j_max);
            let ledger = QueryLedger::new();
            let noise = NoiseConfig::enabled(0.1, 50 + k).unwrap();
            let init = weight_initialize(&a, &family, s_max, delta, &noise, &ledger).map_err(|e| e.to_string())?;
            for (i, t) in init.anchors.iter().enumerate() {
                let v = family.value(i, *t);
                ensure(v >= 0.5 * s_max && v <= s_max, || format!("{name} {k}: anchor {i} gives {v}"))?;
            }
            let chk = check_approx_weight(&a, &init.family, &init.w0, s_max, init.beta).map_err(|e| e.to_string())?;
            ensure(chk.by_definition && chk.by_fixed_point, || format!("{name} {k}: w0 not beta-approximate: {chk:?}"))?;
            let p = family.params();
            let c_init = 2.0 * (2.0 * p.lipschitz / p.c).powf(2.0 / p.theta);
            let m = a.nrows() as f64;
            let bound = c_init * delta * m * m * s_max;
            let points = in_range_points(&a, &family, s_max * 1e-3, s_max, 100, 77 + k).map_err(|e| e.to_string())?;
            for x in &points {
                let f: f64 = (0..a.nrows()).map(|i| family.value(i, a.row_dot(i, x))).sum();
                let f0: f64 = (0..a.nrows())
                    .map(|i| {
                        let t = a.row_dot(i, x);
                        family.value(i, t) + s_max * init.w0[i] * t * t
                    })
                    .sum();
                let diff = f0 - f;
                worst_ratio = worst_ratio.max(diff / bound);
                ensure(diff >= 0.0 && diff <= bound, || format!("{name} {k}: F0 - F = {diff:e} outside [0, {bound:e}]"))?;
            }
        }
    }
    Ok(format!("40 initializations; max (F0 - F)/bound = {worst_ratio:.3}"))
}

fn c06_find_anchor() -> Check {
    let mut r = rng(606);
    let mut max_used: f64 = 0.0;
    for k in 0..200 {
        let kind = match k % 4 {
            0 => LossKind::Quadratic,
            1 => LossKind::Absolute,
            2 => LossKind::EllP { p: r.gen_range(0.1..=2.0) },
            _ => LossKind::GammaP { p: r.gen_range(0.1..=2.0) },
        };
        let scale = log_uniform(&mut r, 1e-3, 1e3);
        let mut family = ProperLossFamily::mixed(vec![ScaledLoss::new(kind, scale).unwrap()]).unwrap();
        if k % 3 == 0 {
            family = glmsparse::losses::make_modified(&family, 1.0, &[r.gen_range(0.0..10.0)]).unwrap();
        }
        let report = verify_properness(&family, 12, 50.0).unwrap();
        ensure(report.passed, || format!("instance {k}: family not proper"))?;
        let s_min = log_uniform(&mut r, 1e-6, 1e6);
        let s_max = s_min * log_uniform(&mut r, 1.2, 1e6);
        let found = find_anchor(&family, 0, s_min, s_max).map_err(|e| format!("instance {k}: {e}"))?;
        let f = scale * kind.value(found.x) + family.bump(0) * found.x * found.x;
        ensure(found.x > 0.0 && f >= s_min && f <= s_max, || format!("instance {k}: f(x) = {f} outside [{s_min}, {s_max}]"))?;
        let f1 = family.value(0, 1.0);
        let budget = ANCHOR_BUDGET_K * (1.0 + (s_max / s_min).log2() + f1.log2().abs());
        max_used = max_used.max(found.evaluations as f64 / budget);
        ensure(found.evaluations as f64 <= budget, || format!("instance {k}: {} evaluations > {budget}", found.evaluations))?;
    }
    Ok(format!("200 instances; max evaluations/budget = {max_used:.3}"))
}

fn c07_sparsifier_quality() -> Check {
    let mut r = rng(707);
    let a = planted(4000, 20, &mut r);
    let family = ProperLossFamily::quadratic(4000).unwrap();
    let mut passes = 0;
    let mut worst = (f64::INFINITY, 0.0f64);
    for seed in 0..20 {
        let ledger = QueryLedger::new();
        let cfg = SparsifyConfig { c_m: 8.0, ..SparsifyConfig::with_seed(seed) };
        let out = qglm_sparsify(&a, &family, 0.25, 1.0, 1e4, &cfg, &ledger).map_err(|e| e.to_string())?;
        ensure(out.sparsifier.nnz() <= out.sparsifier.samples, || format!("quadratic seed {seed}: support exceeds M"))?;
        let rep = spectral_check(&a, &out.sparsifier.pairs(), 0.25).map_err(|e| e.to_string())?;
        worst = (worst.0.min(rep.min_ratio), worst.1.max(rep.max_ratio));
        passes += rep.passed as usize;
    }
    ensure(passes >= 18, || format!("quadratic: spectral check passed {passes}/20"))?;
    let mut summary = format!("quadratic {passes}/20 (eigen ratios in [{:.3}, {:.3}])", worst.0, worst.1);

    let b = planted(2000, 15, &mut r);
    for (name, family) in [
        ("ell_1", ProperLossFamily::ell_p(1.0, 2000).unwrap()),
        ("gamma_1", ProperLossFamily::gamma_p(1.0, 2000).unwrap()),
    ] {
        let mut ok = 0;
        let mut worst_fraction: f64 = 0.0;
        for seed in 0..20 {
            let ledger = QueryLedger::new();
            let cfg = SparsifyConfig { c_m: 8.0, ..SparsifyConfig::with_seed(seed) };
            let out = qglm_sparsify(&b, &family, 0.3, 100.0, 1e5, &cfg, &ledger).map_err(|e| e.to_string())?;
            ensure(out.sparsifier.nnz() <= out.sparsifier.samples, || format!("{name} seed {seed}: support exceeds M"))?;
            let v = validate_sparsifier(&b, &family, &out.sparsifier, 200, 1000 + seed).map_err(|e| e.to_string())?;
            worst_fraction = worst_fraction.max(v.violation_fraction);
            ok += (v.violation_fraction <= 0.05) as usize;
        }
        ensure(ok >= 18, || format!("{name}: {ok}/20 trials within 5% violations"))?;
        summary += &format!("; {name} {ok}/20 (worst violation fraction {worst_fraction:.3})");
    }
    Ok(summary)
}

fn planted_regression(seed: u64, outliers: bool) -> (RowMatrix, ResponseVector) {
    let mut r = rng(9000 + seed);
    let (m, n) = (2000, 10);
    let a = gaussian(m, n, &mut r);
    let x: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
    let b: Vec<f64> = (0..m)
        .map(|i| {
            let mut v = a.row_dot(i, &x) + 0.5 * r.sample::<f64, _>(StandardNormal);
            if outliers && r.gen::<f64>() < 0.05 {
                v += r.gen_range(20.0..50.0) * if r.gen::<bool>() { 1.0 } else { -1.0 };
            }
            v
        })
        .collect();
    (a, ResponseVector::new(b).unwrap())
}

fn c08_regression_ratios() -> Check {
    let eps = 0.3;
    let mut summary = Vec::new();
    let kinds: Vec<(&str, bool, Box<dyn Fn(&RowMatrix, &ResponseVector) -> ProblemKind>)> = vec![
        ("linear", false, Box::new(|_, _| ProblemKind::Linear)),
        ("ridge", false, Box::new(|_, _| ProblemKind::Ridge { lambda: 50.0 })),
        (
            "lasso",
            false,
            Box::new(|a, b| {
                let atb = (0..a.ncols())
                    .map(|j| (0..a.nrows()).map(|i| a.get(i, j) * b.as_slice()[i]).sum::<f64>().abs())
                    .fold(0.0, f64::max);
                ProblemKind::Lasso { lambda: 0.2 * atb }
            }),
        ),
        ("ell_1", true, Box::new(|_, _| ProblemKind::EllP { p: 1.0 })),
        ("huber", true, Box::new(|_, _| ProblemKind::GammaP { p: 1.0 })),
    ];
    for (name, outliers, kind_of) in kinds {
        let mut ok = 0;
        let mut worst: f64 = 0.0;
        for seed in 0..20 {
            let (a, b) = planted_regression(seed, outliers);
            let kind = kind_of(&a, &b);
            let problem = RegressionProblem::new(kind, a, b).unwrap();
            let reference = reference_solve(&problem).map_err(|e| format!("{name} {seed}: {e}"))?;
            let mut cfg = SolveConfig::new(eps, seed);
            cfg.reference = false;
            let ledger = QueryLedger::new();
            let rep = solve(&problem, &cfg, &ledger).map_err(|e| format!("{name} {seed}: {e}"))?;
            let ratio = rep.objective_full / reference.objective;
            ensure(rep.objective_full >= reference.objective * (1.0 - 1e-9) - 1e-9, || {
                format!("{name} {seed}: solution beats the reference ({} < {})", rep.objective_full, reference.objective)
            })?;
            worst = worst.max(ratio);
            ok += (ratio <= 1.0 + eps) as usize;
        }
        ensure(ok >= 18, || format!("{name}: {ok}/20 within 1 + eps"))?;
        summary.push(format!("{name} {ok}/20 (worst ratio {worst:.4})"));
    }
    Ok(summary.join("; "))
}

fn c09_sampling_contracts() -> Check {
    let ledger = QueryLedger::new();
    let point = multi_sample(&[1.0, 0.0, 0.0], 50, 9, &ledger).map_err(|e| e.to_string())?;
    ensure(point.iter().all(|&i| i == 0) && point.len() == 50, || "point mass produced other indices".into())?;
    for seed in 0..20 {
        let draws = multi_sample(&[1.0; 4], 4000, seed, &ledger).map_err(|e| e.to_string())?;
        for k in 0..4 {
            let freq = draws.iter().filter(|&&i| i == k).count() as f64 / 4000.0;
            ensure((0.2..=0.3).contains(&freq), || format!("seed {seed}: frequency of {k} is {freq}"))?;
        }
        ensure(draws == multi_sample(&[1.0; 4], 4000, seed, &ledger).unwrap(), || "sampling not deterministic".into())?;
    }
    let mut r = rng(909);
    let mut violations = 0;
    for seed in 0..1000 {
        let z: Vec<f64> = (0..r.gen_range(1..50)).map(|_| r.gen_range(0.0..5.0)).collect();
        let total: f64 = z.iter().sum();
        let v = sum_estimate(&z, 0.1, &NoiseConfig::enabled(0.1, seed).unwrap()).map_err(|e| e.to_string())?;
        if v < 0.9 * total - 1e-12 || v > 1.1 * total + 1e-12 {
            violations += 1;
        }
        let exact = sum_estimate(&z, 0.1, &NoiseConfig::disabled()).unwrap();
        ensure(exact == total, || "disabled noise changed the sum".into())?;
    }
    ensure(violations == 0, || format!("{violations} sum-estimate violations"))?;
    Ok("point mass, 20 uniform-frequency runs, 1000 sum estimates with 0 violations".into())
}

fn run_cli(args: &[&str]) -> Result<Value, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_glmsparse"))
        .args(args)
        .env_remove("GLMSPARSE_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    serde_json::from_slice(&out.stdout).map_err(|e| format!("{args:?}: bad JSON: {e}"))
}

fn c10_reproducibility() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut r = rng(1010);
    let a = gaussian(300, 5, &mut r);
    let b: Vec<f64> = (0..300).map(|i| a.row_dot(i, &[1.0, -1.0, 0.5, 2.0, 0.0]) + r.gen_range(-0.5..0.5)).collect();
    let mtx = dir.path().join("a.mtx");
    let resp = dir.path().join("b.txt");
    let sp = dir.path().join("sp.json");
    std::fs::write(&mtx, a.to_matrix_market()).unwrap();
    std::fs::write(&resp, b.iter().map(|v| format!("{v:?}\n")).collect::<String>()).unwrap();
    let (m, rs, sps) = (mtx.to_str().unwrap(), resp.to_str().unwrap(), sp.to_str().unwrap());
    let commands: Vec<Vec<&str>> = vec![
        vec!["sparsify", "--matrix", m, "--family", "ell_p", "--p", "1", "--eps", "0.3", "--seed", "7", "--sparsifier-out", sps],
        vec!["solve", "--matrix", m, "--response", rs, "--kind", "gamma-p", "--p", "1", "--eps", "0.3", "--seed", "3"],
        vec!["validate", "--sparsifier", sps, "--matrix", m, "--points", "50", "--seed", "2"],
        vec!["bench", "--matrix", m, "--family", "huber", "--eps", "0.4", "--trials", "2", "--points", "30", "--s-min", "10", "--s-max", "1e4"],
        vec!["budget", "--m", "1e6", "--n", "100", "--r", "100", "--eps", "0.5"],
    ];
    for cmd in &commands {
        let first = run_cli(cmd)?;
        let second = run_cli(cmd)?;
        for key in ["results", "config", "ledger", "inputs_hash", "constants"] {
            let x = serde_json::to_string(&first[key]).unwrap();
            let y = serde_json::to_string(&second[key]).unwrap();
            ensure(x == y, || format!("{}: '{key}' differs between runs", cmd[0]))?;
        }
        ensure(first["results"] != Value::Null, || format!("{}: no results section", cmd[0]))?;
    }
    Ok("sparsify, solve, validate, bench, budget reproduced byte-for-byte".into())
}

struct Criterion {
    id: &'static str,
    title: &'static str,
    budget: Duration,
    run: fn() -> Check,
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria = [
        Criterion { id: "c01", title: "leverage-score correctness", budget: Duration::from_secs(30), run: c01_leverage },
        Criterion { id: "c02", title: "contraction suite", budget: Duration::from_secs(120), run: c02_contraction },
        Criterion { id: "c03", title: "quadratic fixed point", budget: Duration::from_secs(10), run: c03_quadratic_fixed_point },
        Criterion { id: "c04", title: "weight-scheme certification", budget: Duration::from_secs(300), run: c04_scheme_certification },
        Criterion { id: "c05", title: "initialization certification", budget: Duration::from_secs(120), run: c05_initialization },
        Criterion { id: "c06", title: "anchor search", budget: Duration::from_secs(30), run: c06_find_anchor },
        Criterion { id: "c07", title: "sparsifier quality", budget: Duration::from_secs(600), run: c07_sparsifier_quality },
        Criterion { id: "c08", title: "end-to-end regression ratios", budget: Duration::from_secs(600), run: c08_regression_ratios },
        Criterion { id: "c09", title: "sampling and sum contracts", budget: Duration::from_secs(60), run: c09_sampling_contracts },
        Criterion { id: "c10", title: "CLI reproducibility", budget: Duration::from_secs(60), run: c10_reproducibility },
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    let mut ran = 0;
    for c in &criteria {
        if !filters.is_empty() && !filters.iter().any(|f| c.id.contains(f.as_str()) || c.title.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > c.budget => Err(format!("{detail}; runtime {elapsed:.1?} exceeds {:?}", c.budget)),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("criterion {} {}: PASS [{:.1}s] {detail}", c.id, c.title, elapsed.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("criterion {} {}: FAIL [{:.1}s] {why}", c.id, c.title, elapsed.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
