//! Command-line front end. Every subcommand writes one JSON report with a
//! `meta` block (timestamp, host) kept apart from the reproducible sections.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{GlmError, Result};
use crate::losses::{FamilySpec, ProperLossFamily, ANCHOR_BUDGET_K};
use crate::matrix_io::{load_matrix, load_response, MatrixFormat, RowMatrix};
use crate::mlso::{MAX_ROUNDS, MLSO_EPSILON};
use crate::oracles::{quantum_budget, QueryLedger};
use crate::regressors::{solve, ProblemKind, RegressionProblem, SolveConfig};
use crate::sparsifier::{
    qglm_sparsify, validate_sparsifier, Sparsifier, SparsifyConfig, DEFAULT_C_M, DELTA_INIT_FORMULA, REWEIGHT_SLACK,
    SUM_EPSILON,
};

pub const SEED_ENV: &str = "GLMSPARSE_SEED";
/// Range used by `sparsify`/`bench` when none is given.
pub const DEFAULT_S_MIN: f64 = 1.0;
pub const DEFAULT_S_MAX: f64 = 1e6;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "glmsparse", version, about = "Sparsify GLM objectives and solve regressions on the sparsified data")]
struct Cli {
    /// Print a flattened table instead of JSON on stdout.
    #[arg(long, global = true)]
    pretty: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a sparsifier for a matrix and loss family.
    Sparsify(SparsifyArgs),
    /// Solve a regression problem through a sparsifier.
    Solve(SolveArgs),
    /// Check a stored sparsifier on random in-range points.
    Validate(ValidateArgs),
    /// Repeat sparsify + validate over several seeds.
    Bench(BenchArgs),
    /// Evaluate the leading-order cost model.
    Budget(BudgetArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum FormatArg {
    Mtx,
    Csv,
}

#[derive(Debug, Args)]
struct MatrixArgs {
    #[arg(long)]
    matrix: PathBuf,
    /// Defaults to the file extension (.csv or Matrix Market).
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

impl MatrixArgs {
    fn format(&self) -> MatrixFormat {
        match self.format {
            Some(FormatArg::Mtx) => MatrixFormat::MatrixMarket,
            Some(FormatArg::Csv) => MatrixFormat::Csv,
            None => MatrixFormat::from_path(&self.matrix),
        }
    }
}

#[derive(Debug, Args)]
struct FamilyArgs {
    /// quadratic | absolute | ell_p | gamma_p | huber
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    p: Option<f64>,
    /// JSON family spec with optional per-index overrides.
    #[arg(long)]
    family_config: Option<PathBuf>,
}

impl FamilyArgs {
    fn spec(&self) -> Result<Option<FamilySpec>> {
        if let Some(path) = &self.family_config {
            let text = fs::read_to_string(path).map_err(|e| GlmError::io(path, e))?;
            return Ok(Some(serde_json::from_str(&text)?));
        }
        Ok(self.family.as_ref().map(|kind| FamilySpec {
            kind: kind.clone(),
            p: self.p,
            overrides: Vec::new(),
        }))
    }
}

#[derive(Debug, Args)]
struct SamplingArgs {
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    s_min: Option<f64>,
    #[arg(long)]
    s_max: Option<f64>,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    /// Disable estimator noise.
    #[arg(long)]
    no_noise: bool,
    #[arg(long, default_value_t = DEFAULT_C_M)]
    c_m: f64,
}

impl SamplingArgs {
    fn sparsify_config(&self, seed: u64) -> SparsifyConfig {
        SparsifyConfig {
            c_m: self.c_m,
            seed,
            noise: !self.no_noise,
            homogeneous_fast_path: true,
        }
    }
}

#[derive(Debug, Args)]
struct SparsifyArgs {
    #[command(flatten)]
    matrix: MatrixArgs,
    #[command(flatten)]
    family: FamilyArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// Report path (stdout when absent).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Write the sparsifier JSON here.
    #[arg(long)]
    sparsifier_out: Option<PathBuf>,
    /// Write the two-column `index weight` form here.
    #[arg(long)]
    text_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum KindArg {
    Linear,
    Multiple,
    Ridge,
    Lasso,
    EllP,
    GammaP,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    matrix: MatrixArgs,
    /// Response vector (one value per line), or a CSV matrix for `multiple`.
    #[arg(long)]
    response: PathBuf,
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// Skip the full-data reference solve.
    #[arg(long)]
    no_reference: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    sparsifier: PathBuf,
    #[command(flatten)]
    matrix: MatrixArgs,
    /// Overrides the family stored in the sparsifier.
    #[command(flatten)]
    family: FamilyArgs,
    #[arg(long, default_value_t = 200)]
    points: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    matrix: MatrixArgs,
    #[command(flatten)]
    family: FamilyArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    #[arg(long, default_value_t = 200)]
    points: usize,
    /// Per-trial CSV export.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BudgetArgs {
    #[arg(long)]
    m: f64,
    #[arg(long)]
    n: f64,
    #[arg(long)]
    r: f64,
    #[arg(long)]
    eps: f64,
    /// s_max / s_min; 1 for homogeneous losses.
    #[arg(long, default_value_t = 1.0)]
    scale_ratio: f64,
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Exit code for an error: 2 for rejected parameters, 1 otherwise.
pub fn exit_code(err: &GlmError) -> i32 {
    match err {
        GlmError::InvalidParameter(_) | GlmError::DegenerateRange(_) => EXIT_VALIDATION,
        _ => EXIT_INPUT,
    }
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

struct Report {
    command: &'static str,
    inputs: Vec<(String, Vec<u8>)>,
    config: Value,
    extra_meta: Map<String, Value>,
}

fn read_input(role: &str, path: &Path) -> Result<(String, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| GlmError::io(path, e))?;
    Ok((role.to_string(), bytes))
}

fn inputs_hash(inputs: &[(String, Vec<u8>)]) -> String {
    let mut h = Sha256::new();
    for (role, bytes) in inputs {
        h.update(role.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    hex::encode(h.finalize())
}

fn hostname() -> String {
    std::env::var("HOSTNAME")
        .ok()
        .or_else(|| fs::read_to_string("/etc/hostname").ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_default()
}

fn constants(c_m: f64) -> Value {
    json!({
        "C_M": c_m,
        "delta_init": DELTA_INIT_FORMULA,
        "contraction_rounds_clamp": [1, MAX_ROUNDS],
        "anchor_budget_K": ANCHOR_BUDGET_K,
        "mlso_epsilon": MLSO_EPSILON,
        "sum_epsilon": SUM_EPSILON,
        "reweight_slack": REWEIGHT_SLACK,
        "internal_epsilon": "eps / 2",
    })
}

fn assemble(report: Report, ledger: &QueryLedger, results: Value, c_m: f64) -> Value {
    let mut meta = Map::new();
    meta.insert("timestamp".into(), json!(chrono::Utc::now().to_rfc3339()));
    meta.insert("hostname".into(), json!(hostname()));
    meta.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    meta.extend(report.extra_meta);
    json!({
        "meta": meta,
        "command": report.command,
        "inputs_hash": inputs_hash(&report.inputs),
        "config": report.config,
        "constants": constants(c_m),
        "ledger": ledger.snapshot(),
        "results": results,
    })
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, x) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, out);
            }
        }
        Value::Array(items) if items.len() > 8 => out.push((prefix.to_string(), format!("[{} items]", items.len()))),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// Two-column table rendered from a JSON report.
pub fn render_table(report: &Value) -> String {
    let mut rows = Vec::new();
    flatten("", report, &mut rows);
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    rows.iter().map(|(k, v)| format!("{k:<width$}  {v}\n")).collect()
}

fn emit(report: &Value, output: Option<&Path>, pretty: bool) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    if let Some(path) = output {
        fs::write(path, format!("{text}\n")).map_err(|e| GlmError::io(path, e))?;
    }
    if pretty {
        print!("{}", render_table(report));
    } else if output.is_none() {
        println!("{text}");
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| GlmError::io(path, e))
}

fn require_family(spec: Option<FamilySpec>) -> Result<FamilySpec> {
    spec.ok_or_else(|| GlmError::invalid("a loss family is required (--family or --family-config)"))
}

fn load(args: &MatrixArgs) -> Result<(RowMatrix, (String, Vec<u8>))> {
    let input = read_input("matrix", &args.matrix)?;
    let a = load_matrix(&args.matrix, args.format())?;
    Ok((a, input))
}

fn range_of(args: &SamplingArgs) -> (f64, f64) {
    (args.s_min.unwrap_or(DEFAULT_S_MIN), args.s_max.unwrap_or(DEFAULT_S_MAX))
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Sparsify(args) => cmd_sparsify(args, cli.pretty),
        Command::Solve(args) => cmd_solve(args, cli.pretty),
        Command::Validate(args) => cmd_validate(args, cli.pretty),
        Command::Bench(args) => cmd_bench(args, cli.pretty),
        Command::Budget(args) => cmd_budget(args, cli.pretty),
    }
}

fn cmd_sparsify(args: &SparsifyArgs, pretty: bool) -> Result<()> {
    let spec = require_family(args.family.spec()?)?;
    let (a, input) = load(&args.matrix)?;
    let family = spec.build(a.nrows())?;
    let (s_min, s_max) = range_of(&args.sampling);
    let cfg = args.sampling.sparsify_config(args.sampling.seed);
    let ledger = QueryLedger::new();
    let out = qglm_sparsify(&a, &family, args.sampling.eps, s_min, s_max, &cfg, &ledger)?;
    let mut sp = out.sparsifier;
    sp.family = Some(spec.clone());
    if let Some(path) = &args.sparsifier_out {
        write_file(path, &sp.to_json(true)?)?;
    }
    if let Some(path) = &args.text_out {
        write_file(path, &sp.to_text())?;
    }
    let config = json!({
        "matrix": args.matrix.matrix,
        "format": args.matrix.format(),
        "family": spec,
        "eps": args.sampling.eps,
        "s_min": s_min,
        "s_max": s_max,
        "seed": cfg.seed,
        "noise": cfg.noise,
        "c_m": cfg.c_m,
        "rows": a.nrows(),
        "cols": a.ncols(),
    });
    let results = json!({
        "sparsifier": sp,
        "diagnostics": out.diagnostics,
    });
    let report = Report {
        command: "sparsify",
        inputs: vec![input],
        config,
        extra_meta: Map::new(),
    };
    emit(&assemble(report, &ledger, results, cfg.c_m), args.output.as_deref(), pretty)
}

fn cmd_solve(args: &SolveArgs, pretty: bool) -> Result<()> {
    let (a, input) = load(&args.matrix)?;
    let response_input = read_input("response", &args.response)?;
    let need = |v: Option<f64>, name: &str| v.ok_or_else(|| GlmError::invalid(format!("--{name} is required for this kind")));
    let kind = match args.kind {
        KindArg::Linear => ProblemKind::Linear,
        KindArg::Multiple => ProblemKind::Multiple,
        KindArg::Ridge => ProblemKind::Ridge { lambda: need(args.lambda, "lambda")? },
        KindArg::Lasso => ProblemKind::Lasso { lambda: need(args.lambda, "lambda")? },
        KindArg::EllP => ProblemKind::EllP { p: need(args.p, "p")? },
        KindArg::GammaP => ProblemKind::GammaP { p: need(args.p, "p")? },
    };
    let problem = if kind == ProblemKind::Multiple {
        let b = load_matrix(&args.response, MatrixFormat::from_path(&args.response))?.to_dense();
        RegressionProblem::multiple(a, b)?
    } else {
        RegressionProblem::new(kind, a, load_response(&args.response)?)?
    };
    let mut cfg = SolveConfig::new(args.sampling.eps, args.sampling.seed);
    cfg.sparsify = args.sampling.sparsify_config(args.sampling.seed);
    cfg.s_min = args.sampling.s_min;
    cfg.s_max = args.sampling.s_max;
    cfg.reference = !args.no_reference;
    let ledger = QueryLedger::new();
    let report = solve(&problem, &cfg, &ledger)?;
    let config = json!({
        "matrix": args.matrix.matrix,
        "format": args.matrix.format(),
        "response": args.response,
        "problem": kind,
        "solve": cfg,
        "resolved_range": report.range,
    });
    let c_m = cfg.sparsify.c_m;
    let results = serde_json::to_value(&report)?;
    let r = Report {
        command: "solve",
        inputs: vec![input, response_input],
        config,
        extra_meta: Map::new(),
    };
    emit(&assemble(r, &ledger, results, c_m), args.output.as_deref(), pretty)
}

fn cmd_validate(args: &ValidateArgs, pretty: bool) -> Result<()> {
    let sp_input = read_input("sparsifier", &args.sparsifier)?;
    let sp = Sparsifier::from_json(std::str::from_utf8(&sp_input.1).map_err(|e| GlmError::Parse {
        line: 0,
        message: e.to_string(),
    })?)?;
    let (a, input) = load(&args.matrix)?;
    let spec = match args.family.spec()? {
        Some(s) => s,
        None => sp
            .family
            .clone()
            .ok_or_else(|| GlmError::invalid("sparsifier has no stored family; pass --family"))?,
    };
    let family: ProperLossFamily = spec.build(a.nrows())?;
    let report = validate_sparsifier(&a, &family, &sp, args.points, args.seed)?;
    let config = json!({
        "matrix": args.matrix.matrix,
        "sparsifier": args.sparsifier,
        "family": spec,
        "points": args.points,
        "seed": args.seed,
    });
    let results = json!({
        "validation": report,
        "sparsifier_nnz": sp.nnz(),
        "sparsifier_samples": sp.samples,
    });
    let r = Report {
        command: "validate",
        inputs: vec![sp_input, input],
        config,
        extra_meta: Map::new(),
    };
    emit(&assemble(r, &QueryLedger::new(), results, DEFAULT_C_M), args.output.as_deref(), pretty)
}

#[derive(Debug, Serialize)]
struct BenchRow {
    trial: usize,
    seed: u64,
    nnz: usize,
    samples: usize,
    max_relative_error: f64,
    mean_relative_error: f64,
    violation_fraction: f64,
}

fn cmd_bench(args: &BenchArgs, pretty: bool) -> Result<()> {
    if args.trials == 0 {
        return Err(GlmError::invalid("--trials must be at least 1"));
    }
    let spec = require_family(args.family.spec()?)?;
    let (a, input) = load(&args.matrix)?;
    let family = spec.build(a.nrows())?;
    let (s_min, s_max) = range_of(&args.sampling);
    let ledger = QueryLedger::new();
    let mut rows = Vec::with_capacity(args.trials);
    let mut timings = Vec::with_capacity(args.trials);
    for trial in 0..args.trials {
        let seed = args.sampling.seed.wrapping_add(trial as u64);
        let cfg = args.sampling.sparsify_config(seed);
        let start = Instant::now();
        let out = qglm_sparsify(&a, &family, args.sampling.eps, s_min, s_max, &cfg, &ledger)?;
        timings.push(start.elapsed().as_secs_f64());
        let v = validate_sparsifier(&a, &family, &out.sparsifier, args.points, seed)?;
        rows.push(BenchRow {
            trial,
            seed,
            nnz: out.sparsifier.nnz(),
            samples: out.sparsifier.samples,
            max_relative_error: v.max_relative_error,
            mean_relative_error: v.mean_relative_error,
            violation_fraction: v.violation_fraction,
        });
    }
    if let Some(path) = &args.csv {
        let mut w = csv::Writer::from_path(path).map_err(|e| GlmError::io(path, std::io::Error::other(e)))?;
        for row in &rows {
            w.serialize(row).map_err(|e| GlmError::io(path, std::io::Error::other(e)))?;
        }
        w.flush().map_err(|e| GlmError::io(path, e))?;
    }
    let config = json!({
        "matrix": args.matrix.matrix,
        "family": spec,
        "eps": args.sampling.eps,
        "s_min": s_min,
        "s_max": s_max,
        "seed": args.sampling.seed,
        "noise": !args.sampling.no_noise,
        "c_m": args.sampling.c_m,
        "trials": args.trials,
        "points": args.points,
    });
    let mut extra = Map::new();
    extra.insert("sparsify_seconds".into(), json!(timings));
    let r = Report {
        command: "bench",
        inputs: vec![input],
        config,
        extra_meta: extra,
    };
    emit(&assemble(r, &ledger, json!({ "trials": rows }), args.sampling.c_m), args.output.as_deref(), pretty)
}

fn cmd_budget(args: &BudgetArgs, pretty: bool) -> Result<()> {
    let b = quantum_budget(args.m, args.n, args.r, args.eps, args.scale_ratio)?;
    let config = json!({
        "m": args.m,
        "n": args.n,
        "r": args.r,
        "eps": args.eps,
        "scale_ratio": args.scale_ratio,
    });
    let r = Report {
        command: "budget",
        inputs: Vec::new(),
        config,
        extra_meta: Map::new(),
    };
    emit(&assemble(r, &QueryLedger::new(), json!({ "budget": b }), DEFAULT_C_M), args.output.as_deref(), pretty)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&GlmError::invalid("x")), EXIT_VALIDATION);
        assert_eq!(exit_code(&GlmError::Parse { line: 1, message: "x".into() }), EXIT_INPUT);
        assert_eq!(run(["glmsparse", "bogus"]), 2);
        assert_eq!(run(["glmsparse", "budget", "--m", "10", "--n", "20", "--r", "1", "--eps", "0.5"]), EXIT_VALIDATION);
    }

    #[test]
    fn table_flattens() {
        let t = render_table(&json!({"a": {"b": 1, "c": [1, 2]}, "d": "x"}));
        assert!(t.contains("a.b"));
        assert!(t.contains("[1,2]"));
    }
}
