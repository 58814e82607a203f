//! `fmm-bench`: run, verify, scale and tune tree-based N-body evaluations.
//!
//! Exit codes: 0 success, 1 accuracy failure, 2 usage error.

mod settings;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fmm_core::io::load_particles;
use fmm_core::traversal::{verify, write_trace_csv, AccuracyReport};
use fmm_core::tuner::write_table_csv;
use fmm_core::{build_tree, evaluate, generate_distribution, Distribution, EvalReport, FmmError, ParticleSet, Tuner, TunerOptions};

use settings::{parse_list, parse_p_range, CenterArg, ConfigFile, MacArg, Settings, ShapeArg, StrategyArg};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "fmm-bench", version, about = "Tree-based N-body benchmark harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// One evaluation; prints the report as JSON.
    Run(RunArgs),
    /// One evaluation checked against direct summation; exit 1 above `--tol`.
    Verify(VerifyArgs),
    /// Sweep N over a geometric grid; prints CSV.
    Scaling(ScalingArgs),
    /// Find per-order θ for each target error; prints CSV.
    Tune(TuneArgs),
}

#[derive(Args)]
struct EvalArgs {
    /// Number of uniform random bodies in the unit cube [default: 10000].
    #[arg(long)]
    n: Option<usize>,
    /// Maximum bodies per leaf [default: 30].
    #[arg(long)]
    ncrit: Option<usize>,
    /// Expansion order [default: 4].
    #[arg(long)]
    p: Option<usize>,
    /// Opening angle [default: 0.8].
    #[arg(long)]
    theta: Option<f64>,
    /// Acceptance criterion [default: rmax].
    #[arg(long, value_enum)]
    mac: Option<MacArg>,
    /// [default: dualtree]
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    /// Cell shape [default: cubic].
    #[arg(long, value_enum)]
    shape: Option<ShapeArg>,
    /// Expansion center [default: com].
    #[arg(long, value_enum)]
    center: Option<CenterArg>,
    /// Worker threads [default: all cores].
    #[arg(long)]
    threads: Option<usize>,
    /// Apply dual tree interactions to both cells.
    #[arg(long)]
    mutual: bool,
    /// Seed of the generated bodies [default: 42].
    #[arg(long)]
    seed: Option<u64>,
    /// Smallest target cell body count that gets its own task [default: 1000].
    #[arg(long)]
    grain: Option<usize>,
    /// Timed repetitions; medians are reported [default: 3].
    #[arg(long)]
    reps: Option<usize>,
    /// Read bodies from a CSV file with header x,y,z,q instead of generating them.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Write the output here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// File of key=value lines; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Also measure the error against direct summation.
    #[arg(long)]
    verify: bool,
    /// With --verify: exit 1 if the force error exceeds this.
    #[arg(long)]
    tol: Option<f64>,
    /// Oracle sample size [default: all bodies up to 10^4, else 1000].
    #[arg(long)]
    samples: Option<usize>,
    /// Write every kernel call as CSV (type,targetCell,sourceCell).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Largest accepted relative L2 force error [default: 1e-3].
    #[arg(long)]
    tol: Option<f64>,
    /// Oracle sample size [default: all bodies up to 10^4, else 1000].
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args)]
struct ScalingArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// [default: 10000]
    #[arg(long)]
    n_min: Option<usize>,
    /// [default: 1000000]
    #[arg(long)]
    n_max: Option<usize>,
    /// Grid points per factor of ten [default: 1].
    #[arg(long)]
    steps_per_decade: Option<usize>,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Comma-separated target force errors [default: 1e-2,1e-3,1e-4,1e-5].
    #[arg(long)]
    targets: Option<String>,
    /// Inclusive range of orders, e.g. 3..6 [default: 3..6].
    #[arg(long)]
    p_range: Option<String>,
    /// Oracle sample size [default: 1000].
    #[arg(long)]
    samples: Option<usize>,
    /// [default: 0.05]
    #[arg(long)]
    theta_min: Option<f64>,
    /// [default: 2.0]
    #[arg(long)]
    theta_max: Option<f64>,
}

enum Failure {
    Usage(anyhow::Error),
    Accuracy(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<FmmError>() {
            Some(FmmError::TargetUnreachable { .. } | FmmError::AllCandidatesUnreachable) => Failure::Accuracy(format!("{e:#}")),
            _ => Failure::Usage(e),
        }
    }
}

impl From<FmmError> for Failure {
    fn from(e: FmmError) -> Self {
        anyhow::Error::from(e).into()
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Verify(a) => cmd_verify(a),
        Cmd::Scaling(a) => cmd_scaling(a),
        Cmd::Tune(a) => cmd_tune(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Accuracy(msg)) => {
            eprintln!("accuracy failure: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn resolve(a: &EvalArgs, file: &ConfigFile) -> anyhow::Result<Settings> {
    let s = Settings {
        n: file.pick(a.n, "n", 10_000)?,
        ncrit: file.pick(a.ncrit, "ncrit", 30)?,
        p: file.pick(a.p, "p", 4)?,
        theta: file.pick(a.theta, "theta", 0.8)?,
        mac: file.pick_enum(a.mac, "mac", MacArg::Rmax)?,
        strategy: file.pick_enum(a.strategy, "strategy", StrategyArg::Dualtree)?,
        shape: file.pick_enum(a.shape, "shape", ShapeArg::Cubic)?,
        center: file.pick_enum(a.center, "center", CenterArg::Com)?,
        threads: file.pick_opt(a.threads, "threads")?,
        mutual: file.pick(a.mutual.then_some(true), "mutual", false)?,
        seed: file.pick(a.seed, "seed", 42)?,
        grain: file.pick(a.grain, "grain", 1000)?,
        reps: file.pick(a.reps, "reps", 3)?,
    };
    s.check()?;
    if let Some(t) = s.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("starting the thread pool")?;
    }
    Ok(s)
}

fn particles(s: &mut Settings, input: Option<&Path>) -> anyhow::Result<ParticleSet> {
    let ps = match input {
        Some(path) => load_particles(path).with_context(|| format!("reading {}", path.display()))?,
        None => generate_distribution(Distribution::Cube, s.n, s.seed)?,
    };
    if ps.is_empty() {
        return Err(anyhow!("{} holds no bodies", input.map_or("input".into(), |p| p.display().to_string())));
    }
    s.n = ps.len();
    Ok(ps)
}

fn round_ms(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-field median of the timings, rounded to milliseconds; counts are taken
/// from the last run.
fn combine(mut reports: Vec<EvalReport>) -> EvalReport {
    let times = |f: fn(&EvalReport) -> f64| round_ms(median(reports.iter().map(f).collect()));
    let total = times(|r| r.total);
    let tree_build = times(|r| r.phases.tree_build);
    let upward = times(|r| r.phases.upward);
    let traversal = times(|r| r.phases.traversal);
    let downward = times(|r| r.phases.downward);
    let p2p = times(|r| r.stats.p2p_time);
    let m2l = times(|r| r.stats.m2l_time);
    let m2p = times(|r| r.stats.m2p_time);
    let mut out = reports.pop().unwrap();
    out.total = total;
    out.phases.tree_build = tree_build;
    out.phases.upward = upward;
    out.phases.traversal = traversal;
    out.phases.downward = downward;
    out.stats.p2p_time = p2p;
    out.stats.m2l_time = m2l;
    out.stats.m2p_time = m2p;
    out
}

struct Evaluated {
    bodies: ParticleSet,
    report: EvalReport,
}

fn run_reps(s: &Settings, ps: &ParticleSet, trace: bool) -> anyhow::Result<Evaluated> {
    let cfg = fmm_core::EvalConfig { trace, ..s.eval_config()? };
    let mut reports = Vec::with_capacity(s.reps);
    let mut bodies = ParticleSet::default();
    for _ in 0..s.reps {
        let (out, report) = evaluate(ps, s.tree_options(), &cfg)?;
        bodies = out;
        reports.push(report);
    }
    Ok(Evaluated { bodies, report: combine(reports) })
}

#[derive(Serialize)]
struct Summary {
    potential_l1: f64,
    force_l1: f64,
}

fn summarize(ps: &ParticleSet) -> Summary {
    Summary {
        potential_l1: ps.phi.iter().map(|v| v.abs()).sum(),
        force_l1: (0..ps.len()).map(|i| ps.force(i).iter().map(|v| v.abs()).sum::<f64>()).sum(),
    }
}

#[derive(Serialize)]
struct JsonOut<'a> {
    schema_version: u32,
    command: &'static str,
    config: &'a Settings,
    report: &'a EvalReport,
    summary: Summary,
    #[serde(skip_serializing_if = "Option::is_none")]
    tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    passed: Option<bool>,
}

fn emit(output: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match output {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn accuracy(result: &ParticleSet, samples: Option<usize>, seed: u64) -> AccuracyReport {
    let samples = samples.unwrap_or(if result.len() <= 10_000 { result.len() } else { 1000 });
    verify(result, samples, seed)
}

fn cmd_run(a: RunArgs) -> CliResult {
    let file = ConfigFile::load(a.eval.config.as_deref())?;
    let mut s = resolve(&a.eval, &file)?;
    let tol = file.pick_opt(a.tol, "tol")?;
    let samples = file.pick_opt(a.samples, "samples")?;
    if a.trace.is_some() && s.strategy == StrategyArg::Direct {
        return Err(Failure::Usage(anyhow!("--trace needs a tree strategy")));
    }
    let ps = particles(&mut s, a.eval.input.as_deref())?;
    let mut ev = run_reps(&s, &ps, a.trace.is_some())?;
    if let Some(path) = &a.trace {
        let f = std::fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
        write_trace_csv(std::io::BufWriter::new(f), &ev.report.trace)?;
    }
    let mut passed = None;
    if a.verify {
        let acc = accuracy(&ev.bodies, samples, s.seed);
        if let Some(t) = tol {
            passed = Some(acc.force_error <= t);
        }
        ev.report.accuracy = Some(acc);
    }
    let out = JsonOut {
        schema_version: SCHEMA_VERSION,
        command: "run",
        config: &s,
        report: &ev.report,
        summary: summarize(&ev.bodies),
        tolerance: tol.filter(|_| a.verify),
        passed,
    };
    emit(a.eval.output.as_deref(), &(serde_json::to_string_pretty(&out).map_err(anyhow::Error::from)? + "\n"))?;
    if passed == Some(false) {
        return Err(Failure::Accuracy(format!("force error above {}", tol.unwrap())));
    }
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> CliResult {
    let file = ConfigFile::load(a.eval.config.as_deref())?;
    let mut s = resolve(&a.eval, &file)?;
    let tol = file.pick(a.tol, "tol", 1e-3)?;
    let samples = file.pick_opt(a.samples, "samples")?;
    let ps = particles(&mut s, a.eval.input.as_deref())?;
    let mut ev = run_reps(&s, &ps, false)?;
    let acc = accuracy(&ev.bodies, samples, s.seed);
    let passed = acc.force_error <= tol;
    let msg = format!("force error {:.3e} potential error {:.3e} tolerance {tol:e}", acc.force_error, acc.potential_error);
    ev.report.accuracy = Some(acc);
    let out = JsonOut {
        schema_version: SCHEMA_VERSION,
        command: "verify",
        config: &s,
        report: &ev.report,
        summary: summarize(&ev.bodies),
        tolerance: Some(tol),
        passed: Some(passed),
    };
    emit(a.eval.output.as_deref(), &(serde_json::to_string_pretty(&out).map_err(anyhow::Error::from)? + "\n"))?;
    eprintln!("{msg}");
    if !passed {
        return Err(Failure::Accuracy(msg));
    }
    Ok(())
}

/// `n_min * 10^(k / steps)` for k = 0, 1, ... up to `n_max`, deduplicated.
fn geometric_grid(n_min: usize, n_max: usize, steps: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for k in 0.. {
        let n = (n_min as f64 * 10f64.powf(k as f64 / steps as f64)).round() as usize;
        if n > n_max {
            break;
        }
        if out.last() != Some(&n) {
            out.push(n);
        }
    }
    out
}

const SCALING_HEADER: &[&str] = &[
    "n", "total", "tree_build", "upward", "traversal", "downward", "p2p_calls", "p2p_pairs", "p2p_flops", "p2m_calls",
    "m2m_calls", "m2l_calls", "m2p_calls", "l2l_calls", "l2p_calls",
];

fn cmd_scaling(a: ScalingArgs) -> CliResult {
    let file = ConfigFile::load(a.eval.config.as_deref())?;
    let mut s = resolve(&a.eval, &file)?;
    if a.eval.input.is_some() {
        return Err(Failure::Usage(anyhow!("scaling generates its own bodies; drop --input")));
    }
    let n_min = file.pick(a.n_min, "n-min", 10_000)?;
    let n_max = file.pick(a.n_max, "n-max", 1_000_000)?;
    let steps = file.pick(a.steps_per_decade, "steps-per-decade", 1)?;
    if n_min == 0 || n_min > n_max || steps == 0 {
        return Err(Failure::Usage(anyhow!("need 0 < --n-min <= --n-max and --steps-per-decade >= 1")));
    }
    let mut lines = vec![SCALING_HEADER.join(",")];
    for n in geometric_grid(n_min, n_max, steps) {
        s.n = n;
        let ps = particles(&mut s, None)?;
        let r = run_reps(&s, &ps, false)?.report;
        let st = &r.stats;
        let row: Vec<String> = [n as f64, r.total, r.phases.tree_build, r.phases.upward, r.phases.traversal, r.phases.downward]
            .iter()
            .map(|v| v.to_string())
            .chain(
                [st.p2p_calls, st.p2p_pairs, st.p2p_flops, st.p2m_calls, st.m2m_calls, st.m2l_calls, st.m2p_calls, st.l2l_calls, st.l2p_calls]
                    .iter()
                    .map(|v| v.to_string()),
            )
            .collect();
        lines.push(row.join(","));
    }
    emit(a.eval.output.as_deref(), &(lines.join("\n") + "\n"))?;
    Ok(())
}

fn cmd_tune(a: TuneArgs) -> CliResult {
    let file = ConfigFile::load(a.eval.config.as_deref())?;
    let mut s = resolve(&a.eval, &file)?;
    let targets: Vec<f64> = match a.targets.as_deref().or(file.raw("targets")) {
        Some(t) => parse_list(t, "--targets")?,
        None => vec![1e-2, 1e-3, 1e-4, 1e-5],
    };
    if targets.is_empty() || targets.iter().any(|t| !(*t > 0.0)) {
        return Err(Failure::Usage(anyhow!("--targets must be positive")));
    }
    let ps_range = parse_p_range(a.p_range.as_deref().or(file.raw("p-range")).unwrap_or("3..6"))?;
    if s.strategy != StrategyArg::Dualtree {
        return Err(Failure::Usage(anyhow!("tune times the dual tree traversal only")));
    }
    let defaults = TunerOptions::default();
    let opts = TunerOptions {
        samples: file.pick(a.samples, "samples", defaults.samples)?,
        seed: s.seed,
        theta_min: file.pick(a.theta_min, "theta-min", defaults.theta_min)?,
        theta_max: file.pick(a.theta_max, "theta-max", defaults.theta_max)?,
        mac: s.eval_config()?.mac.kind,
        reps: s.reps,
        task_grain: s.grain,
        ..defaults
    };
    if ps_range.iter().any(|&p| p == 0 || p > fmm_core::kernels::MAX_ORDER) {
        return Err(Failure::Usage(anyhow!("orders must lie in 1..={}", fmm_core::kernels::MAX_ORDER)));
    }
    let ps = particles(&mut s, a.eval.input.as_deref())?;
    let mut tree = build_tree(&ps, s.tree_options())?;
    let mut tuner = Tuner::new(&mut tree, opts)?;
    let rows = tuner.table(&targets, &ps_range)?;
    let mut buf = Vec::new();
    write_table_csv(&mut buf, &rows)?;
    emit(a.eval.output.as_deref(), &String::from_utf8(buf).map_err(anyhow::Error::from)?)?;
    for row in &rows {
        match row.best {
            Some(i) => {
                let c = row.cells[i].unwrap();
                eprintln!("target {:e}: p={} theta={:.2} time={:.4}s", row.target, c.p, c.theta, c.time);
            }
            None => eprintln!("target {:e}: unreachable", row.target),
        }
    }
    if rows.iter().any(|r| r.best.is_none()) {
        return Err(Failure::Accuracy("a target is unreachable for every order".into()));
    }
    Ok(())
}
