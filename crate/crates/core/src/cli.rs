//! Command-line front end: configuration loading, orchestration and report
//! output. Exit codes: 0 success, 1 check failure, 2 configuration error,
//! 3 numerical failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::bounds::SUPPORT_TOLERANCE;
use crate::dynamics::SimulationOptions;
use crate::error::{Error, Result};
use crate::finite_n::free_energy_mc;
use crate::config::{parse_measure, parse_model};
use crate::model::{AtomicMeasure, MixtureSpec};
use crate::optimizer::{optimize_adaptive, OptimizationResult, OptimizerOptions};
use crate::pde::Resolution;
use crate::pipeline::{crosscheck, evaluate, route_deviation, Evaluation, Tolerances};

pub const VERSION: &str = concat!("parisi-bounds ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Parser)]
#[command(name = "parisi-bounds", version, about = "Certified bounds on the free energy of mixed p-spin spin glasses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Certify a measure (or, with --k and no --measure, the optimized one).
    Eval(Common),
    /// Certify a given measure without optimizing.
    Certify(Common),
    /// Minimize the upper bound over atomic measures, refining until the gap
    /// is below --tol-gap or --k-max atoms are used.
    Optimize(Common),
    /// Compare independent routes to the same quantities.
    Crosscheck(Common),
    /// Exact-enumeration finite-size free energy.
    #[command(name = "finite-n")]
    FiniteN(Common),
}

#[derive(Debug, Clone, Args, Serialize)]
struct Common {
    /// Model JSON: {"beta": {"2": 0.5}, "h": 0.0}. Defaults to SK with β₂ = 0.5, h = 0.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Measure JSON: {"atoms": [{"q": 0.0, "w": 1.0}]}. Defaults to δ₀.
    #[arg(long)]
    measure: Option<PathBuf>,
    /// Number of atoms to start optimizing with.
    #[arg(long)]
    k: Option<usize>,
    /// Largest number of atoms the refinement loop may reach.
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long, default_value_t = 100_000)]
    paths: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    tol_gap: f64,
    /// Objective evaluations per restart.
    #[arg(long, default_value_t = 400)]
    budget: usize,
    #[arg(long, default_value_t = 4)]
    restarts: usize,
    #[arg(long, default_value = "parisi-out")]
    out: PathBuf,
    /// Caps every thread pool.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value_t = 2001)]
    nx: usize,
    #[arg(long, default_value_t = 2000)]
    nt: usize,
    /// Half-width of the space window; defaults to |h| + 6√ξ'(1) + 2.
    #[arg(long)]
    half_width: Option<f64>,
    /// Spins for finite-n.
    #[arg(long, default_value_t = 14)]
    n: usize,
    /// Disorder samples for finite-n.
    #[arg(long, default_value_t = 200)]
    samples: usize,
    /// Report whose [lower, upper] bracket finite-n is compared against.
    #[arg(long)]
    certificate: Option<PathBuf>,
    /// Allowed distance of the finite-n estimate outside the bracket.
    #[arg(long, default_value_t = 0.05)]
    envelope: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol_rpc: f64,
    #[arg(long, default_value_t = 1e-3)]
    mc_slack: f64,
    #[arg(long, default_value_t = SUPPORT_TOLERANCE)]
    tol_support: f64,
    /// Also write Φ and its derivatives on a subsampled grid to phi.csv.
    #[arg(long)]
    phi_csv: bool,
}

impl Common {
    fn resolution(&self) -> Resolution {
        Resolution { nx: self.nx, nt: self.nt, half_width: self.half_width }
    }

    fn simulation(&self) -> SimulationOptions {
        SimulationOptions { n_paths: self.paths, seed: self.seed, record_paths: 0 }
    }

    fn optimizer(&self) -> OptimizerOptions {
        OptimizerOptions {
            budget: self.budget,
            tol_gap: self.tol_gap,
            seed: self.seed,
            restarts: self.restarts,
            resolution: self.resolution(),
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn load_model(c: &Common) -> Result<MixtureSpec> {
    match &c.model {
        Some(p) => parse_model(&read(p)?).map_err(|e| prefix(e, p)),
        None => MixtureSpec::sk(0.5, 0.0),
    }
}

fn load_measure(c: &Common) -> Result<AtomicMeasure> {
    match &c.measure {
        Some(p) => parse_measure(&read(p)?).map_err(|e| prefix(e, p)),
        None => AtomicMeasure::dirac(0.0),
    }
}

fn prefix(e: Error, path: &Path) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn model_json(spec: &MixtureSpec) -> serde_json::Value {
    let beta: BTreeMap<String, f64> = spec.coefficients().iter().map(|(p, b)| (p.to_string(), *b)).collect();
    json!({ "beta": beta, "h": spec.field_h() })
}

fn header(command: &str, c: &Common, spec: &MixtureSpec) -> serde_json::Map<String, serde_json::Value> {
    let mut m = serde_json::Map::new();
    m.insert("command".into(), json!(command));
    m.insert("version".into(), json!(VERSION));
    m.insert("timestamp".into(), json!(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)));
    m.insert("config".into(), json!(c));
    m.insert("model".into(), model_json(spec));
    m
}

fn write_out(dir: &Path, name: &str, contents: &[u8]) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn write_json(dir: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_out(dir, "report.json", text.as_bytes())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn curves_csv(eval: &Evaluation) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "Ealpha2_mc", "stderr", "Ealpha2_pde"]).map_err(csv_error)?;
    let (mc, pde) = (&eval.mc_curve, &eval.pde_curve);
    for j in 0..mc.times.len() {
        w.serialize((mc.times[j], mc.values[j], mc.std_err[j], pde.values[j])).map_err(csv_error)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(";")
}

fn trace_csv(r: &OptimizationResult) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["iteration", "k", "upper", "gap", "atoms", "weights"]).map_err(csv_error)?;
    for e in &r.trace {
        let gap = e.gap.map(|g| g.to_string()).unwrap_or_default();
        w.write_record([e.iteration.to_string(), e.k.to_string(), e.upper.to_string(), gap, join(&e.atoms), join(&e.weights)])
            .map_err(csv_error)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn measure_json(mu: &AtomicMeasure) -> serde_json::Value {
    json!({ "atoms": mu.atoms() })
}

fn evaluation_fields(m: &mut serde_json::Map<String, serde_json::Value>, mu: &AtomicMeasure, eval: &Evaluation, c: &Common) {
    let cert = &eval.certificate;
    let support = crate::bounds::saddle_diagnostics(mu, &cert.g_curve, c.tol_support);
    m.insert("measure".into(), measure_json(mu));
    m.insert("upper".into(), json!(cert.upper));
    m.insert("lower".into(), json!(cert.lower));
    m.insert("lower_conservative".into(), json!(cert.lower_conservative));
    m.insert("gap".into(), json!(cert.gap));
    m.insert("gap_std_err".into(), json!(cert.gap_std_err));
    m.insert("argmin_g".into(), json!(cert.argmin_g));
    m.insert("min_g".into(), json!(cert.min_g));
    m.insert("support_distances".into(), json!(support.atoms));
    m.insert("support_pass".into(), json!(support.pass));
    m.insert("dual_lower_direct".into(), json!(cert.dual_lower_direct));
    m.insert("gamma_at_pair".into(), json!(cert.gamma_at_pair));
    m.insert("dual_payoff".into(), json!({ "estimate": eval.payoff.estimate, "std_err": eval.payoff.std_err }));
    m.insert("route_deviation".into(), json!(route_deviation(&eval.mc_curve, &eval.pde_curve)));
    m.insert(
        "martingale".into(),
        json!({
            "max_abs_alpha": eval.ensemble.max_abs_alpha,
            "max_terminal_mismatch": eval.ensemble.max_terminal_mismatch,
            "reflected_paths": eval.ensemble.reflected_paths,
        }),
    );
    m.insert("seeds".into(), json!({ "paths": c.seed, "n_paths": c.paths }));
    m.insert(
        "grid".into(),
        json!({ "half_width": eval.grid.half_width, "nx": eval.grid.nx, "nt": eval.grid.nt(), "dx": eval.grid.dx() }),
    );
    m.insert("warnings".into(), json!(eval.warnings));
}

fn write_evaluation_files(c: &Common, eval: &Evaluation) -> Result<()> {
    write_out(&c.out, "curves.csv", &curves_csv(eval)?)?;
    if c.phi_csv {
        let mut buf = Vec::new();
        let t_stride = (eval.grid.nt() / 100).max(1);
        let x_stride = (eval.grid.nx / 200).max(1);
        eval.solution.write_csv(&mut buf, t_stride, x_stride)?;
        write_out(&c.out, "phi.csv", &buf)?;
    }
    Ok(())
}

fn summary(eval: &Evaluation) {
    let cert = &eval.certificate;
    println!("upper               {:.10}", cert.upper);
    println!("lower               {:.10}", cert.lower);
    println!("lower (−3·se)       {:.10}", cert.lower_conservative);
    println!("gap                 {:.3e} ± {:.1e}", cert.gap, cert.gap_std_err);
    println!("argmin g            {:.6}", cert.argmin_g);
    println!("support condition   {}", if cert.support.pass { "pass" } else { "fail" });
    if let Some(d) = cert.dual_lower_direct {
        println!("dual lower (MC)     {:.6} ± {:.1e}", d.value, d.std_err);
    }
    if let Some(g) = cert.gamma_at_pair {
        println!("Γ(μ, ᾱ) (MC)        {:.6} ± {:.1e}", g.value, g.std_err);
    }
    for w in &eval.warnings {
        println!("warning: {w}");
    }
}

fn optimization_fields(m: &mut serde_json::Map<String, serde_json::Value>, r: &OptimizationResult) {
    m.insert(
        "optimization".into(),
        json!({
            "k": r.k,
            "best_upper": r.best_upper,
            "best_measure": measure_json(&r.best_mu),
            "gap": r.certificate.gap,
            "lower": r.certificate.lower,
            "converged": r.converged,
            "budget_used": r.budget_used,
            "ties": r.ties,
            "warnings": r.warnings,
        }),
    );
}

fn cmd_eval(c: &Common, command: &str, allow_optimize: bool) -> Result<i32> {
    let spec = load_model(c)?;
    let optimized = match (allow_optimize, c.measure.is_none(), c.k) {
        (true, true, Some(k)) => Some(optimize_adaptive(&spec, k, c.k_max.unwrap_or(k), &c.optimizer())?),
        _ => None,
    };
    let mu = match &optimized {
        Some(r) => r.best_mu.clone(),
        None => load_measure(c)?,
    };
    let eval = evaluate(&spec, &mu, c.resolution(), c.simulation())?;
    let mut report = header(command, c, &spec);
    evaluation_fields(&mut report, &mu, &eval, c);
    if let Some(r) = &optimized {
        optimization_fields(&mut report, r);
        write_out(&c.out, "trace.csv", &trace_csv(r)?)?;
    }
    write_json(&c.out, &report.into())?;
    write_evaluation_files(c, &eval)?;
    summary(&eval);
    Ok(0)
}

fn cmd_optimize(c: &Common) -> Result<i32> {
    let spec = load_model(c)?;
    let k = c.k.unwrap_or(1);
    let r = optimize_adaptive(&spec, k, c.k_max.unwrap_or(k.max(4)), &c.optimizer())?;
    let mut report = header("optimize", c, &spec);
    optimization_fields(&mut report, &r);
    let cert = &r.certificate;
    report.insert("measure".into(), measure_json(&r.best_mu));
    report.insert("upper".into(), json!(cert.upper));
    report.insert("lower".into(), json!(cert.lower));
    report.insert("lower_conservative".into(), json!(cert.lower_conservative));
    report.insert("gap".into(), json!(cert.gap));
    report.insert("argmin_g".into(), json!(cert.argmin_g));
    report.insert("support_distances".into(), json!(cert.support.atoms));
    report.insert("warnings".into(), json!(r.warnings.iter().chain(&cert.warnings).collect::<Vec<_>>()));
    report.insert("seeds".into(), json!({ "restarts": c.seed }));
    report.insert("grid".into(), json!(c.resolution()));
    write_json(&c.out, &report.into())?;
    write_out(&c.out, "trace.csv", &trace_csv(&r)?)?;
    let mut m = serde_json::to_string_pretty(&measure_json(&r.best_mu))?;
    m.push('\n');
    write_out(&c.out, "measure.json", m.as_bytes())?;
    println!("k                   {}", r.k);
    println!("upper               {:.10}", cert.upper);
    println!("lower               {:.10}", cert.lower);
    println!("gap                 {:.3e}", cert.gap);
    println!("atoms               {}", join(&r.best_mu.atoms().iter().map(|a| a.q).collect::<Vec<_>>()));
    println!("weights             {}", join(&r.best_mu.atoms().iter().map(|a| a.w).collect::<Vec<_>>()));
    println!("converged           {}", r.converged);
    println!("evaluations         {}", r.budget_used);
    for w in &r.warnings {
        println!("warning: {w}");
    }
    Ok(0)
}

fn cmd_crosscheck(c: &Common) -> Result<i32> {
    let spec = load_model(c)?;
    let mu = load_measure(c)?;
    let eval = evaluate(&spec, &mu, c.resolution(), c.simulation())?;
    let tol = Tolerances { pde_vs_rpc: c.tol_rpc, mc_slack: c.mc_slack, ..Default::default() };
    let checks = crosscheck(&spec, &mu, &eval, tol)?;
    let all = checks.iter().all(|k| k.pass);
    let mut report = header("crosscheck", c, &spec);
    evaluation_fields(&mut report, &mu, &eval, c);
    report.insert("checks".into(), json!(checks));
    report.insert("pass".into(), json!(all));
    write_json(&c.out, &report.into())?;
    write_evaluation_files(c, &eval)?;
    println!("{:<24} {:>12} {:>12}  status", "check", "measured", "tolerance");
    for k in &checks {
        println!("{:<24} {:>12.3e} {:>12.3e}  {}", k.name, k.measured, k.tolerance, if k.pass { "pass" } else { "FAIL" });
    }
    for w in &eval.warnings {
        println!("warning: {w}");
    }
    Ok(if all { 0 } else { 1 })
}

fn bracket(path: &Path) -> Result<(f64, f64)> {
    let v: serde_json::Value = serde_json::from_str(&read(path)?)?;
    let get = |key: &str| {
        v.get(key)
            .and_then(serde_json::Value::as_f64)
            .ok_or_else(|| Error::Config(format!("{}: missing numeric field \"{key}\"", path.display())))
    };
    Ok((get("lower")?, get("upper")?))
}

fn cmd_finite_n(c: &Common) -> Result<i32> {
    let spec = load_model(c)?;
    let bracket = c.certificate.as_deref().map(bracket).transpose()?;
    let est = free_energy_mc(&spec, c.n, c.samples, c.seed)?;
    let mut report = header("finite-n", c, &spec);
    report.insert("estimate".into(), json!(est.estimate));
    report.insert("std_err".into(), json!(est.std_err));
    report.insert("N".into(), json!(est.n));
    report.insert("samples".into(), json!(est.samples));
    report.insert("seed".into(), json!(est.seed));
    println!("N = {}, samples = {}: {:.6} ± {:.1e}", est.n, est.samples, est.estimate, est.std_err);
    let mut code = 0;
    if let Some((lower, upper)) = bracket {
        let inside = est.estimate >= lower - c.envelope && est.estimate <= upper + c.envelope;
        report.insert(
            "envelope".into(),
            json!({ "lower": lower, "upper": upper, "slack": c.envelope, "pass": inside }),
        );
        println!(
            "bracket [{lower:.6}, {upper:.6}] ± {}: {}",
            c.envelope,
            if inside { "inside" } else { "OUTSIDE" }
        );
        if !inside {
            code = 1;
        }
    }
    write_json(&c.out, &report.into())?;
    Ok(code)
}

fn dispatch(cli: Cli) -> Result<i32> {
    let common = match &cli.command {
        Command::Eval(c) | Command::Certify(c) | Command::Optimize(c) | Command::Crosscheck(c) | Command::FiniteN(c) => c,
    };
    if let Some(n) = common.threads {
        // A second call in the same process (tests) keeps the existing pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match &cli.command {
        Command::Eval(c) => cmd_eval(c, "eval", true),
        Command::Certify(c) => cmd_eval(c, "certify", false),
        Command::Optimize(c) => cmd_optimize(c),
        Command::Crosscheck(c) => cmd_crosscheck(c),
        Command::FiniteN(c) => cmd_finite_n(c),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
