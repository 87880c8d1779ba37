//! Browser bindings: certify a measure, scan the replica-symmetric bound,
//! and optimize a k-atomic measure. Inputs and outputs are JSON strings in
//! the same formats as the command-line tool.

use parisi_bounds::bounds::{certify_deterministic, parisi_correction};
use parisi_bounds::dynamics::{forward_density, second_moment_pde};
use parisi_bounds::optimizer::{optimize, OptimizerOptions};
use parisi_bounds::pde::{solve_backward, solve_value, GridSpec, Resolution};
use parisi_bounds::config::{parse_measure as measure, parse_model as model};
use parisi_bounds::{AtomicMeasure, Error, Result};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn respond(result: Result<Value>) -> String {
    match result {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e.to_string() }).to_string(),
    }
}

/// Evenly thins `v` to at most `n` entries, keeping both ends.
fn thin(v: &[f64], n: usize) -> Vec<f64> {
    if v.len() <= n {
        return v.to_vec();
    }
    (0..n).map(|i| v[i * (v.len() - 1) / (n - 1)]).collect()
}

fn certify_value(model_json: &str, measure_json: &str, nx: usize, nt: usize) -> Result<Value> {
    let spec = model(model_json)?;
    let mu = measure(measure_json)?;
    let grid = GridSpec::for_measure(&spec, &mu, Resolution::new(nx, nt))?;
    let sol = solve_backward(&spec, &mu, &grid)?;
    let rho = forward_density(&sol, &spec, &mu)?;
    let curve = second_moment_pde(&rho, &sol);
    let cert = parisi_bounds::bounds::certificate(&spec, &mu, &sol, &curve)?;
    let xs: Vec<f64> = (0..grid.nx).map(|i| grid.x(i)).collect();
    let keep = 400;
    Ok(json!({
        "upper": cert.upper,
        "lower": cert.lower,
        "gap": cert.gap,
        "argmin_g": cert.argmin_g,
        "support": cert.support,
        "g": { "t": thin(&cert.g_curve.times, keep), "value": thin(&cert.g_curve.values, keep) },
        "second_moment": { "t": thin(&curve.times, keep), "value": thin(&curve.values, keep) },
        "phi0": { "x": thin(&xs, keep), "phi": thin(sol.phi_slice(0), keep), "dphi": thin(sol.dphi_slice(0), keep) },
        "atoms": mu.atoms(),
        "warnings": grid.warnings(),
    }))
}

/// Solves for `μ`, pushes the density forward and returns the certificate
/// with the curves `g_μ`, `E[α_t²]` and the profile `Φ_μ(0,·)`.
#[wasm_bindgen]
pub fn certify(model_json: &str, measure_json: &str, nx: usize, nt: usize) -> String {
    respond(certify_value(model_json, measure_json, nx, nt))
}

fn rs_scan_value(model_json: &str, points: usize, nx: usize) -> Result<Value> {
    let spec = model(model_json)?;
    if points < 2 {
        return Err(Error::Config("need at least two scan points".into()));
    }
    let mut qs = Vec::with_capacity(points);
    let mut values = Vec::with_capacity(points);
    for i in 0..points {
        let q = i as f64 / (points - 1) as f64;
        let mu = AtomicMeasure::dirac(q)?;
        let grid = GridSpec::breakpoints(&spec, &mu, Resolution::new(nx, 2))?;
        qs.push(q);
        values.push(solve_value(&spec, &mu, &grid)? - 0.5 * parisi_correction(&spec, &mu));
    }
    let best = (0..points).fold(0, |b, i| if values[i] < values[b] { i } else { b });
    Ok(json!({ "q": qs, "upper": values, "best_q": qs[best], "best_upper": values[best] }))
}

/// The bound `P(δ_q)` on `points` evenly spaced `q ∈ [0,1]`.
#[wasm_bindgen]
pub fn rs_scan(model_json: &str, points: usize, nx: usize) -> String {
    respond(rs_scan_value(model_json, points, nx))
}

fn optimize_value(model_json: &str, k: usize, budget: usize, nx: usize, nt: usize) -> Result<Value> {
    let spec = model(model_json)?;
    let opts = OptimizerOptions { budget, restarts: 1, resolution: Resolution::new(nx, nt), ..Default::default() };
    let r = optimize(&spec, k, &opts)?;
    let cert = certify_deterministic(&spec, &r.best_mu, opts.resolution)?;
    Ok(json!({
        "k": r.k,
        "upper": r.best_upper,
        "gap": cert.gap,
        "lower": cert.lower,
        "atoms": r.best_mu.atoms(),
        "converged": r.converged,
        "evaluations": r.budget_used,
        "trace": r.trace.iter().map(|e| json!([e.iteration, e.upper])).collect::<Vec<_>>(),
    }))
}

/// Minimizes the bound over `k`-atomic measures from a single start.
#[wasm_bindgen]
pub fn optimize_measure(model_json: &str, k: usize, budget: usize, nx: usize, nt: usize) -> String {
    respond(optimize_value(model_json, k, budget, nx, nt))
}
