//! End-to-end evaluation of one measure and the oracle-equivalence checks
//! that compare independent routes to the same quantity.

use serde::Serialize;

use crate::bounds::{certificate, dual_lower_direct, gamma_eval, Certificate, Estimate};
use crate::cascade::{rpc_value, MAX_LEAF_EVALUATIONS};
use crate::dynamics::{
    dual_payoff_mc, forward_density, second_moment_mc, second_moment_pde, simulate_paths, PathEnsemble, PayoffEstimate,
    SecondMomentCurve, SimulationOptions,
};
use crate::error::{Error, Result};
use crate::model::{AtomicMeasure, MixtureSpec};
use crate::pde::{solve_backward, GridSpec, ParisiSolution, Resolution};

/// Everything computed for one `(spec, μ)`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub grid: GridSpec,
    pub solution: ParisiSolution,
    pub ensemble: PathEnsemble,
    pub mc_curve: SecondMomentCurve,
    pub pde_curve: SecondMomentCurve,
    pub payoff: PayoffEstimate,
    /// Built from the density-route curve; carries the Monte Carlo dual
    /// lower bound and `Γ` at the simulated pair.
    pub certificate: Certificate,
    pub warnings: Vec<String>,
}

/// Solve, simulate, push the density forward and certify.
pub fn evaluate(spec: &MixtureSpec, mu: &AtomicMeasure, res: Resolution, sim: SimulationOptions) -> Result<Evaluation> {
    let grid = GridSpec::for_measure(spec, mu, res)?;
    let solution = solve_backward(spec, mu, &grid)?;
    let ensemble = simulate_paths(&solution, spec, mu, sim)?;
    let mc_curve = second_moment_mc(&ensemble);
    let rho = forward_density(&solution, spec, mu)?;
    let pde_curve = second_moment_pde(&rho, &solution);
    let payoff = dual_payoff_mc(&ensemble, spec);
    let mut cert = certificate(spec, mu, &solution, &pde_curve)?;
    cert.dual_lower_direct = Some(dual_lower_direct(payoff, &mc_curve, spec));
    cert.gamma_at_pair = Some(gamma_eval(spec, mu, &ensemble));
    let mut warnings = grid.warnings();
    warnings.extend(ensemble.warnings());
    warnings.extend(cert.warnings.iter().cloned());
    if payoff.clipped > 0 {
        warnings.push(format!("{} terminal controls clipped into [-1, 1]", payoff.clipped));
    }
    Ok(Evaluation { grid, solution, ensemble, mc_curve, pde_curve, payoff, certificate: cert, warnings })
}

/// Largest deviation between the two second-moment routes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RouteDeviation {
    /// `sup_t |E[α_t²]_mc − E[α_t²]_pde|`.
    pub sup_abs: f64,
    /// `sup_t (|difference| − 3·std_err_t)`.
    pub excess_over_3se: f64,
}

pub fn route_deviation(mc: &SecondMomentCurve, pde: &SecondMomentCurve) -> RouteDeviation {
    let mut out = RouteDeviation { sup_abs: 0.0, excess_over_3se: f64::NEG_INFINITY };
    for ((a, b), se) in mc.values.iter().zip(&pde.values).zip(&mc.std_err) {
        let d = (a - b).abs();
        out.sup_abs = out.sup_abs.max(d);
        out.excess_over_3se = out.excess_over_3se.max(d - 3.0 * se);
    }
    out
}

/// Largest Gauss–Hermite order the cascade recursion can afford for `mu`.
pub fn affordable_quad_order(spec: &MixtureSpec, mu: &AtomicMeasure) -> usize {
    let levels = mu
        .levels()
        .iter()
        .filter(|(a, b, _)| spec.xi_prime(*b) > spec.xi_prime(*a))
        .count() as i32;
    [64, 48, 32, 24, 16]
        .into_iter()
        .find(|&o| (o as f64).powi(levels) <= MAX_LEAF_EVALUATIONS / 10.0)
        .unwrap_or(16)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// PDE value against the cascade recursion.
    pub pde_vs_rpc: f64,
    /// Slack beyond three standard errors for the second-moment routes and
    /// the direct dual lower bound.
    pub mc_slack: f64,
    /// Rounding floor added to pure standard-error tolerances.
    pub rounding: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { pde_vs_rpc: 1e-4, mc_slack: 1e-3, rounding: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn new(name: &str, measured: f64, tolerance: f64) -> Self {
        Self { name: name.into(), measured, tolerance, pass: measured <= tolerance }
    }
}

/// The oracle-equivalence suite for one evaluation:
/// - PDE value at `(0,h)` against the cascade recursion,
/// - Monte Carlo against density-route second moments,
/// - `Γ(μ, ᾱ_μ)` against the upper bound,
/// - the direct dual lower bound against the certificate lower bound.
pub fn crosscheck(spec: &MixtureSpec, mu: &AtomicMeasure, eval: &Evaluation, tol: Tolerances) -> Result<Vec<Check>> {
    let rpc = rpc_value(spec, mu, spec.field_h(), affordable_quad_order(spec, mu))?;
    let cert = &eval.certificate;
    let dev = route_deviation(&eval.mc_curve, &eval.pde_curve);
    let (gamma, direct) = match (cert.gamma_at_pair, cert.dual_lower_direct) {
        (Some(g), Some(d)) => (g, d),
        _ => return Err(Error::Inconsistency("evaluation is missing Monte Carlo estimates".into())),
    };
    let gap_of = |e: Estimate, target: f64| (e.value - target).abs();
    Ok(vec![
        Check::new("pde_vs_rpc", (eval.solution.value_at_origin() - rpc).abs(), tol.pde_vs_rpc),
        Check::new("mc_vs_density_excess", dev.excess_over_3se.max(0.0), tol.mc_slack),
        Check::new("gamma_vs_upper", gap_of(gamma, cert.upper), 3.0 * gamma.std_err + tol.rounding),
        Check::new("dual_direct_vs_lower", gap_of(direct, cert.lower), 3.0 * direct.std_err + tol.mc_slack),
    ])
}
