//! Upper bound, the certificate curve `g_μ`, the resulting lower bound and
//! gap, the direct dual lower bound, the saddle functional `Γ` and the
//! support diagnostics.

use serde::Serialize;

use crate::dynamics::{forward_density, mean_and_se, second_moment_pde, PathEnsemble, PayoffEstimate, SecondMomentCurve};
use crate::error::{Error, Result};
use crate::model::{AtomicMeasure, MixtureSpec};
use crate::pde::{solve_backward, GridSpec, ParisiSolution, Resolution};

/// Refinement factor of the `g_μ` grid relative to the solver grid.
pub const G_REFINEMENT: usize = 4;
/// Default tolerance of the support condition.
pub const SUPPORT_TOLERANCE: f64 = 1e-3;
/// Negative gaps down to this size are rounding and clamp to zero.
pub const GAP_FLOOR: f64 = -1e-9;

/// A Monte Carlo quantity with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
}

/// `∫₀¹ t ξ''(t) μ[0,t] dt`, exact: the antiderivative of `t ξ''` is `t ξ' − ξ`.
pub fn parisi_correction(spec: &MixtureSpec, mu: &AtomicMeasure) -> f64 {
    mu.levels()
        .into_iter()
        .map(|(a, b, m)| m * (spec.t_xi_second_antiderivative(b) - spec.t_xi_second_antiderivative(a)))
        .sum()
}

/// `P(μ) = Φ_μ(0,h) − ½∫₀¹ t ξ''(t) μ[0,t] dt`.
pub fn upper_bound(spec: &MixtureSpec, mu: &AtomicMeasure, sol: &ParisiSolution) -> f64 {
    sol.value_at_origin() - 0.5 * parisi_correction(spec, mu)
}

/// `g_μ(t) = ∫_t¹ ξ''(s) (E[α_s²] − s) ds` on a refined grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GMuCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Upper bound on the standard error of each value, from the
    /// per-node errors of the second-moment curve.
    pub std_err: Vec<f64>,
    pub argmin: f64,
    pub min_value: f64,
}

impl GMuCurve {
    fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.times.len();
        let i = match self.times.binary_search_by(|s| s.total_cmp(&t)) {
            Ok(i) => return (i, 0.0),
            Err(i) => i.clamp(1, n - 1) - 1,
        };
        let u = (t - self.times[i]) / (self.times[i + 1] - self.times[i]);
        (i, u.clamp(0.0, 1.0))
    }

    /// Linear interpolation of `g_μ`.
    pub fn value_at(&self, t: f64) -> f64 {
        let (i, u) = self.locate(t);
        if u == 0.0 {
            return self.values[i];
        }
        (1.0 - u) * self.values[i] + u * self.values[i + 1]
    }

    pub fn std_err_at(&self, t: f64) -> f64 {
        let (i, u) = self.locate(t);
        if u == 0.0 {
            return self.std_err[i];
        }
        (1.0 - u) * self.std_err[i] + u * self.std_err[i + 1]
    }

    /// `sup_t ∫_t¹ ξ''(s)(s − E[α_s²]) ds`, which is `−inf g_μ`.
    pub fn sup_of_negation(&self) -> f64 {
        -self.min_value
    }
}

fn interpolate(a: f64, b: f64, u: f64) -> f64 {
    a + u * (b - a)
}

/// Integrates `ξ''(s)(E[α_s²] − s)` from the right by the trapezoidal rule on
/// a grid refined [`G_REFINEMENT`] times, then locates the minimum with a
/// parabolic fit around the smallest node. Ties go to the smallest `t`.
pub fn g_curve(spec: &MixtureSpec, curve: &SecondMomentCurve) -> GMuCurve {
    let n = curve.times.len();
    let mut times = Vec::with_capacity((n - 1) * G_REFINEMENT + 1);
    let mut second = Vec::with_capacity(times.capacity());
    let mut errs = Vec::with_capacity(times.capacity());
    for j in 0..n - 1 {
        for r in 0..G_REFINEMENT {
            let u = r as f64 / G_REFINEMENT as f64;
            times.push(if r == 0 { curve.times[j] } else { interpolate(curve.times[j], curve.times[j + 1], u) });
            second.push(interpolate(curve.values[j], curve.values[j + 1], u));
            errs.push(interpolate(curve.std_err[j], curve.std_err[j + 1], u));
        }
    }
    times.push(curve.times[n - 1]);
    second.push(curve.values[n - 1]);
    errs.push(curve.std_err[n - 1]);

    let m = times.len();
    let xi2: Vec<f64> = times.iter().map(|&t| spec.xi_second(t)).collect();
    let integrand: Vec<f64> = (0..m).map(|k| xi2[k] * (second[k] - times[k])).collect();
    let mut values = vec![0.0; m];
    let mut std_err = vec![0.0; m];
    for k in (0..m - 1).rev() {
        let dt = times[k + 1] - times[k];
        values[k] = values[k + 1] + 0.5 * dt * (integrand[k] + integrand[k + 1]);
        std_err[k] = std_err[k + 1] + 0.5 * dt * (xi2[k] * errs[k] + xi2[k + 1] * errs[k + 1]);
    }

    let mut best = 0;
    for k in 1..m {
        if values[k] < values[best] {
            best = k;
        }
    }
    let (mut argmin, mut min_value) = (times[best], values[best]);
    if best > 0 && best + 1 < m {
        let (t0, t1, t2) = (times[best - 1], times[best], times[best + 1]);
        let (g0, g1, g2) = (values[best - 1], values[best], values[best + 1]);
        let d01 = (g1 - g0) / (t1 - t0);
        let d12 = (g2 - g1) / (t2 - t1);
        let curv = (d12 - d01) / (t2 - t0);
        if curv > 0.0 {
            let vertex = 0.5 * (t0 + t1) - d01 / (2.0 * curv);
            if vertex > t0 && vertex < t2 {
                let fit = g1 + d01 * (vertex - t1) + curv * (vertex - t0) * (vertex - t1);
                if fit < min_value {
                    argmin = vertex;
                    min_value = fit;
                }
            }
        }
    }
    GMuCurve { times, values, std_err, argmin, min_value }
}

/// Support condition at one atom: `delta = g_μ(q) − inf g_μ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AtomDiagnostic {
    pub q: f64,
    pub w: f64,
    pub delta: f64,
    pub pass: bool,
}

/// Per-atom support diagnostics; the measure passes when every atom does.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaddleReport {
    pub tolerance: f64,
    pub atoms: Vec<AtomDiagnostic>,
    pub pass: bool,
}

/// Checks that every atom of `mu` lies within `tol` of the minimum of `g_μ`.
pub fn saddle_diagnostics(mu: &AtomicMeasure, g: &GMuCurve, tol: f64) -> SaddleReport {
    let atoms: Vec<AtomDiagnostic> = mu
        .atoms()
        .iter()
        .map(|a| {
            let delta = g.value_at(a.q) - g.min_value;
            AtomDiagnostic { q: a.q, w: a.w, delta, pass: delta <= tol }
        })
        .collect();
    let pass = atoms.iter().all(|a| a.pass);
    SaddleReport { tolerance: tol, atoms, pass }
}

/// Upper bound, certified lower bound and their gap for one measure.
#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    pub upper: f64,
    pub lower: f64,
    /// `lower − 3·gap_std_err`.
    pub lower_conservative: f64,
    pub gap: f64,
    pub gap_std_err: f64,
    #[serde(skip)]
    pub g_curve: GMuCurve,
    pub argmin_g: f64,
    pub min_g: f64,
    pub support: SaddleReport,
    pub dual_lower_direct: Option<Estimate>,
    pub gamma_at_pair: Option<Estimate>,
    pub warnings: Vec<String>,
}

/// `upper = P(μ)`, `gap = ½ Σ w_i (g_μ(q_i) − inf g_μ)`, `lower = upper − gap`.
pub fn certificate(
    spec: &MixtureSpec,
    mu: &AtomicMeasure,
    sol: &ParisiSolution,
    curve: &SecondMomentCurve,
) -> Result<Certificate> {
    let upper = upper_bound(spec, mu, sol);
    let g = g_curve(spec, curve);
    let support = saddle_diagnostics(mu, &g, SUPPORT_TOLERANCE);
    let mut warnings = Vec::new();
    let mut gap: f64 = 0.5 * mu.atoms().iter().map(|a| a.w * (g.value_at(a.q) - g.min_value)).sum::<f64>();
    if gap < GAP_FLOOR {
        return Err(Error::Inconsistency(format!("negative certificate gap {gap:e}")));
    }
    if gap < 0.0 {
        warnings.push(format!("gap {gap:e} clamped to zero"));
        gap = 0.0;
    }
    let gap_std_err = 0.5
        * mu.atoms().iter().map(|a| a.w * (g.std_err_at(a.q) + g.std_err_at(g.argmin))).sum::<f64>();
    let lower = upper - gap;
    Ok(Certificate {
        upper,
        lower,
        lower_conservative: lower - 3.0 * gap_std_err,
        gap,
        gap_std_err,
        argmin_g: g.argmin,
        min_g: g.min_value,
        g_curve: g,
        support,
        dual_lower_direct: None,
        gamma_at_pair: None,
        warnings,
    })
}

/// `E[α₁S − φ*(α₁)] − ½ sup_t ∫_t¹ ξ''(s)(s − E[α_s²]) ds`, from the
/// ensemble's payoff and second-moment curve. The standard error adds the
/// payoff error and the curve's error bound at the maximizer.
pub fn dual_lower_direct(payoff: PayoffEstimate, curve: &SecondMomentCurve, spec: &MixtureSpec) -> Estimate {
    let g = g_curve(spec, curve);
    Estimate {
        value: payoff.estimate - 0.5 * g.sup_of_negation(),
        std_err: payoff.std_err + 0.5 * g.std_err_at(g.argmin),
    }
}

/// Monte Carlo estimate of
/// `Γ(μ, α) = E[α₁S − φ*(α₁) − ½∫₀¹ ξ''(t) μ[0,t] (t − α_t²) dt]`
/// along the ensemble. The deterministic `t` part is integrated exactly.
pub fn gamma_eval(spec: &MixtureSpec, mu: &AtomicMeasure, ens: &PathEnsemble) -> Estimate {
    let correction = parisi_correction(spec, mu);
    let per_path = ens
        .alpha_terminal
        .iter()
        .zip(&ens.s_terminal)
        .zip(&ens.alpha_sq_integral)
        .map(|((&a, &s), &q)| {
            let a = a.clamp(-1.0, 1.0);
            a * s - spec.phi_star(a) - 0.5 * correction + 0.5 * q
        });
    let (value, std_err) = mean_and_se(per_path);
    Estimate { value, std_err }
}

/// Deterministic certificate: solve, push the density forward, and certify
/// with the density-route second-moment curve.
pub fn certify_deterministic(spec: &MixtureSpec, mu: &AtomicMeasure, res: Resolution) -> Result<Certificate> {
    let grid = GridSpec::for_measure(spec, mu, res)?;
    let sol = solve_backward(spec, mu, &grid)?;
    let rho = forward_density(&sol, spec, mu)?;
    let mut cert = certificate(spec, mu, &sol, &second_moment_pde(&rho, &sol))?;
    cert.warnings.extend(grid.warnings());
    Ok(cert)
}
