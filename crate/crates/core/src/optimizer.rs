//! Minimization of the upper bound over k-atomic measures.
//!
//! Measures are parametrized without constraints: atom increments are a
//! softmax over `k` free logits plus one pinned at zero (so the atoms are
//! strictly increasing inside `(0,1)`), and weights are a softmax over `k`
//! logits with the last one pinned. The search is Nelder–Mead with
//! multi-start; each objective call is one breakpoint-grid PDE solve.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{certify_deterministic, parisi_correction, Certificate};
use crate::error::{Error, Result};
use crate::model::{Atom, AtomicMeasure, MixtureSpec};
use crate::pde::{solve_value, GridSpec, Resolution};

/// Largest supported number of atoms.
pub const MAX_ATOMS: usize = 8;
/// Simplex diameter (transformed coordinates) below which a search stops.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;
/// Spread of objective values across the simplex below which a search stops.
pub const VALUE_TOLERANCE: f64 = 1e-12;
/// Restart optima within this distance of the best are reported as ties.
pub const TIE_TOLERANCE: f64 = 1e-6;
/// Inserted atoms are kept at least this far from existing ones.
pub const MIN_ATOM_SEPARATION: f64 = 0.02;
/// Closest an atom may start to the ends of `[0,1]`.
const EDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimizerOptions {
    /// Objective evaluations allowed per restart.
    pub budget: usize,
    pub tol_gap: f64,
    pub seed: u64,
    pub restarts: usize,
    pub resolution: Resolution,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self { budget: 400, tol_gap: 1e-3, seed: 1, restarts: 4, resolution: Resolution::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub k: usize,
    /// Best upper bound found so far.
    pub upper: f64,
    /// Certified gap; only known where a certificate was computed.
    pub gap: Option<f64>,
    pub atoms: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestartOptimum {
    pub restart: usize,
    pub upper: f64,
    pub atoms: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizationResult {
    pub best_mu: AtomicMeasure,
    pub best_upper: f64,
    pub certificate: Certificate,
    pub k: usize,
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
    pub budget_used: usize,
    /// Every restart whose optimum is within [`TIE_TOLERANCE`] of the best.
    pub ties: Vec<RestartOptimum>,
    pub warnings: Vec<String>,
}

/// Maps unconstrained coordinates to a k-atomic measure and back.
#[derive(Debug, Clone, Copy)]
struct Param {
    k: usize,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl Param {
    fn decode(self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let k = self.k;
        let mut logits = z[..k].to_vec();
        logits.push(0.0);
        let inc = softmax(&logits);
        let mut q = 0.0;
        let atoms = inc[..k]
            .iter()
            .map(|d| {
                q += d;
                q.min(1.0)
            })
            .collect();
        let mut wl = z[k..].to_vec();
        wl.push(0.0);
        (atoms, softmax(&wl))
    }

    fn encode(self, atoms: &[f64], weights: &[f64]) -> Vec<f64> {
        let k = self.k;
        let mut prev = 0.0;
        let mut inc: Vec<f64> = atoms
            .iter()
            .map(|&q| {
                let d = q - prev;
                prev = q;
                d
            })
            .collect();
        inc.push(1.0 - prev);
        let last = inc[k];
        let mut z: Vec<f64> = inc[..k].iter().map(|d| (d / last).ln()).collect();
        z.extend(weights[..k - 1].iter().map(|w| (w / weights[k - 1]).ln()));
        z
    }
}

/// Pulls atoms into `[EDGE, 1−EDGE]` and apart by at least `EDGE`, so the
/// parametrization can represent the start point.
fn interior(atoms: &[f64]) -> Vec<f64> {
    let k = atoms.len();
    let mut out: Vec<f64> = atoms.to_vec();
    for i in 0..k {
        let lo = if i == 0 { EDGE } else { out[i - 1] + EDGE };
        let hi = 1.0 - EDGE * (k - i) as f64;
        out[i] = out[i].max(lo).min(hi);
    }
    out
}

fn measure(atoms: &[f64], weights: &[f64]) -> Result<AtomicMeasure> {
    AtomicMeasure::normalized(atoms.iter().zip(weights).map(|(&q, &w)| Atom { q, w }).collect())
}

/// One breakpoint-grid evaluation of `P(μ)`.
fn objective(spec: &MixtureSpec, mu: &AtomicMeasure, res: Resolution) -> Result<f64> {
    let grid = GridSpec::breakpoints(spec, mu, res)?;
    Ok(solve_value(spec, mu, &grid)? - 0.5 * parisi_correction(spec, mu))
}

struct SearchOutcome {
    z: Vec<f64>,
    value: f64,
    evaluations: usize,
    converged: bool,
    /// Best value after each iteration (and after the initial simplex).
    history: Vec<(f64, Vec<f64>)>,
}

/// Nelder–Mead with standard coefficients. Stops once the budget is spent,
/// the simplex diameter drops below [`SIMPLEX_TOLERANCE`], or the values
/// across the simplex agree to [`VALUE_TOLERANCE`].
fn nelder_mead(f: &mut dyn FnMut(&[f64]) -> Result<f64>, start: Vec<f64>, step: f64, budget: usize) -> Result<SearchOutcome> {
    let n = start.len();
    let mut evaluations = 0;
    let mut eval = |z: &[f64], evaluations: &mut usize| -> Result<f64> {
        *evaluations += 1;
        f(z)
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(&start, &mut evaluations)?;
    simplex.push((start.clone(), f0));
    let mut history = Vec::new();
    for i in 0..n {
        if evaluations >= budget {
            break;
        }
        let mut z = start.clone();
        z[i] += step;
        let v = eval(&z, &mut evaluations)?;
        simplex.push((z, v));
    }
    let by_value = |a: &(Vec<f64>, f64), b: &(Vec<f64>, f64)| a.1.total_cmp(&b.1);
    simplex.sort_by(by_value);
    history.push((simplex[0].1, simplex[0].0.clone()));
    if simplex.len() < n + 1 {
        let (z, value) = simplex.swap_remove(0);
        return Ok(SearchOutcome { z, value, evaluations, converged: false, history });
    }
    let converged_now = |s: &[(Vec<f64>, f64)]| {
        let spread = s[n].1 - s[0].1;
        let diameter = s[1..]
            .iter()
            .map(|(z, _)| z.iter().zip(&s[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        spread <= VALUE_TOLERANCE || diameter < SIMPLEX_TOLERANCE
    };
    let mut converged = converged_now(&simplex);
    while !converged && evaluations < budget {
        let centroid: Vec<f64> =
            (0..n).map(|d| simplex[..n].iter().map(|(z, _)| z[d]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (c - w)).collect()
        };
        let zr = along(1.0);
        let fr = eval(&zr, &mut evaluations)?;
        if fr < simplex[0].1 {
            let ze = along(2.0);
            let fe = if evaluations < budget { eval(&ze, &mut evaluations)? } else { f64::INFINITY };
            simplex[n] = if fe < fr { (ze, fe) } else { (zr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (zr, fr);
        } else {
            let (zc, fc) = if evaluations >= budget {
                (zr.clone(), f64::INFINITY)
            } else if fr < simplex[n].1 {
                let z = along(0.5);
                let v = eval(&z, &mut evaluations)?;
                (z, v)
            } else {
                let z = along(-0.5);
                let v = eval(&z, &mut evaluations)?;
                (z, v)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (zc, fc);
            } else {
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    if evaluations >= budget {
                        break;
                    }
                    let z: Vec<f64> = best.iter().zip(&vertex.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
                    let v = eval(&z, &mut evaluations)?;
                    *vertex = (z, v);
                }
            }
        }
        simplex.sort_by(by_value);
        history.push((simplex[0].1, simplex[0].0.clone()));
        converged = converged_now(&simplex);
    }
    let (z, value) = simplex.swap_remove(0);
    Ok(SearchOutcome { z, value, evaluations, converged, history })
}

fn check_args(k: usize, opts: &OptimizerOptions) -> Result<()> {
    if k == 0 || k > MAX_ATOMS {
        return Err(Error::Config(format!("k must be in 1..={MAX_ATOMS}, got {k}")));
    }
    if opts.budget == 0 {
        return Err(Error::Config("budget must be at least 1".into()));
    }
    if opts.restarts == 0 {
        return Err(Error::Config("restarts must be at least 1".into()));
    }
    if !(opts.tol_gap >= 0.0) {
        return Err(Error::Config(format!("tol_gap must be nonnegative, got {}", opts.tol_gap)));
    }
    Ok(())
}

fn random_start(k: usize, seed: u64, restart: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    let mut atoms: Vec<f64> = (0..k).map(|_| rng.random_range(0.02..0.98)).collect();
    atoms.sort_by(f64::total_cmp);
    let weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let s: f64 = weights.iter().sum();
    (interior(&atoms), weights.into_iter().map(|w| w / s).collect())
}

/// Runs the multi-start search from the given restart-0 start point.
fn search(
    spec: &MixtureSpec,
    k: usize,
    first: (Vec<f64>, Vec<f64>),
    opts: &OptimizerOptions,
) -> Result<OptimizationResult> {
    let param = Param { k };
    let res = opts.resolution;
    let runs: Vec<Result<SearchOutcome>> = (0..opts.restarts)
        .into_par_iter()
        .map(|r| {
            let (atoms, weights) = if r == 0 { first.clone() } else { random_start(k, opts.seed, r) };
            let start = param.encode(&atoms, &weights);
            let mut f = |z: &[f64]| -> Result<f64> {
                let (a, w) = param.decode(z);
                objective(spec, &measure(&a, &w)?, res)
            };
            nelder_mead(&mut f, start, 0.5, opts.budget)
        })
        .collect();
    let runs: Vec<SearchOutcome> = runs.into_iter().collect::<Result<_>>()?;
    let budget_used = runs.iter().map(|r| r.evaluations).sum();
    // First minimum wins, so ties go to the lowest restart index.
    let best_index = (0..runs.len()).fold(0, |b, i| if runs[i].value < runs[b].value { i } else { b });
    let best = &runs[best_index];
    let ties = runs
        .iter()
        .enumerate()
        .filter(|(_, r)| r.value - best.value <= TIE_TOLERANCE)
        .map(|(restart, r)| {
            let (atoms, weights) = param.decode(&r.z);
            RestartOptimum { restart, upper: r.value, atoms, weights }
        })
        .collect();
    let (atoms, weights) = param.decode(&best.z);
    let best_mu = measure(&atoms, &weights)?;
    let certificate = certify_deterministic(spec, &best_mu, res)?;
    let mut trace: Vec<TraceEntry> = best
        .history
        .iter()
        .enumerate()
        .map(|(iteration, (upper, z))| {
            let (atoms, weights) = param.decode(z);
            TraceEntry { iteration, k, upper: *upper, gap: None, atoms, weights }
        })
        .collect();
    if let Some(last) = trace.last_mut() {
        last.gap = Some(certificate.gap);
    }
    let converged = best.converged || certificate.gap <= opts.tol_gap;
    let mut warnings = Vec::new();
    if !converged {
        warnings.push(format!(
            "budget of {} evaluations exhausted at k = {k} before convergence (gap {:.3e})",
            opts.budget, certificate.gap
        ));
    }
    Ok(OptimizationResult {
        best_upper: certificate.upper,
        best_mu,
        certificate,
        k,
        trace,
        converged,
        budget_used,
        ties,
        warnings,
    })
}

/// Minimizes `P(μ)` over k-atomic measures. Restart 0 starts from evenly
/// spaced atoms with equal weights; the others from seeded random points.
pub fn optimize(spec: &MixtureSpec, k: usize, opts: &OptimizerOptions) -> Result<OptimizationResult> {
    check_args(k, opts)?;
    let atoms: Vec<f64> = (1..=k).map(|i| i as f64 / (k + 1) as f64).collect();
    search(spec, k, (atoms, vec![1.0 / k as f64; k]), opts)
}

/// Where to put a new atom: the minimizer of `g_μ`, moved off any atom it
/// is too close to, toward whichever side has the smaller `g_μ`.
fn insertion_point(result: &OptimizationResult) -> f64 {
    let g = &result.certificate.g_curve;
    let atoms: Vec<f64> = result.best_mu.atoms().iter().map(|a| a.q).collect();
    let clear = |t: f64| atoms.iter().all(|q| (q - t).abs() >= MIN_ATOM_SEPARATION);
    let t = result.certificate.argmin_g.clamp(EDGE, 1.0 - EDGE);
    if clear(t) {
        return t;
    }
    let mut candidates: Vec<f64> = atoms
        .iter()
        .flat_map(|q| [q - 2.5 * MIN_ATOM_SEPARATION, q + 2.5 * MIN_ATOM_SEPARATION])
        .filter(|&c| c > EDGE && c < 1.0 - EDGE && clear(c))
        .collect();
    candidates.sort_by(|a, b| (a - t).abs().total_cmp(&(b - t).abs()));
    candidates.truncate(2);
    candidates
        .into_iter()
        .min_by(|a, b| g.value_at(*a).total_cmp(&g.value_at(*b)))
        .unwrap_or(t)
}

/// Adds an atom at the most violated support point and re-optimizes with
/// `k + 1` atoms. Never returns a worse upper bound than `result`.
pub fn refine(spec: &MixtureSpec, result: &OptimizationResult, opts: &OptimizerOptions) -> Result<OptimizationResult> {
    if result.certificate.gap <= opts.tol_gap {
        let mut same = result.clone();
        same.converged = true;
        return Ok(same);
    }
    let k = result.k + 1;
    check_args(k, opts)?;
    let t = insertion_point(result);
    // The new atom starts light so the start point is close to the old optimum.
    let w_new = 0.1;
    let mut pairs: Vec<(f64, f64)> = result.best_mu.atoms().iter().map(|a| (a.q, a.w * (1.0 - w_new))).collect();
    pairs.push((t, w_new));
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let atoms = interior(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let weights = pairs.iter().map(|p| p.1).collect();
    let mut next = search(spec, k, (atoms, weights), opts)?;
    let offset = result.trace.last().map_or(0, |e| e.iteration + 1);
    let mut floor = result.trace.last().map_or(f64::INFINITY, |e| e.upper);
    for e in &mut next.trace {
        e.iteration += offset;
        floor = floor.min(e.upper);
        e.upper = floor;
    }
    let mut trace = result.trace.clone();
    trace.append(&mut next.trace);
    next.trace = trace;
    next.budget_used += result.budget_used;
    if next.best_upper > result.best_upper {
        let mut kept = result.clone();
        let last = result.trace.last().cloned();
        kept.trace = next.trace;
        if let Some(mut e) = last {
            e.iteration = kept.trace.last().map_or(0, |t| t.iteration + 1);
            e.upper = e.upper.min(floor);
            e.gap = Some(result.certificate.gap);
            kept.trace.push(e);
        }
        kept.budget_used = next.budget_used;
        kept.converged = next.converged;
        kept.warnings.push(format!("k = {k} search did not improve the upper bound; keeping k = {}", result.k));
        return Ok(kept);
    }
    Ok(next)
}

/// Optimizes at `k`, then refines until the gap is below `tol_gap` or
/// `k_max` atoms are used.
pub fn optimize_adaptive(spec: &MixtureSpec, k: usize, k_max: usize, opts: &OptimizerOptions) -> Result<OptimizationResult> {
    let mut result = optimize(spec, k, opts)?;
    while result.certificate.gap > opts.tol_gap && result.k < k_max.min(MAX_ATOMS) {
        let before = result.k;
        result = refine(spec, &result, opts)?;
        if result.k == before {
            break;
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parametrization_round_trips() {
        let p = Param { k: 3 };
        let (a, w) = (vec![0.1, 0.4, 0.95], vec![0.2, 0.5, 0.3]);
        let (a2, w2) = p.decode(&p.encode(&a, &w));
        for (x, y) in a.iter().zip(&a2).chain(w.iter().zip(&w2)) {
            assert!((x - y).abs() < 1e-12);
        }
        let (a, w) = p.decode(&[3.0, -40.0, 1.0, 7.0, -2.0]);
        assert!(a.windows(2).all(|p| p[0] <= p[1]) && a[2] <= 1.0 && a[0] > 0.0);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let mut f = |z: &[f64]| Ok((z[0] - 1.0).powi(2) + 3.0 * (z[1] + 0.5).powi(2) + 2.0);
        let out = nelder_mead(&mut f, vec![0.0, 0.0], 0.5, 2000).unwrap();
        assert!(out.converged);
        assert!((out.z[0] - 1.0).abs() < 1e-5 && (out.z[1] + 0.5).abs() < 1e-5);
        assert!(out.history.windows(2).all(|h| h[1].0 <= h[0].0));
    }

    #[test]
    fn trivial_model_converges_immediately() {
        let spec = MixtureSpec::trivial(0.4).unwrap();
        let opts = OptimizerOptions { restarts: 2, resolution: Resolution::new(401, 1000), ..Default::default() };
        let r = optimize(&spec, 2, &opts).unwrap();
        assert!(r.converged);
        assert!(r.budget_used <= 2 * 4);
        assert!((r.best_upper - crate::model::log_cosh(0.4)).abs() < 1e-12);
        assert_eq!(r.certificate.gap, 0.0);
        let again = refine(&spec, &r, &opts).unwrap();
        assert_eq!(again.best_upper, r.best_upper);
    }

    #[test]
    fn rejects_bad_arguments() {
        let spec = MixtureSpec::sk(0.5, 0.0).unwrap();
        assert!(optimize(&spec, 0, &OptimizerOptions::default()).is_err());
        assert!(optimize(&spec, 9, &OptimizerOptions::default()).is_err());
        assert!(optimize(&spec, 1, &OptimizerOptions { budget: 0, ..Default::default() }).is_err());
    }
}
