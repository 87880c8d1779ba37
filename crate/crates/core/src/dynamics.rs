//! The optimally controlled diffusion
//!
//! ```text
//! X_0 = h,   dX_t = ξ''(t) μ[0,t] ∂ₓΦ_μ(t, X_t) dt + √ξ''(t) dW_t
//! ```
//!
//! and the martingale `α_t = ∂ₓΦ_μ(t, X_t)`, computed two ways: Monte Carlo
//! paths and a forward evolution of the density of `X_t` on the solver
//! lattice.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{AtomicMeasure, MixtureSpec};
use crate::pde::{padded_phi, step_kernels, step_levels, GridSpec, ParisiSolution};

/// Paths per work item; fixes the reduction order independent of threads.
const BLOCK: usize = 512;

/// Monte Carlo options.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimulationOptions {
    pub n_paths: usize,
    pub seed: u64,
    /// Number of leading paths whose full trajectories are kept.
    pub record_paths: usize,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self { n_paths: 100_000, seed: 1, record_paths: 0 }
    }
}

/// A kept trajectory: `x[j] = X_{t_j}`, `alpha[j] = α_{t_j}`.
#[derive(Debug, Clone, Serialize)]
pub struct RecordedPath {
    pub x: Vec<f64>,
    pub alpha: Vec<f64>,
}

/// Per-node sums of `α − α_0` and `α² − α_0²` and their squares; the shift
/// keeps the variances accurate when the paths barely spread.
#[derive(Debug, Clone, Default)]
struct NodeSums {
    shift: f64,
    d1: Vec<f64>,
    d1sq: Vec<f64>,
    d2: Vec<f64>,
    d2sq: Vec<f64>,
}

impl NodeSums {
    fn zeros(nt: usize, shift: f64) -> Self {
        Self { shift, d1: vec![0.0; nt], d1sq: vec![0.0; nt], d2: vec![0.0; nt], d2sq: vec![0.0; nt] }
    }

    fn add(&mut self, j: usize, a: f64) {
        let d = a - self.shift;
        let e = a * a - self.shift * self.shift;
        self.d1[j] += d;
        self.d1sq[j] += d * d;
        self.d2[j] += e;
        self.d2sq[j] += e * e;
    }

    fn merge(&mut self, other: &NodeSums) {
        for j in 0..self.d1.len() {
            self.d1[j] += other.d1[j];
            self.d1sq[j] += other.d1sq[j];
            self.d2[j] += other.d2[j];
            self.d2sq[j] += other.d2sq[j];
        }
    }
}

/// Monte Carlo sample of the controlled diffusion.
///
/// Terminal values are kept for every path; per-node statistics of `α` are
/// accumulated rather than stored path by path. Full trajectories are kept
/// only for the first `record_paths` paths.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub n_paths: usize,
    pub seed: u64,
    pub times: Vec<f64>,
    /// `X_1` per path.
    pub x_terminal: Vec<f64>,
    /// `α_1` per path.
    pub alpha_terminal: Vec<f64>,
    /// `S_1 = ∫₀¹ √ξ''(t) dW_t` per path.
    pub s_terminal: Vec<f64>,
    /// `∫₀¹ ξ''(t) μ[0,t] α_t² dt` per path, by the trapezoidal rule.
    pub alpha_sq_integral: Vec<f64>,
    /// `α_0 = ∂ₓΦ(0, h)`, shared by all paths.
    pub alpha0: f64,
    pub mean_alpha: Vec<f64>,
    pub se_alpha: Vec<f64>,
    pub mean_alpha_sq: Vec<f64>,
    pub se_alpha_sq: Vec<f64>,
    pub max_abs_alpha: f64,
    /// `max |α_1 − tanh X_1|` over paths.
    pub max_terminal_mismatch: f64,
    /// Number of reflections at the window boundary, summed over paths.
    pub reflections: u64,
    /// Paths that reflected at least once.
    pub reflected_paths: usize,
    pub recorded: Vec<RecordedPath>,
}

impl PathEnsemble {
    /// Warnings about the truncation boundary.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.reflected_paths as f64 > 1e-3 * self.n_paths as f64 {
            w.push(format!(
                "{} of {} paths reflected at the window boundary",
                self.reflected_paths, self.n_paths
            ));
        }
        w
    }
}

struct BlockResult {
    sums: NodeSums,
    x1: Vec<f64>,
    a1: Vec<f64>,
    s1: Vec<f64>,
    quad: Vec<f64>,
    max_abs: f64,
    max_mismatch: f64,
    reflections: u64,
    reflected_paths: usize,
    recorded: Vec<RecordedPath>,
}

fn reflect(x: f64, lo: f64, hi: f64) -> (f64, u64) {
    let mut x = x;
    let mut n = 0;
    while x > hi || x < lo {
        x = if x > hi { 2.0 * hi - x } else { 2.0 * lo - x };
        n += 1;
    }
    (x, n)
}

/// Euler–Maruyama simulation of the controlled diffusion on the solver's time
/// grid. Path `i` draws from the ChaCha stream `i` of `seed`, so results do
/// not depend on the thread count.
pub fn simulate_paths(
    sol: &ParisiSolution,
    spec: &MixtureSpec,
    mu: &AtomicMeasure,
    opts: SimulationOptions,
) -> Result<PathEnsemble> {
    if opts.n_paths == 0 {
        return Err(Error::Config("number of paths must be at least 1".into()));
    }
    let grid = sol.grid();
    grid.check_aligned(mu)?;
    let nt = grid.nt();
    let times = grid.times.clone();
    let levels = step_levels(mu, grid);
    let variances: Vec<f64> =
        times.windows(2).map(|w| (spec.xi_prime(w[1]) - spec.xi_prime(w[0])).max(0.0)).collect();
    let xi2: Vec<f64> = times.iter().map(|&t| spec.xi_second(t)).collect();
    let h = spec.field_h();
    let (lo, hi) = (grid.x_min(), grid.x_max());
    let alpha0 = sol.dphi_at(0, h);

    let n_blocks = opts.n_paths.div_ceil(BLOCK);
    let blocks: Vec<BlockResult> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let start = b * BLOCK;
            let end = (start + BLOCK).min(opts.n_paths);
            let len = end - start;
            let mut out = BlockResult {
                sums: NodeSums::zeros(nt, alpha0),
                x1: vec![h; len],
                a1: vec![alpha0; len],
                s1: vec![0.0; len],
                quad: vec![0.0; len],
                max_abs: alpha0.abs(),
                max_mismatch: 0.0,
                reflections: 0,
                reflected_paths: 0,
                recorded: Vec::new(),
            };
            let mut rngs: Vec<ChaCha8Rng> = (start..end)
                .map(|path| {
                    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                    rng.set_stream(path as u64);
                    rng
                })
                .collect();
            let n_rec = opts.record_paths.saturating_sub(start).min(len);
            let mut recorded: Vec<RecordedPath> = (0..n_rec)
                .map(|_| RecordedPath { x: Vec::with_capacity(nt), alpha: Vec::with_capacity(nt) })
                .collect();
            let mut bounced = vec![0u64; len];
            // Time-major sweep keeps one solution slice hot in cache.
            let (x, alpha, s, quad) = (&mut out.x1, &mut out.a1, &mut out.s1, &mut out.quad);
            for j in 0..nt {
                for p in 0..len {
                    out.sums.add(j, alpha[p]);
                }
                for (p, rec) in recorded.iter_mut().enumerate() {
                    rec.x.push(x[p]);
                    rec.alpha.push(alpha[p]);
                }
                if j + 1 == nt {
                    break;
                }
                let v = variances[j];
                let sd = v.sqrt();
                let m = levels[j];
                let drift = m * v;
                let w = 0.5 * m * (times[j + 1] - times[j]);
                for p in 0..len {
                    let z: f64 = StandardNormal.sample(&mut rngs[p]);
                    let noise = sd * z;
                    let mut xn = x[p] + drift * alpha[p] + noise;
                    if xn > hi || xn < lo {
                        let (r, n) = reflect(xn, lo, hi);
                        xn = r;
                        bounced[p] += n;
                    }
                    let next = sol.dphi_at(j + 1, xn);
                    if m > 0.0 {
                        quad[p] += w * (xi2[j] * alpha[p] * alpha[p] + xi2[j + 1] * next * next);
                    }
                    x[p] = xn;
                    s[p] += noise;
                    alpha[p] = next;
                    out.max_abs = out.max_abs.max(next.abs());
                }
            }
            for p in 0..len {
                out.max_mismatch = out.max_mismatch.max((alpha[p] - x[p].tanh()).abs());
                out.reflections += bounced[p];
                if bounced[p] > 0 {
                    out.reflected_paths += 1;
                }
            }
            out.recorded = recorded;
            out
        })
        .collect();

    let mut sums = NodeSums::zeros(nt, alpha0);
    let mut ens = PathEnsemble {
        n_paths: opts.n_paths,
        seed: opts.seed,
        times,
        x_terminal: Vec::with_capacity(opts.n_paths),
        alpha_terminal: Vec::with_capacity(opts.n_paths),
        s_terminal: Vec::with_capacity(opts.n_paths),
        alpha_sq_integral: Vec::with_capacity(opts.n_paths),
        alpha0,
        mean_alpha: Vec::new(),
        se_alpha: Vec::new(),
        mean_alpha_sq: Vec::new(),
        se_alpha_sq: Vec::new(),
        max_abs_alpha: 0.0,
        max_terminal_mismatch: 0.0,
        reflections: 0,
        reflected_paths: 0,
        recorded: Vec::new(),
    };
    for b in blocks {
        sums.merge(&b.sums);
        ens.x_terminal.extend(b.x1);
        ens.alpha_terminal.extend(b.a1);
        ens.s_terminal.extend(b.s1);
        ens.alpha_sq_integral.extend(b.quad);
        ens.max_abs_alpha = ens.max_abs_alpha.max(b.max_abs);
        ens.max_terminal_mismatch = ens.max_terminal_mismatch.max(b.max_mismatch);
        ens.reflections += b.reflections;
        ens.reflected_paths += b.reflected_paths;
        ens.recorded.extend(b.recorded);
    }
    let n = opts.n_paths as f64;
    for j in 0..nt {
        let d1 = sums.d1[j] / n;
        let d2 = sums.d2[j] / n;
        ens.mean_alpha.push(alpha0 + d1);
        ens.mean_alpha_sq.push(alpha0 * alpha0 + d2);
        ens.se_alpha.push(standard_error(sums.d1sq[j] / n - d1 * d1, opts.n_paths));
        ens.se_alpha_sq.push(standard_error(sums.d2sq[j] / n - d2 * d2, opts.n_paths));
    }
    Ok(ens)
}

fn standard_error(variance: f64, n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let unbiased = variance.max(0.0) * n as f64 / (n - 1) as f64;
    (unbiased / n as f64).sqrt()
}

/// Mean and standard error of a sample.
pub(crate) fn mean_and_se(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    (mean, standard_error(var, n))
}

/// `t ↦ E[α_t²]` on the solver grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SecondMomentCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Per-node standard error; zero for the density route.
    pub std_err: Vec<f64>,
}

/// Per-node sample mean of `α²` with its standard error.
pub fn second_moment_mc(ens: &PathEnsemble) -> SecondMomentCurve {
    SecondMomentCurve {
        times: ens.times.clone(),
        values: ens.mean_alpha_sq.clone(),
        std_err: ens.se_alpha_sq.clone(),
    }
}

/// Node masses of the law of `X_{t_j}` on the solver lattice, for every time node.
#[derive(Debug, Clone)]
pub struct DensityEvolution {
    pub grid: GridSpec,
    /// `nt × nx` row-major masses; divide by `dx` for a density.
    masses: Vec<f64>,
}

impl DensityEvolution {
    pub fn masses(&self, j: usize) -> &[f64] {
        &self.masses[j * self.grid.nx..(j + 1) * self.grid.nx]
    }

    /// Density values `ρ_{t_j}(x_i)`.
    pub fn density(&self, j: usize) -> Vec<f64> {
        let dx = self.grid.dx();
        self.masses(j).iter().map(|m| m / dx).collect()
    }

    pub fn total_mass(&self, j: usize) -> f64 {
        self.masses(j).iter().sum()
    }

    /// `E f(X_{t_j})` under the lattice law.
    pub fn expect(&self, j: usize, f: impl Fn(f64) -> f64) -> f64 {
        self.masses(j).iter().enumerate().map(|(i, m)| m * f(self.grid.x(i))).sum()
    }
}

fn reflect_index(mut y: isize, n: isize) -> usize {
    let last = n - 1;
    loop {
        if y < 0 {
            y = -y;
        } else if y > last {
            y = 2 * last - y;
        } else {
            return y as usize;
        }
    }
}

/// Evolves the law of `X_t` forward on the solver lattice.
///
/// On each step the lattice transition is the Doob transform of the
/// backward Gaussian kernel: from node `x`, mass moves to `y` with weight
/// `w(y − x) u(y) / Σ_z w(z − x) u(z)`, where `u = exp(m Φ(t_{j+1}, ·))` and
/// `m` is the CDF level on the step. This is a discretization of the
/// Fokker–Planck equation with drift `ξ'' m ∂ₓΦ`. Rows sum to one, so mass
/// is conserved; targets outside the window reflect back inside.
pub fn forward_density(sol: &ParisiSolution, spec: &MixtureSpec, mu: &AtomicMeasure) -> Result<DensityEvolution> {
    let grid = sol.grid().clone();
    grid.check_aligned(mu)?;
    let nt = grid.nt();
    let nx = grid.nx;
    let dx = grid.dx();
    let kernels = step_kernels(spec, &grid);
    let levels = step_levels(mu, &grid);

    let mut masses = vec![0.0; nt * nx];
    let s = (spec.field_h() - grid.x_min()) / dx;
    let i0 = (s.floor() as usize).min(nx - 2);
    let frac = s - i0 as f64;
    masses[i0] = 1.0 - frac;
    masses[i0 + 1] += frac;

    let mut next = vec![0.0; nx];
    for j in 0..nt - 1 {
        let (done, rest) = masses.split_at_mut((j + 1) * nx);
        let cur = &done[j * nx..];
        let out = &mut rest[..nx];
        let Some(kernel) = &kernels[j] else {
            out.copy_from_slice(cur);
            continue;
        };
        let half = kernel.half;
        let w = &kernel.weights;
        next.iter_mut().for_each(|v| *v = 0.0);
        let m = levels[j];
        let tilt: Option<Vec<f64>> = (m > 0.0).then(|| {
            let p = padded_phi(sol.phi_slice(j + 1), half, dx);
            let shift = p.iter().copied().fold(f64::INFINITY, f64::min);
            p.iter().map(|&v| (m * (v - shift)).exp()).collect()
        });
        for (x, &mass) in cur.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            match &tilt {
                None => {
                    for (k, &wk) in w.iter().enumerate() {
                        let y = reflect_index(x as isize + k as isize - half as isize, nx as isize);
                        next[y] += mass * wk;
                    }
                }
                Some(u) => {
                    let den: f64 = w.iter().zip(&u[x..x + 2 * half + 1]).map(|(a, b)| a * b).sum();
                    let scale = mass / den;
                    for (k, &wk) in w.iter().enumerate() {
                        let y = reflect_index(x as isize + k as isize - half as isize, nx as isize);
                        next[y] += scale * wk * u[x + k];
                    }
                }
            }
        }
        out.copy_from_slice(&next);
        let total: f64 = out.iter().sum();
        if !total.is_finite() || (total - 1.0).abs() > 1e-6 {
            return Err(Error::Numerical(format!(
                "forward density lost mass at time step {j}: total {total}"
            )));
        }
    }
    Ok(DensityEvolution { grid, masses })
}

/// `E[α_t²] = Σ_i ρ_{t_j}(x_i) (∂ₓΦ(t_j, x_i))² dx` on every node.
pub fn second_moment_pde(rho: &DensityEvolution, sol: &ParisiSolution) -> SecondMomentCurve {
    let nt = sol.nt();
    let values = (0..nt)
        .map(|j| rho.masses(j).iter().zip(sol.dphi_slice(j)).map(|(m, d)| m * d * d).sum())
        .collect();
    SecondMomentCurve { times: sol.grid().times.clone(), values, std_err: vec![0.0; nt] }
}

/// `E[α_t]` under the lattice law, for the martingale check on the density route.
pub fn first_moment_pde(rho: &DensityEvolution, sol: &ParisiSolution) -> Vec<f64> {
    (0..sol.nt())
        .map(|j| rho.masses(j).iter().zip(sol.dphi_slice(j)).map(|(m, d)| m * d).sum())
        .collect()
}

/// Dual payoff `E[α₁ S₁ − φ*(α₁)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PayoffEstimate {
    pub estimate: f64,
    pub std_err: f64,
    /// Paths whose `|α₁|` exceeded one and was clipped before evaluating `φ*`.
    pub clipped: usize,
}

pub fn dual_payoff_mc(ens: &PathEnsemble, spec: &MixtureSpec) -> PayoffEstimate {
    let clipped = ens.alpha_terminal.iter().filter(|a| a.abs() > 1.0).count();
    let payoff = ens.alpha_terminal.iter().zip(&ens.s_terminal).map(|(&a, &s)| {
        let a = a.clamp(-1.0, 1.0);
        a * s - spec.phi_star(a)
    });
    let (estimate, std_err) = mean_and_se(payoff);
    PayoffEstimate { estimate, std_err, clipped }
}
