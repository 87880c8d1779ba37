//! Backward solver for the Parisi equation
//!
//! ```text
//! −∂ₜΦ = (ξ''(t)/2) (∂ₓ²Φ + μ[0,t] (∂ₓΦ)²),   Φ(1, x) = log cosh x
//! ```
//!
//! On every time step the CDF `m = μ[0,t]` is constant, so the Cole–Hopf
//! substitution `u = e^{mΦ}` turns the step into a Gaussian convolution with
//! variance `ξ'(t_{j+1}) − ξ'(t_j)`. The convolution runs on a uniform lattice
//! with a discrete kernel whose variance matches the step variance exactly.
//! First and second space derivatives are carried through the same
//! convolution, so they inherit the accuracy of the values.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{log_cosh, AtomicMeasure, MixtureSpec};

/// Recommended lower bounds on resolution.
pub const MIN_RECOMMENDED_NX: usize = 401;
pub const MIN_RECOMMENDED_NT: usize = 1000;

/// Space and time resolution requested by a caller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Resolution {
    pub nx: usize,
    pub nt: usize,
    /// Overrides the default half-width `L` of the space window.
    pub half_width: Option<f64>,
}

impl Default for Resolution {
    fn default() -> Self {
        Self { nx: 2001, nt: 2000, half_width: None }
    }
}

impl Resolution {
    pub fn new(nx: usize, nt: usize) -> Self {
        Self { nx, nt, half_width: None }
    }
}

/// Symmetric space window `[-L, L]` with `nx` nodes and a time grid on
/// `[0, 1]` that contains every atom of the measure it was built for.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    pub half_width: f64,
    pub nx: usize,
    pub times: Vec<f64>,
}

/// `|h| + 6 √ξ'(1) + 2`.
pub fn default_half_width(spec: &MixtureSpec) -> f64 {
    spec.field_h().abs() + 6.0 * spec.xi_prime(1.0).max(0.0).sqrt() + 2.0
}

/// Widens `l` slightly so that `h` falls on a node of the `nx`-point
/// window, which makes the start of the dynamics exact. Leaves `l` alone
/// when that would widen it by more than 10% (tiny `|h|`).
fn snap_half_width(l: f64, nx: usize, h: f64) -> f64 {
    let n = (nx - 1) as f64;
    let a = h.abs();
    if a == 0.0 || nx < 5 {
        return l;
    }
    let i0 = (0.5 * n * (1.0 + a / l)).floor();
    let denom = 2.0 * i0 / n - 1.0;
    if denom <= 0.0 {
        return l;
    }
    let snapped = a / denom;
    if snapped < l || snapped > 1.1 * l {
        return l;
    }
    snapped
}

impl GridSpec {
    pub fn new(half_width: f64, nx: usize, times: Vec<f64>) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::Config(format!("grid half-width must be positive, got {half_width}")));
        }
        if nx < 5 {
            return Err(Error::Config(format!("nx must be at least 5, got {nx}")));
        }
        if times.len() < 2 || times[0] != 0.0 || *times.last().unwrap() != 1.0 {
            return Err(Error::Config("time grid must start at 0 and end at 1".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("time grid must be strictly increasing".into()));
        }
        Ok(Self { half_width, nx, times })
    }

    /// Uniform time grid with `res.nt` nodes, augmented with the atoms of `mu`.
    pub fn for_measure(spec: &MixtureSpec, mu: &AtomicMeasure, res: Resolution) -> Result<Self> {
        if res.nt < 2 {
            return Err(Error::Config(format!("nt must be at least 2, got {}", res.nt)));
        }
        let half_width = match res.half_width {
            Some(l) => l,
            None => snap_half_width(default_half_width(spec), res.nx, spec.field_h()),
        };
        if spec.field_h().abs() >= half_width {
            return Err(Error::Config(format!(
                "grid half-width {half_width} does not contain h = {}",
                spec.field_h()
            )));
        }
        let n = res.nt - 1;
        let mut times: Vec<f64> = (0..=n).map(|j| j as f64 / n as f64).collect();
        times.extend(mu.atoms().iter().map(|a| a.q));
        times.sort_by(f64::total_cmp);
        // Snap uniform nodes that sit within a hair of an atom onto the atom.
        let mut out: Vec<f64> = Vec::with_capacity(times.len());
        let is_atom = |t: f64| mu.atoms().iter().any(|a| a.q == t);
        for t in times {
            match out.last_mut() {
                Some(last) if t - *last < 1e-12 => {
                    if is_atom(t) {
                        *last = t;
                    }
                }
                _ => out.push(t),
            }
        }
        *out.first_mut().unwrap() = 0.0;
        *out.last_mut().unwrap() = 1.0;
        Self::new(half_width, res.nx, out)
    }

    /// Time nodes at `0`, the atoms of `mu` and `1` only. Cole–Hopf steps
    /// are exact on intervals of constant `μ[0,t]`, so this grid resolves
    /// `Φ_μ(0,·)` as well as a fine one, at a fraction of the cost; it
    /// carries no derivative information in time, though.
    pub fn breakpoints(spec: &MixtureSpec, mu: &AtomicMeasure, res: Resolution) -> Result<Self> {
        Self::for_measure(spec, mu, Resolution { nt: 2, ..res })
    }

    pub fn x_min(&self) -> f64 {
        -self.half_width
    }

    pub fn x_max(&self) -> f64 {
        self.half_width
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / (self.nx - 1) as f64
    }

    pub fn nt(&self) -> usize {
        self.times.len()
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min() + i as f64 * self.dx()
    }

    /// Every atom of `mu` must be a node of the time grid.
    pub fn check_aligned(&self, mu: &AtomicMeasure) -> Result<()> {
        for a in mu.atoms() {
            if self.times.binary_search_by(|t| t.total_cmp(&a.q)).is_err() {
                return Err(Error::Config(format!(
                    "time grid is not aligned to the atom at q = {}",
                    a.q
                )));
            }
        }
        Ok(())
    }

    /// Resolution warnings; coarse grids are allowed but flagged.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.nx < MIN_RECOMMENDED_NX {
            w.push(format!("nx = {} is below the recommended {MIN_RECOMMENDED_NX}", self.nx));
        }
        if self.nt() < MIN_RECOMMENDED_NT {
            w.push(format!("nt = {} is below the recommended {MIN_RECOMMENDED_NT}", self.nt()));
        }
        w
    }
}

/// Symmetric lattice kernel `weights[k + half]` for offsets `k ∈ [-half, half]`.
#[derive(Debug, Clone)]
pub(crate) struct Kernel {
    pub weights: Vec<f64>,
    pub half: usize,
    pub variance: f64,
}

impl Kernel {
    fn sampled(scale: f64, dx: f64, half: usize) -> Vec<f64> {
        let mut w: Vec<f64> = (0..=2 * half)
            .map(|j| {
                let y = (j as f64 - half as f64) * dx;
                (-0.5 * (y / scale).powi(2)).exp()
            })
            .collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        w
    }

    fn lattice_variance(w: &[f64], dx: f64, half: usize) -> f64 {
        w.iter()
            .enumerate()
            .map(|(j, &v)| v * ((j as f64 - half as f64) * dx).powi(2))
            .sum()
    }

    /// Kernel with mean zero and variance exactly `variance` on a lattice of
    /// spacing `dx`, truncated at eight standard deviations. `None` when the
    /// variance vanishes.
    pub fn gaussian(variance: f64, dx: f64) -> Option<Self> {
        if !(variance > 0.0) {
            return None;
        }
        let sigma = variance.sqrt();
        if sigma >= 2.0 * dx {
            let half = (8.0 * sigma / dx).ceil() as usize;
            return Some(Self { weights: Self::sampled(sigma, dx, half), half, variance });
        }
        // Below two lattice spacings the sampled Gaussian no longer has the
        // right variance; tune its scale until it does.
        let half = 16;
        let (mut lo, mut hi) = (1e-6 * dx, 2.0 * dx);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let v = Self::lattice_variance(&Self::sampled(mid, dx, half), dx, half);
            if v < variance {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 * dx {
                break;
            }
        }
        let scale = 0.5 * (lo + hi);
        let mut weights = Self::sampled(scale, dx, half);
        // Fix the residual variance mismatch through the nearest-neighbour weights.
        let resid = variance - Self::lattice_variance(&weights, dx, half);
        let delta = resid / (2.0 * dx * dx);
        if weights[half] - 2.0 * delta > 0.0 && weights[half - 1] + delta > 0.0 {
            weights[half - 1] += delta;
            weights[half + 1] += delta;
            weights[half] -= 2.0 * delta;
        }
        // Trim negligible tails.
        let mut trimmed = half;
        while trimmed > 1 && weights[half - trimmed] < 1e-300 {
            trimmed -= 1;
        }
        let weights = weights[half - trimmed..=half + trimmed].to_vec();
        Some(Self { weights, half: trimmed, variance })
    }
}

/// Per-step kernels for the grid, shared by the backward solver and the
/// forward density evolution.
pub(crate) fn step_kernels(spec: &MixtureSpec, grid: &GridSpec) -> Vec<Option<Kernel>> {
    let dx = grid.dx();
    let mut out: Vec<Option<Kernel>> = Vec::with_capacity(grid.nt() - 1);
    for w in grid.times.windows(2) {
        let v = (spec.xi_prime(w[1]) - spec.xi_prime(w[0])).max(0.0);
        let reuse = match out.last() {
            Some(Some(k)) => (k.variance - v).abs() <= 1e-14 * v,
            _ => false,
        };
        if reuse {
            let prev = out.last().unwrap().clone();
            out.push(prev);
        } else {
            out.push(Kernel::gaussian(v, dx));
        }
    }
    out
}

/// CDF level on each time step `[t_j, t_{j+1})`.
pub(crate) fn step_levels(mu: &AtomicMeasure, grid: &GridSpec) -> Vec<f64> {
    grid.times[..grid.nt() - 1].iter().map(|&t| mu.level(t)).collect()
}

/// Affine continuation of a slice beyond the window: slope ±1 for Φ,
/// `∓1` / `0` for its derivatives.
pub(crate) fn padded_phi(phi: &[f64], pad: usize, dx: f64) -> Vec<f64> {
    let n = phi.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((0..pad).map(|j| phi[0] + (pad - j) as f64 * dx));
    out.extend_from_slice(phi);
    out.extend((1..=pad).map(|j| phi[n - 1] + j as f64 * dx));
    out
}

fn padded_with(v: &[f64], pad: usize, left: f64, right: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len() + 2 * pad);
    out.extend(std::iter::repeat_n(left, pad));
    out.extend_from_slice(v);
    out.extend(std::iter::repeat_n(right, pad));
    out
}

struct Slice {
    phi: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

fn terminal_slice(grid: &GridSpec, with_derivatives: bool) -> Slice {
    let xs: Vec<f64> = (0..grid.nx).map(|i| grid.x(i)).collect();
    let phi = xs.iter().map(|&x| log_cosh(x)).collect();
    let (d1, d2) = if with_derivatives {
        (
            xs.iter().map(|&x| x.tanh()).collect(),
            xs.iter().map(|&x| 1.0 / x.cosh().powi(2)).collect(),
        )
    } else {
        (Vec::new(), Vec::new())
    };
    Slice { phi, d1, d2 }
}

/// One backward step from `t_{j+1}` to `t_j`.
fn backward_step(next: &Slice, level: f64, kernel: &Kernel, dx: f64, with_derivatives: bool) -> Slice {
    let nx = next.phi.len();
    let half = kernel.half;
    let w = &kernel.weights;
    let p = padded_phi(&next.phi, half, dx);
    if level == 0.0 {
        let conv = |src: &[f64]| -> Vec<f64> {
            (0..nx)
                .into_par_iter()
                .map(|i| w.iter().zip(&src[i..i + 2 * half + 1]).map(|(a, b)| a * b).sum())
                .collect()
        };
        let phi = conv(&p);
        if !with_derivatives {
            return Slice { phi, d1: Vec::new(), d2: Vec::new() };
        }
        let d1 = conv(&padded_with(&next.d1, half, -1.0, 1.0));
        let d2 = conv(&padded_with(&next.d2, half, 0.0, 0.0));
        return Slice { phi, d1, d2 };
    }
    let m = level;
    let shift = p.iter().copied().fold(f64::INFINITY, f64::min);
    let em1: Vec<f64> = p.iter().map(|&v| (m * (v - shift)).exp_m1()).collect();
    if !with_derivatives {
        let phi = (0..nx)
            .into_par_iter()
            .map(|i| {
                let a: f64 = w.iter().zip(&em1[i..i + 2 * half + 1]).map(|(a, b)| a * b).sum();
                shift + a.ln_1p() / m
            })
            .collect();
        return Slice { phi, d1: Vec::new(), d2: Vec::new() };
    }
    let d1p = padded_with(&next.d1, half, -1.0, 1.0);
    let d2p = padded_with(&next.d2, half, 0.0, 0.0);
    let e: Vec<f64> = em1.iter().map(|v| v + 1.0).collect();
    let ed1: Vec<f64> = e.iter().zip(&d1p).map(|(a, b)| a * b).collect();
    let ed2: Vec<f64> = e
        .iter()
        .zip(d1p.iter().zip(&d2p))
        .map(|(a, (g, c))| a * (c + m * g * g))
        .collect();
    let rows: Vec<[f64; 3]> = (0..nx)
        .into_par_iter()
        .map(|i| {
            let r = i..i + 2 * half + 1;
            let mut a = 0.0;
            let mut b = 0.0;
            let mut c = 0.0;
            for (k, &wk) in w.iter().enumerate() {
                let idx = r.start + k;
                a += wk * em1[idx];
                b += wk * ed1[idx];
                c += wk * ed2[idx];
            }
            let den = 1.0 + a;
            let g = b / den;
            [shift + a.ln_1p() / m, g, c / den - m * g * g]
        })
        .collect();
    let mut phi = Vec::with_capacity(nx);
    let mut d1 = Vec::with_capacity(nx);
    let mut d2 = Vec::with_capacity(nx);
    for [a, b, c] in rows {
        phi.push(a);
        d1.push(b);
        d2.push(c);
    }
    Slice { phi, d1, d2 }
}

fn check_finite(slice: &Slice, step: usize, t: f64) -> Result<()> {
    let bad = slice.phi.iter().chain(&slice.d1).chain(&slice.d2).any(|v| !v.is_finite());
    if bad {
        return Err(Error::Numerical(format!(
            "non-finite value in Parisi solution at time step {step} (t = {t})"
        )));
    }
    Ok(())
}

/// Four-point Lagrange interpolation of a slice at `x`.
fn lagrange4(grid: &GridSpec, values: &[f64], x: f64) -> f64 {
    let dx = grid.dx();
    let s = (x - grid.x_min()) / dx;
    let i = (s.floor() as isize).clamp(1, grid.nx as isize - 3) as usize;
    let u = s - i as f64;
    if u == 0.0 {
        return values[i];
    }
    let (f0, f1, f2, f3) = (values[i - 1], values[i], values[i + 1], values[i + 2]);
    let l0 = -u * (u - 1.0) * (u - 2.0) / 6.0;
    let l1 = (u + 1.0) * (u - 1.0) * (u - 2.0) / 2.0;
    let l2 = -(u + 1.0) * u * (u - 2.0) / 2.0;
    let l3 = (u + 1.0) * u * (u - 1.0) / 6.0;
    l0 * f0 + l1 * f1 + l2 * f2 + l3 * f3
}

/// `Φ_μ(0,h)`; exact when no step diffuses (`ξ ≡ 0`), since then
/// `Φ_μ(0,·) = log cosh`.
fn origin_value(spec: &MixtureSpec, kernels: &[Option<Kernel>], grid: &GridSpec, phi0: &[f64]) -> f64 {
    if kernels.iter().all(Option::is_none) {
        return log_cosh(spec.field_h());
    }
    lagrange4(grid, phi0, spec.field_h())
}

/// Discretized `Φ_μ` with its first two space derivatives on every node.
#[derive(Debug, Clone)]
pub struct ParisiSolution {
    grid: GridSpec,
    levels: Vec<f64>,
    phi: Vec<f64>,
    dphi: Vec<f64>,
    d2phi: Vec<f64>,
    value_at_origin: f64,
}

impl ParisiSolution {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn nt(&self) -> usize {
        self.grid.nt()
    }

    pub fn nx(&self) -> usize {
        self.grid.nx
    }

    /// `Φ_μ(0, h)`.
    pub fn value_at_origin(&self) -> f64 {
        self.value_at_origin
    }

    /// CDF level on `[t_j, t_{j+1})`.
    pub fn level(&self, j: usize) -> f64 {
        self.levels[j]
    }

    pub fn phi_slice(&self, j: usize) -> &[f64] {
        &self.phi[j * self.grid.nx..(j + 1) * self.grid.nx]
    }

    pub fn dphi_slice(&self, j: usize) -> &[f64] {
        &self.dphi[j * self.grid.nx..(j + 1) * self.grid.nx]
    }

    pub fn d2phi_slice(&self, j: usize) -> &[f64] {
        &self.d2phi[j * self.grid.nx..(j + 1) * self.grid.nx]
    }

    /// `∂ₓΦ(t_j, x)` by cubic Hermite interpolation between nodes, using
    /// `∂ₓ²Φ` as the slope. Outside the window the affine continuation applies.
    pub fn dphi_at(&self, j: usize, x: f64) -> f64 {
        let g = &self.grid;
        if x <= g.x_min() {
            return -1.0;
        }
        if x >= g.x_max() {
            return 1.0;
        }
        let dx = g.dx();
        let s = (x - g.x_min()) / dx;
        let i = (s.floor() as usize).min(g.nx - 2);
        let u = s - i as f64;
        let f = self.dphi_slice(j);
        let df = self.d2phi_slice(j);
        hermite(f[i], f[i + 1], df[i] * dx, df[i + 1] * dx, u)
    }

    /// `Φ(t_j, x)` by cubic Hermite interpolation using `∂ₓΦ` as the slope.
    pub fn phi_at(&self, j: usize, x: f64) -> f64 {
        let g = &self.grid;
        let f = self.phi_slice(j);
        if x <= g.x_min() {
            return f[0] + (g.x_min() - x);
        }
        if x >= g.x_max() {
            return f[g.nx - 1] + (x - g.x_max());
        }
        let dx = g.dx();
        let s = (x - g.x_min()) / dx;
        let i = (s.floor() as usize).min(g.nx - 2);
        let u = s - i as f64;
        let df = self.dphi_slice(j);
        hermite(f[i], f[i + 1], df[i] * dx, df[i + 1] * dx, u)
    }

    /// Writes `t, x, phi, dphi, d2phi` rows, keeping every `t_stride`-th time
    /// node and every `x_stride`-th space node.
    pub fn write_csv<W: Write>(&self, mut out: W, t_stride: usize, x_stride: usize) -> Result<()> {
        writeln!(out, "t,x,phi,dphi,d2phi")?;
        let nt = self.nt();
        let mut js: Vec<usize> = (0..nt).step_by(t_stride.max(1)).collect();
        if *js.last().unwrap() != nt - 1 {
            js.push(nt - 1);
        }
        for j in js {
            let (p, d1, d2) = (self.phi_slice(j), self.dphi_slice(j), self.d2phi_slice(j));
            for i in (0..self.nx()).step_by(x_stride.max(1)) {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    self.grid.times[j],
                    self.grid.x(i),
                    p[i],
                    d1[i],
                    d2[i]
                )?;
            }
        }
        Ok(())
    }
}

fn hermite(f0: f64, f1: f64, m0: f64, m1: f64, u: f64) -> f64 {
    let u2 = u * u;
    let u3 = u2 * u;
    (2.0 * u3 - 3.0 * u2 + 1.0) * f0
        + (u3 - 2.0 * u2 + u) * m0
        + (-2.0 * u3 + 3.0 * u2) * f1
        + (u3 - u2) * m1
}

/// Solves the Parisi equation backward from `t = 1` and keeps every slice.
pub fn solve_backward(spec: &MixtureSpec, mu: &AtomicMeasure, grid: &GridSpec) -> Result<ParisiSolution> {
    grid.check_aligned(mu)?;
    let nt = grid.nt();
    let nx = grid.nx;
    let dx = grid.dx();
    let levels = step_levels(mu, grid);
    let kernels = step_kernels(spec, grid);
    let mut phi = vec![0.0; nt * nx];
    let mut dphi = vec![0.0; nt * nx];
    let mut d2phi = vec![0.0; nt * nx];
    let mut store = |j: usize, s: &Slice| {
        phi[j * nx..(j + 1) * nx].copy_from_slice(&s.phi);
        dphi[j * nx..(j + 1) * nx].copy_from_slice(&s.d1);
        d2phi[j * nx..(j + 1) * nx].copy_from_slice(&s.d2);
    };
    let mut current = terminal_slice(grid, true);
    store(nt - 1, &current);
    for j in (0..nt - 1).rev() {
        if let Some(kernel) = &kernels[j] {
            current = backward_step(&current, levels[j], kernel, dx, true);
            check_finite(&current, j, grid.times[j])?;
        }
        store(j, &current);
    }
    let value_at_origin = origin_value(spec, &kernels, grid, &phi[..nx]);
    Ok(ParisiSolution { grid: grid.clone(), levels, phi, dphi, d2phi, value_at_origin })
}

/// `Φ_μ(0, h)` alone, without storing slices or derivatives.
pub fn solve_value(spec: &MixtureSpec, mu: &AtomicMeasure, grid: &GridSpec) -> Result<f64> {
    grid.check_aligned(mu)?;
    let levels = step_levels(mu, grid);
    let kernels = step_kernels(spec, grid);
    let dx = grid.dx();
    let mut current = terminal_slice(grid, false);
    for j in (0..grid.nt() - 1).rev() {
        if let Some(kernel) = &kernels[j] {
            current = backward_step(&current, levels[j], kernel, dx, false);
            check_finite(&current, j, grid.times[j])?;
        }
    }
    Ok(origin_value(spec, &kernels, grid, &current.phi))
}
