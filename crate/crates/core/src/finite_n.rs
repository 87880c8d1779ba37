//! Exact enumeration of the finite-size free energy
//! `(1/N) log(2^{−N} Σ_σ e^{H_N(σ)})` for small `N`, averaged over disorder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::mean_and_se;
use crate::error::{Error, Result};
use crate::model::{log_cosh, MixtureSpec};

pub const MAX_SPINS: usize = 20;
/// Largest tensor (in entries) a single interaction degree may have.
pub const MAX_TENSOR_ENTRIES: f64 = 1e8;

/// One draw of the couplings: for every degree `p`, an `N^p` array of
/// independent Gaussians scaled by `β_p N^{−(p−1)/2}`, row-major in the
/// site indices.
#[derive(Debug, Clone)]
pub struct DisorderSample {
    pub n: usize,
    pub seed: u64,
    pub tensors: Vec<(u32, Vec<f64>)>,
    field_h: f64,
}

fn check_size(spec: &MixtureSpec, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("N must be at least 1".into()));
    }
    if n > MAX_SPINS {
        return Err(Error::Resource(format!(
            "N = {n} exceeds the enumeration limit {MAX_SPINS} (2^{n} = {:.3e} configurations)",
            2f64.powi(n as i32)
        )));
    }
    for (&p, &b) in spec.coefficients() {
        let entries = (n as f64).powi(p as i32);
        if b > 0.0 && entries > MAX_TENSOR_ENTRIES {
            return Err(Error::Resource(format!(
                "degree {p} at N = {n} needs {entries:.3e} couplings ({:.1} GB), above the limit {MAX_TENSOR_ENTRIES:e}",
                entries * 8.0 / 1e9
            )));
        }
    }
    Ok(())
}

impl DisorderSample {
    /// Draws the couplings from the stream `stream` of a generator seeded
    /// with `seed`.
    pub fn draw(spec: &MixtureSpec, n: usize, seed: u64, stream: u64) -> Result<Self> {
        check_size(spec, n)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let tensors = spec
            .coefficients()
            .iter()
            .filter(|(_, &b)| b > 0.0)
            .map(|(&p, &b)| {
                let scale = b * (n as f64).powf(-0.5 * (p as f64 - 1.0));
                let len = n.pow(p);
                let t: Vec<f64> = (0..len)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        scale * z
                    })
                    .collect();
                (p, t)
            })
            .collect();
        Ok(Self { n, seed, tensors, field_h: spec.field_h() })
    }

    /// The same couplings with site `i` renamed to `perm[i]`:
    /// `J'_{i₁…i_p} = J_{perm[i₁]…perm[i_p]}`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n;
        let tensors = self
            .tensors
            .iter()
            .map(|(p, t)| {
                let p = *p as usize;
                let out = (0..t.len())
                    .map(|flat| {
                        let (mut rest, mut src, mut stride) = (flat, 0, 1);
                        for _ in 0..p {
                            src += perm[rest % n] * stride;
                            rest /= n;
                            stride *= n;
                        }
                        t[src]
                    })
                    .collect();
                (p as u32, out)
            })
            .collect();
        Self { tensors, ..self.clone() }
    }

    /// `H′_N(σ) = Σ_p Σ J_{i₁…i_p} σ_{i₁}⋯σ_{i_p}`, computed by contracting
    /// one index at a time.
    pub fn interaction(&self, sigma: &[f64]) -> f64 {
        let n = self.n;
        let mut buf = Vec::new();
        self.tensors
            .iter()
            .map(|(_, t)| {
                buf.clear();
                buf.extend_from_slice(t);
                let mut len = t.len();
                while len > 1 {
                    len /= n;
                    for r in 0..len {
                        let row = &buf[r * n..(r + 1) * n];
                        let v: f64 = row.iter().zip(sigma).map(|(a, s)| a * s).sum();
                        buf[r] = v;
                    }
                }
                buf[0]
            })
            .sum()
    }

    /// `H_N(σ) = H′_N(σ) + h Σ σ_i`.
    pub fn energy(&self, sigma: &[f64]) -> f64 {
        self.interaction(sigma) + self.field_h * sigma.iter().sum::<f64>()
    }

    /// `(1/N) log(2^{−N} Σ_σ e^{H_N(σ)})` by enumerating all configurations.
    pub fn free_energy(&self) -> f64 {
        let n = self.n;
        let energies: Vec<f64> = (0..1u64 << n)
            .map(|bits| {
                let sigma: Vec<f64> = (0..n).map(|i| if bits >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
                self.energy(&sigma)
            })
            .collect();
        let top = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = energies.iter().map(|e| (e - top).exp()).sum();
        (top + sum.ln()) / n as f64 - std::f64::consts::LN_2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FiniteNEstimate {
    pub estimate: f64,
    pub std_err: f64,
    pub n: usize,
    pub samples: usize,
    pub seed: u64,
}

/// Disorder average of the enumerated free energy over `n_samples` draws
/// (sample `i` uses stream `i`). Without interactions the sum factorizes and
/// the closed form `log cosh h` is returned directly.
pub fn free_energy_mc(spec: &MixtureSpec, n: usize, n_samples: usize, seed: u64) -> Result<FiniteNEstimate> {
    check_size(spec, n)?;
    if n_samples == 0 {
        return Err(Error::Config("at least one disorder sample is required".into()));
    }
    if spec.is_trivial() {
        return Ok(FiniteNEstimate { estimate: log_cosh(spec.field_h()), std_err: 0.0, n, samples: n_samples, seed });
    }
    let values: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|i| DisorderSample::draw(spec, n, seed, i as u64).map(|s| s.free_energy()))
        .collect::<Result<_>>()?;
    let (estimate, std_err) = mean_and_se(values.iter().copied());
    Ok(FiniteNEstimate { estimate, std_err, n, samples: n_samples, seed })
}
