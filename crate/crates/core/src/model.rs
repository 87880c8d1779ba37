//! The mixed p-spin model, the single-spin potential `log cosh(x + h)` with
//! its convex dual, and atomic order-parameter measures.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

/// Mixture coefficients `p ↦ β_p` and external field `h`.
///
/// The covariance function is `ξ(r) = Σ β_p² r^p`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    coefficients: BTreeMap<u32, f64>,
    field_h: f64,
}

impl MixtureSpec {
    pub fn new(coefficients: BTreeMap<u32, f64>, field_h: f64) -> Result<Self> {
        for (&p, &beta) in &coefficients {
            if p < 2 {
                return Err(Error::Config(format!("beta key \"{p}\": p must be at least 2")));
            }
            if !(beta.is_finite() && beta >= 0.0) {
                return Err(Error::Config(format!(
                    "beta key \"{p}\": coefficient must be finite and nonnegative, got {beta}"
                )));
            }
        }
        if !field_h.is_finite() {
            return Err(Error::Config(format!("h must be finite, got {field_h}")));
        }
        Ok(Self { coefficients, field_h })
    }

    /// Sherrington–Kirkpatrick model: `ξ(r) = β₂² r²`.
    pub fn sk(beta2: f64, field_h: f64) -> Result<Self> {
        Self::new(BTreeMap::from([(2, beta2)]), field_h)
    }

    /// The model with `ξ ≡ 0`.
    pub fn trivial(field_h: f64) -> Result<Self> {
        Self::new(BTreeMap::new(), field_h)
    }

    pub fn coefficients(&self) -> &BTreeMap<u32, f64> {
        &self.coefficients
    }

    pub fn field_h(&self) -> f64 {
        self.field_h
    }

    /// True when every coefficient vanishes.
    pub fn is_trivial(&self) -> bool {
        self.coefficients.values().all(|&b| b == 0.0)
    }

    /// Largest `p` with a nonzero coefficient.
    pub fn max_degree(&self) -> Option<u32> {
        self.coefficients
            .iter()
            .filter(|(_, &b)| b > 0.0)
            .map(|(&p, _)| p)
            .max()
    }

    /// `ξ`, `ξ'` or `ξ''` at `r`, selected by `order`.
    pub fn xi_eval(&self, r: f64, order: u32) -> f64 {
        self.coefficients
            .iter()
            .map(|(&p, &beta)| {
                let c = beta * beta;
                match order {
                    0 => c * r.powi(p as i32),
                    1 => c * p as f64 * r.powi(p as i32 - 1),
                    2 => c * (p * (p - 1)) as f64 * r.powi(p as i32 - 2),
                    _ => panic!("xi_eval supports orders 0, 1, 2; got {order}"),
                }
            })
            .sum()
    }

    pub fn xi(&self, r: f64) -> f64 {
        self.xi_eval(r, 0)
    }

    pub fn xi_prime(&self, r: f64) -> f64 {
        self.xi_eval(r, 1)
    }

    pub fn xi_second(&self, r: f64) -> f64 {
        self.xi_eval(r, 2)
    }

    /// `ζ(t) = √ξ''(t)`.
    pub fn zeta(&self, t: f64) -> f64 {
        self.xi_second(t).max(0.0).sqrt()
    }

    /// Antiderivative of `t ξ''(t)`, that is `t ξ'(t) − ξ(t)`.
    pub fn t_xi_second_antiderivative(&self, t: f64) -> f64 {
        t * self.xi_prime(t) - self.xi(t)
    }

    /// `φ(x) = log cosh(x + h)` for `order = 0`, `φ'(x) = tanh(x + h)` for `order = 1`.
    pub fn phi_eval(&self, x: f64, order: u32) -> f64 {
        match order {
            0 => log_cosh(x + self.field_h),
            1 => (x + self.field_h).tanh(),
            _ => panic!("phi_eval supports orders 0, 1; got {order}"),
        }
    }

    /// Convex dual `φ*(λ) = sup_x (λx − φ(x))`; `+∞` outside `[-1, 1]`.
    pub fn phi_star(&self, lambda: f64) -> f64 {
        if lambda.is_nan() {
            return f64::NAN;
        }
        if lambda.abs() > 1.0 {
            return f64::INFINITY;
        }
        0.5 * (xlogx(1.0 + lambda) + xlogx(1.0 - lambda)) - lambda * self.field_h
    }
}

/// `x log x` with `0 log 0 = 0`.
fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Overflow-safe `log cosh y`.
pub fn log_cosh(y: f64) -> f64 {
    let a = y.abs();
    a + (-2.0 * a).exp().ln_1p() - LN_2
}

/// One atom `(q, w)` of an atomic measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    pub q: f64,
    pub w: f64,
}

/// Atoms closer than this are merged on construction.
pub const ATOM_MERGE_DISTANCE: f64 = 1e-9;

/// A probability measure on `[0, 1]` with finitely many atoms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomicMeasure {
    atoms: Vec<Atom>,
}

impl AtomicMeasure {
    /// Sorts, merges atoms closer than [`ATOM_MERGE_DISTANCE`] and validates.
    pub fn new(mut atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Config("measure must have at least one atom".into()));
        }
        for a in &atoms {
            if !(a.q.is_finite() && (0.0..=1.0).contains(&a.q)) {
                return Err(Error::Config(format!("atom location q={} outside [0, 1]", a.q)));
            }
            if !(a.w.is_finite() && a.w > 0.0 && a.w <= 1.0) {
                return Err(Error::Config(format!("atom weight w={} outside (0, 1]", a.w)));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.w).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "atom weights must sum to 1 within 1e-12, got {total}"
            )));
        }
        atoms.sort_by(|a, b| a.q.total_cmp(&b.q));
        let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
        for a in atoms {
            match merged.last_mut() {
                Some(last) if a.q - last.q < ATOM_MERGE_DISTANCE => last.w += a.w,
                _ => merged.push(a),
            }
        }
        Ok(Self { atoms: merged })
    }

    /// Builds a measure from weights that are only approximately normalized,
    /// dividing through by their sum.
    pub fn normalized(atoms: Vec<Atom>) -> Result<Self> {
        let total: f64 = atoms.iter().map(|a| a.w).sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::Config("measure weights must have a positive sum".into()));
        }
        let scaled = atoms.into_iter().map(|a| Atom { q: a.q, w: a.w / total }).collect();
        Self::new(scaled)
    }

    pub fn dirac(q: f64) -> Result<Self> {
        Self::new(vec![Atom { q, w: 1.0 }])
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// `μ[0, t]`, closed on the right.
    pub fn cdf(&self, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(format!("cdf argument t={t} outside [0, 1]")));
        }
        Ok(self.level(t))
    }

    /// `μ[0, t]` without the domain check.
    pub fn level(&self, t: f64) -> f64 {
        let mut m = 0.0;
        for a in &self.atoms {
            if a.q <= t {
                m += a.w;
            } else {
                break;
            }
        }
        if t >= 1.0 {
            1.0
        } else {
            m.min(1.0)
        }
    }

    /// Breakpoints `0 = τ_0 < … < τ_n = 1` and the constant value of the CDF on
    /// each `[τ_j, τ_{j+1})`.
    pub fn levels(&self) -> Vec<(f64, f64, f64)> {
        let mut cuts = vec![0.0];
        for a in &self.atoms {
            if a.q > 0.0 && a.q < 1.0 {
                cuts.push(a.q);
            }
        }
        cuts.push(1.0);
        cuts.windows(2).map(|w| (w[0], w[1], self.level(w[0]))).collect()
    }
}

/// `∫₀¹ f(s) μ[0, s] ds`, integrated piecewise between atoms where the CDF
/// is constant.
pub fn ibp_transform(mu: &AtomicMeasure, f: impl Fn(f64) -> f64) -> f64 {
    let rule = quadrature::gauss_legendre(24);
    mu.levels()
        .into_iter()
        .filter(|&(_, _, m)| m > 0.0)
        .map(|(a, b, m)| m * quadrature::integrate(&rule, a, b, &f))
        .sum()
}
