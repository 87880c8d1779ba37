//! Nested Gaussian-expectation recursion for `Φ_μ(0, x)` when `μ` is atomic.
//!
//! Between consecutive breakpoints of the CDF the level `m` is constant and
//!
//! ```text
//! Φ(t_j, x) = (1/m) log E exp(m Φ(t_{j+1}, x + √v Z)),   v = ξ'(t_{j+1}) − ξ'(t_j)
//! ```
//!
//! with `E Φ(t_{j+1}, x + √v Z)` when `m = 0`. Each expectation is a
//! Gauss–Hermite sum evaluated directly at the required points, so the
//! value carries no space discretization error. This is the independent
//! oracle for the lattice solver in [`crate::pde`].

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{log_cosh, AtomicMeasure, MixtureSpec};
use crate::quadrature::{gauss_hermite_normal, Rule};

/// Refuses recursions needing more leaf evaluations than this.
pub const MAX_LEAF_EVALUATIONS: f64 = 5e8;

struct Level {
    level: f64,
    std: f64,
}

fn eval(levels: &[Level], rule: &Rule, x: f64) -> f64 {
    let Some((first, rest)) = levels.split_first() else {
        return log_cosh(x);
    };
    let values = rule.nodes.iter().map(|z| eval(rest, rule, x + first.std * z));
    if first.level == 0.0 {
        values.zip(&rule.weights).map(|(v, w)| w * v).sum()
    } else {
        let m = first.level;
        let vals: Vec<f64> = values.collect();
        let top = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = vals.iter().zip(&rule.weights).map(|(v, w)| w * (m * (v - top)).exp()).sum();
        top + s.ln() / m
    }
}

/// `Φ_μ(0, x0)` by nested Gauss–Hermite quadrature of order `quad_order`.
pub fn rpc_value(spec: &MixtureSpec, mu: &AtomicMeasure, x0: f64, quad_order: usize) -> Result<f64> {
    if quad_order < 16 {
        return Err(Error::Config(format!("quadrature order must be at least 16, got {quad_order}")));
    }
    let levels: Vec<Level> = mu
        .levels()
        .into_iter()
        .map(|(a, b, m)| Level { level: m, std: (spec.xi_prime(b) - spec.xi_prime(a)).max(0.0).sqrt() })
        .filter(|l| l.std > 0.0)
        .collect();
    let leaves = (quad_order as f64).powi(levels.len() as i32);
    if leaves > MAX_LEAF_EVALUATIONS {
        return Err(Error::Resource(format!(
            "cascade recursion needs {leaves:.3e} evaluations ({} levels at order {quad_order})",
            levels.len()
        )));
    }
    let rule = gauss_hermite_normal(quad_order);
    let value = match levels.split_first() {
        None => log_cosh(x0),
        Some((first, rest)) => {
            // Parallelize the outermost expectation.
            let vals: Vec<f64> = rule
                .nodes
                .par_iter()
                .map(|z| eval(rest, &rule, x0 + first.std * z))
                .collect();
            if first.level == 0.0 {
                vals.iter().zip(&rule.weights).map(|(v, w)| w * v).sum()
            } else {
                let m = first.level;
                let top = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = vals.iter().zip(&rule.weights).map(|(v, w)| w * (m * (v - top)).exp()).sum();
                top + s.ln() / m
            }
        }
    };
    if !value.is_finite() {
        return Err(Error::Numerical("cascade quadrature produced a non-finite value".into()));
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Atom;

    #[test]
    fn trivial_model() {
        let spec = MixtureSpec::trivial(0.4).unwrap();
        let mu = AtomicMeasure::dirac(0.5).unwrap();
        assert_eq!(rpc_value(&spec, &mu, 0.4, 32).unwrap(), log_cosh(0.4));
    }

    #[test]
    fn replica_symmetric_closed_form() {
        let spec = MixtureSpec::sk(0.5, 0.0).unwrap();
        let mu = AtomicMeasure::dirac(0.0).unwrap();
        let v = rpc_value(&spec, &mu, 0.0, 64).unwrap();
        assert!((v - 0.25).abs() < 1e-12, "{v}");
        // Off-origin: Φ(0,x) = ξ'(1)/2 + log cosh x.
        let v = rpc_value(&spec, &mu, 0.8, 64).unwrap();
        assert!((v - 0.25 - log_cosh(0.8)).abs() < 1e-12);
    }

    #[test]
    fn converges_in_quadrature_order() {
        let spec = MixtureSpec::sk(1.0, 0.3).unwrap();
        let mu = AtomicMeasure::new(vec![Atom { q: 0.2, w: 0.5 }, Atom { q: 0.8, w: 0.5 }]).unwrap();
        let a = rpc_value(&spec, &mu, 0.3, 48).unwrap();
        let b = rpc_value(&spec, &mu, 0.3, 64).unwrap();
        assert!((a - b).abs() < 1e-10, "{a} {b}");
    }

    #[test]
    fn rejects_low_order() {
        let spec = MixtureSpec::sk(1.0, 0.0).unwrap();
        let mu = AtomicMeasure::dirac(0.0).unwrap();
        assert!(matches!(rpc_value(&spec, &mu, 0.0, 8), Err(Error::Config(_))));
    }
}
