//! Gauss–Legendre and Gauss–Hermite rules computed by Newton iteration on
//! the three-term recurrences.

use std::f64::consts::PI;

/// Nodes and weights of a quadrature rule.
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Rule { nodes, weights }
}

fn legendre(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * z * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, dp)
}

/// Integrates `f` over `[a, b]` with an `n`-point Gauss–Legendre rule.
pub fn integrate(rule: &Rule, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    rule.nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&z, &w)| w * f(mid + half * z))
        .sum::<f64>()
        * half
}

/// Gauss–Hermite rule for expectations under the standard normal law:
/// `E f(Z) ≈ Σ weights[i] f(nodes[i])`, weights summing to one.
pub fn gauss_hermite_normal(n: usize) -> Rule {
    assert!(n >= 1);
    // Orthonormal Hermite recurrence for the weight e^{-x^2}.
    let pim4 = PI.powf(-0.25);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[n - 1],
            3 => 1.91 * z - 0.91 * nodes[n - 2],
            _ => 2.0 * z - nodes[n - 1 - (i - 2)],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let (p, d) = hermite_orthonormal(n, z, pim4);
            pp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        let (_, d) = hermite_orthonormal(n, z, pim4);
        if d != 0.0 {
            pp = d;
        }
        nodes[n - 1 - i] = z;
        nodes[i] = -z;
        let w = 2.0 / (pp * pp);
        weights[n - 1 - i] = w;
        weights[i] = w;
    }
    // Physicists' rule -> standard normal expectation.
    let scale = 2.0f64.sqrt();
    let norm = PI.sqrt();
    for (x, w) in nodes.iter_mut().zip(weights.iter_mut()) {
        *x *= scale;
        *w /= norm;
    }
    Rule { nodes, weights }
}

fn hermite_orthonormal(n: usize, z: f64, pim4: f64) -> (f64, f64) {
    let mut p1 = pim4;
    let mut p2 = 0.0;
    for j in 1..=n {
        let jf = j as f64;
        let p3 = p2;
        p2 = p1;
        p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
    }
    let pp = (2.0 * n as f64).sqrt() * p2;
    (p1, pp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials_exactly() {
        let rule = gauss_legendre(10);
        let v = integrate(&rule, 0.0, 2.0, |x| x.powi(19) - 3.0 * x.powi(4));
        let exact = 2f64.powi(20) / 20.0 - 3.0 * 2f64.powi(5) / 5.0;
        assert!((v - exact).abs() < 1e-8 * exact.abs());
        assert!((rule.weights.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn hermite_reproduces_normal_moments() {
        for n in [16, 48, 64, 100] {
            let rule = gauss_hermite_normal(n);
            let moment = |k: i32| -> f64 {
                rule.nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(x, w)| w * x.powi(k))
                    .sum()
            };
            assert!((moment(0) - 1.0).abs() < 1e-13, "n={n}");
            assert!(moment(1).abs() < 1e-13);
            assert!((moment(2) - 1.0).abs() < 1e-12);
            assert!((moment(4) - 3.0).abs() < 1e-11);
            assert!((moment(6) - 15.0).abs() < 1e-10);
        }
    }

    #[test]
    fn hermite_matches_gaussian_mgf() {
        // E e^{aZ} = e^{a^2/2}
        let rule = gauss_hermite_normal(64);
        let a: f64 = 1.3;
        let v: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(x, w)| w * (a * x).exp())
            .sum();
        assert!((v - (a * a / 2.0).exp()).abs() < 1e-12);
    }
}
