use parisi_bounds::bounds::{certificate, dual_lower_direct, parisi_correction};
use parisi_bounds::dynamics::{
    dual_payoff_mc, forward_density, second_moment_mc, second_moment_pde, simulate_paths, SimulationOptions,
};
use parisi_bounds::model::ibp_transform;
use parisi_bounds::pde::{solve_backward, solve_value, GridSpec, Resolution};
use parisi_bounds::{Atom, AtomicMeasure, MixtureSpec};
use proptest::prelude::*;

fn spec_strategy() -> impl Strategy<Value = MixtureSpec> {
    (0.0..1.0f64, 0.0..0.8f64, 0.0..0.5f64, -1.0..1.0f64).prop_map(|(b2, b3, b4, h)| {
        MixtureSpec::new([(2, b2), (3, b3), (4, b4)].into(), h).unwrap()
    })
}

fn measure_strategy(max_atoms: usize) -> impl Strategy<Value = AtomicMeasure> {
    prop::collection::vec((0.0..=1.0f64, 0.05..1.0f64), 1..=max_atoms).prop_map(|raw| {
        AtomicMeasure::normalized(raw.into_iter().map(|(q, w)| Atom { q, w }).collect()).unwrap()
    })
}

fn upper(spec: &MixtureSpec, mu: &AtomicMeasure) -> f64 {
    let grid = GridSpec::breakpoints(spec, mu, Resolution::new(1001, 2)).unwrap();
    solve_value(spec, mu, &grid).unwrap() - 0.5 * parisi_correction(spec, mu)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    /// `∫₀¹ f'(t) μ[0,t] dt = f(1) − ∫ f dμ` for smooth `f`.
    #[test]
    fn integration_by_parts(mu in measure_strategy(5), a in -2.0..2.0f64, b in 0.5..4.0f64) {
        let f = |t: f64| (a * t).sin() + t.powf(b);
        let df = |t: f64| a * (a * t).cos() + b * t.powf(b - 1.0);
        let lhs = ibp_transform(&mu, df);
        let rhs = f(1.0) - mu.atoms().iter().map(|x| x.w * f(x.q)).sum::<f64>();
        prop_assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    /// CDFs are right-continuous step functions reaching one at `t = 1`.
    #[test]
    fn cdf_is_a_distribution_function(mu in measure_strategy(6), t in 0.0..1.0f64) {
        let m = mu.cdf(t).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&m));
        prop_assert!((mu.cdf(1.0).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!(mu.cdf((t + 0.1).min(1.0)).unwrap() >= m);
        for a in mu.atoms() {
            prop_assert!(mu.cdf(a.q).unwrap() >= a.w - 1e-12);
        }
    }

    /// Averaging two CDFs on a common atom set never raises the bound by more
    /// than the average of the two bounds.
    #[test]
    fn upper_bound_is_convex_in_the_cdf(
        spec in spec_strategy(),
        atoms in prop::collection::btree_set(0u32..=100, 2..=4),
        w1 in prop::collection::vec(0.05..1.0f64, 4),
        w2 in prop::collection::vec(0.05..1.0f64, 4),
        s in 0.0..1.0f64,
    ) {
        let q: Vec<f64> = atoms.into_iter().map(|a| a as f64 / 100.0).collect();
        let make = |w: &[f64]| AtomicMeasure::normalized(q.iter().zip(w).map(|(&q, &w)| Atom { q, w }).collect()).unwrap();
        let (m1, m2) = (make(&w1), make(&w2));
        // The CDF average on shared atoms is the weight average.
        let mixed = AtomicMeasure::normalized(
            m1.atoms().iter().zip(m2.atoms()).map(|(a, b)| Atom { q: a.q, w: s * a.w + (1.0 - s) * b.w }).collect(),
        )
        .unwrap();
        let (p1, p2, pm) = (upper(&spec, &m1), upper(&spec, &m2), upper(&spec, &mixed));
        prop_assert!(pm <= s * p1 + (1.0 - s) * p2 + 1e-6, "{pm} vs {p1}, {p2} at s = {s}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    /// The certified gap is nonnegative and the Monte Carlo dual lower bound
    /// does not exceed the upper bound beyond its noise.
    #[test]
    fn weak_duality(spec in spec_strategy(), mu in measure_strategy(3), seed in 0u64..1000) {
        let grid = GridSpec::for_measure(&spec, &mu, Resolution::new(401, 400)).unwrap();
        let sol = solve_backward(&spec, &mu, &grid).unwrap();
        let ens = simulate_paths(&sol, &spec, &mu, SimulationOptions { n_paths: 2000, seed, record_paths: 0 }).unwrap();
        let rho = forward_density(&sol, &spec, &mu).unwrap();
        let cert = certificate(&spec, &mu, &sol, &second_moment_pde(&rho, &sol)).unwrap();
        prop_assert!(cert.lower <= cert.upper + 1e-9);
        prop_assert!(cert.gap >= 0.0);
        let curve = second_moment_mc(&ens);
        let direct = dual_lower_direct(dual_payoff_mc(&ens, &spec), &curve, &spec);
        let up = sol.value_at_origin() - 0.5 * parisi_correction(&spec, &mu);
        prop_assert!(direct.value <= up + 4.0 * direct.std_err + 1e-3, "{direct:?} vs {up}");
    }
}
