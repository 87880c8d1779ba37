//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//! Runs as a plain binary (`harness = false`).

use std::time::{Duration, Instant};

use parisi_bounds::bounds::{certify_deterministic, SUPPORT_TOLERANCE};
use parisi_bounds::cascade::rpc_value;
use parisi_bounds::dynamics::SimulationOptions;
use parisi_bounds::finite_n::free_energy_mc;
use parisi_bounds::model::log_cosh;
use parisi_bounds::optimizer::{optimize, OptimizerOptions};
use parisi_bounds::pde::{solve_backward, GridSpec, Resolution};
use parisi_bounds::pipeline::{evaluate, route_deviation, Evaluation};
use parisi_bounds::{Atom, AtomicMeasure, MixtureSpec, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn random_measure(rng: &mut ChaCha8Rng, max_atoms: usize) -> AtomicMeasure {
    let k = rng.random_range(1..=max_atoms);
    let atoms = (0..k).map(|_| Atom { q: rng.random_range(0.0..1.0), w: rng.random_range(0.1..1.0) }).collect();
    AtomicMeasure::normalized(atoms).unwrap()
}

/// A β₂/β₃/β₄ mixture rescaled so that `ξ''(1)` is uniform on `(0.2, xi2_max)`.
fn random_spec(rng: &mut ChaCha8Rng, xi2_max: f64) -> MixtureSpec {
    let raw: [(u32, f64); 3] = [(2, rng.random_range(0.1..1.0)), (3, rng.random_range(0.0..1.0)), (4, rng.random_range(0.0..0.6))];
    let target = rng.random_range(0.2..xi2_max);
    let unit = MixtureSpec::new(raw.into(), 0.0).unwrap().xi_second(1.0);
    let scale = (target / unit).sqrt();
    let h = rng.random_range(-1.0..1.0);
    MixtureSpec::new(raw.iter().map(|&(p, b)| (p, b * scale)).collect(), h).unwrap()
}

fn sims(n_paths: usize, seed: u64) -> SimulationOptions {
    SimulationOptions { n_paths, seed, record_paths: 0 }
}

fn c1() -> Result<Outcome> {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for h in [0.0, 0.3, 1.0] {
        let spec = MixtureSpec::trivial(h)?;
        let e = evaluate(&spec, &AtomicMeasure::dirac(0.0)?, Resolution::default(), sims(1000, 1))?;
        let exact = log_cosh(h);
        worst = worst.max((e.certificate.upper - exact).abs()).max((e.certificate.lower - exact).abs());
    }
    let elapsed = t.elapsed();
    outcome(worst <= 1e-10 && elapsed < Duration::from_secs(1), format!("max |bound − log cosh h| = {worst:.1e}, {elapsed:.2?}"))
}

fn c2(e: &Evaluation, elapsed: Duration) -> Result<Outcome> {
    let c = &e.certificate;
    outcome(
        (c.upper - 0.125).abs() <= 1e-4 && c.gap <= 1e-3 && elapsed < Duration::from_secs(60),
        format!("upper = {:.8}, gap = {:.2e}, {elapsed:.1?} with {} paths", c.upper, c.gap, e.ensemble.n_paths),
    )
}

fn c3() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let specs = [
        MixtureSpec::sk(0.8, 0.0)?,
        MixtureSpec::sk(0.8, 0.5)?,
        MixtureSpec::new([(2, 0.6), (3, 0.5)].into(), 0.0)?,
        MixtureSpec::new([(2, 0.6), (3, 0.5)].into(), 0.5)?,
    ];
    let (mut worst, mut times) = (0.0f64, Vec::new());
    for i in 0..20 {
        let spec = &specs[i % specs.len()];
        let mu = random_measure(&mut rng, 3);
        let t = Instant::now();
        let grid = GridSpec::for_measure(spec, &mu, Resolution::default())?;
        let pde = solve_backward(spec, &mu, &grid)?.value_at_origin();
        times.push(t.elapsed());
        worst = worst.max((pde - rpc_value(spec, &mu, spec.field_h(), 64)?).abs());
    }
    times.sort();
    let median = times[times.len() / 2];
    outcome(
        worst <= 1e-4 && median < Duration::from_secs(5),
        format!("max |PDE − cascade| = {worst:.1e} over 20 cases, median PDE solve {median:.2?}"),
    )
}

fn c4(e: &Evaluation) -> Result<Outcome> {
    let d = route_deviation(&e.mc_curve, &e.pde_curve);
    outcome(
        d.excess_over_3se <= 1e-3,
        format!("sup |Δ E[α²]| = {:.2e}, sup (|Δ| − 3·se) = {:.2e}", d.sup_abs, d.excess_over_3se),
    )
}

fn c5() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut ordered, mut agree, mut worst_z) = (0, 0, 0.0f64);
    let n = 100;
    for i in 0..n {
        let spec = random_spec(&mut rng, 4.0);
        let mu = random_measure(&mut rng, 3);
        let e = evaluate(&spec, &mu, Resolution::new(1001, 1000), sims(10_000, 100 + i))?;
        let c = &e.certificate;
        if c.lower <= c.upper + 1e-9 {
            ordered += 1;
        }
        let d = c.dual_lower_direct.unwrap();
        let dev = (d.value - c.lower).abs();
        if dev <= 3.0 * d.std_err + 1e-3 {
            agree += 1;
        }
        worst_z = worst_z.max((dev - 1e-3).max(0.0) / d.std_err);
    }
    outcome(
        ordered == n && agree == n,
        format!("lower ≤ upper in {ordered}/{n}; direct dual within 3·se + 1e-3 in {agree}/{n} (worst excess {worst_z:.2} se)"),
    )
}

fn c6(e: &Evaluation) -> Result<Outcome> {
    let ens = &e.ensemble;
    let mean_z = ens
        .mean_alpha
        .iter()
        .zip(&ens.se_alpha)
        .filter(|(_, se)| **se > 0.0)
        .map(|(m, se)| (m - ens.alpha0).abs() / se)
        .fold(0.0, f64::max);
    let constant = ens.mean_alpha.iter().zip(&ens.se_alpha).all(|(m, se)| (m - ens.alpha0).abs() <= 3.0 * se + 1e-12);
    let sq = &ens.mean_alpha_sq;
    let se = &ens.se_alpha_sq;
    let monotone = (1..sq.len()).all(|j| sq[j] >= sq[j - 1] - 3.0 * se[j].max(se[j - 1]) - 1e-12)
        && e.pde_curve.values.windows(2).all(|w| w[1] >= w[0] - 1e-12);
    let bounded = ens.max_abs_alpha <= 1.0 + 1e-6;
    let terminal = ens.max_terminal_mismatch <= 1e-6;
    outcome(
        constant && monotone && bounded && terminal,
        format!(
            "max |E α_t − α₀|/se = {mean_z:.2}; E α² nondecreasing: {monotone}; max |α| = {:.6}; max |α₁ − tanh X₁| = {:.1e}",
            ens.max_abs_alpha, ens.max_terminal_mismatch
        ),
    )
}

fn c7(e: &Evaluation) -> Result<Outcome> {
    let spec = MixtureSpec::sk(0.5, 0.0)?;
    let off = certify_deterministic(&spec, &AtomicMeasure::dirac(0.5)?, Resolution::default())?;
    let at_zero = &e.certificate.support;
    outcome(
        at_zero.pass && at_zero.tolerance == SUPPORT_TOLERANCE && !off.support.pass && off.gap > 0.0,
        format!(
            "δ₀ support {} (Δ = {:.1e}); δ₀.₅ support {} with gap {:.3e}",
            if at_zero.pass { "pass" } else { "fail" },
            at_zero.atoms[0].delta,
            if off.support.pass { "pass" } else { "fail" },
            off.gap
        ),
    )
}

fn c8() -> Result<Outcome> {
    let t = Instant::now();
    let spec = MixtureSpec::sk(1.0, 0.0)?;
    let opts = OptimizerOptions::default();
    let one = optimize(&spec, 1, &opts)?;
    let two = optimize(&spec, 2, &opts)?;
    let drop = one.best_upper - two.best_upper;
    let elapsed = t.elapsed();
    outcome(
        drop >= 1e-4 && two.certificate.gap < one.certificate.gap && elapsed < Duration::from_secs(600),
        format!(
            "upper k=1 {:.7}, k=2 {:.7} (drop {drop:.2e}); gap {:.2e} → {:.2e}; {elapsed:.1?}",
            one.best_upper, two.best_upper, one.certificate.gap, two.certificate.gap
        ),
    )
}

fn c9() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let specs = [MixtureSpec::sk(1.0, 0.0)?, MixtureSpec::new([(2, 0.6), (3, 0.5)].into(), 0.5)?];
    let (mut within, mut worst) = (0, 0.0f64);
    for i in 0..10 {
        let spec = &specs[i % 2];
        let mu = random_measure(&mut rng, 3);
        let e = evaluate(spec, &mu, Resolution::default(), sims(20_000, 900 + i as u64))?;
        let g = e.certificate.gamma_at_pair.unwrap();
        let z = (g.value - e.certificate.upper).abs() / g.std_err;
        worst = worst.max(z);
        if z <= 3.0 {
            within += 1;
        }
    }
    outcome(within == 10, format!("|Γ − upper| ≤ 3·se in {within}/10 (worst {worst:.2} se)"))
}

fn c10(e: &Evaluation) -> Result<Outcome> {
    let spec = MixtureSpec::sk(0.5, 0.0)?;
    let est = free_energy_mc(&spec, 14, 200, 1)?;
    let c = &e.certificate;
    let inside = est.estimate >= c.lower - 0.05 && est.estimate <= c.upper + 0.05;
    outcome(
        inside,
        format!("N = 14: {:.4} ± {:.1e} against [{:.4}, {:.4}] ± 0.05", est.estimate, est.std_err, c.lower, c.upper),
    )
}

fn main() {
    let t = Instant::now();
    let base = evaluate(
        &MixtureSpec::sk(0.5, 0.0).unwrap(),
        &AtomicMeasure::dirac(0.0).unwrap(),
        Resolution::default(),
        SimulationOptions::default(),
    );
    let base_time = t.elapsed();
    type Criterion<'a> = (&'a str, Box<dyn Fn() -> Result<Outcome> + 'a>);
    let need = |f: fn(&Evaluation) -> Result<Outcome>| {
        let base = &base;
        move || match base {
            Ok(e) => f(e),
            Err(err) => outcome(false, format!("base evaluation failed: {err}")),
        }
    };
    let criteria: Vec<Criterion> = vec![
        ("degenerate-model exactness", Box::new(c1)),
        (
            "RS golden value",
            Box::new(|| match &base {
                Ok(e) => c2(e, base_time),
                Err(err) => outcome(false, format!("base evaluation failed: {err}")),
            }),
        ),
        ("PDE vs cascade recursion", Box::new(c3)),
        ("MC vs forward density", Box::new(need(c4))),
        ("weak duality sweep", Box::new(c5)),
        ("martingale suite", Box::new(need(c6))),
        ("saddle diagnostics", Box::new(need(c7))),
        ("low-temperature improvement", Box::new(c8)),
        ("Γ-consistency", Box::new(c9)),
        ("finite-N envelope", Box::new(need(c10))),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run().unwrap_or_else(|err| Outcome { pass: false, detail: format!("error: {err}") });
        if !o.pass {
            failures += 1;
        }
        println!(
            "{} criterion {:>2} {name}: {} [{:.1?}]",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            start.elapsed()
        );
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
