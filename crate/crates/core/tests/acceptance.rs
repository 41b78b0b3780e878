//! Acceptance criteria. Every test writes one `criterion N ...: PASS|FAIL`
//! line straight to stderr (so it shows even when output is captured) and
//! then asserts the verdict. All tolerances are the literals below.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semisplit::bounds::{c_t_raw, d_t_raw, sqrt_hbar_term, uniform_simple_raw, uniform_strang_raw, BoundReport};
use semisplit::classical::{lie_trotter_step, strang_step, PhasePoint, Scheme};
use semisplit::harness::{
    run, run_uniform_with, ExperimentConfig, ExperimentKind, Metric, RunOutput, SweepContext,
};
use semisplit::ot::{
    brute_force_oracle, brute_force_oracle_dist1, dist1_truncated, wasserstein2, DiscreteMeasure, OtConfig,
};
use semisplit::phasespace::{
    density_to_measure, husimi_direct, husimi_via_smoothing, wigner_transform, PhaseGrid,
};
use semisplit::potentials::{Potential, PotentialSpec};
use semisplit::quantum::{coherent_state, sample_toeplitz, SplitPropagator, WaveFunction};
use semisplit::sampling::InitialMeasure;

fn verdict(n: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("criterion {n} ({name}): {} | {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{}", line.trim_end());
}

fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn slope(out: &RunOutput, metric: Metric) -> Option<f64> {
    out.fits.iter().find(|f| f.metric == metric).map(|f| f.slope)
}

fn all_bounds_hold(out: &RunOutput) -> bool {
    out.records.iter().all(|r| r.bound_satisfied != Some(false))
}

fn within(x: Option<f64>, lo: f64, hi: f64) -> bool {
    x.is_some_and(|s| (lo..=hi).contains(&s))
}

#[test]
fn criterion_1_classical_lie_trotter_rate() {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::default_for(ExperimentKind::Classical, Scheme::LieTrotter);
    cfg.potential = PotentialSpec::Harmonic { omega: 1.0 };
    let out = run(&cfg).unwrap();
    let s = slope(&out, Metric::W2Classical);
    let checked = out.records.iter().filter(|r| r.bound_satisfied == Some(true)).count();
    let elapsed = start.elapsed();
    let pass = within(s, 0.85, 1.15)
        && checked == 5
        && out.summary.moment_recursion_ok == Some(true)
        && elapsed <= minutes(5);
    verdict(
        1,
        "classical Lie-Trotter rate",
        pass,
        &format!(
            "slope {s:?} in [0.85, 1.15], {checked}/5 errors <= c_T*dt, moment recursion {:?}, {elapsed:.1?} <= 5 min",
            out.summary.moment_recursion_ok
        ),
    );
}

#[test]
fn criterion_2_classical_strang_rate() {
    let start = Instant::now();
    let cfg = ExperimentConfig::default_for(ExperimentKind::Classical, Scheme::Strang);
    let out = run(&cfg).unwrap();
    let s = slope(&out, Metric::W2Classical);
    let checked = out.records.iter().filter(|r| r.bound_satisfied == Some(true)).count();
    let elapsed = start.elapsed();
    let pass = within(s, 1.8, 2.2)
        && checked == 5
        && out.summary.moment_recursion_ok == Some(true)
        && elapsed <= minutes(5);
    verdict(
        2,
        "classical Strang rate",
        pass,
        &format!("slope {s:?} in [1.8, 2.2], {checked}/5 errors <= d_T*dt^2, {elapsed:.1?} <= 5 min"),
    );
}

#[test]
fn criterion_3_quantum_fixed_hbar_orders() {
    let start = Instant::now();
    let mut slopes = Vec::new();
    let mut ok = true;
    for (scheme, lo, hi) in [(Scheme::LieTrotter, 0.9, 1.1), (Scheme::Strang, 1.9, 2.1)] {
        let mut cfg = ExperimentConfig::default_for(ExperimentKind::Quantum, scheme);
        cfg.hbar_list = vec![0.5];
        let out = run(&cfg).unwrap();
        let s = slope(&out, Metric::L2Quantum);
        let consistent = out.summary.reference_checks.iter().all(|c| c.self_consistency <= 1e-8);
        ok &= within(s, lo, hi) && all_bounds_hold(&out) && consistent && out.summary.monotone_in_dt == Some(true);
        slopes.push(s);
    }
    let elapsed = start.elapsed();
    verdict(
        3,
        "quantum fixed-hbar orders",
        ok && elapsed <= minutes(10),
        &format!(
            "hbar 0.5: Lie-Trotter slope {:?} in [0.9, 1.1], Strang slope {:?} in [1.9, 2.1], {elapsed:.1?} <= 10 min",
            slopes[0], slopes[1]
        ),
    );
}

#[test]
fn criterion_4_toeplitz_husimi_consistency() {
    let start = Instant::now();
    let (q, p) = (1.0, 0.0);
    let dirac = InitialMeasure::Dirac { q: vec![q], p: vec![p] };
    let mut worst_margin = f64::INFINITY;
    let mut detail = Vec::new();
    for hbar in [1.0, 0.1, 0.01] {
        let mut cfg = ExperimentConfig::default_for(ExperimentKind::Quantum, Scheme::Strang);
        cfg.initial = dirac.clone();
        cfg.hbar_list = vec![hbar];
        let grid = cfg.spatial_grid(hbar).unwrap();
        let psi = coherent_state(&grid, hbar, &[q], &[p]).unwrap();
        let s = hbar.sqrt();
        let h = 0.25 * s;
        let window = PhaseGrid::husimi_window(&psi, (q - 8.0 * s, q + 8.0 * s), (p - 8.0 * s, p + 8.0 * s), (h, h)).unwrap();
        let husimi = husimi_direct(&psi, &window).unwrap().coarsen(2000).unwrap();
        let measure = density_to_measure(&husimi, 1e-8).unwrap();
        let w2 = wasserstein2(&DiscreteMeasure::dirac(&[q, p]).unwrap(), &measure, &OtConfig::default())
            .unwrap()
            .distance;
        let bound = (2.0 * hbar).sqrt() + 10.0 * h;
        worst_margin = worst_margin.min(bound - w2);
        detail.push(format!("hbar {hbar}: W2 {w2:.6} <= {bound:.6}"));
    }
    let elapsed = start.elapsed();
    verdict(
        4,
        "Toeplitz-Husimi consistency",
        worst_margin >= 0.0 && elapsed <= minutes(2),
        &format!("{}, {elapsed:.1?} <= 2 min", detail.join(", ")),
    );
}

/// Both uniform sweeps run against one set of reference solutions.
fn sweep_context() -> &'static (SweepContext, Duration) {
    static CTX: OnceLock<(SweepContext, Duration)> = OnceLock::new();
    CTX.get_or_init(|| {
        let start = Instant::now();
        let cfg = ExperimentConfig::default_for(ExperimentKind::Uniform, Scheme::LieTrotter);
        let ctx = SweepContext::new(&cfg).unwrap();
        (ctx, start.elapsed())
    })
}

fn uniform_common(out: &RunOutput) -> (bool, String) {
    let s = &out.summary;
    let dist1: Vec<_> = out.records.iter().filter(|r| r.metric == Metric::Dist1Husimi).collect();
    let held = dist1.iter().filter(|r| r.bound_satisfied == Some(true)).count();
    let consistency = s.reference_checks.iter().map(|c| c.self_consistency).fold(0.0, f64::max);
    let discarded = s.max_discarded_mass.unwrap_or(f64::INFINITY);
    let stderr_ratio = s.max_stderr_to_bound.unwrap_or(f64::INFINITY);
    let pass = dist1.len() == 20
        && held == 20
        && all_bounds_hold(out)
        && consistency <= 1e-8
        && discarded <= 1e-4
        && stderr_ratio < 0.1
        && s.monotone_in_dt == Some(true);
    let detail = format!(
        "{held}/20 cells dist1 within bound, all {} bound checks hold: {}, max-over-hbar {:?}, slope {:?}, \
         reference consistency {consistency:.2e} <= 1e-8, discarded mass {discarded:.2e} <= 1e-4, \
         stderr/bound {stderr_ratio:.2e} < 0.1",
        s.bounds_checked,
        all_bounds_hold(out),
        s.max_over_hbar.iter().map(|p| format!("{:.3e}", p[1])).collect::<Vec<_>>(),
        s.max_over_hbar_slope,
    );
    (pass, detail)
}

#[test]
fn criterion_5_uniform_bound_lie_trotter() {
    let start = Instant::now();
    let (ctx, setup) = sweep_context();
    let out = run_uniform_with(ctx, Scheme::LieTrotter).unwrap();
    let elapsed = start.elapsed().max(*setup);
    let (common, detail) = uniform_common(&out);
    let decreasing = out.summary.max_over_hbar_decreasing == Some(true);
    verdict(
        5,
        "uniform-in-hbar bound, Lie-Trotter",
        common && decreasing && elapsed <= minutes(60),
        &format!("{detail}, max-over-hbar decreasing {decreasing}, {elapsed:.1?} <= 60 min"),
    );
}

#[test]
fn criterion_6_uniform_bound_strang() {
    let start = Instant::now();
    let (ctx, setup) = sweep_context();
    let out = run_uniform_with(ctx, Scheme::Strang).unwrap();
    let elapsed = start.elapsed().max(*setup);
    let (common, detail) = uniform_common(&out);
    let calibrated = out.bounds.m_prime_source.as_deref() == Some("calibrated") && out.bounds.d_uniform.is_some();
    verdict(
        6,
        "uniform-in-hbar bound, Strang",
        common && calibrated && elapsed <= minutes(60),
        &format!(
            "{detail}, M' {:?} flagged {:?}, {elapsed:.1?} <= 60 min",
            out.bounds.m_prime, out.bounds.m_prime_source
        ),
    );
}

fn jacobian_det(map: impl Fn(&PhasePoint) -> PhasePoint, z: &PhasePoint) -> f64 {
    let h = 1e-5;
    let col = |dx: f64, dxi: f64| {
        let a = map(&PhasePoint::new(vec![z.x[0] + dx], vec![z.xi[0] + dxi]));
        let b = map(&PhasePoint::new(vec![z.x[0] - dx], vec![z.xi[0] - dxi]));
        ((a.x[0] - b.x[0]) / (2.0 * h), (a.xi[0] - b.xi[0]) / (2.0 * h))
    };
    let (a, c) = col(h, 0.0);
    let (b, d) = col(0.0, h);
    a * d - b * c
}

/// States the uniform sweep produces at moderate ħ: initial members and
/// their evolutions at the coarsest and finest steps.
fn sweep_states(hbar: f64) -> Vec<WaveFunction> {
    let mut cfg = ExperimentConfig::default_for(ExperimentKind::Uniform, Scheme::Strang);
    cfg.hbar_list = vec![hbar];
    let v = cfg.build_potential().unwrap();
    let grid = cfg.spatial_grid(hbar).unwrap();
    let ens = sample_toeplitz(&cfg.initial, 64, &grid, hbar, cfg.seed).unwrap();
    let mut states = Vec::new();
    for psi in ens.members().iter().take(4) {
        states.push(psi.clone());
        for dt in [0.2, 0.0125] {
            let prop = SplitPropagator::new(&grid, hbar, &v, dt).unwrap();
            let n = (1.0 / dt + 1e-9).floor() as usize;
            for scheme in [Scheme::LieTrotter, Scheme::Strang] {
                states.push(prop.run(psi, scheme, n).unwrap());
            }
        }
    }
    states
}

fn random_measure(rng: &mut ChaCha8Rng, max_points: usize, spread: f64) -> DiscreteMeasure {
    let n = rng.gen_range(1..=max_points);
    let support: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-spread..spread)).collect();
    let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    DiscreteMeasure::normalized(2, support, weights).unwrap()
}

#[test]
fn criterion_7_invariant_suites() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pendulum = Potential::pendulum(1, 1.0).unwrap();
    let mut lines = Vec::new();
    let mut pass = true;

    // symplecticity of ten steps of either scheme
    let mut det_err: f64 = 0.0;
    for _ in 0..100 {
        let z = PhasePoint::new(vec![rng.gen_range(-3.0..3.0)], vec![rng.gen_range(-2.0..2.0)]);
        for step in [lie_trotter_step, strang_step] {
            let map = |p: &PhasePoint| (0..10).fold(p.clone(), |acc, _| step(&acc, 0.1, &pendulum));
            det_err = det_err.max((jacobian_det(map, &z) - 1.0).abs());
        }
    }
    pass &= det_err <= 1e-8;
    lines.push(format!("symplecticity |det J - 1| {det_err:.1e} <= 1e-8"));

    // unitarity over 1000 steps
    let mut cfg = ExperimentConfig::default_for(ExperimentKind::Quantum, Scheme::Strang);
    cfg.hbar_list = vec![0.1];
    let grid = cfg.spatial_grid(0.1).unwrap();
    let psi = coherent_state(&grid, 0.1, &[1.0], &[0.0]).unwrap();
    let prop = SplitPropagator::new(&grid, 0.1, &pendulum, 0.01).unwrap();
    let mut drift: f64 = 0.0;
    for scheme in [Scheme::LieTrotter, Scheme::Strang] {
        drift = drift.max((prop.run(&psi, scheme, 1000).unwrap().norm() - psi.norm()).abs());
    }
    pass &= drift <= 1e-11;
    lines.push(format!("unitarity drift {drift:.1e} <= 1e-11"));

    // Wigner and Husimi on sweep states
    let (mut wigner_mass, mut husimi_mass, mut husimi_min, mut cross, mut count) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0);
    for hbar in [1.0, 0.1, 0.01, 0.001] {
        for psi in sweep_states(hbar) {
            // the native lattice cropped to where the state lives
            let ((xa, xb), (pa, pb)) = psi.marginal_ranges(1e-14).unwrap();
            let pad = 10.0 * hbar.sqrt();
            let native = PhaseGrid::wigner_crop(&psi, (xa - pad, xb + pad), (pa - pad, pb + pad)).unwrap();
            // the transform itself rejects an imaginary residue above 1e-10
            let w = wigner_transform(&psi, &native).unwrap();
            let direct = husimi_direct(&psi, &native).unwrap();
            let smoothed = husimi_via_smoothing(&w).unwrap();
            wigner_mass = wigner_mass.max((w.mass() - 1.0).abs());
            husimi_mass = husimi_mass.max((direct.mass() - 1.0).abs());
            husimi_min = husimi_min.min(direct.values().iter().copied().fold(f64::INFINITY, f64::min));
            cross = cross.max(direct.l1_distance(&smoothed).unwrap());
            count += 1;
        }
    }
    pass &= wigner_mass <= 1e-8 && husimi_mass <= 1e-8 && husimi_min >= 0.0 && cross <= 1e-5;
    lines.push(format!(
        "{count} states: Wigner real, |mass - 1| {wigner_mass:.1e} <= 1e-8; Husimi min {husimi_min:.1e} >= 0, \
         |mass - 1| {husimi_mass:.1e} <= 1e-8; Husimi cross-validation L1 {cross:.1e} <= 1e-5"
    ));

    // metric axioms
    let ot = OtConfig::default();
    let mut axiom_err: f64 = 0.0;
    for _ in 0..50 {
        let (a, b, c) = (
            random_measure(&mut rng, 6, 2.0),
            random_measure(&mut rng, 6, 2.0),
            random_measure(&mut rng, 6, 2.0),
        );
        for f in [wasserstein2, dist1_truncated] {
            let d = |x: &DiscreteMeasure, y: &DiscreteMeasure| f(x, y, &ot).unwrap().distance;
            let (ab, ba, bc, ac) = (d(&a, &b), d(&b, &a), d(&b, &c), d(&a, &c));
            axiom_err = axiom_err.max(d(&a, &a)).max((ab - ba).abs()).max(ac - ab - bc);
        }
    }
    pass &= axiom_err <= 1e-12;
    lines.push(format!("OT axioms worst violation {axiom_err:.1e} <= 1e-12"));

    // exact solver against vertex enumeration
    let mut oracle_err: f64 = 0.0;
    for _ in 0..50 {
        let (a, b) = (random_measure(&mut rng, 4, 2.0), random_measure(&mut rng, 4, 2.0));
        oracle_err = oracle_err
            .max((wasserstein2(&a, &b, &ot).unwrap().distance - brute_force_oracle(&a, &b).unwrap()).abs())
            .max((dist1_truncated(&a, &b, &ot).unwrap().distance - brute_force_oracle_dist1(&a, &b).unwrap()).abs());
    }
    pass &= oracle_err <= 1e-9;
    lines.push(format!("LP vs oracle on 50 instances {oracle_err:.1e} <= 1e-9"));

    let mut order_violations = 0;
    for _ in 0..50 {
        let (a, b) = (random_measure(&mut rng, 30, 3.0), random_measure(&mut rng, 30, 3.0));
        let d1 = dist1_truncated(&a, &b, &ot).unwrap().distance;
        let w2 = wasserstein2(&a, &b, &ot).unwrap().distance;
        order_violations += usize::from(d1 > w2 + 1e-12);
    }
    pass &= order_violations == 0;
    lines.push(format!("dist1 <= W2 on 50 pairs, {order_violations} violations"));

    let elapsed = start.elapsed();
    lines.push(format!("{elapsed:.1?} <= 3 min"));
    verdict(7, "invariant suites", pass && elapsed <= minutes(3), &lines.join("; "));
}

struct FrozenSet {
    name: &'static str,
    lambda: f64,
    e: f64,
    m: Option<f64>,
    mv: Option<f64>,
    lip: f64,
    t: f64,
    dt: f64,
    mu0: f64,
    nu0: f64,
    abs_p: Option<f64>,
    d: usize,
    m_prime: Option<f64>,
    hbar: f64,
    c_t: f64,
    d_t: Option<f64>,
    c_uniform: Option<f64>,
    d_uniform: Option<f64>,
    env_simple: f64,
    env_strang: Option<f64>,
}

/// Values frozen by `scripts/regress_constants.py` (50-digit arithmetic).
fn frozen_sets() -> Vec<FrozenSet> {
    let abs_p_default = 0.25 * (2.0 / PI).sqrt();
    vec![
        FrozenSet {
            name: "free",
            lambda: 1.0, e: 0.0, m: Some(1.0), mv: Some(0.0), lip: 0.0, t: 1.0, dt: 0.1, mu0: 1.0, nu0: 0.0,
            abs_p: Some(0.0), d: 1, m_prime: Some(0.0), hbar: 0.01,
            c_t: 52.04301976571828398555951,
            d_t: Some(11.58200894336751239194443),
            c_uniform: Some(52.04301976571828398555951),
            d_uniform: Some(11.58200894336751239194443),
            env_simple: 5.947958342263637445628009,
            env_strang: Some(0.8594764551254841709915018),
        },
        FrozenSet {
            name: "pendulum_default",
            lambda: 1.0, e: 0.0, m: Some(1.0), mv: Some(2.0), lip: 1.0, t: 1.0, dt: 0.2, mu0: 1.125,
            nu0: 0.0625 + 3.0 * 0.0625 * 0.0625, abs_p: Some(abs_p_default), d: 1, m_prime: Some(3.5), hbar: 0.01,
            c_t: 69.29315310799062010211143,
            d_t: Some(11.98443505574704764208925),
            c_uniform: Some(69.29315310799062010211143),
            d_uniform: Some(11.98443505574704764208925),
            env_simple: 14.60228698728993306749434,
            env_strang: Some(1.223033767921690952755628),
        },
        FrozenSet {
            name: "harmonic",
            lambda: 1.0, e: 0.0, m: None, mv: None, lip: 1.0, t: 1.0, dt: 0.2, mu0: 1.125, nu0: 0.07421875,
            abs_p: None, d: 1, m_prime: None, hbar: 0.1,
            c_t: 69.29315310799062010211143,
            d_t: None,
            c_uniform: None,
            d_uniform: None,
            env_simple: 16.21027853366733857705605,
            env_strang: None,
        },
        FrozenSet {
            name: "pendulum_short",
            lambda: 2.0, e: 0.0, m: Some(4.0), mv: Some(4.0), lip: 2.0, t: 0.1, dt: 0.05, mu0: 0.0, nu0: 0.0,
            abs_p: Some(3.0), d: 1, m_prime: Some(40.0), hbar: 0.001,
            c_t: 2.629883041235933717205245,
            d_t: Some(13.33514280145681529556329),
            c_uniform: Some(64.64),
            d_uniform: Some(40.0),
            env_simple: 0.2759486030707650611576823,
            env_strang: Some(0.1777923080126104135363282),
        },
        FrozenSet {
            name: "tilted_2d",
            lambda: 1.5, e: 0.7, m: Some(3.0), mv: Some(2.5), lip: 1.5, t: 2.0, dt: 0.5, mu0: 0.3, nu0: 0.4,
            abs_p: Some(0.5), d: 2, m_prime: Some(10.0), hbar: 0.5,
            c_t: 9501619.303393358390393966,
            d_t: Some(5662.198229344024853368173),
            c_uniform: Some(9501619.303393358390393966),
            d_uniform: Some(5662.198229344024853368173),
            env_simple: 4750863.232376513581321161,
            env_strang: Some(1469.130237170392337520203),
        },
    ]
}

#[test]
fn criterion_8_constant_regression() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut mismatched = Vec::new();
    let mut check = |set: &str, what: &str, got: Option<f64>, want: Option<f64>| match (got, want) {
        (Some(g), Some(w)) => {
            let rel = (g - w).abs() / w.abs().max(f64::MIN_POSITIVE);
            worst = worst.max(rel);
            if rel > 1e-12 {
                mismatched.push(format!("{set}/{what}"));
            }
        }
        (None, None) => {}
        _ => mismatched.push(format!("{set}/{what} presence")),
    };
    for s in frozen_sets() {
        let ct = c_t_raw(s.lambda, s.e, s.t, s.dt, s.mu0);
        check(s.name, "c_T", Some(ct), Some(s.c_t));
        let dtc = s.m.map(|m| d_t_raw(s.lambda, m, s.t, s.nu0));
        check(s.name, "d_T", dtc, s.d_t);
        let cu = match (s.mv, s.abs_p) {
            (Some(mv), Some(p)) => Some(uniform_simple_raw(mv, ct, s.t, s.d, p, s.lip)),
            _ => None,
        };
        check(s.name, "C uniform", cu, s.c_uniform);
        let du = match (dtc, s.m_prime) {
            (Some(dc), Some(mp)) => Some(uniform_strang_raw(dc, mp, s.t, s.d, s.lip)),
            _ => None,
        };
        check(s.name, "D uniform", du, s.d_uniform);
        let sq = sqrt_hbar_term(s.hbar, s.lip, s.t, s.d);
        check(s.name, "simple envelope", Some(ct * s.dt + sq), Some(s.env_simple));
        check(s.name, "Strang envelope", dtc.map(|dc| dc * s.dt * s.dt + sq), s.env_strang);
    }
    // the same constants reached from a potential and an initial measure
    let gaussian = InitialMeasure::Gaussian {
        mean_q: vec![1.0],
        mean_p: vec![0.0],
        std_q: 0.25,
        std_p: 0.25,
    };
    let report = BoundReport::build(&Potential::pendulum(1, 1.0).unwrap(), &gaussian, 1.0, 0.2, Some(3.5)).unwrap();
    let frozen = &frozen_sets()[1];
    check("BoundReport", "c_T", Some(report.c_t), Some(frozen.c_t));
    check("BoundReport", "d_T", report.d_t, frozen.d_t);
    check("BoundReport", "C uniform", report.c_uniform, frozen.c_uniform);
    check("BoundReport", "D uniform", report.d_uniform, frozen.d_uniform);
    let elapsed = start.elapsed();
    verdict(
        8,
        "constant regression",
        mismatched.is_empty() && elapsed <= Duration::from_secs(1),
        &format!(
            "5 frozen sets and one BoundReport, worst relative error {worst:.1e} <= 1e-12, mismatches {mismatched:?}, \
             {elapsed:.1?} <= 1 s"
        ),
    );
}
