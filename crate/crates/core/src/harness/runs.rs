//! The three experiment pipelines.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{n_steps, ExperimentConfig, ExperimentKind};
use super::{fit_loglog, fit_rate, fit_rate_with_span, nondecreasing_in_dt, ErrorRecord, Metric, RateFit};
use crate::bounds::{self, BoundReport};
use crate::classical::{evolve_with_moments, reference_flow, PhaseEnsemble, Scheme};
use crate::error::{Error, Result};
use crate::ot::{dist1_truncated, wasserstein2, DiscreteMeasure};
use crate::phasespace::{density_to_measure, husimi_direct, PhaseDensity, PhaseGrid};
use crate::potentials::Potential;
use crate::quantum::{
    reference_propagate_q, reference_self_consistency, sample_toeplitz, SpatialGrid, SplitPropagator, StateEnsemble,
    WaveFunction,
};

/// Value-span floor of the fixed-ħ fits: four time steps a factor 8 apart
/// give a first-order error only 0.9 decades of spread.
const QUANTUM_FIT_SPAN: f64 = 0.5;
/// Probability left outside the marginal ranges that size the Husimi box.
const BOX_TAIL: f64 = 1e-12;
/// Padding of the Husimi box in units of `√ħ`.
const BOX_PAD: f64 = 6.0;

/// Consistency of a quantum reference solution: distance between runs at
/// `dt_ref` and `dt_ref/2` for one ensemble member.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCheck {
    pub hbar: f64,
    pub dt_ref: f64,
    pub self_consistency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct Summary {
    /// Every record carrying a bound satisfies it.
    pub all_bounds_satisfied: bool,
    pub bounds_checked: usize,
    /// Quantum L² errors are nondecreasing in `Δt` for each `ħ`.
    pub monotone_in_dt: Option<bool>,
    /// `(Δt, max over ħ of dist₁)` in the order of `dt_list`.
    pub max_over_hbar: Vec<[f64; 2]>,
    /// The maximum strictly drops every time `Δt` does.
    pub max_over_hbar_decreasing: Option<bool>,
    pub max_over_hbar_slope: Option<f64>,
    /// Largest `mc_stderr / bound_value` over records with both.
    pub max_stderr_to_bound: Option<f64>,
    /// `(Δt, identity-coupling cost)` of classical runs.
    pub identity_coupling: Vec<[f64; 2]>,
    /// Every split step of a classical run respected the second-moment
    /// growth recursion.
    pub moment_recursion_ok: Option<bool>,
    /// Largest mass dropped when a Husimi density became a measure.
    pub max_discarded_mass: Option<f64>,
    pub reference_checks: Vec<ReferenceCheck>,
    pub notes: Vec<String>,
}

/// Everything one experiment produces.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub records: Vec<ErrorRecord>,
    pub fits: Vec<RateFit>,
    pub bounds: BoundReport,
    pub summary: Summary,
}

impl RunOutput {
    pub fn all_bounds_satisfied(&self) -> bool {
        self.summary.all_bounds_satisfied
    }
}

/// Runs whichever pipeline the config names.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    match cfg.experiment {
        ExperimentKind::Classical => run_classical_convergence(cfg),
        ExperimentKind::Quantum => run_quantum_fixed_hbar(cfg),
        ExperimentKind::Uniform => run_uniform_sweep(cfg),
    }
}

fn finish_summary(records: &[ErrorRecord], summary: &mut Summary) {
    let checked: Vec<&ErrorRecord> = records.iter().filter(|r| r.bound_satisfied.is_some()).collect();
    summary.bounds_checked = checked.len();
    summary.all_bounds_satisfied = checked.iter().all(|r| r.bound_satisfied == Some(true));
    summary.max_stderr_to_bound = records
        .iter()
        .filter_map(|r| Some(r.mc_stderr? / r.bound_value?))
        .reduce(f64::max);
}

fn push_fit(fits: &mut Vec<RateFit>, notes: &mut Vec<String>, fit: Result<RateFit>, what: &str) -> Result<()> {
    match fit {
        Ok(f) => fits.push(f),
        Err(Error::DegenerateFit(m)) => notes.push(format!("{what}: no rate fit ({m})")),
        Err(e) => return Err(e),
    }
    Ok(())
}

/// Distinct final times `⌊T/Δt⌋·Δt`, keyed by their bit pattern.
fn final_times(cfg: &ExperimentConfig) -> Vec<f64> {
    let mut ts: Vec<f64> = cfg
        .dt_list
        .iter()
        .map(|dt| n_steps(cfg.final_time, *dt) as f64 * dt)
        .collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup_by(|a, b| a.to_bits() == b.to_bits());
    ts
}

fn lookup<'a, T>(table: &'a [(f64, T)], t: f64) -> &'a T {
    &table.iter().find(|(s, _)| s.to_bits() == t.to_bits()).expect("final time was precomputed").1
}

/// Split scheme against the exact flow on a shared particle cloud.
pub fn run_classical_convergence(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let v = cfg.build_potential()?;
    let bounds = cfg.bound_report(cfg.m_prime)?;
    let ens0 = PhaseEnsemble::from_measure(&cfg.initial, cfg.n_particles, cfg.seed)?;
    let tol = cfg.reference.classical_tol;
    let references = final_times(cfg)
        .into_iter()
        .map(|t| {
            let pts = ens0
                .points()
                .par_iter()
                .map(|p| reference_flow(p, t, &v, tol))
                .collect::<Result<Vec<_>>>()?;
            Ok((t, PhaseEnsemble::new(pts, ens0.weights().to_vec(), ens0.seed())?))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    let mut summary = Summary::default();
    for &dt in &cfg.dt_list {
        let n = n_steps(cfg.final_time, dt);
        let reference = lookup(&references, n as f64 * dt);
        let (split, moments) = evolve_with_moments(&ens0, cfg.scheme, dt, n, &v)?;
        let ok = bounds::moment_recursion_holds(&moments, dt, bounds.lambda, bounds.e_const);
        summary.moment_recursion_ok = Some(summary.moment_recursion_ok.unwrap_or(true) && ok);
        let cap = cfg.grid.classical_support;
        let a = DiscreteMeasure::from_ensemble(&split.subsample(cap))?;
        let b = DiscreteMeasure::from_ensemble(&reference.subsample(cap))?;
        let w2 = wasserstein2(&a, &b, &cfg.ot)?.distance;
        let upper = crate::ot::coupled_particle_upper_bound(&split, reference)?.distance;
        summary.identity_coupling.push([dt, upper]);
        let bound = match cfg.scheme {
            Scheme::LieTrotter => Some(bounds.c_t * dt),
            _ => bounds.d_t.map(|d| d * dt * dt),
        };
        records.push(ErrorRecord::new(cfg.scheme, Metric::W2Classical, dt, None, n, w2).with_bound(bound));
    }
    let mut fits = Vec::new();
    push_fit(
        &mut fits,
        &mut summary.notes,
        fit_rate(&records, Metric::W2Classical, cfg.scheme, None),
        "w2_classical",
    )?;
    if bounds.d_t.is_none() && cfg.scheme == Scheme::Strang {
        summary.notes.push("potential has unbounded derivatives; no Strang bound applies".into());
    }
    finish_summary(&records, &mut summary);
    Ok(RunOutput {
        config: cfg.clone(),
        records,
        fits,
        bounds,
        summary,
    })
}

/// Strang reference step for one ħ: `Δt_min/divisor`, divided by an
/// integer factor until halving it moves `probe` by at most the configured
/// tolerance. Returns the step and its self-consistency.
fn choose_dt_ref(cfg: &ExperimentConfig, probe: &WaveFunction, t: f64, v: &Potential) -> Result<ReferenceCheck> {
    let base = cfg.dt_min() / cfg.reference.dt_divisor;
    let tol = cfg.reference.consistency_tol;
    let mut k = 1.0_f64;
    let mut est = reference_self_consistency(probe, t, v, base)?;
    for _ in 0..cfg.reference.max_refinements {
        if est <= tol {
            break;
        }
        // second order: the change scales with the square of the step
        k = (k * (est / tol).sqrt() * 1.1).ceil();
        est = reference_self_consistency(probe, t, v, base / k)?;
    }
    Ok(ReferenceCheck {
        hbar: probe.hbar(),
        dt_ref: base / k,
        self_consistency: est,
    })
}

fn reference_ensembles(
    ens: &StateEnsemble,
    times: &[f64],
    v: &Potential,
    dt_ref: f64,
) -> Result<Vec<(f64, StateEnsemble)>> {
    times
        .iter()
        .map(|&t| {
            let members = ens
                .members()
                .par_iter()
                .map(|m| reference_propagate_q(m, t, v, dt_ref))
                .collect::<Result<Vec<_>>>()?;
            Ok((
                t,
                StateEnsemble::new(members, ens.weights().to_vec(), ens.sample_points().to_vec(), ens.seed())?,
            ))
        })
        .collect()
}

fn worst_l2(a: &StateEnsemble, b: &StateEnsemble) -> f64 {
    a.members()
        .iter()
        .zip(b.members())
        .map(|(x, y)| x.phase_free_distance(y))
        .fold(0.0, f64::max)
}

fn lie_trotter_l2_bound(scheme: Scheme, dt: f64, hbar: f64, t: f64, v: &Potential, d: usize) -> Option<f64> {
    // the bound grows with |p|, so the |p| = 0 value is the strictest
    (scheme == Scheme::LieTrotter)
        .then(|| bounds::coherent_lie_trotter_bound(dt, hbar, t, v, 0.0, d).ok())
        .flatten()
}

fn monotone(records: &[ErrorRecord], hbars: &[f64]) -> bool {
    hbars.iter().all(|h| {
        let sel: Vec<&ErrorRecord> = records
            .iter()
            .filter(|r| r.metric == Metric::L2Quantum && r.hbar == Some(*h))
            .collect();
        nondecreasing_in_dt(&sel)
    })
}

/// Worst-member L² error against a fine Strang reference at one ħ.
pub fn run_quantum_fixed_hbar(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    if cfg.hbar_list.len() != 1 {
        return Err(Error::InvalidConfig("the quantum experiment takes exactly one hbar".into()));
    }
    let v = cfg.build_potential()?;
    let hbar = cfg.hbar_list[0];
    let grid = cfg.spatial_grid(hbar)?;
    let ens = sample_toeplitz(&cfg.initial, cfg.n_states, &grid, hbar, cfg.seed)?;
    let times = final_times(cfg);
    let t_max = *times.last().expect("dt_list is nonempty");
    let check = choose_dt_ref(cfg, &ens.members()[0], t_max, &v)?;
    let references = reference_ensembles(&ens, &times, &v, check.dt_ref)?;

    let mut records = Vec::new();
    let mut summary = Summary::default();
    for &dt in &cfg.dt_list {
        let n = n_steps(cfg.final_time, dt);
        let t = n as f64 * dt;
        let prop = SplitPropagator::new(&grid, hbar, &v, dt)?;
        let split = ens.evolve(&prop, cfg.scheme, n)?;
        let err = worst_l2(&split, lookup(&references, t));
        let bound = lie_trotter_l2_bound(cfg.scheme, dt, hbar, t, &v, cfg.dim());
        records.push(ErrorRecord::new(cfg.scheme, Metric::L2Quantum, dt, Some(hbar), n, err).with_bound(bound));
    }
    summary.reference_checks.push(check);
    let mut fits = Vec::new();
    push_fit(
        &mut fits,
        &mut summary.notes,
        fit_rate_with_span(&records, Metric::L2Quantum, cfg.scheme, Some(hbar), QUANTUM_FIT_SPAN),
        "l2_quantum",
    )?;
    summary.monotone_in_dt = Some(monotone(&records, &cfg.hbar_list));
    let m_prime = strang_m_prime(cfg, &records)?;
    let bounds = cfg.bound_report(m_prime)?;
    finish_summary(&records, &mut summary);
    Ok(RunOutput {
        config: cfg.clone(),
        records,
        fits,
        bounds,
        summary,
    })
}

/// Configured `M′`, or for Strang runs twice the worst observed
/// `error·ħ/Δt²`.
fn strang_m_prime(cfg: &ExperimentConfig, records: &[ErrorRecord]) -> Result<Option<f64>> {
    if cfg.m_prime.is_some() || cfg.scheme != Scheme::Strang {
        return Ok(cfg.m_prime);
    }
    let samples: Vec<(f64, f64, f64)> = records
        .iter()
        .filter(|r| r.metric == Metric::L2Quantum && r.scheme == Scheme::Strang)
        .filter_map(|r| Some((r.dt, r.hbar?, r.value)))
        .collect();
    Ok(Some(bounds::calibrate_m_prime(&samples)?))
}

struct HbarLevel {
    hbar: f64,
    grid: SpatialGrid,
    initial: StateEnsemble,
    references: Vec<(f64, StateEnsemble)>,
    check: ReferenceCheck,
}

/// Initial ensembles and reference solutions for every ħ of a uniform
/// sweep; both splitting schemes can be run against one context.
pub struct SweepContext {
    cfg: ExperimentConfig,
    v: Potential,
    levels: Vec<HbarLevel>,
}

impl SweepContext {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let v = cfg.build_potential()?;
        let times = final_times(cfg);
        let t_max = *times.last().expect("dt_list is nonempty");
        let levels = cfg
            .hbar_list
            .iter()
            .map(|&hbar| {
                let grid = cfg.spatial_grid(hbar)?;
                let initial = sample_toeplitz(&cfg.initial, cfg.n_states, &grid, hbar, cfg.seed)?;
                let check = choose_dt_ref(cfg, &initial.members()[0], t_max, &v)?;
                let references = reference_ensembles(&initial, &times, &v, check.dt_ref)?;
                Ok(HbarLevel {
                    hbar,
                    grid,
                    initial,
                    references,
                    check,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SweepContext {
            cfg: cfg.clone(),
            v,
            levels,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }
}

/// Husimi distances of one `(Δt, ħ)` cell, with jackknife errors.
struct CellMetrics {
    dist1: f64,
    dist1_se: Option<f64>,
    w2: f64,
    w2_se: Option<f64>,
    discarded: f64,
}

fn combine(parts: &[PhaseDensity], weights: &[f64], keep: impl Fn(usize) -> bool, grid: &PhaseGrid, hbar: f64) -> Result<PhaseDensity> {
    let total: f64 = weights.iter().enumerate().filter(|(i, _)| keep(*i)).map(|(_, w)| w).sum();
    let mut values = vec![0.0; grid.len()];
    for (i, (part, w)) in parts.iter().zip(weights).enumerate() {
        if !keep(i) {
            continue;
        }
        let s = w / total;
        for (acc, v) in values.iter_mut().zip(part.values()) {
            *acc += s * v;
        }
    }
    PhaseDensity::nonnegative(*grid, values, hbar)
}

/// `(dist₁, W₂, largest discarded mass)` between two coarsened densities.
fn distances(a: &PhaseDensity, b: &PhaseDensity, cells: usize, cfg: &ExperimentConfig) -> Result<(f64, f64, f64)> {
    let ma = density_to_measure(&a.coarsen(cells)?, cfg.grid.threshold)?;
    let mb = density_to_measure(&b.coarsen(cells)?, cfg.grid.threshold)?;
    let d1 = dist1_truncated(&ma, &mb, &cfg.ot)?.distance;
    let w2 = wasserstein2(&ma, &mb, &cfg.ot)?.distance;
    Ok((d1, w2, ma.discarded_mass().max(mb.discarded_mass())))
}

fn husimi_box(ensembles: &[&StateEnsemble], hbar: f64) -> Result<((f64, f64), (f64, f64))> {
    let mut xr = (f64::INFINITY, f64::NEG_INFINITY);
    let mut pr = xr;
    for ens in ensembles {
        for psi in ens.members() {
            let ((a, b), (c, d)) = psi.marginal_ranges(BOX_TAIL)?;
            xr = (xr.0.min(a), xr.1.max(b));
            pr = (pr.0.min(c), pr.1.max(d));
        }
    }
    let pad = BOX_PAD * hbar.sqrt();
    Ok(((xr.0 - pad, xr.1 + pad), (pr.0 - pad, pr.1 + pad)))
}

fn husimi_cell(cfg: &ExperimentConfig, hbar: f64, split: &StateEnsemble, reference: &StateEnsemble) -> Result<CellMetrics> {
    let (xr, pr) = husimi_box(&[split, reference], hbar)?;
    let step = cfg.grid.phase_step * hbar.sqrt();
    let grid = PhaseGrid::husimi_window(&reference.members()[0], xr, pr, (step, step))?;
    let hs = split
        .members()
        .par_iter()
        .map(|m| husimi_direct(m, &grid))
        .collect::<Result<Vec<_>>>()?;
    let hr = reference
        .members()
        .par_iter()
        .map(|m| husimi_direct(m, &grid))
        .collect::<Result<Vec<_>>>()?;
    let w = split.weights();
    let full_s = combine(&hs, w, |_| true, &grid, hbar)?;
    let full_r = combine(&hr, w, |_| true, &grid, hbar)?;
    let (dist1, w2, discarded) = distances(&full_s, &full_r, cfg.grid.max_cells, cfg)?;

    let n = w.len();
    let groups = cfg.grid.jackknife_groups.min(n);
    let (dist1_se, w2_se) = if groups >= 2 {
        let reps = (0..groups)
            .map(|g| {
                let keep = |i: usize| i * groups / n != g;
                let s = combine(&hs, w, keep, &grid, hbar)?;
                let r = combine(&hr, w, keep, &grid, hbar)?;
                distances(&s, &r, cfg.grid.jackknife_cells, cfg)
            })
            .collect::<Result<Vec<_>>>()?;
        let se = |vals: Vec<f64>| {
            let g = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / g;
            ((g - 1.0) / g * vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>()).sqrt()
        };
        (
            Some(se(reps.iter().map(|r| r.0).collect())),
            Some(se(reps.iter().map(|r| r.1).collect())),
        )
    } else {
        (None, None)
    };
    Ok(CellMetrics {
        dist1,
        dist1_se,
        w2,
        w2_se,
        discarded,
    })
}

/// [`run_uniform_with`] on a freshly built context.
pub fn run_uniform_sweep(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let ctx = SweepContext::new(cfg)?;
    run_uniform_with(&ctx, cfg.scheme)
}

/// Husimi transport errors over every `(Δt, ħ)` cell for `scheme`,
/// checked against the uniform-in-ħ and semiclassical bounds.
pub fn run_uniform_with(ctx: &SweepContext, scheme: Scheme) -> Result<RunOutput> {
    let mut cfg = ctx.cfg.clone();
    cfg.scheme = scheme;
    cfg.experiment = ExperimentKind::Uniform;
    cfg.validate()?;
    let v = &ctx.v;
    let d = cfg.dim();

    struct Cell {
        dt: f64,
        hbar: f64,
        n: usize,
        l2: f64,
        m: CellMetrics,
    }
    let mut cells = Vec::new();
    for level in &ctx.levels {
        for &dt in &cfg.dt_list {
            let n = n_steps(cfg.final_time, dt);
            let t = n as f64 * dt;
            let prop = SplitPropagator::new(&level.grid, level.hbar, v, dt)?;
            let split = level.initial.evolve(&prop, scheme, n)?;
            let reference = lookup(&level.references, t);
            let l2 = worst_l2(&split, reference);
            let m = husimi_cell(&cfg, level.hbar, &split, reference)?;
            cells.push(Cell {
                dt,
                hbar: level.hbar,
                n,
                l2,
                m,
            });
        }
    }

    let l2_records: Vec<ErrorRecord> = cells
        .iter()
        .map(|c| {
            let t = c.n as f64 * c.dt;
            ErrorRecord::new(scheme, Metric::L2Quantum, c.dt, Some(c.hbar), c.n, c.l2)
                .with_bound(lie_trotter_l2_bound(scheme, c.dt, c.hbar, t, v, d))
        })
        .collect();
    let m_prime = strang_m_prime(&cfg, &l2_records)?;
    let bounds = cfg.bound_report(m_prime)?;

    let mut records = Vec::new();
    let mut summary = Summary::default();
    for (c, l2) in cells.iter().zip(l2_records) {
        records.push(l2);
        let t = c.n as f64 * c.dt;
        let (uniform, envelope) = match scheme {
            Scheme::LieTrotter => (
                bounds.c_uniform.map(|cu| bounds::uniform_bound_simple(cu, c.dt)),
                Some(bounds::semiclassical_bound_simple(c.dt, c.hbar, bounds.c_t, v, t, d)),
            ),
            _ => (
                bounds.d_uniform.map(|du| bounds::uniform_bound_strang(du, c.dt)),
                bounds
                    .d_t
                    .map(|dt_c| bounds::semiclassical_bound_strang(c.dt, c.hbar, dt_c, v, t, d)),
            ),
        };
        records.push(
            ErrorRecord::new(scheme, Metric::Dist1Husimi, c.dt, Some(c.hbar), c.n, c.m.dist1)
                .with_stderr(c.m.dist1_se)
                .with_bound(uniform),
        );
        records.push(
            ErrorRecord::new(scheme, Metric::W2Husimi, c.dt, Some(c.hbar), c.n, c.m.w2)
                .with_stderr(c.m.w2_se)
                .with_bound(envelope),
        );
    }
    if bounds.c_uniform.is_none() && scheme == Scheme::LieTrotter || bounds.d_uniform.is_none() && scheme == Scheme::Strang {
        summary.notes.push("potential is not eligible for the uniform-in-hbar bound".into());
    }

    for &dt in &cfg.dt_list {
        let worst = records
            .iter()
            .filter(|r| r.metric == Metric::Dist1Husimi && r.dt == dt)
            .map(|r| r.value)
            .fold(0.0, f64::max);
        summary.max_over_hbar.push([dt, worst]);
    }
    let mut by_dt = summary.max_over_hbar.clone();
    by_dt.sort_by(|a, b| a[0].total_cmp(&b[0]));
    summary.max_over_hbar_decreasing = Some(by_dt.windows(2).all(|w| w[0][1] < w[1][1]));
    let (xs, ys): (Vec<f64>, Vec<f64>) = by_dt.iter().map(|p| (p[0], p[1])).unzip();
    summary.max_over_hbar_slope = fit_loglog(&xs, &ys, 0.0).ok().map(|f| f.0);

    let mut fits = Vec::new();
    for level in &ctx.levels {
        for metric in [Metric::L2Quantum, Metric::Dist1Husimi, Metric::W2Husimi] {
            let what = format!("{} at hbar {}", metric.as_str(), level.hbar);
            push_fit(
                &mut fits,
                &mut summary.notes,
                fit_rate_with_span(&records, metric, scheme, Some(level.hbar), QUANTUM_FIT_SPAN),
                &what,
            )?;
        }
    }
    summary.max_discarded_mass = cells.iter().map(|c| c.m.discarded).reduce(f64::max);
    summary.monotone_in_dt = Some(monotone(&records, &cfg.hbar_list));
    summary.reference_checks = ctx.levels.iter().map(|l| l.check.clone()).collect();
    finish_summary(&records, &mut summary);
    Ok(RunOutput {
        config: cfg,
        records,
        fits,
        bounds,
        summary,
    })
}
