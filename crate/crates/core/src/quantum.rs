//! Split-step spectral propagation on a periodic grid `[−L, L)^d`.
//!
//! The kinetic flow is diagonal in Fourier space, the potential flow is
//! diagonal in position space, so each sub-propagator is exact for its own
//! Hamiltonian and only the splitting itself introduces error. Mixed states
//! are handled as weighted ensembles of coherent states.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::classical::Scheme;
use crate::error::{Error, Result};
use crate::potentials::Potential;
use crate::sampling::{InitialMeasure, PhaseSample};

/// Largest spectral mass tolerated in the top eighth of wavenumbers.
pub const ALIASING_LIMIT: f64 = 1e-8;

/// Uniform periodic grid with `n_points` nodes per axis on `[−L, L)^d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialGrid {
    d: usize,
    n_points: usize,
    half_width: f64,
    dx: f64,
}

impl SpatialGrid {
    pub fn new(d: usize, n_points: usize, half_width: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidInput("grid dimension must be >= 1".into()));
        }
        if n_points < 16 || !n_points.is_power_of_two() {
            return Err(Error::InvalidInput(format!(
                "grid needs a power-of-two point count >= 16, got {n_points}"
            )));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidInput(format!("half width must be positive, got {half_width}")));
        }
        Ok(SpatialGrid {
            d,
            n_points,
            half_width,
            dx: 2.0 * half_width / n_points as f64,
        })
    }

    /// Picks `L` and the point count for an experiment.
    ///
    /// `L` covers the initial positions, their excursion over `[0, T]` and
    /// an `8√ħ` Gaussian margin; for a potential of spatial period `period`
    /// it is rounded up to a multiple of half the period so the torus
    /// carries the potential exactly. The spacing satisfies
    /// `dx ≤ min(√ħ/4, πħ/(2 p_max))`, i.e. the Nyquist momentum is at
    /// least twice the largest expected momentum `p_max`.
    pub fn for_experiment(
        hbar: f64,
        measure: &InitialMeasure,
        final_time: f64,
        potential: &Potential,
        period: Option<f64>,
    ) -> Result<Self> {
        let d = measure.dim();
        let (reach, p_max) = phase_reach(measure, final_time, potential);
        let needed = reach + 8.0 * hbar.sqrt();
        let half_width = match period {
            Some(per) => (needed / (0.5 * per)).ceil().max(1.0) * 0.5 * per,
            None => needed,
        };
        let dx_max = (hbar.sqrt() / 4.0).min(PI * hbar / (2.0 * p_max.max(1e-12)));
        let n = ((2.0 * half_width / dx_max).ceil() as usize).next_power_of_two().max(16);
        SpatialGrid::new(d, n, half_width)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Total node count `n_points^d`.
    pub fn len(&self) -> usize {
        self.n_points.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.dx
    }

    /// Angular wavenumber of FFT bin `m` (standard ordering).
    pub fn wavenumber(&self, m: usize) -> f64 {
        let n = self.n_points as i64;
        let s = if (m as i64) < n / 2 { m as i64 } else { m as i64 - n };
        PI / self.half_width * s as f64
    }

    /// Cell volume `dx^d`.
    pub fn cell_volume(&self) -> f64 {
        self.dx.powi(self.d as i32)
    }

    /// Position of flat node `idx` (row-major, last axis fastest).
    pub fn node(&self, mut idx: usize, out: &mut [f64]) {
        for k in (0..self.d).rev() {
            out[k] = self.coord(idx % self.n_points);
            idx /= self.n_points;
        }
    }

    /// `|k|²` of flat Fourier bin `idx`.
    fn wavenumber_sq(&self, mut idx: usize) -> f64 {
        let mut acc = 0.0;
        for _ in 0..self.d {
            let k = self.wavenumber(idx % self.n_points);
            acc += k * k;
            idx /= self.n_points;
        }
        acc
    }

    /// True when any axis of flat bin `idx` lies in the top eighth of the band.
    fn is_high_band(&self, mut idx: usize) -> bool {
        let n = self.n_points as i64;
        for _ in 0..self.d {
            let m = (idx % self.n_points) as i64;
            let s = if m < n / 2 { m } else { m - n };
            if 16 * s.abs() >= 7 * n {
                return true;
            }
            idx /= self.n_points;
        }
        false
    }
}

/// Spatial reach and momentum bound of trajectories started from `measure`.
fn phase_reach(measure: &InitialMeasure, final_time: f64, v: &Potential) -> (f64, f64) {
    let x0 = measure.position_extent();
    let p0 = measure.momentum_quantile();
    if let Some(w) = v.harmonic_omega().filter(|w| *w > 0.0) {
        let amp = (x0 * x0 + (p0 / w) * (p0 / w)).sqrt();
        return (amp, w * amp);
    }
    if let Some(a) = v.pendulum_amplitude().filter(|a| *a > 0.0) {
        // per-axis energy confinement inside a single well
        let e = 0.5 * p0 * p0 + a * (1.0 - x0.min(PI).cos());
        if e < 2.0 * a {
            let reach = (1.0 - e / a).acos().max(x0);
            return (reach, (2.0 * e).sqrt().min(p0 + final_time * a));
        }
    }
    let g = v.bounds().sup_grad;
    let g = if g.is_finite() { g } else { 0.0 };
    let p_max = p0 + final_time * g;
    (x0 + (p0 + 0.5 * final_time * g) * final_time, p_max)
}

/// Complex amplitudes on a grid, normalized in `L²`.
#[derive(Clone, Debug)]
pub struct WaveFunction {
    grid: SpatialGrid,
    amplitudes: Vec<Complex64>,
    hbar: f64,
}

impl WaveFunction {
    /// Wraps raw amplitudes, renormalizing to unit norm.
    pub fn from_amplitudes(grid: SpatialGrid, amplitudes: Vec<Complex64>, hbar: f64) -> Result<Self> {
        if amplitudes.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "{} amplitudes for a grid of {} nodes",
                amplitudes.len(),
                grid.len()
            )));
        }
        if !(hbar > 0.0) {
            return Err(Error::InvalidInput(format!("hbar must be positive, got {hbar}")));
        }
        let mut psi = WaveFunction {
            grid,
            amplitudes,
            hbar,
        };
        let n = psi.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::InvalidInput("wavefunction has zero or non-finite norm".into()));
        }
        psi.amplitudes.iter_mut().for_each(|a| *a /= n);
        Ok(psi)
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    /// `(Σ |ψ|² dx^d)^{1/2}`.
    pub fn norm(&self) -> f64 {
        (self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }

    /// `⟨self|other⟩ = Σ conj(ψ) φ dx^d`.
    pub fn inner(&self, other: &WaveFunction) -> Complex64 {
        let s: Complex64 = self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum();
        s * self.grid.cell_volume()
    }

    /// `‖ψ − φ‖` including phase.
    pub fn l2_distance(&self, other: &WaveFunction) -> f64 {
        (self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            * self.grid.cell_volume())
        .sqrt()
    }

    /// `min_θ ‖ψ − e^{iθ}φ‖`, attained at `θ = arg⟨φ|ψ⟩`. Evaluated as a
    /// direct sum, which keeps full precision for nearly equal states.
    pub fn phase_free_distance(&self, other: &WaveFunction) -> f64 {
        let ov = other.inner(self);
        let phase = if ov.norm() > 0.0 { ov / ov.norm() } else { Complex64::new(1.0, 0.0) };
        (self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| (a - phase * b).norm_sqr())
            .sum::<f64>()
            * self.grid.cell_volume())
        .sqrt()
    }

    pub fn conj(&self) -> WaveFunction {
        WaveFunction {
            grid: self.grid,
            amplitudes: self.amplitudes.iter().map(|a| a.conj()).collect(),
            hbar: self.hbar,
        }
    }

    /// `⟨x⟩` per axis.
    pub fn expected_position(&self) -> Vec<f64> {
        let d = self.grid.dim();
        let mut out = vec![0.0; d];
        let mut x = vec![0.0; d];
        for (i, a) in self.amplitudes.iter().enumerate() {
            self.grid.node(i, &mut x);
            let w = a.norm_sqr();
            for k in 0..d {
                out[k] += w * x[k];
            }
        }
        let dv = self.grid.cell_volume();
        out.iter_mut().for_each(|v| *v *= dv);
        out
    }

    /// `⟨−iħ∇⟩` per axis, computed spectrally.
    pub fn expected_momentum(&self) -> Vec<f64> {
        let d = self.grid.dim();
        let fft = FftNd::new(&self.grid);
        let mut buf = self.amplitudes.clone();
        fft.forward(&mut buf);
        let total: f64 = buf.iter().map(|c| c.norm_sqr()).sum();
        let mut out = vec![0.0; d];
        let n = self.grid.n_points();
        for (idx, c) in buf.iter().enumerate() {
            let w = c.norm_sqr() / total;
            let mut rest = idx;
            for k in (0..d).rev() {
                out[k] += w * self.hbar * self.grid.wavenumber(rest % n);
                rest /= n;
            }
        }
        out
    }

    /// Smallest position and momentum intervals `(lo, hi)` leaving at most
    /// `tail` of the probability on each side (one-dimensional grids).
    pub fn marginal_ranges(&self, tail: f64) -> Result<((f64, f64), (f64, f64))> {
        if self.grid.dim() != 1 {
            return Err(Error::UnsupportedDimension(self.grid.dim()));
        }
        let pos: Vec<(f64, f64)> = self
            .amplitudes
            .iter()
            .enumerate()
            .map(|(i, a)| (self.grid.coord(i), a.norm_sqr()))
            .collect();
        let fft = FftNd::new(&self.grid);
        let mut buf = self.amplitudes.clone();
        fft.forward(&mut buf);
        let mut mom: Vec<(f64, f64)> = buf
            .iter()
            .enumerate()
            .map(|(m, c)| (self.hbar * self.grid.wavenumber(m), c.norm_sqr()))
            .collect();
        mom.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok((quantile_range(&pos, tail), quantile_range(&mom, tail)))
    }

    /// Fraction of spectral mass in the top eighth of wavenumbers.
    pub fn high_band_fraction(&self) -> f64 {
        let fft = FftNd::new(&self.grid);
        let mut buf = self.amplitudes.clone();
        fft.forward(&mut buf);
        high_band_fraction(&self.grid, &buf)
    }
}

/// `(lo, hi)` over sorted `(coordinate, weight)` pairs with at most `tail`
/// of the total weight strictly below `lo` and strictly above `hi`.
fn quantile_range(sorted: &[(f64, f64)], tail: f64) -> (f64, f64) {
    let total: f64 = sorted.iter().map(|p| p.1).sum();
    let cut = tail * total;
    let mut acc = 0.0;
    let mut lo = sorted[0].0;
    for &(x, w) in sorted {
        if acc + w > cut {
            lo = x;
            break;
        }
        acc += w;
    }
    acc = 0.0;
    let mut hi = sorted[sorted.len() - 1].0;
    for &(x, w) in sorted.iter().rev() {
        if acc + w > cut {
            hi = x;
            break;
        }
        acc += w;
    }
    (lo, hi)
}

fn high_band_fraction(grid: &SpatialGrid, spectrum: &[Complex64]) -> f64 {
    let mut total = 0.0;
    let mut high = 0.0;
    for (idx, c) in spectrum.iter().enumerate() {
        let w = c.norm_sqr();
        total += w;
        if grid.is_high_band(idx) {
            high += w;
        }
    }
    if total > 0.0 {
        high / total
    } else {
        0.0
    }
}

/// Separable d-dimensional FFT over a flat row-major array.
#[derive(Clone)]
pub(crate) struct FftNd {
    n: usize,
    d: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl FftNd {
    pub(crate) fn new(grid: &SpatialGrid) -> Self {
        let mut planner = FftPlanner::new();
        let n = grid.n_points();
        FftNd {
            n,
            d: grid.dim(),
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    fn scratch(&self) -> Vec<Complex64> {
        let len = self.fwd.get_inplace_scratch_len().max(self.inv.get_inplace_scratch_len());
        vec![Complex64::default(); len]
    }

    fn apply(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let mut scratch = self.scratch();
        self.apply_with(buf, plan, &mut scratch);
    }

    fn apply_with(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>, scratch: &mut [Complex64]) {
        let n = self.n;
        // last axis is contiguous
        plan.process_with_scratch(buf, scratch);
        if self.d == 1 {
            return;
        }
        let mut line = vec![Complex64::default(); n];
        for axis in 1..self.d {
            let stride = n.pow(axis as u32);
            let block = stride * n;
            for start in (0..buf.len()).step_by(block) {
                for off in 0..stride {
                    for (j, l) in line.iter_mut().enumerate() {
                        *l = buf[start + off + j * stride];
                    }
                    plan.process_with_scratch(&mut line, scratch);
                    for (j, l) in line.iter().enumerate() {
                        buf[start + off + j * stride] = *l;
                    }
                }
            }
        }
    }

    pub(crate) fn forward(&self, buf: &mut [Complex64]) {
        self.apply(buf, &self.fwd);
    }

    /// Inverse transform including the `1/N^d` normalization.
    pub(crate) fn inverse(&self, buf: &mut [Complex64]) {
        self.apply(buf, &self.inv);
        let s = 1.0 / buf.len() as f64;
        buf.iter_mut().for_each(|c| *c *= s);
    }
}

/// Precomputed multipliers for stepping one `(grid, ħ, V, dt)` combination.
pub struct SplitPropagator {
    grid: SpatialGrid,
    hbar: f64,
    fft: FftNd,
    /// Kinetic multipliers, with the inverse-FFT normalization folded in.
    kin_full: Vec<Complex64>,
    kin_half: Vec<Complex64>,
    pot_full: Vec<Complex64>,
    high_band: Vec<usize>,
    check_aliasing: bool,
}

impl SplitPropagator {
    pub fn new(grid: &SpatialGrid, hbar: f64, v: &Potential, dt: f64) -> Result<Self> {
        if v.dim() != grid.dim() {
            return Err(Error::InvalidInput(format!(
                "potential dimension {} does not match grid dimension {}",
                v.dim(),
                grid.dim()
            )));
        }
        let norm = 1.0 / grid.len() as f64;
        let kin = |t: f64| -> Vec<Complex64> {
            (0..grid.len())
                .map(|idx| Complex64::from_polar(norm, -t * hbar * grid.wavenumber_sq(idx) / 2.0))
                .collect()
        };
        let mut x = vec![0.0; grid.dim()];
        let pot_full = (0..grid.len())
            .map(|idx| {
                grid.node(idx, &mut x);
                Complex64::from_polar(1.0, -dt * v.eval(&x) / hbar)
            })
            .collect();
        Ok(SplitPropagator {
            grid: *grid,
            hbar,
            fft: FftNd::new(grid),
            kin_full: kin(dt),
            kin_half: kin(0.5 * dt),
            pot_full,
            high_band: (0..grid.len()).filter(|i| grid.is_high_band(*i)).collect(),
            check_aliasing: true,
        })
    }

    /// Disables the per-step aliasing guard (used by unit tests that probe
    /// deliberately under-resolved states).
    pub fn without_aliasing_guard(mut self) -> Self {
        self.check_aliasing = false;
        self
    }

    fn guard(&self, spectrum: &[Complex64]) -> Result<()> {
        if self.check_aliasing {
            let total: f64 = spectrum.iter().map(|c| c.norm_sqr()).sum();
            let high: f64 = self.high_band.iter().map(|i| spectrum[*i].norm_sqr()).sum();
            let mass = if total > 0.0 { high / total } else { 0.0 };
            if mass > ALIASING_LIMIT {
                return Err(Error::SpectralUnderresolution {
                    mass,
                    limit: ALIASING_LIMIT,
                });
            }
        }
        Ok(())
    }

    fn kinetic(&self, buf: &mut [Complex64], mult: &[Complex64], scratch: &mut [Complex64]) -> Result<()> {
        self.fft.apply_with(buf, &self.fft.fwd, scratch);
        self.guard(buf)?;
        buf.iter_mut().zip(mult).for_each(|(c, m)| *c *= m);
        self.fft.apply_with(buf, &self.fft.inv, scratch);
        Ok(())
    }

    fn potential(&self, buf: &mut [Complex64]) {
        buf.iter_mut().zip(&self.pot_full).for_each(|(c, m)| *c *= m);
    }

    /// `n` Lie-Trotter steps in place: kinetic `dt`, then potential `dt`.
    pub fn lie_trotter(&self, buf: &mut [Complex64], n: usize) -> Result<()> {
        let mut scratch = self.fft.scratch();
        for _ in 0..n {
            self.kinetic(buf, &self.kin_full, &mut scratch)?;
            self.potential(buf);
        }
        Ok(())
    }

    /// `n` Strang steps in place; adjacent half kinetic flows are merged.
    pub fn strang(&self, buf: &mut [Complex64], n: usize) -> Result<()> {
        if n == 0 {
            return Ok(());
        }
        let mut scratch = self.fft.scratch();
        self.kinetic(buf, &self.kin_half, &mut scratch)?;
        self.potential(buf);
        for _ in 1..n {
            self.kinetic(buf, &self.kin_full, &mut scratch)?;
            self.potential(buf);
        }
        self.kinetic(buf, &self.kin_half, &mut scratch)
    }

    pub fn run(&self, psi: &WaveFunction, scheme: Scheme, n: usize) -> Result<WaveFunction> {
        debug_assert_eq!(psi.hbar, self.hbar);
        debug_assert_eq!(psi.grid, self.grid);
        let mut buf = psi.amplitudes.clone();
        match scheme {
            Scheme::LieTrotter => self.lie_trotter(&mut buf, n)?,
            Scheme::Strang | Scheme::Reference => self.strang(&mut buf, n)?,
        }
        Ok(WaveFunction {
            grid: psi.grid,
            amplitudes: buf,
            hbar: psi.hbar,
        })
    }
}

/// `|q,p⟩(x) = (πħ)^{-d/4} exp(−|x−q|²/2ħ) exp(i p·(x − q/2)/ħ)` sampled on
/// the grid and renormalized.
pub fn coherent_state(grid: &SpatialGrid, hbar: f64, q: &[f64], p: &[f64]) -> Result<WaveFunction> {
    if q.len() != grid.dim() || p.len() != grid.dim() {
        return Err(Error::InvalidInput("coherent state center has wrong dimension".into()));
    }
    if !(hbar > 0.0) {
        return Err(Error::InvalidInput(format!("hbar must be positive, got {hbar}")));
    }
    let margin = grid.half_width() - 8.0 * hbar.sqrt();
    if q.iter().any(|&c| c.abs() > margin) {
        let gap = q.iter().map(|c| grid.half_width() - c.abs()).fold(f64::INFINITY, f64::min);
        return Err(Error::BoundaryClipping {
            q: q.to_vec(),
            tail: (-(gap.max(0.0)).powi(2) / (2.0 * hbar)).exp(),
        });
    }
    let d = grid.dim();
    let pref = (PI * hbar).powf(-(d as f64) / 4.0);
    let mut x = vec![0.0; d];
    let amplitudes = (0..grid.len())
        .map(|idx| {
            grid.node(idx, &mut x);
            let mut r2 = 0.0;
            let mut phase = 0.0;
            for k in 0..d {
                r2 += (x[k] - q[k]).powi(2);
                phase += p[k] * (x[k] - 0.5 * q[k]);
            }
            Complex64::from_polar(pref * (-r2 / (2.0 * hbar)).exp(), phase / hbar)
        })
        .collect();
    WaveFunction::from_amplitudes(*grid, amplitudes, hbar)
}

/// Exact free evolution of the discretized state over time `t`.
pub fn kinetic_propagate(psi: &WaveFunction, t: f64) -> WaveFunction {
    let grid = psi.grid;
    let fft = FftNd::new(&grid);
    let mut buf = psi.amplitudes.clone();
    fft.forward(&mut buf);
    for (idx, c) in buf.iter_mut().enumerate() {
        *c *= Complex64::from_polar(1.0, -t * psi.hbar * grid.wavenumber_sq(idx) / 2.0);
    }
    fft.inverse(&mut buf);
    WaveFunction {
        grid,
        amplitudes: buf,
        hbar: psi.hbar,
    }
}

/// Pointwise multiplication by `exp(−itV(x)/ħ)`.
pub fn potential_propagate(psi: &WaveFunction, t: f64, v: &Potential) -> WaveFunction {
    let grid = psi.grid;
    let mut x = vec![0.0; grid.dim()];
    let amplitudes = psi
        .amplitudes
        .iter()
        .enumerate()
        .map(|(idx, a)| {
            grid.node(idx, &mut x);
            a * Complex64::from_polar(1.0, -t * v.eval(&x) / psi.hbar)
        })
        .collect();
    WaveFunction {
        grid,
        amplitudes,
        hbar: psi.hbar,
    }
}

/// Kinetic step then potential step.
pub fn lie_trotter_step_q(psi: &WaveFunction, dt: f64, v: &Potential) -> WaveFunction {
    potential_propagate(&kinetic_propagate(psi, dt), dt, v)
}

/// Half kinetic, full potential, half kinetic.
pub fn strang_step_q(psi: &WaveFunction, dt: f64, v: &Potential) -> WaveFunction {
    kinetic_propagate(&potential_propagate(&kinetic_propagate(psi, 0.5 * dt), dt, v), 0.5 * dt)
}

/// Strang stepping at `dt_ref` (shortened to land exactly on `t`); the
/// stand-in for the exact evolution.
pub fn reference_propagate_q(psi: &WaveFunction, t: f64, v: &Potential, dt_ref: f64) -> Result<WaveFunction> {
    if !(dt_ref > 0.0) {
        return Err(Error::InvalidInput(format!("dt_ref must be positive, got {dt_ref}")));
    }
    if t == 0.0 {
        return Ok(psi.clone());
    }
    let n = (t.abs() / dt_ref).ceil() as usize;
    let prop = SplitPropagator::new(&psi.grid, psi.hbar, v, t / n as f64)?;
    prop.run(psi, Scheme::Strang, n)
}

/// Richardson self-consistency: `‖ref(dt_ref) − ref(dt_ref/2)‖`.
pub fn reference_self_consistency(psi: &WaveFunction, t: f64, v: &Potential, dt_ref: f64) -> Result<f64> {
    let a = reference_propagate_q(psi, t, v, dt_ref)?;
    let b = reference_propagate_q(psi, t, v, 0.5 * dt_ref)?;
    Ok(a.l2_distance(&b))
}

/// Equal-weight ensemble of coherent states sampled from `μ^in`.
#[derive(Clone, Debug)]
pub struct StateEnsemble {
    members: Vec<WaveFunction>,
    weights: Vec<f64>,
    sample_points: Vec<PhaseSample>,
    rng_seed: u64,
}

impl StateEnsemble {
    pub fn new(members: Vec<WaveFunction>, weights: Vec<f64>, sample_points: Vec<PhaseSample>, rng_seed: u64) -> Result<Self> {
        if members.is_empty() || members.len() != weights.len() {
            return Err(Error::InvalidInput("ensemble needs matching nonempty members/weights".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput("ensemble weights must be a probability vector".into()));
        }
        let (g, h) = (members[0].grid, members[0].hbar);
        if members.iter().any(|m| m.grid != g || m.hbar != h) {
            return Err(Error::InvalidInput("ensemble members must share grid and hbar".into()));
        }
        Ok(StateEnsemble {
            members,
            weights,
            sample_points,
            rng_seed,
        })
    }

    pub fn members(&self) -> &[WaveFunction] {
        &self.members
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sample_points(&self) -> &[PhaseSample] {
        &self.sample_points
    }

    pub fn seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.members[0].grid
    }

    pub fn hbar(&self) -> f64 {
        self.members[0].hbar
    }

    /// Propagates every member `n` steps with a shared propagator; member
    /// order is preserved.
    pub fn evolve(&self, prop: &SplitPropagator, scheme: Scheme, n: usize) -> Result<StateEnsemble> {
        let members = self
            .members
            .par_iter()
            .map(|m| prop.run(m, scheme, n))
            .collect::<Result<Vec<_>>>()?;
        Ok(StateEnsemble {
            members,
            weights: self.weights.clone(),
            sample_points: self.sample_points.clone(),
            rng_seed: self.rng_seed,
        })
    }

    /// Sub-ensemble of the given member indices, renormalized.
    pub fn select(&self, keep: &[usize]) -> StateEnsemble {
        let members: Vec<WaveFunction> = keep.iter().map(|&i| self.members[i].clone()).collect();
        let mut weights: Vec<f64> = keep.iter().map(|&i| self.weights[i]).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        StateEnsemble {
            members,
            weights,
            sample_points: keep.iter().map(|&i| self.sample_points[i].clone()).collect(),
            rng_seed: self.rng_seed,
        }
    }
}

/// Monte-Carlo realization of the Töplitz operator `OP^T_ħ((2πħ)^d μ^in)`:
/// `n_states` coherent states at low-discrepancy samples of `μ^in`, each
/// with weight `1/n_states`.
pub fn sample_toeplitz(
    mu_in: &InitialMeasure,
    n_states: usize,
    grid: &SpatialGrid,
    hbar: f64,
    seed: u64,
) -> Result<StateEnsemble> {
    if n_states == 0 {
        return Err(Error::InvalidInput("n_states must be >= 1".into()));
    }
    mu_in.validate()?;
    let samples = mu_in.sample(n_states, seed);
    let members = samples
        .par_iter()
        .map(|s| coherent_state(grid, hbar, &s.q, &s.p))
        .collect::<Result<Vec<_>>>()?;
    let w = 1.0 / n_states as f64;
    StateEnsemble::new(members, vec![w; n_states], samples, seed)
}
