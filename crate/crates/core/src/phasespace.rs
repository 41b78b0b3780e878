//! Wigner and Husimi densities of one-dimensional wavefunctions.
//!
//! Two independent Husimi algorithms are provided: Gaussian smoothing of
//! the Wigner function in Fourier space, and direct evaluation of
//! `|⟨q,p|ψ⟩|²/(2πħ)` by Gaussian-windowed FFTs. Their agreement is the
//! main numerical cross-check of this module.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::ot::DiscreteMeasure;
use crate::quantum::{StateEnsemble, WaveFunction};

/// Largest relative imaginary part tolerated in a Wigner transform.
pub const WIGNER_IMAG_LIMIT: f64 = 1e-10;
/// Values below this after smoothing signal an under-resolved input.
pub const NEGATIVE_ERROR: f64 = -1e-6;
/// Values in `[NEGATIVE_ERROR, NEGATIVE_CLAMP)` are clamped with a warning.
pub const NEGATIVE_CLAMP: f64 = -1e-12;
/// Largest discarded mass accepted by [`density_to_measure`].
pub const TRUNCATION_LIMIT: f64 = 1e-3;
/// Gaussian window half width in units of `√ħ`.
const WINDOW_SIGMAS: f64 = 9.0;

/// Uniform axis `start + i·step`, `i < count`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axis {
    pub start: f64,
    pub step: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(start: f64, step: f64, count: usize) -> Result<Self> {
        if !(step > 0.0) || count < 8 || !start.is_finite() {
            return Err(Error::InvalidInput(format!(
                "axis needs step > 0 and at least 8 nodes (step {step}, count {count})"
            )));
        }
        Ok(Axis { start, step, count })
    }

    pub fn node(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    pub fn end(&self) -> f64 {
        self.node(self.count - 1)
    }
}

/// Tensor grid over `(x, ξ)` for `d = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseGrid {
    pub x: Axis,
    pub p: Axis,
}

impl PhaseGrid {
    pub fn new(x: Axis, p: Axis) -> Self {
        PhaseGrid { x, p }
    }

    pub fn cell_area(&self) -> f64 {
        self.x.step * self.p.step
    }

    pub fn len(&self) -> usize {
        self.x.count * self.p.count
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Native Wigner grid of a wavefunction: every spatial node and the
    /// full momentum band `[−πħ/dx, πħ/dx)` at spacing `πħ/(N dx)`.
    pub fn wigner_native(psi: &WaveFunction) -> Result<Self> {
        let g = psi.grid();
        require_1d(g.dim())?;
        let n = g.n_points();
        let dxi = PI * psi.hbar() / (n as f64 * g.dx());
        Ok(PhaseGrid {
            x: Axis::new(-g.half_width(), g.dx(), n)?,
            p: Axis::new(-(n as f64) * dxi, dxi, 2 * n)?,
        })
    }

    /// The nodes of [`PhaseGrid::wigner_native`] inside
    /// `[x_lo, x_hi] × [p_lo, p_hi]`, widened to the next lattice node.
    pub fn wigner_crop(psi: &WaveFunction, x_range: (f64, f64), p_range: (f64, f64)) -> Result<Self> {
        let full = Self::wigner_native(psi)?;
        let crop = |a: Axis, (lo, hi): (f64, f64)| -> Result<Axis> {
            let last = a.count - 1;
            let i0 = (((lo - a.start) / a.step).floor().max(0.0) as usize).min(last);
            let i1 = (((hi - a.start) / a.step).ceil().max(0.0) as usize).min(last);
            if i1 < i0 + 7 {
                return Err(Error::InvalidInput(format!("crop [{lo}, {hi}] keeps fewer than 8 nodes")));
            }
            Axis::new(a.node(i0), a.step, i1 + 1 - i0)
        };
        Ok(PhaseGrid {
            x: crop(full.x, x_range)?,
            p: crop(full.p, p_range)?,
        })
    }

    /// Grid over `[x_lo, x_hi] × [p_lo, p_hi]` whose spacings are at most
    /// `step` and compatible with the windowed-FFT Husimi path: the
    /// position step is a multiple of the spatial `dx`, the momentum step a
    /// multiple of `2πħ/(M dx)` for a power of two `M`.
    pub fn husimi_window(psi: &WaveFunction, x_range: (f64, f64), p_range: (f64, f64), step: (f64, f64)) -> Result<Self> {
        let g = psi.grid();
        require_1d(g.dim())?;
        let hbar = psi.hbar();
        let dx = g.dx();
        let stride = ((step.0 / dx).floor() as usize).max(1);
        let sx = stride as f64 * dx;
        let i0 = ((x_range.0 + g.half_width()) / dx).floor();
        let x_start = -g.half_width() + i0 * dx;
        let nx = (((x_range.1 - x_start) / sx).ceil() as usize + 1).max(8);
        let mut m = window_len(hbar, dx).next_power_of_two();
        while 2.0 * PI * hbar / (m as f64 * dx) > step.1 {
            m *= 2;
        }
        let dp_fft = 2.0 * PI * hbar / (m as f64 * dx);
        let r = ((step.1 / dp_fft).floor() as usize).max(1);
        let sp = r as f64 * dp_fft;
        let np = (((p_range.1 - p_range.0) / sp).ceil() as usize + 1).max(8);
        Ok(PhaseGrid {
            x: Axis::new(x_start, sx, nx)?,
            p: Axis::new(p_range.0, sp, np)?,
        })
    }
}

fn require_1d(d: usize) -> Result<()> {
    if d != 1 {
        return Err(Error::UnsupportedDimension(d));
    }
    Ok(())
}

fn window_len(hbar: f64, dx: f64) -> usize {
    (2.0 * WINDOW_SIGMAS * hbar.sqrt() / dx).ceil() as usize + 2
}

/// Real density sampled on a [`PhaseGrid`]; `values[i·np + m]` is the
/// value at `(x_i, ξ_m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseDensity {
    grid: PhaseGrid,
    values: Vec<f64>,
    signed: bool,
    hbar: f64,
}

impl PhaseDensity {
    /// Signed density (e.g. a Wigner function); no sign constraint.
    pub fn signed(grid: PhaseGrid, values: Vec<f64>, hbar: f64) -> Result<Self> {
        Self::check_shape(&grid, &values)?;
        Ok(PhaseDensity {
            grid,
            values,
            signed: true,
            hbar,
        })
    }

    /// Nonnegative density; roundoff negatives are clamped, anything below
    /// `−1e-6` is rejected.
    pub fn nonnegative(grid: PhaseGrid, mut values: Vec<f64>, hbar: f64) -> Result<Self> {
        Self::check_shape(&grid, &values)?;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        if min < NEGATIVE_ERROR {
            return Err(Error::NegativeAfterSmoothing(min));
        }
        if min < NEGATIVE_CLAMP {
            log::warn!("clamping density values down to {min:e}");
        }
        values.iter_mut().for_each(|v| *v = v.max(0.0));
        Ok(PhaseDensity {
            grid,
            values,
            signed: false,
            hbar,
        })
    }

    fn check_shape(grid: &PhaseGrid, values: &[f64]) -> Result<()> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "{} values for a {}x{} phase grid",
                values.len(),
                grid.x.count,
                grid.p.count
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("density has non-finite values".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_signed(&self) -> bool {
        self.signed
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn value(&self, i: usize, m: usize) -> f64 {
        self.values[i * self.grid.p.count + m]
    }

    /// `Σ values · cell_area`.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }

    /// `(⟨x⟩, ⟨ξ⟩)` under the density.
    pub fn mean(&self) -> (f64, f64) {
        let np = self.grid.p.count;
        let (mut sx, mut sp, mut s) = (0.0, 0.0, 0.0);
        for (k, v) in self.values.iter().enumerate() {
            sx += v * self.grid.x.node(k / np);
            sp += v * self.grid.p.node(k % np);
            s += v;
        }
        (sx / s, sp / s)
    }

    /// `Σ |f − g| · cell_area` on identical grids.
    pub fn l1_distance(&self, other: &PhaseDensity) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::InvalidInput("densities live on different grids".into()));
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum::<f64>() * self.grid.cell_area())
    }

    pub fn sup_distance(&self, other: &PhaseDensity) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::InvalidInput("densities live on different grids".into()));
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    /// Block-sums the density onto a coarser uniform grid with at most
    /// `max_cells` nodes; mass is preserved exactly. Trailing partial
    /// blocks are padded with zeros.
    pub fn coarsen(&self, max_cells: usize) -> Result<PhaseDensity> {
        let (nx, np) = (self.grid.x.count, self.grid.p.count);
        if nx * np <= max_cells {
            return Ok(self.clone());
        }
        let mut best: Option<(usize, usize)> = None;
        for bx in 1..=nx {
            let cx = nx.div_ceil(bx);
            if cx < 8 {
                break;
            }
            let cap = max_cells / cx;
            if cap < 8 {
                continue;
            }
            let bp = np.div_ceil(cap).max(1);
            if np.div_ceil(bp) < 8 {
                continue;
            }
            let score = (bx * bp, ((bx as f64 * self.grid.x.step) / (bp as f64 * self.grid.p.step)).ln().abs());
            let better = match best {
                None => true,
                Some((ax, ap)) => {
                    let prev = (ax * ap, ((ax as f64 * self.grid.x.step) / (ap as f64 * self.grid.p.step)).ln().abs());
                    score.0 < prev.0 || (score.0 == prev.0 && score.1 < prev.1)
                }
            };
            if better {
                best = Some((bx, bp));
            }
        }
        let (bx, bp) = best.ok_or_else(|| Error::InvalidInput(format!("cannot coarsen to {max_cells} cells")))?;
        let (cx, cp) = (nx.div_ceil(bx), np.div_ceil(bp));
        let x = Axis::new(
            self.grid.x.start + 0.5 * (bx as f64 - 1.0) * self.grid.x.step,
            bx as f64 * self.grid.x.step,
            cx,
        )?;
        let p = Axis::new(
            self.grid.p.start + 0.5 * (bp as f64 - 1.0) * self.grid.p.step,
            bp as f64 * self.grid.p.step,
            cp,
        )?;
        let mut vals = vec![0.0; cx * cp];
        let ratio = 1.0 / (bx * bp) as f64;
        for i in 0..nx {
            for m in 0..np {
                vals[(i / bx) * cp + m / bp] += self.values[i * np + m] * ratio;
            }
        }
        Ok(PhaseDensity {
            grid: PhaseGrid { x, p },
            values: vals,
            signed: self.signed,
            hbar: self.hbar,
        })
    }

    /// `x,xi,value` rows, x-major.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "x,xi,value")?;
        let np = self.grid.p.count;
        for (k, v) in self.values.iter().enumerate() {
            writeln!(f, "{:e},{:e},{:e}", self.grid.x.node(k / np), self.grid.p.node(k % np), v)?;
        }
        f.flush()?;
        Ok(())
    }

    /// Little-endian flat binary: magic `PHD1`, `nx`, `np` as u64, then
    /// `x0, dx, p0, dp, ħ` as f64, a signed flag byte, then the values.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(b"PHD1")?;
        f.write_all(&(self.grid.x.count as u64).to_le_bytes())?;
        f.write_all(&(self.grid.p.count as u64).to_le_bytes())?;
        for v in [self.grid.x.start, self.grid.x.step, self.grid.p.start, self.grid.p.step, self.hbar] {
            f.write_all(&v.to_le_bytes())?;
        }
        f.write_all(&[self.signed as u8])?;
        for v in &self.values {
            f.write_all(&v.to_le_bytes())?;
        }
        f.flush()?;
        Ok(())
    }

    /// Reads the format written by [`PhaseDensity::write_binary`].
    pub fn read_binary(path: &Path) -> Result<PhaseDensity> {
        let bytes = std::fs::read(path)?;
        let bad = || Error::InvalidInput("not a PHD1 phase density file".into());
        if bytes.len() < 61 || &bytes[..4] != b"PHD1" {
            return Err(bad());
        }
        let u = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap()) as usize;
        let f = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let (nx, np) = (u(4), u(12));
        let (x0, dx, p0, dp, hbar) = (f(20), f(28), f(36), f(44), f(52));
        let signed = bytes[60] != 0;
        if bytes.len() != 61 + 8 * nx * np {
            return Err(bad());
        }
        let values = (0..nx * np).map(|k| f(61 + 8 * k)).collect();
        let grid = PhaseGrid::new(Axis::new(x0, dx, nx)?, Axis::new(p0, dp, np)?);
        if signed {
            Self::signed(grid, values, hbar)
        } else {
            Self::nonnegative(grid, values, hbar)
        }
    }
}

/// Spectral 2× interpolation of a periodic signal.
fn upsample2(a: &[Complex64], planner: &mut FftPlanner<f64>) -> Vec<Complex64> {
    let n = a.len();
    let mut spec = a.to_vec();
    planner.plan_fft_forward(n).process(&mut spec);
    let mut up = vec![Complex64::default(); 2 * n];
    for k in 0..n / 2 {
        up[k] = spec[k];
    }
    for k in n / 2 + 1..n {
        up[n + k] = spec[k];
    }
    // split the Nyquist bin symmetrically
    up[n / 2] = 0.5 * spec[n / 2];
    up[2 * n - n / 2] = 0.5 * spec[n / 2];
    planner.plan_fft_inverse(2 * n).process(&mut up);
    let s = 1.0 / n as f64;
    up.iter_mut().for_each(|c| *c *= s);
    up
}

/// Index `k` with `start + k·step = value`, if it is an integer within `1e-6`.
fn lattice_index(value: f64, step: f64) -> Option<i64> {
    let k = value / step;
    let r = k.round();
    ((k - r).abs() < 1e-6).then_some(r as i64)
}

/// `W(x, ξ) = (1/πħ) ∫ ψ(x+s) ψ̄(x−s) e^{−2iξs/ħ} ds`, evaluated with the
/// shift `s` on a half-spacing lattice (spectral upsampling) so that the
/// full momentum band is resolved. `grid` must lie on the native lattice
/// of [`PhaseGrid::wigner_native`] (any sub-lattice or crop of it).
pub fn wigner_transform(psi: &WaveFunction, grid: &PhaseGrid) -> Result<PhaseDensity> {
    let g = psi.grid();
    require_1d(g.dim())?;
    let n = g.n_points();
    let dx = g.dx();
    let hbar = psi.hbar();
    let dxi = PI * hbar / (n as f64 * dx);
    let misaligned = || Error::InvalidInput("phase grid is not on the native Wigner lattice".into());
    let x0 = lattice_index(grid.x.start + g.half_width(), dx).ok_or_else(misaligned)?;
    let xs = lattice_index(grid.x.step, dx).ok_or_else(misaligned)?;
    let p0 = lattice_index(grid.p.start, dxi).ok_or_else(misaligned)?;
    let ps = lattice_index(grid.p.step, dxi).ok_or_else(misaligned)?;
    if xs < 1 || ps < 1 || x0 < 0 || p0 < -(n as i64) || p0 + ps * (grid.p.count as i64 - 1) >= n as i64 {
        return Err(misaligned());
    }
    let mut planner = FftPlanner::new();
    let up = upsample2(psi.amplitudes(), &mut planner);
    let fft: Arc<dyn Fft<f64>> = planner.plan_fft_forward(2 * n);
    let nn = 2 * n;
    let scale = dx / (2.0 * PI * hbar);
    let np = grid.p.count;
    let rows: Vec<(Vec<f64>, f64)> = (0..grid.x.count)
        .into_par_iter()
        .map(|i| {
            let j = ((x0 + xs * i as i64) as usize) % n;
            let c0 = 2 * j;
            let mut buf = vec![Complex64::default(); nn];
            for k in 0..nn {
                // shift index k ∈ [−n, n) stored at k mod 2n
                let kk = if k < n { k as i64 } else { k as i64 - nn as i64 };
                let (ia, ib) = (c0 as i64 + kk, c0 as i64 - kk);
                // zero extension outside the box; wrapping would create
                // ghost copies at x ± L
                if (0..nn as i64).contains(&ia) && (0..nn as i64).contains(&ib) {
                    buf[k] = up[ia as usize] * up[ib as usize].conj();
                }
            }
            fft.process(&mut buf);
            let mut row = Vec::with_capacity(np);
            let mut imag: f64 = 0.0;
            for m in 0..np {
                let bin = (p0 + ps * m as i64).rem_euclid(nn as i64) as usize;
                let v = buf[bin] * scale;
                row.push(v.re);
                imag = imag.max(v.im.abs());
            }
            (row, imag)
        })
        .collect();
    let mut values = Vec::with_capacity(grid.len());
    let mut imag: f64 = 0.0;
    for (row, im) in rows {
        values.extend(row);
        imag = imag.max(im);
    }
    // |W| ≤ 1/(πħ) for a pure state; residue is measured against that scale
    let residue = imag * PI * hbar;
    if residue > WIGNER_IMAG_LIMIT {
        return Err(Error::ImaginaryResidueTooLarge(residue));
    }
    PhaseDensity::signed(*grid, values, hbar)
}

/// In-place 2-D FFT of a row-major `rows × cols` array.
fn fft2(buf: &mut [Complex64], rows: usize, cols: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (prow, pcol) = if inverse {
        (planner.plan_fft_inverse(cols), planner.plan_fft_inverse(rows))
    } else {
        (planner.plan_fft_forward(cols), planner.plan_fft_forward(rows))
    };
    buf.par_chunks_mut(cols).for_each(|r| prow.process(r));
    let mut t = vec![Complex64::default(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = buf[i * cols + j];
        }
    }
    t.par_chunks_mut(rows).for_each(|c| pcol.process(c));
    for i in 0..rows {
        for j in 0..cols {
            buf[i * cols + j] = t[j * rows + i];
        }
    }
}

fn angular_freq(k: usize, n: usize, step: f64) -> f64 {
    let s = if k < n.div_ceil(2) { k as f64 } else { k as f64 - n as f64 };
    2.0 * PI * s / (n as f64 * step)
}

/// `e^{ħΔ/4} W`: convolution with a Gaussian of variance `ħ/2` in each
/// phase-space coordinate, applied as a Fourier multiplier on the
/// (periodic) grid.
pub fn husimi_via_smoothing(w: &PhaseDensity) -> Result<PhaseDensity> {
    let grid = w.grid;
    let (nx, np) = (grid.x.count, grid.p.count);
    let mut buf: Vec<Complex64> = w.values.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    fft2(&mut buf, nx, np, false);
    let h4 = w.hbar / 4.0;
    for i in 0..nx {
        let kx = angular_freq(i, nx, grid.x.step);
        for m in 0..np {
            let kp = angular_freq(m, np, grid.p.step);
            buf[i * np + m] *= (-h4 * (kx * kx + kp * kp)).exp();
        }
    }
    fft2(&mut buf, nx, np, true);
    let s = 1.0 / (nx * np) as f64;
    let values = buf.iter().map(|c| c.re * s).collect();
    PhaseDensity::nonnegative(grid, values, w.hbar)
}

/// Power-of-two FFT length `M` and stride `r` with `p.step = r·2πħ/(M dx)`
/// and `(count−1)·r < M`, if the momentum axis admits the fast path.
fn fast_husimi_plan(hbar: f64, dx: f64, p: &Axis) -> Option<(usize, usize)> {
    let mut m = window_len(hbar, dx).next_power_of_two();
    while m <= 1 << 22 {
        let r = p.step * m as f64 * dx / (2.0 * PI * hbar);
        let rr = r.round();
        if rr >= 1.0 && (r - rr).abs() < 1e-9 * rr && (p.count - 1) * (rr as usize) < m {
            return Some((m, rr as usize));
        }
        m *= 2;
    }
    None
}

/// `Q(q, p) = |⟨q,p|ψ⟩|² / (2πħ)` at every grid node.
///
/// For each `q` the product of `ψ` with the Gaussian window is
/// Fourier-transformed once, giving all momenta on the lattice
/// `2πħ/(M dx)`; grids off that lattice fall back to direct summation.
pub fn husimi_direct(psi: &WaveFunction, grid: &PhaseGrid) -> Result<PhaseDensity> {
    let g = psi.grid();
    require_1d(g.dim())?;
    let n = g.n_points();
    let dx = g.dx();
    let hbar = psi.hbar();
    let amps = psi.amplitudes();
    let half = WINDOW_SIGMAS * hbar.sqrt();
    let x_origin = -g.half_width();
    let pref = dx * dx / ((PI * hbar).sqrt() * 2.0 * PI * hbar);
    let np = grid.p.count;
    let p0 = grid.p.start;
    let plan = fast_husimi_plan(hbar, dx, &grid.p);
    let fft = plan.map(|(m, _)| FftPlanner::<f64>::new().plan_fft_forward(m));
    let wlen = window_len(hbar, dx);

    let rows: Vec<Vec<f64>> = (0..grid.x.count)
        .into_par_iter()
        .map(|i| {
            let q = grid.x.node(i);
            let ia = ((q - half - x_origin) / dx).floor() as i64;
            // windowed, demodulated samples f_l at x_l = x_origin + (ia + l) dx
            let window: Vec<(f64, Complex64)> = (0..wlen as i64)
                .map(|l| {
                    let x = x_origin + (ia + l) as f64 * dx;
                    let a = amps[(ia + l).rem_euclid(n as i64) as usize];
                    let gw = (-(x - q) * (x - q) / (2.0 * hbar)).exp();
                    (x, a * gw)
                })
                .collect();
            let mut row = vec![0.0; np];
            match (plan, &fft) {
                (Some((m, r)), Some(fft)) => {
                    let mut buf = vec![Complex64::default(); m];
                    for (l, (x, f)) in window.iter().enumerate() {
                        buf[l] = f * Complex64::from_polar(1.0, -p0 * x / hbar);
                    }
                    fft.process(&mut buf);
                    for (k, v) in row.iter_mut().enumerate() {
                        *v = pref * buf[k * r].norm_sqr();
                    }
                }
                _ => {
                    for (k, v) in row.iter_mut().enumerate() {
                        let p = grid.p.node(k);
                        let s: Complex64 = window
                            .iter()
                            .map(|(x, f)| f * Complex64::from_polar(1.0, -p * x / hbar))
                            .sum();
                        *v = pref * s.norm_sqr();
                    }
                }
            }
            row
        })
        .collect();
    PhaseDensity::nonnegative(*grid, rows.concat(), hbar)
}

/// Weighted average of member Husimi densities, reduced in member order.
pub fn husimi_of_ensemble(ens: &StateEnsemble, grid: &PhaseGrid) -> Result<PhaseDensity> {
    let parts = ens
        .members()
        .par_iter()
        .map(|m| husimi_direct(m, grid))
        .collect::<Result<Vec<_>>>()?;
    let mut values = vec![0.0; grid.len()];
    for (part, w) in parts.iter().zip(ens.weights()) {
        for (acc, v) in values.iter_mut().zip(&part.values) {
            *acc += w * v;
        }
    }
    PhaseDensity::nonnegative(*grid, values, ens.hbar())
}

/// Atoms at the grid nodes whose cell mass is at least
/// `threshold · max_cell_mass`, renormalized; the dropped mass fraction is
/// recorded on the measure.
pub fn density_to_measure(pd: &PhaseDensity, threshold: f64) -> Result<DiscreteMeasure> {
    if pd.signed {
        return Err(Error::InvalidInput("signed densities cannot be turned into measures".into()));
    }
    if !(threshold >= 0.0) {
        return Err(Error::InvalidInput(format!("threshold must be >= 0, got {threshold}")));
    }
    let area = pd.grid.cell_area();
    let total: f64 = pd.values.iter().sum::<f64>() * area;
    if !(total > 0.0) {
        return Err(Error::InvalidInput("density has no mass".into()));
    }
    let max = pd.values.iter().copied().fold(0.0, f64::max) * area;
    let cut = threshold * max;
    let np = pd.grid.p.count;
    let mut support = Vec::new();
    let mut weights = Vec::new();
    let mut kept = 0.0;
    for (k, v) in pd.values.iter().enumerate() {
        let mass = v * area;
        if mass > 0.0 && mass >= cut {
            support.push(pd.grid.x.node(k / np));
            support.push(pd.grid.p.node(k % np));
            weights.push(mass);
            kept += mass;
        }
    }
    let discarded = ((total - kept) / total).max(0.0);
    if discarded > TRUNCATION_LIMIT {
        return Err(Error::ExcessiveTruncation(discarded));
    }
    Ok(DiscreteMeasure::normalized(2, support, weights)?.with_discarded_mass(discarded))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::Scheme;
    use crate::potentials::Potential;
    use crate::quantum::{coherent_state, sample_toeplitz, SpatialGrid, SplitPropagator};
    use crate::sampling::InitialMeasure;

    fn gaussian_q(hbar: f64, q: f64, p: f64) -> impl Fn(f64, f64) -> f64 {
        move |x, xi| (-((x - q).powi(2) + (xi - p).powi(2)) / (2.0 * hbar)).exp() / (2.0 * PI * hbar)
    }

    #[test]
    fn wigner_of_coherent_state_is_the_analytic_gaussian() {
        let hbar = 0.1;
        let g = SpatialGrid::new(1, 256, 2.0 * PI).unwrap();
        let psi = coherent_state(&g, hbar, &[0.7], &[-0.4]).unwrap();
        let grid = PhaseGrid::wigner_native(&psi).unwrap();
        let w = wigner_transform(&psi, &grid).unwrap();
        assert!(w.is_signed());
        assert!((w.mass() - 1.0).abs() < 1e-6);
        let mut worst: f64 = 0.0;
        for i in 0..grid.x.count {
            for m in 0..grid.p.count {
                let (x, xi) = (grid.x.node(i), grid.p.node(m));
                let want = (-((x - 0.7).powi(2) + (xi + 0.4).powi(2)) / hbar).exp() / (PI * hbar);
                worst = worst.max((w.value(i, m) - want).abs());
            }
        }
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn wigner_goes_negative_for_odd_states() {
        let hbar = 0.2;
        let g = SpatialGrid::new(1, 256, 2.0 * PI).unwrap();
        let amps = (0..256)
            .map(|i| {
                let x = g.coord(i);
                Complex64::new(x * (-x * x / (2.0 * hbar)).exp(), 0.0)
            })
            .collect();
        let psi = WaveFunction::from_amplitudes(g, amps, hbar).unwrap();
        let grid = PhaseGrid::wigner_native(&psi).unwrap();
        let w = wigner_transform(&psi, &grid).unwrap();
        // node 128 is x = 0, bin 256 is ξ = 0
        assert_eq!(grid.x.node(128), 0.0);
        assert_eq!(grid.p.node(256), 0.0);
        let w00 = w.value(128, 256);
        assert!(w00 < 0.0);
        assert!((w00 + 1.0 / (PI * hbar)).abs() < 1e-8);
        assert!((w.mass() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn wigner_mass_of_a_superposition() {
        let hbar = 0.05;
        let g = SpatialGrid::new(1, 512, PI).unwrap();
        let a = coherent_state(&g, hbar, &[-0.8], &[0.5]).unwrap();
        let b = coherent_state(&g, hbar, &[0.6], &[-0.3]).unwrap();
        let amps = a.amplitudes().iter().zip(b.amplitudes()).map(|(x, y)| x + y * Complex64::new(0.0, 0.7)).collect();
        let psi = WaveFunction::from_amplitudes(g, amps, hbar).unwrap();
        let w = wigner_transform(&psi, &PhaseGrid::wigner_native(&psi).unwrap()).unwrap();
        assert!((w.mass() - 1.0).abs() < 1e-6);
        assert!(w.values().iter().any(|v| *v < -1e-3), "interference should go negative");
    }

    #[test]
    fn wigner_rejects_off_lattice_grids_and_higher_dimensions() {
        let g = SpatialGrid::new(1, 64, 2.0 * PI).unwrap();
        let psi = coherent_state(&g, 0.1, &[0.0], &[0.0]).unwrap();
        let mut grid = PhaseGrid::wigner_native(&psi).unwrap();
        grid.p.step *= 1.37;
        assert!(matches!(wigner_transform(&psi, &grid), Err(Error::InvalidInput(_))));
        let g2 = SpatialGrid::new(2, 16, 2.0 * PI).unwrap();
        let psi2 = coherent_state(&g2, 0.05, &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!(matches!(PhaseGrid::wigner_native(&psi2), Err(Error::UnsupportedDimension(2))));
    }

    #[test]
    fn smoothing_of_coherent_wigner_gives_the_husimi_gaussian() {
        let hbar = 0.1;
        let g = SpatialGrid::new(1, 256, 2.0 * PI).unwrap();
        let psi = coherent_state(&g, hbar, &[0.3], &[0.9]).unwrap();
        let grid = PhaseGrid::wigner_native(&psi).unwrap();
        let w = wigner_transform(&psi, &grid).unwrap();
        let h = husimi_via_smoothing(&w).unwrap();
        assert!(!h.is_signed());
        assert!((h.mass() - w.mass()).abs() < 1e-8);
        let want = gaussian_q(hbar, 0.3, 0.9);
        let mut worst: f64 = 0.0;
        for i in 0..grid.x.count {
            for m in 0..grid.p.count {
                worst = worst.max((h.value(i, m) - want(grid.x.node(i), grid.p.node(m))).abs());
            }
        }
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn smoothing_a_smooth_density_changes_it_by_order_hbar() {
        let x = Axis::new(-6.0, 0.05, 240).unwrap();
        let p = Axis::new(-6.0, 0.05, 240).unwrap();
        let grid = PhaseGrid::new(x, p);
        let f = |x: f64, y: f64| {
            0.6 * (-(x - 0.5).powi(2) - 0.5 * (y + 0.3).powi(2)).exp() + 0.4 * (-0.5 * (x + 1.0).powi(2) - (y - 0.8).powi(2)).exp()
        };
        let vals: Vec<f64> = (0..grid.len()).map(|k| f(x.node(k / 240), p.node(k % 240))).collect();
        let change = |hbar: f64| {
            let d = PhaseDensity::nonnegative(grid, vals.clone(), hbar).unwrap();
            husimi_via_smoothing(&d).unwrap().l1_distance(&d).unwrap()
        };
        let (a, b) = (change(1e-2), change(1e-3));
        let ratio = a / b;
        assert!((ratio - 10.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn smoothing_rejects_strongly_negative_input() {
        let x = Axis::new(0.0, 0.1, 16).unwrap();
        let grid = PhaseGrid::new(x, x);
        let mut vals = vec![0.0; 256];
        vals[0] = -50.0;
        vals[1] = 50.0;
        let d = PhaseDensity::signed(grid, vals, 1e-4).unwrap();
        assert!(matches!(husimi_via_smoothing(&d), Err(Error::NegativeAfterSmoothing(_))));
    }

    #[test]
    fn direct_husimi_of_coherent_state() {
        let hbar = 0.1;
        let g = SpatialGrid::new(1, 256, 2.0 * PI).unwrap();
        let psi = coherent_state(&g, hbar, &[0.3], &[0.9]).unwrap();
        let want = gaussian_q(hbar, 0.3, 0.9);
        let native = PhaseGrid::wigner_native(&psi).unwrap();
        let window = PhaseGrid::husimi_window(&psi, (-2.5, 3.1), (-1.9, 3.7), (0.05, 0.05)).unwrap();
        // an off-lattice grid exercises the direct-summation path
        let odd = PhaseGrid::new(Axis::new(-2.0, 0.071, 80).unwrap(), Axis::new(-1.5, 0.0667, 80).unwrap());
        assert!(fast_husimi_plan(hbar, g.dx(), &native.p).is_some());
        assert!(fast_husimi_plan(hbar, g.dx(), &window.p).is_some());
        assert!(fast_husimi_plan(hbar, g.dx(), &odd.p).is_none());
        for grid in [native, window, odd] {
            let h = husimi_direct(&psi, &grid).unwrap();
            assert!(h.values().iter().all(|v| *v >= 0.0));
            let mut worst: f64 = 0.0;
            for i in 0..grid.x.count {
                for m in 0..grid.p.count {
                    worst = worst.max((h.value(i, m) - want(grid.x.node(i), grid.p.node(m))).abs());
                }
            }
            assert!(worst < 1e-6, "{worst}");
        }
        let h = husimi_direct(&psi, &native).unwrap();
        assert!((h.mass() - 1.0).abs() < 1e-6);
        let h = husimi_direct(&psi, &window).unwrap();
        assert!((h.mass() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cropped_wigner_matches_the_native_grid() {
        let hbar = 0.05;
        let g = SpatialGrid::new(1, 256, 2.0 * PI).unwrap();
        let psi = coherent_state(&g, hbar, &[0.7], &[-0.4]).unwrap();
        let native = PhaseGrid::wigner_native(&psi).unwrap();
        let crop = PhaseGrid::wigner_crop(&psi, (-0.5, 2.0), (-1.5, 0.6)).unwrap();
        assert!(crop.x.start <= -0.5 && crop.x.end() >= 2.0 && crop.len() < native.len());
        let full = wigner_transform(&psi, &native).unwrap();
        let part = wigner_transform(&psi, &crop).unwrap();
        let i0 = ((crop.x.start - native.x.start) / native.x.step).round() as usize;
        let m0 = ((crop.p.start - native.p.start) / native.p.step).round() as usize;
        for i in 0..crop.x.count {
            for m in 0..crop.p.count {
                assert!((part.value(i, m) - full.value(i0 + i, m0 + m)).abs() < 1e-12);
            }
        }
        assert!(PhaseGrid::wigner_crop(&psi, (0.0, 0.01), (-1.0, 1.0)).is_err());
    }

    #[test]
    fn husimi_algorithms_agree_on_an_evolved_state() {
        let hbar = 0.05;
        let v = Potential::pendulum(1, 1.0).unwrap();
        let g = SpatialGrid::new(1, 512, 2.0 * PI).unwrap();
        let psi0 = coherent_state(&g, hbar, &[1.2], &[0.4]).unwrap();
        let prop = SplitPropagator::new(&g, hbar, &v, 0.01).unwrap();
        let psi = prop.run(&psi0, Scheme::Strang, 200).unwrap();
        let grid = PhaseGrid::wigner_native(&psi).unwrap();
        let smoothed = husimi_via_smoothing(&wigner_transform(&psi, &grid).unwrap()).unwrap();
        let direct = husimi_direct(&psi, &grid).unwrap();
        let l1 = smoothed.l1_distance(&direct).unwrap();
        assert!(l1 <= 1e-5, "{l1}");
        assert!((direct.mass() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ensemble_husimi() {
        let hbar = 0.1;
        let g = SpatialGrid::new(1, 256, 2.0 * PI).unwrap();
        let psi = coherent_state(&g, hbar, &[0.3], &[0.2]).unwrap();
        let grid = PhaseGrid::husimi_window(&psi, (-2.0, 2.6), (-2.3, 2.7), (0.06, 0.06)).unwrap();
        let single = husimi_direct(&psi, &grid).unwrap();
        let dirac = InitialMeasure::Dirac {
            q: vec![0.3],
            p: vec![0.2],
        };
        let one = sample_toeplitz(&dirac, 1, &g, hbar, 0).unwrap();
        let two = sample_toeplitz(&dirac, 2, &g, hbar, 0).unwrap();
        let h1 = husimi_of_ensemble(&one, &grid).unwrap();
        let h2 = husimi_of_ensemble(&two, &grid).unwrap();
        assert!(h1.sup_distance(&single).unwrap() == 0.0);
        assert!(h2.sup_distance(&single).unwrap() < 1e-13);
        assert!((h2.mass() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ensemble_husimi_mean_tracks_the_initial_measure() {
        let hbar = 0.01;
        let g = SpatialGrid::new(1, 1024, 2.0 * PI).unwrap();
        let mu = InitialMeasure::Gaussian {
            mean_q: vec![1.0],
            mean_p: vec![0.0],
            std_q: 0.25,
            std_p: 0.25,
        };
        let n = 64;
        let ens = sample_toeplitz(&mu, n, &g, hbar, 17).unwrap();
        let grid = PhaseGrid::husimi_window(&ens.members()[0], (-0.5, 2.5), (-1.5, 1.5), (0.03, 0.03)).unwrap();
        let h = husimi_of_ensemble(&ens, &grid).unwrap();
        let (mx, mp) = h.mean();
        // Husimi variance adds ħ to the sampling variance
        let se = ((0.25f64.powi(2) + hbar) / n as f64).sqrt();
        assert!((mx - 1.0).abs() <= 3.0 * se, "{mx}");
        assert!(mp.abs() <= 3.0 * se, "{mp}");
    }

    #[test]
    fn density_to_measure_examples() {
        let x = Axis::new(0.0, 1.0, 8).unwrap();
        let grid = PhaseGrid::new(x, x);
        let mut vals = vec![0.0; 64];
        vals[9] = 1.0;
        let d = PhaseDensity::nonnegative(grid, vals.clone(), 0.1).unwrap();
        let m = density_to_measure(&d, 1e-8).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.weights(), &[1.0]);
        assert_eq!(m.point(0), &[1.0, 1.0]);
        vals[20] = 1e-9;
        vals[30] = 0.5;
        let d = PhaseDensity::nonnegative(grid, vals, 0.1).unwrap();
        assert_eq!(density_to_measure(&d, 0.0).unwrap().len(), 3);
        assert!(matches!(density_to_measure(&d, 0.9), Err(Error::ExcessiveTruncation(_))));
        let signed = PhaseDensity::signed(grid, vec![0.0; 64], 0.1).unwrap();
        assert!(density_to_measure(&signed, 0.0).is_err());
    }

    #[test]
    fn gaussian_truncation_loses_almost_nothing() {
        let hbar = 0.1;
        let g = SpatialGrid::new(1, 256, 2.0 * PI).unwrap();
        let psi = coherent_state(&g, hbar, &[0.0], &[0.0]).unwrap();
        let s = hbar.sqrt();
        let grid = PhaseGrid::husimi_window(&psi, (-8.0 * s, 8.0 * s), (-8.0 * s, 8.0 * s), (0.25 * s, 0.25 * s)).unwrap();
        let h = husimi_direct(&psi, &grid).unwrap();
        let m = density_to_measure(&h, 1e-8).unwrap();
        assert!(m.discarded_mass() <= 1e-6, "{}", m.discarded_mass());
        assert!(m.len() < grid.len());
    }

    #[test]
    fn coarsening_preserves_mass_and_respects_the_cap() {
        let x = Axis::new(-3.0, 0.01, 600).unwrap();
        let p = Axis::new(-2.0, 0.02, 200).unwrap();
        let grid = PhaseGrid::new(x, p);
        let vals: Vec<f64> = (0..grid.len())
            .map(|k| {
                let (a, b) = (x.node(k / 200), p.node(k % 200));
                (-(a * a + b * b)).exp() / PI
            })
            .collect();
        let d = PhaseDensity::nonnegative(grid, vals, 0.1).unwrap();
        let c = d.coarsen(2000).unwrap();
        assert!(c.grid().len() <= 2000);
        assert!((c.mass() - d.mass()).abs() < 1e-12);
        let (m0, m1) = (d.mean(), c.mean());
        assert!((m0.0 - m1.0).abs() < 1e-5 && (m0.1 - m1.1).abs() < 1e-5);
        assert_eq!(d.coarsen(1_000_000).unwrap(), d);
    }

    #[test]
    fn export_round_trip() {
        let x = Axis::new(-1.0, 0.25, 8).unwrap();
        let grid = PhaseGrid::new(x, x);
        let vals: Vec<f64> = (0..64).map(|k| k as f64 / 2016.0 * 16.0).collect();
        let d = PhaseDensity::nonnegative(grid, vals, 0.5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("d.bin");
        d.write_binary(&bin).unwrap();
        assert_eq!(PhaseDensity::read_binary(&bin).unwrap(), d);
        let csv = dir.path().join("d.csv");
        d.write_csv(&csv).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        assert_eq!(text.lines().count(), 65);
        assert!(text.starts_with("x,xi,value\n"));
    }
}
