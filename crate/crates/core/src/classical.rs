//! Classical Liouville dynamics by particle pushforward.
//!
//! A density `f` is represented by a weighted particle cloud. Splitting
//! schemes move every particle by the forward map: Lie-Trotter drifts then
//! kicks, Strang does half-drift, kick, half-drift. Pulling a density back
//! through these maps gives `f^n ∘ K ∘ P` in the characteristic variables
//! `K_t(y,η) = (y − tη, η)`, `P_t(y,η) = (y, η + t∇V(y))`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potentials::Potential;
use crate::sampling::InitialMeasure;

/// Tolerance of the adaptive reference integrator.
pub const REFERENCE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct PhasePoint {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
}

impl PhasePoint {
    pub fn new(x: Vec<f64>, xi: Vec<f64>) -> Self {
        debug_assert_eq!(x.len(), xi.len());
        PhasePoint { x, xi }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// Euclidean distance in `R^{2d}`.
    pub fn distance(&self, other: &PhasePoint) -> f64 {
        self.x
            .iter()
            .zip(&other.x)
            .chain(self.xi.iter().zip(&other.xi))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    LieTrotter,
    Strang,
    Reference,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::LieTrotter => "lie_trotter",
            Scheme::Strang => "strang",
            Scheme::Reference => "reference",
        }
    }
}

/// Weighted particle cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseEnsemble {
    points: Vec<PhasePoint>,
    weights: Vec<f64>,
    rng_seed: u64,
}

impl PhaseEnsemble {
    pub fn new(points: Vec<PhasePoint>, weights: Vec<f64>, rng_seed: u64) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(Error::InvalidInput(format!(
                "ensemble needs matching nonempty points/weights, got {} and {}",
                points.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidInput("ensemble weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("ensemble weights sum to {total}")));
        }
        let d = points[0].dim();
        if points.iter().any(|p| p.dim() != d || p.xi.len() != d) {
            return Err(Error::InvalidInput("ensemble points disagree on dimension".into()));
        }
        Ok(PhaseEnsemble {
            points,
            weights,
            rng_seed,
        })
    }

    /// Equal-weight low-discrepancy sample of `measure`.
    pub fn from_measure(measure: &InitialMeasure, n: usize, seed: u64) -> Result<Self> {
        measure.validate()?;
        let points: Vec<PhasePoint> = measure
            .sample(n, seed)
            .into_iter()
            .map(|s| PhasePoint::new(s.q, s.p))
            .collect();
        let w = 1.0 / points.len() as f64;
        let weights = vec![w; points.len()];
        PhaseEnsemble::new(points, weights, seed)
    }

    pub fn points(&self) -> &[PhasePoint] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    /// Keeps every `stride`-th particle, renormalizing weights.
    pub fn subsample(&self, max_points: usize) -> PhaseEnsemble {
        if self.len() <= max_points {
            return self.clone();
        }
        let stride = self.len().div_ceil(max_points);
        let points: Vec<PhasePoint> = self.points.iter().step_by(stride).cloned().collect();
        let mut weights: Vec<f64> = self.weights.iter().step_by(stride).copied().collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        PhaseEnsemble {
            points,
            weights,
            rng_seed: self.rng_seed,
        }
    }
}

/// Free motion `(x, ξ) ↦ (x + tξ, ξ)`.
pub fn drift(p: &PhasePoint, t: f64) -> PhasePoint {
    let mut q = p.clone();
    drift_in_place(&mut q, t);
    q
}

/// Potential impulse `(x, ξ) ↦ (x, ξ − t∇V(x))`.
pub fn kick(p: &PhasePoint, t: f64, v: &Potential) -> PhasePoint {
    let mut q = p.clone();
    let mut g = vec![0.0; q.dim()];
    kick_in_place(&mut q, t, v, &mut g);
    q
}

fn drift_in_place(p: &mut PhasePoint, t: f64) {
    for (x, xi) in p.x.iter_mut().zip(&p.xi) {
        *x += t * xi;
    }
}

fn kick_in_place(p: &mut PhasePoint, t: f64, v: &Potential, g: &mut [f64]) {
    v.grad(&p.x, g);
    for (xi, gk) in p.xi.iter_mut().zip(g.iter()) {
        *xi -= t * gk;
    }
}

/// One Lie-Trotter step: drift by `dt`, then kick by `dt`.
pub fn lie_trotter_step(p: &PhasePoint, dt: f64, v: &Potential) -> PhasePoint {
    let mut q = p.clone();
    let mut g = vec![0.0; q.dim()];
    drift_in_place(&mut q, dt);
    kick_in_place(&mut q, dt, v, &mut g);
    q
}

/// One Strang step: half drift, full kick, half drift.
pub fn strang_step(p: &PhasePoint, dt: f64, v: &Potential) -> PhasePoint {
    let mut q = p.clone();
    let mut g = vec![0.0; q.dim()];
    drift_in_place(&mut q, 0.5 * dt);
    kick_in_place(&mut q, dt, v, &mut g);
    drift_in_place(&mut q, 0.5 * dt);
    q
}

/// Exact Hamiltonian flow of `½|ξ|² + V(x)` at time `t` (any sign).
///
/// Free and harmonic potentials use closed forms; anything else runs an
/// adaptive Dormand-Prince 5(4) integrator with mixed tolerance `tol`.
pub fn reference_flow(p: &PhasePoint, t: f64, v: &Potential, tol: f64) -> Result<PhasePoint> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }
    if t == 0.0 {
        return Ok(p.clone());
    }
    if v.is_zero() {
        return Ok(drift(p, t));
    }
    if let Some(w) = v.harmonic_omega() {
        if w == 0.0 {
            return Ok(drift(p, t));
        }
        let (s, c) = (w * t).sin_cos();
        let x = p.x.iter().zip(&p.xi).map(|(x, xi)| x * c + xi / w * s).collect();
        let xi = p.x.iter().zip(&p.xi).map(|(x, xi)| -x * w * s + xi * c).collect();
        return Ok(PhasePoint { x, xi });
    }
    dopri5(p, t, v, tol)
}

// Dormand-Prince 5(4) tableau; the system is autonomous so the nodes are unused.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

fn dopri5(p: &PhasePoint, t_end: f64, v: &Potential, tol: f64) -> Result<PhasePoint> {
    let d = p.dim();
    let n = 2 * d;
    let dir = t_end.signum();
    let span = t_end.abs();
    let mut y: Vec<f64> = p.x.iter().chain(&p.xi).copied().collect();
    let mut k = vec![vec![0.0; n]; 7];
    let mut stage = vec![0.0; n];
    let mut y5 = vec![0.0; n];
    let mut g = vec![0.0; d];
    // integrate in s = |t| so the step is always positive; dy/ds = dir·f(y)
    let rhs = |y: &[f64], out: &mut [f64], g: &mut [f64]| {
        v.grad(&y[..d], g);
        for i in 0..d {
            out[i] = dir * y[d + i];
            out[d + i] = -dir * g[i];
        }
    };
    let mut s = 0.0;
    let mut h = (tol.powf(0.2) * 0.1).min(span);
    rhs(&y, &mut k[0], &mut g);
    while s < span {
        if s + h > span {
            h = span - s;
        }
        for i in 1..7 {
            for j in 0..n {
                let acc: f64 = (0..i).map(|m| A[i][m] * k[m][j]).sum();
                stage[j] = y[j] + h * acc;
            }
            rhs(&stage, &mut k[i], &mut g);
        }
        let mut err: f64 = 0.0;
        for j in 0..n {
            let mut s5 = 0.0;
            let mut s4 = 0.0;
            for m in 0..7 {
                s5 += B5[m] * k[m][j];
                s4 += B4[m] * k[m][j];
            }
            y5[j] = y[j] + h * s5;
            let scale = tol + tol * y[j].abs().max(y5[j].abs());
            err = err.max((h * (s5 - s4)).abs() / scale);
        }
        if err <= 1.0 {
            s += h;
            y.copy_from_slice(&y5);
            // FSAL: the last stage is f(y_{n+1})
            let last = k[6].clone();
            k[0].copy_from_slice(&last);
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
        if h < 1e-14 * span.max(1.0) && s < span {
            return Err(Error::StepSizeUnderflow { t: dir * s, step: h });
        }
    }
    Ok(PhasePoint {
        x: y[..d].to_vec(),
        xi: y[d..].to_vec(),
    })
}

fn advance(p: &PhasePoint, scheme: Scheme, dt: f64, n_steps: usize, v: &Potential) -> Result<PhasePoint> {
    match scheme {
        Scheme::Reference => reference_flow(p, dt * n_steps as f64, v, REFERENCE_TOL),
        Scheme::LieTrotter | Scheme::Strang => {
            let mut q = p.clone();
            let mut g = vec![0.0; q.dim()];
            for _ in 0..n_steps {
                if scheme == Scheme::LieTrotter {
                    drift_in_place(&mut q, dt);
                    kick_in_place(&mut q, dt, v, &mut g);
                } else {
                    drift_in_place(&mut q, 0.5 * dt);
                    kick_in_place(&mut q, dt, v, &mut g);
                    drift_in_place(&mut q, 0.5 * dt);
                }
            }
            Ok(q)
        }
    }
}

/// Pushes every particle `n_steps` times through `scheme`. Weights and
/// particle order are preserved, so two ensembles evolved from the same
/// initial cloud stay index-aligned.
pub fn evolve_ensemble(
    ens: &PhaseEnsemble,
    scheme: Scheme,
    dt: f64,
    n_steps: usize,
    v: &Potential,
) -> Result<PhaseEnsemble> {
    if !(dt >= 0.0) {
        return Err(Error::InvalidInput(format!("dt must be >= 0, got {dt}")));
    }
    let points = ens
        .points
        .par_iter()
        .map(|p| advance(p, scheme, dt, n_steps, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(PhaseEnsemble {
        points,
        weights: ens.weights.clone(),
        rng_seed: ens.rng_seed,
    })
}

/// Like [`evolve_ensemble`] for a splitting scheme, also returning
/// `μ_0, μ_1, …, μ_n` after every step.
pub fn evolve_with_moments(
    ens: &PhaseEnsemble,
    scheme: Scheme,
    dt: f64,
    n_steps: usize,
    v: &Potential,
) -> Result<(PhaseEnsemble, Vec<f64>)> {
    let mut cur = ens.clone();
    let mut moments = Vec::with_capacity(n_steps + 1);
    moments.push(second_moment(&cur));
    for _ in 0..n_steps {
        cur = evolve_ensemble(&cur, scheme, dt, 1, v)?;
        moments.push(second_moment(&cur));
    }
    Ok((cur, moments))
}

/// `μ = Σ w (|x|² + |ξ|²)`.
pub fn second_moment(ens: &PhaseEnsemble) -> f64 {
    ens.points
        .iter()
        .zip(&ens.weights)
        .map(|(p, w)| w * (sq(&p.x) + sq(&p.xi)))
        .sum()
}

/// `ν = Σ w (|ξ|² + |ξ|⁴)`.
pub fn momentum_moment_24(ens: &PhaseEnsemble) -> f64 {
    ens.points
        .iter()
        .zip(&ens.weights)
        .map(|(p, w)| {
            let s = sq(&p.xi);
            w * (s + s * s)
        })
        .sum()
}

fn sq(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}
