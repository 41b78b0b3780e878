//! Initial phase-space measures `μ^in` and their low-discrepancy sampling.
//!
//! Samples come from a Halton sequence with a seeded Cranley-Patterson
//! rotation, pushed through the Gaussian quantile function. Every sample
//! carries weight `1/n`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Two-sided 99.99% Gaussian quantile, `Φ^{-1}(0.99995)`.
pub const Z_9999: f64 = 3.890_591_886_413_094;

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// A probability measure on `R^d × R^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialMeasure {
    Dirac {
        q: Vec<f64>,
        p: Vec<f64>,
    },
    /// Product Gaussian with isotropic position and momentum spreads.
    Gaussian {
        mean_q: Vec<f64>,
        mean_p: Vec<f64>,
        std_q: f64,
        std_p: f64,
    },
    Mixture {
        components: Vec<MixtureComponent>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub measure: InitialMeasure,
}

/// One phase-space sample `(q, p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseSample {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl InitialMeasure {
    pub fn dim(&self) -> usize {
        match self {
            InitialMeasure::Dirac { q, .. } => q.len(),
            InitialMeasure::Gaussian { mean_q, .. } => mean_q.len(),
            InitialMeasure::Mixture { components } => {
                components.first().map_or(0, |c| c.measure.dim())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        match self {
            InitialMeasure::Dirac { q, p } => {
                if q.is_empty() || q.len() != p.len() {
                    return bad("dirac q and p must be nonempty and of equal length".into());
                }
            }
            InitialMeasure::Gaussian {
                mean_q,
                mean_p,
                std_q,
                std_p,
            } => {
                if mean_q.is_empty() || mean_q.len() != mean_p.len() {
                    return bad("gaussian means must be nonempty and of equal length".into());
                }
                if !(*std_q >= 0.0 && *std_p >= 0.0 && std_q.is_finite() && std_p.is_finite()) {
                    return bad(format!("gaussian spreads must be finite and >= 0, got {std_q}, {std_p}"));
                }
            }
            InitialMeasure::Mixture { components } => {
                if components.is_empty() {
                    return bad("mixture needs at least one component".into());
                }
                let d = components[0].measure.dim();
                let mut total = 0.0;
                for c in components {
                    c.measure.validate()?;
                    if c.measure.dim() != d {
                        return bad("mixture components disagree on dimension".into());
                    }
                    if !(c.weight > 0.0) {
                        return bad(format!("mixture weight must be positive, got {}", c.weight));
                    }
                    total += c.weight;
                }
                if (total - 1.0).abs() > 1e-12 {
                    return bad(format!("mixture weights sum to {total}, expected 1"));
                }
            }
        }
        Ok(())
    }

    /// `n` low-discrepancy samples; deterministic in `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<PhaseSample> {
        match self {
            InitialMeasure::Dirac { q, p } => vec![
                PhaseSample {
                    q: q.clone(),
                    p: p.clone()
                };
                n
            ],
            InitialMeasure::Gaussian {
                mean_q,
                mean_p,
                std_q,
                std_p,
            } => {
                let d = mean_q.len();
                let unit = Normal::new(0.0, 1.0).expect("standard normal");
                halton_points(n, 2 * d, seed)
                    .into_iter()
                    .map(|u| {
                        let z: Vec<f64> = u.iter().map(|&v| unit.inverse_cdf(v)).collect();
                        PhaseSample {
                            q: (0..d).map(|k| mean_q[k] + std_q * z[k]).collect(),
                            p: (0..d).map(|k| mean_p[k] + std_p * z[d + k]).collect(),
                        }
                    })
                    .collect()
            }
            InitialMeasure::Mixture { components } => {
                let counts = apportion(components.iter().map(|c| c.weight), n);
                let mut out = Vec::with_capacity(n);
                for (i, (c, &k)) in components.iter().zip(&counts).enumerate() {
                    let sub_seed = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i as u64 + 1));
                    out.extend(c.measure.sample(k, sub_seed));
                }
                out
            }
        }
    }

    /// `∫ (|q|² + |p|²) dμ`.
    pub fn second_moment(&self) -> f64 {
        match self {
            InitialMeasure::Dirac { q, p } => sq(q) + sq(p),
            InitialMeasure::Gaussian {
                mean_q,
                mean_p,
                std_q,
                std_p,
            } => {
                let d = mean_q.len() as f64;
                sq(mean_q) + sq(mean_p) + d * (std_q * std_q + std_p * std_p)
            }
            InitialMeasure::Mixture { components } => components
                .iter()
                .map(|c| c.weight * c.measure.second_moment())
                .sum(),
        }
    }

    /// `∫ (|p|² + |p|⁴) dμ`.
    pub fn momentum_moment_24(&self) -> f64 {
        match self {
            InitialMeasure::Dirac { p, .. } => {
                let s = sq(p);
                s + s * s
            }
            InitialMeasure::Gaussian { mean_p, std_p, .. } => {
                let s2 = std_p * std_p;
                let second: Vec<f64> = mean_p.iter().map(|m| m * m + s2).collect();
                let e2: f64 = second.iter().sum();
                // E|p|⁴ = (Σ E p_k²)² + Σ Var(p_k²), Var(p²) = 4m²s² + 2s⁴
                let var: f64 = mean_p.iter().map(|m| 4.0 * m * m * s2 + 2.0 * s2 * s2).sum();
                e2 + e2 * e2 + var
            }
            InitialMeasure::Mixture { components } => components
                .iter()
                .map(|c| c.weight * c.measure.momentum_moment_24())
                .sum(),
        }
    }

    /// `∫ |p| dμ` in closed form when available (Dirac, 1-d Gaussian, and
    /// mixtures of those).
    pub fn abs_momentum_moment(&self) -> Option<f64> {
        match self {
            InitialMeasure::Dirac { p, .. } => Some(sq(p).sqrt()),
            InitialMeasure::Gaussian { mean_p, std_p, .. } => {
                if mean_p.len() != 1 {
                    return None;
                }
                let (m, s) = (mean_p[0], *std_p);
                if s == 0.0 {
                    return Some(m.abs());
                }
                // folded normal mean
                let unit = Normal::new(0.0, 1.0).expect("standard normal");
                Some(
                    s * (2.0 / std::f64::consts::PI).sqrt() * (-m * m / (2.0 * s * s)).exp()
                        + m * (1.0 - 2.0 * unit.cdf(-m / s)),
                )
            }
            InitialMeasure::Mixture { components } => components
                .iter()
                .map(|c| c.measure.abs_momentum_moment().map(|v| c.weight * v))
                .sum(),
        }
    }

    /// Euclidean norm of the 99.99% momentum quantile (per coordinate).
    pub fn momentum_quantile(&self) -> f64 {
        match self {
            InitialMeasure::Dirac { p, .. } => sq(p).sqrt(),
            InitialMeasure::Gaussian { mean_p, std_p, .. } => mean_p
                .iter()
                .map(|m| (m.abs() + Z_9999 * std_p).powi(2))
                .sum::<f64>()
                .sqrt(),
            InitialMeasure::Mixture { components } => components
                .iter()
                .map(|c| c.measure.momentum_quantile())
                .fold(0.0, f64::max),
        }
    }

    /// Largest coordinate of the 99.99% position quantile.
    pub fn position_extent(&self) -> f64 {
        match self {
            InitialMeasure::Dirac { q, .. } => q.iter().fold(0.0, |a, v| a.max(v.abs())),
            InitialMeasure::Gaussian { mean_q, std_q, .. } => mean_q
                .iter()
                .fold(0.0, |a, m| a.max(m.abs() + Z_9999 * std_q)),
            InitialMeasure::Mixture { components } => components
                .iter()
                .map(|c| c.measure.position_extent())
                .fold(0.0, f64::max),
        }
    }
}

fn sq(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}

/// Radical inverse of `i` in base `b`.
fn radical_inverse(mut i: u64, b: u32) -> f64 {
    let b = b as u64;
    let inv = 1.0 / b as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % b) as f64 * f;
        i /= b;
        f *= inv;
    }
    r
}

/// `n` points of the randomly rotated Halton sequence in `(0,1)^dim`.
pub fn halton_points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(dim <= PRIMES.len(), "Halton dimension {dim} not supported");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
    (0..n)
        .map(|i| {
            (0..dim)
                .map(|k| {
                    let u = (radical_inverse(i as u64 + 1, PRIMES[k]) + shift[k]).fract();
                    u.clamp(1e-16, 1.0 - 1e-16)
                })
                .collect()
        })
        .collect()
}

/// Largest-remainder apportionment of `n` items to the given weights.
fn apportion(weights: impl Iterator<Item = f64>, n: usize) -> Vec<usize> {
    let w: Vec<f64> = weights.collect();
    let total: f64 = w.iter().sum();
    let exact: Vec<f64> = w.iter().map(|x| x / total * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut rem: Vec<(usize, f64)> = exact.iter().enumerate().map(|(i, x)| (i, x - x.floor())).collect();
    rem.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let missing = n - counts.iter().sum::<usize>();
    for &(i, _) in rem.iter().take(missing) {
        counts[i] += 1;
    }
    counts
}
