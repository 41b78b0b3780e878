//! External potentials `V`, their derivatives, and the scalar constants
//! (`E`, `Λ`, `M`, `M(V)`, `Lip(∇V)`) that the error bounds consume.
//!
//! Built-in potentials carry exact closed-form derivative norms. User-supplied
//! potentials get their norms from a dense grid search and are flagged as
//! estimated.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sup-norms of the derivatives of `V` and the gradient at the origin.
///
/// `f64::INFINITY` marks an unbounded derivative; such potentials are
/// ineligible for the uniform-in-ħ corollaries.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativeBounds {
    pub sup_grad: f64,
    pub sup_hess: f64,
    pub sup_third: f64,
    pub lip_grad: f64,
    pub grad_at_origin_norm: f64,
    /// True when the norms come from grid search rather than closed form.
    pub estimated: bool,
}

/// Serializable description of a potential, as written in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialSpec {
    Zero,
    Harmonic {
        #[serde(default = "one")]
        omega: f64,
    },
    Pendulum {
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// `Σ_axes Σ_k (cos_k cos(k x) + sin_k sin(k x))`, k = 1, 2, ...
    TrigSeries {
        #[serde(default)]
        cos: Vec<f64>,
        #[serde(default)]
        sin: Vec<f64>,
    },
}

fn one() -> f64 {
    1.0
}

impl PotentialSpec {
    pub fn build(&self, dim: usize) -> Result<Potential> {
        match *self {
            PotentialSpec::Zero => Ok(Potential::zero(dim)),
            PotentialSpec::Harmonic { omega } => Potential::harmonic(dim, omega),
            PotentialSpec::Pendulum { amplitude } => Potential::pendulum(dim, amplitude),
            PotentialSpec::TrigSeries { ref cos, ref sin } => {
                Potential::trig_series(dim, cos.clone(), sin.clone())
            }
        }
    }
}

type EvalFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type VecFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

struct CustomPotential {
    name: String,
    eval: Box<EvalFn>,
    grad: Box<VecFn>,
    hess: Box<VecFn>,
}

#[derive(Clone)]
enum Kind {
    Zero,
    Harmonic { omega: f64 },
    Pendulum { amplitude: f64 },
    TrigSeries { cos: Arc<[f64]>, sin: Arc<[f64]> },
    Custom(Arc<CustomPotential>),
}

/// A smooth real potential on `R^d`. Immutable once built.
#[derive(Clone)]
pub struct Potential {
    dim: usize,
    kind: Kind,
    bounds: DerivativeBounds,
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Potential")
            .field("name", &self.name())
            .field("dim", &self.dim)
            .field("bounds", &self.bounds)
            .finish()
    }
}

/// Samples per axis used when estimating derivative norms by grid search.
pub const GRID_SEARCH_SAMPLES: usize = 10_000;

impl Potential {
    pub fn zero(dim: usize) -> Self {
        Potential {
            dim,
            kind: Kind::Zero,
            bounds: DerivativeBounds {
                sup_grad: 0.0,
                sup_hess: 0.0,
                sup_third: 0.0,
                lip_grad: 0.0,
                grad_at_origin_norm: 0.0,
                estimated: false,
            },
        }
    }

    /// `V(x) = ½ ω² |x|²`. The gradient is unbounded.
    pub fn harmonic(dim: usize, omega: f64) -> Result<Self> {
        check_param("omega", omega)?;
        let w2 = omega * omega;
        Ok(Potential {
            dim,
            kind: Kind::Harmonic { omega },
            bounds: DerivativeBounds {
                sup_grad: f64::INFINITY,
                sup_hess: w2,
                sup_third: 0.0,
                lip_grad: w2,
                grad_at_origin_norm: 0.0,
                estimated: false,
            },
        })
    }

    /// `V(x) = a Σ_k (1 − cos x_k)`, 2π-periodic in every coordinate.
    pub fn pendulum(dim: usize, amplitude: f64) -> Result<Self> {
        check_param("amplitude", amplitude)?;
        let a = amplitude.abs();
        Ok(Potential {
            dim,
            kind: Kind::Pendulum { amplitude },
            bounds: DerivativeBounds {
                sup_grad: a * (dim as f64).sqrt(),
                sup_hess: a,
                sup_third: a,
                lip_grad: a,
                grad_at_origin_norm: 0.0,
                estimated: false,
            },
        })
    }

    /// Per-axis trigonometric series; norms estimated over one period.
    pub fn trig_series(dim: usize, cos: Vec<f64>, sin: Vec<f64>) -> Result<Self> {
        for &c in cos.iter().chain(sin.iter()) {
            check_param("trig coefficient", c)?;
        }
        let mut p = Potential {
            dim,
            kind: Kind::TrigSeries {
                cos: cos.into(),
                sin: sin.into(),
            },
            bounds: DerivativeBounds {
                sup_grad: 0.0,
                sup_hess: 0.0,
                sup_third: 0.0,
                lip_grad: 0.0,
                grad_at_origin_norm: 0.0,
                estimated: true,
            },
        };
        // Separable: the 1-d profile determines every norm.
        let profile = Potential {
            dim: 1,
            ..p.clone()
        };
        let b = estimate_bounds(&profile, &[(-PI, PI)], GRID_SEARCH_SAMPLES);
        let s = (dim as f64).sqrt();
        p.bounds = DerivativeBounds {
            sup_grad: b.sup_grad * s,
            grad_at_origin_norm: b.grad_at_origin_norm * s,
            ..b
        };
        Ok(p)
    }

    /// A user-supplied potential. Derivative norms are estimated by grid
    /// search with `samples_per_axis` points over `domain` (one interval per
    /// axis) and reported as estimated.
    pub fn custom<E, G, H>(
        name: impl Into<String>,
        dim: usize,
        domain: &[(f64, f64)],
        samples_per_axis: usize,
        eval: E,
        grad: G,
        hess: H,
    ) -> Result<Self>
    where
        E: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        H: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if domain.len() != dim {
            return Err(Error::InvalidInput(format!(
                "domain has {} intervals for dimension {dim}",
                domain.len()
            )));
        }
        if samples_per_axis < 3 {
            return Err(Error::InvalidInput("need at least 3 samples per axis".into()));
        }
        let mut p = Potential {
            dim,
            kind: Kind::Custom(Arc::new(CustomPotential {
                name: name.into(),
                eval: Box::new(eval),
                grad: Box::new(grad),
                hess: Box::new(hess),
            })),
            bounds: DerivativeBounds {
                sup_grad: 0.0,
                sup_hess: 0.0,
                sup_third: 0.0,
                lip_grad: 0.0,
                grad_at_origin_norm: 0.0,
                estimated: true,
            },
        };
        p.bounds = estimate_bounds(&p, domain, samples_per_axis);
        Ok(p)
    }

    /// Overrides the derivative norms, e.g. with known analytic values.
    pub fn with_bounds(mut self, bounds: DerivativeBounds) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn name(&self) -> &str {
        match &self.kind {
            Kind::Zero => "zero",
            Kind::Harmonic { .. } => "harmonic",
            Kind::Pendulum { .. } => "pendulum",
            Kind::TrigSeries { .. } => "trig_series",
            Kind::Custom(c) => &c.name,
        }
    }

    pub fn bounds(&self) -> &DerivativeBounds {
        &self.bounds
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, Kind::Zero)
    }

    /// Angular frequency when `V` is harmonic.
    pub fn harmonic_omega(&self) -> Option<f64> {
        match self.kind {
            Kind::Harmonic { omega } => Some(omega),
            _ => None,
        }
    }

    /// Amplitude `a` when `V = aΣ(1 − cos x_k)`.
    pub fn pendulum_amplitude(&self) -> Option<f64> {
        match self.kind {
            Kind::Pendulum { amplitude } => Some(amplitude),
            _ => None,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        match &self.kind {
            Kind::Zero => 0.0,
            Kind::Harmonic { omega } => 0.5 * omega * omega * x.iter().map(|v| v * v).sum::<f64>(),
            Kind::Pendulum { amplitude } => amplitude * x.iter().map(|v| 1.0 - v.cos()).sum::<f64>(),
            Kind::TrigSeries { cos, sin } => x.iter().map(|&v| trig_profile(cos, sin, v, 0)).sum(),
            Kind::Custom(c) => (c.eval)(x),
        }
    }

    /// Writes `∇V(x)` into `out`.
    pub fn grad(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        match &self.kind {
            Kind::Zero => out.iter_mut().for_each(|g| *g = 0.0),
            Kind::Harmonic { omega } => {
                let w2 = omega * omega;
                out.iter_mut().zip(x).for_each(|(g, v)| *g = w2 * v);
            }
            Kind::Pendulum { amplitude } => {
                out.iter_mut().zip(x).for_each(|(g, v)| *g = amplitude * v.sin());
            }
            Kind::TrigSeries { cos, sin } => {
                out.iter_mut()
                    .zip(x)
                    .for_each(|(g, &v)| *g = trig_profile(cos, sin, v, 1));
            }
            Kind::Custom(c) => (c.grad)(x, out),
        }
    }

    /// Writes the row-major `d × d` Hessian into `out`.
    pub fn hess(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        debug_assert_eq!(out.len(), d * d);
        let diag = |out: &mut [f64], f: &dyn Fn(f64) -> f64| {
            out.iter_mut().for_each(|h| *h = 0.0);
            for (k, &v) in x.iter().enumerate() {
                out[k * d + k] = f(v);
            }
        };
        match &self.kind {
            Kind::Zero => out.iter_mut().for_each(|h| *h = 0.0),
            Kind::Harmonic { omega } => diag(out, &|_| omega * omega),
            Kind::Pendulum { amplitude } => diag(out, &|v| amplitude * v.cos()),
            Kind::TrigSeries { cos, sin } => diag(out, &|v| trig_profile(cos, sin, v, 2)),
            Kind::Custom(c) => (c.hess)(x, out),
        }
    }

    /// `Λ = max(1, E, ‖∇²V‖∞)`.
    pub fn lambda_constant(&self) -> f64 {
        1f64.max(self.bounds.grad_at_origin_norm)
            .max(self.bounds.sup_hess)
    }

    /// `M = max(1, ‖∇V‖∞², ‖∇²V‖∞², ‖∇³V‖∞²)`.
    pub fn m_constant(&self) -> Result<f64> {
        let b = &self.bounds;
        let g = finite("sup_grad", b.sup_grad)?;
        let h = finite("sup_hess", b.sup_hess)?;
        let t = finite("sup_third", b.sup_third)?;
        Ok(1f64.max(g * g).max(h * h).max(t * t))
    }

    /// `M(V) = max(2‖∇V‖∞, ‖∇²V‖∞)`.
    pub fn mv_constant(&self) -> Result<f64> {
        let b = &self.bounds;
        let g = finite("sup_grad", b.sup_grad)?;
        let h = finite("sup_hess", b.sup_hess)?;
        Ok((2.0 * g).max(h))
    }

    /// True when every derivative norm needed by the uniform corollaries is finite.
    pub fn has_bounded_derivatives(&self) -> bool {
        let b = &self.bounds;
        b.sup_grad.is_finite() && b.sup_hess.is_finite() && b.sup_third.is_finite()
    }
}

fn check_param(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} must be finite, got {v}")))
    }
}

fn finite(name: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::UnboundedDerivative(name))
    }
}

/// `order`-th derivative of `Σ_k c_k cos(kx) + s_k sin(kx)`.
fn trig_profile(cos: &[f64], sin: &[f64], x: f64, order: u32) -> f64 {
    let mut acc = 0.0;
    let n = cos.len().max(sin.len());
    for k in 1..=n {
        let kf = k as f64;
        let c = cos.get(k - 1).copied().unwrap_or(0.0);
        let s = sin.get(k - 1).copied().unwrap_or(0.0);
        let (sn, cs) = (kf * x).sin_cos();
        let scale = kf.powi(order as i32);
        // d^m/dx^m of (c cos + s sin) cycles with period 4.
        let v = match order % 4 {
            0 => c * cs + s * sn,
            1 => -c * sn + s * cs,
            2 => -c * cs - s * sn,
            _ => c * sn - s * cs,
        };
        acc += scale * v;
    }
    acc
}

/// Dense grid search for the derivative norms of `p` over a box.
///
/// `‖∇³V‖` is estimated from centered differences of the Hessian along each
/// axis; `Lip(∇V)` is taken equal to `‖∇²V‖∞` (exact on convex domains).
fn estimate_bounds(p: &Potential, domain: &[(f64, f64)], samples: usize) -> DerivativeBounds {
    let d = p.dim;
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut h = vec![0.0; d * d];
    let mut hp = vec![0.0; d * d];
    let mut hm = vec![0.0; d * d];
    let (mut sg, mut sh, mut st) = (0.0f64, 0.0f64, 0.0f64);
    let step = |k: usize| (domain[k].1 - domain[k].0) / (samples - 1) as f64;
    let fd = 1e-4;
    loop {
        for k in 0..d {
            x[k] = domain[k].0 + idx[k] as f64 * step(k);
        }
        p.grad(&x, &mut g);
        sg = sg.max(norm(&g));
        p.hess(&x, &mut h);
        sh = sh.max(sym_operator_norm(&h, d));
        for k in 0..d {
            let orig = x[k];
            x[k] = orig + fd;
            p.hess(&x, &mut hp);
            x[k] = orig - fd;
            p.hess(&x, &mut hm);
            x[k] = orig;
            for (a, b) in hp.iter_mut().zip(&hm) {
                *a = (*a - b) / (2.0 * fd);
            }
            st = st.max(sym_operator_norm(&hp, d));
        }
        // odometer increment
        let mut k = 0;
        loop {
            if k == d {
                let origin = vec![0.0; d];
                p.grad(&origin, &mut g);
                return DerivativeBounds {
                    sup_grad: sg,
                    sup_hess: sh,
                    sup_third: st,
                    lip_grad: sh,
                    grad_at_origin_norm: norm(&g),
                    estimated: true,
                };
            }
            idx[k] += 1;
            if idx[k] < samples {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Spectral norm of a symmetric `d × d` matrix via cyclic Jacobi sweeps.
pub(crate) fn sym_operator_norm(m: &[f64], d: usize) -> f64 {
    if d == 1 {
        return m[0].abs();
    }
    let mut a = m.to_vec();
    for _ in 0..50 {
        let mut off = 0.0;
        for i in 0..d {
            for j in (i + 1)..d {
                off += a[i * d + j] * a[i * d + j];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..d).map(|i| a[i * d + i].abs()).fold(0.0, f64::max)
}
