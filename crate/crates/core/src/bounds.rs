//! Closed-form error constants and envelopes for the splitting schemes.
//!
//! The `*_raw` functions are plain arithmetic on scalar inputs; the
//! remaining evaluators pull those inputs from a [`Potential`] and an
//! [`InitialMeasure`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potentials::Potential;
use crate::sampling::InitialMeasure;

/// Samples used to estimate `∫|p| dμ` when no closed form exists.
const ABS_MOMENT_SAMPLES: usize = 1 << 16;

/// `C_T`: classical Lie-Trotter constant, `W₂ ≤ C_T·Δt`.
pub fn c_t_raw(lambda: f64, e: f64, t: f64, dt: f64, mu0: f64) -> f64 {
    let l2 = lambda * lambda;
    let g = (2.0 * t * (1.0 + l2 * (1.0 + dt).powi(2))).exp();
    let bracket = 1.0 + g * mu0 + 2.0 * (1.0 + dt) * e * (g - 1.0) / (1.0 + (1.0 + dt) * (1.0 + 2.0 * l2 * (1.0 + dt).powi(2)));
    let sq = 2.25 * l2 * (0.5 + lambda).powi(2) * ((2.0 + lambda) * t).exp_m1() / (2.0 + lambda) * bracket;
    sq.sqrt()
}

/// `D_T`: classical Strang constant, `W₂ ≤ D_T·Δt²`.
pub fn d_t_raw(lambda: f64, m: f64, t: f64, nu0: f64) -> f64 {
    (((2.0 + lambda) * t).exp_m1() / (2.0 + lambda) * m.powi(3) * (1.0 + (3.0 * t).exp() * (nu0 + m * m))).sqrt()
}

/// `2√(dħ)(1 + exp(½T(1 + max(1, Lip²))))`.
pub fn sqrt_hbar_term(hbar: f64, lip: f64, t: f64, d: usize) -> f64 {
    2.0 * (d as f64 * hbar).sqrt() * (1.0 + (0.5 * t * (1.0 + lip.powi(2).max(1.0))).exp())
}

/// Four-way max defining the uniform Lie-Trotter constant.
pub fn uniform_simple_raw(mv: f64, c_t: f64, t: f64, d: usize, abs_p: f64, lip: f64) -> f64 {
    let a = 4.0 * 2f64.sqrt() * mv;
    let b = 4.0 * mv * (mv * t * t + d as f64 + abs_p);
    a.max(c_t).max(b).max(sqrt_hbar_term(1.0, lip, t, d))
}

/// Three-way max defining the uniform Strang constant.
pub fn uniform_strang_raw(d_t: f64, m_prime: f64, t: f64, d: usize, lip: f64) -> f64 {
    d_t.max(m_prime).max(sqrt_hbar_term(1.0, lip, t, d))
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt <= 0.5) {
        return Err(Error::InvalidInput(format!("time step must lie in (0, 1/2], got {dt}")));
    }
    Ok(())
}

fn check_t(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidInput(format!("final time must be positive, got {t}")));
    }
    Ok(())
}

/// `C_T` for a potential; needs a finite `Lip(∇V)`.
pub fn c_t(v: &Potential, t: f64, dt: f64, mu0: f64) -> Result<f64> {
    check_dt(dt)?;
    check_t(t)?;
    let lambda = v.lambda_constant();
    if !lambda.is_finite() {
        return Err(Error::UnboundedDerivative("sup_hess"));
    }
    Ok(c_t_raw(lambda, v.bounds().grad_at_origin_norm, t, dt, mu0))
}

/// `D_T` for a potential with bounded first three derivatives.
pub fn d_t(v: &Potential, t: f64, nu0: f64) -> Result<f64> {
    check_t(t)?;
    Ok(d_t_raw(v.lambda_constant(), v.m_constant()?, t, nu0))
}

/// `C_T·Δt + 2√(dħ)(1 + exp(…))`.
pub fn semiclassical_bound_simple(dt: f64, hbar: f64, c_t: f64, v: &Potential, t: f64, d: usize) -> f64 {
    c_t * dt + sqrt_hbar_term(hbar, v.bounds().lip_grad, t, d)
}

/// `D_T·Δt² + 2√(dħ)(1 + exp(…))`.
pub fn semiclassical_bound_strang(dt: f64, hbar: f64, d_t: f64, v: &Potential, t: f64, d: usize) -> f64 {
    d_t * dt * dt + sqrt_hbar_term(hbar, v.bounds().lip_grad, t, d)
}

/// Uniform Lie-Trotter constant; the bound is `2C·Δt^{1/3}`.
pub fn uniform_constant_simple(v: &Potential, t: f64, abs_p_moment: f64, d: usize, c_t: f64) -> Result<f64> {
    Ok(uniform_simple_raw(v.mv_constant()?, c_t, t, d, abs_p_moment, v.bounds().lip_grad))
}

/// Uniform Strang constant; the bound is `2D·Δt^{2/3}`.
pub fn uniform_constant_strang(v: &Potential, t: f64, d: usize, d_t: f64, m_prime: f64) -> Result<f64> {
    if !v.has_bounded_derivatives() {
        return Err(Error::UnboundedDerivative("sup_third"));
    }
    Ok(uniform_strang_raw(d_t, m_prime, t, d, v.bounds().lip_grad))
}

pub fn uniform_bound_simple(c_uniform: f64, dt: f64) -> f64 {
    2.0 * c_uniform * dt.cbrt()
}

pub fn uniform_bound_strang(d_uniform: f64, dt: f64) -> f64 {
    2.0 * d_uniform * dt.powf(2.0 / 3.0)
}

/// Growth factor `exp(½t(λ + max(1, Lip²)))` of the quantum-classical
/// distance over time `t`; `λ = 1` for a kinetic step, `0` for a
/// potential-only step. With `V ≡ 0` there is no force term and the
/// factor is `exp(½tλ)`, so a free step followed by a potential step
/// composes to `exp(½Δt(1 + max(1, Lip²)))`.
pub fn propagation_factor(t: f64, lambda_kinetic: f64, v: &Potential) -> f64 {
    let force = if v.is_zero() { 0.0 } else { v.bounds().lip_grad.powi(2).max(1.0) };
    (0.5 * t * (lambda_kinetic + force)).exp()
}

/// L² error bound for Lie-Trotter acting on a coherent state `|q,p⟩`:
/// `2(Δt/ħ)M(V)(M(V)t² + ħ‖|q,p⟩‖_{H¹})`, where
/// `ħ‖|q,p⟩‖_{H¹} = √(ħ² + |p|² + dħ/2)`.
pub fn coherent_lie_trotter_bound(dt: f64, hbar: f64, t: f64, v: &Potential, p_norm: f64, d: usize) -> Result<f64> {
    let mv = v.mv_constant()?;
    let h1 = (hbar * hbar + p_norm * p_norm + 0.5 * d as f64 * hbar).sqrt();
    Ok(2.0 * dt / hbar * mv * (mv * t * t + h1))
}

/// `M′` from measured Strang L² errors `(Δt, ħ, error)`: twice the
/// smallest constant with `error ≤ M′Δt²/ħ` on every sample.
pub fn calibrate_m_prime(samples: &[(f64, f64, f64)]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("no calibration samples".into()));
    }
    let worst = samples.iter().map(|(dt, hbar, err)| err * hbar / (dt * dt)).fold(0.0, f64::max);
    Ok(2.0 * worst)
}

/// Which estimates apply to a potential.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Eligibility {
    /// Classical Lie-Trotter and its semiclassical envelope: `Lip(∇V) < ∞`.
    pub lie_trotter_semiclassical: bool,
    /// Classical Strang and its envelope: bounded `∇V, ∇²V, ∇³V`.
    pub strang_semiclassical: bool,
    /// Uniform-in-ħ Lie-Trotter bound: bounded `∇V, ∇²V`.
    pub lie_trotter_uniform: bool,
    /// Uniform-in-ħ Strang bound: bounded derivatives and a known `M′`.
    pub strang_uniform: bool,
}

/// One-step growth bound of the second moment under splitting:
/// `μ_n ≤ (1 + Δt + 2Λ²Δt(1+Δt)²)(1+Δt) μ_{n−1} + 2Δt(1+Δt)E`.
pub fn moment_step_bound(prev: f64, dt: f64, lambda: f64, e: f64) -> f64 {
    let g = (1.0 + dt + 2.0 * lambda * lambda * dt * (1.0 + dt).powi(2)) * (1.0 + dt);
    g * prev + 2.0 * dt * (1.0 + dt) * e
}

/// True when every consecutive pair of `moments` obeys [`moment_step_bound`]
/// up to a relative rounding slack of `1e-12`.
pub fn moment_recursion_holds(moments: &[f64], dt: f64, lambda: f64, e: f64) -> bool {
    moments
        .windows(2)
        .all(|w| w[1] <= moment_step_bound(w[0], dt, lambda, e) * (1.0 + 1e-12))
}

/// Every constant of one experiment, serialized into its report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub lambda: f64,
    pub e_const: f64,
    pub m_const: Option<f64>,
    pub mv_const: Option<f64>,
    pub lip_grad: f64,
    pub mu0: f64,
    pub nu0: f64,
    pub abs_p_moment: f64,
    /// Time step at which `C_T` is evaluated (the largest of the sweep).
    pub dt_eval: f64,
    pub t_final: f64,
    pub dim: usize,
    pub c_t: f64,
    pub d_t: Option<f64>,
    pub c_uniform: Option<f64>,
    pub d_uniform: Option<f64>,
    pub m_prime: Option<f64>,
    /// `"calibrated"` when `M′` came from measured errors.
    pub m_prime_source: Option<String>,
    pub derivatives_estimated: bool,
    pub eligibility: Eligibility,
}

impl BoundReport {
    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Evaluates all constants. `dt_max` is the largest time step of the
    /// sweep; `m_prime` is the calibrated Strang constant, if known.
    pub fn build(v: &Potential, mu: &InitialMeasure, t: f64, dt_max: f64, m_prime: Option<f64>) -> Result<Self> {
        check_t(t)?;
        check_dt(dt_max)?;
        mu.validate()?;
        let d = v.dim();
        if mu.dim() != d {
            return Err(Error::InvalidInput(format!(
                "measure lives in dimension {} but the potential in {d}",
                mu.dim()
            )));
        }
        let b = v.bounds();
        let mu0 = mu.second_moment();
        let nu0 = mu.momentum_moment_24();
        let abs_p = mu.abs_momentum_moment().unwrap_or_else(|| {
            let s = mu.sample(ABS_MOMENT_SAMPLES, 0);
            s.iter().map(|x| x.p.iter().map(|v| v * v).sum::<f64>().sqrt()).sum::<f64>() / s.len() as f64
        });
        let c = c_t(v, t, dt_max, mu0)?;
        let d_const = d_t(v, t, nu0).ok();
        let mv = v.mv_constant().ok();
        let m = v.m_constant().ok();
        let bounded = v.has_bounded_derivatives();
        let c_uniform = match mv {
            Some(_) if bounded => Some(uniform_constant_simple(v, t, abs_p, d, c)?),
            _ => None,
        };
        let d_uniform = match (d_const, m_prime) {
            (Some(dc), Some(mp)) if bounded => Some(uniform_constant_strang(v, t, d, dc, mp)?),
            _ => None,
        };
        let report = BoundReport {
            lambda: v.lambda_constant(),
            e_const: b.grad_at_origin_norm,
            m_const: m,
            mv_const: mv,
            lip_grad: b.lip_grad,
            mu0,
            nu0,
            abs_p_moment: abs_p,
            dt_eval: dt_max,
            t_final: t,
            dim: d,
            c_t: c,
            d_t: d_const,
            c_uniform,
            d_uniform,
            m_prime,
            m_prime_source: m_prime.map(|_| "calibrated".to_string()),
            derivatives_estimated: b.estimated,
            eligibility: Eligibility {
                lie_trotter_semiclassical: b.lip_grad.is_finite(),
                strang_semiclassical: d_const.is_some(),
                lie_trotter_uniform: c_uniform.is_some(),
                strang_uniform: d_uniform.is_some(),
            },
        };
        report.check()?;
        Ok(report)
    }

    /// All present values are finite and nonnegative, and eligibility
    /// matches which constants exist.
    pub fn check(&self) -> Result<()> {
        let present = [
            Some(self.lambda),
            Some(self.e_const),
            self.m_const,
            self.mv_const,
            Some(self.mu0),
            Some(self.nu0),
            Some(self.abs_p_moment),
            Some(self.c_t),
            self.d_t,
            self.c_uniform,
            self.d_uniform,
            self.m_prime,
        ];
        if present.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput("bound report has a negative or non-finite constant".into()));
        }
        let e = &self.eligibility;
        if e.strang_semiclassical != self.d_t.is_some()
            || e.lie_trotter_uniform != self.c_uniform.is_some()
            || e.strang_uniform != self.d_uniform.is_some()
            || (e.strang_semiclassical && self.m_const.is_none())
            || (e.lie_trotter_uniform && self.mv_const.is_none())
        {
            return Err(Error::InvalidInput("eligibility flags disagree with the constants".into()));
        }
        Ok(())
    }
}
