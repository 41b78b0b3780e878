//! Experiment orchestration: sweeps over `(scheme, Δt, ħ)`, error
//! measurement, rate fits, bound checks and report emission.

mod config;
mod report;
mod runs;

pub use config::{n_steps, ExperimentConfig, ExperimentKind, GridConfig, ReferenceConfig};
pub use report::{emit_report, render_csv, render_json, validate_report, Fingerprint, REPORT_FORMAT};
pub use runs::{
    run, run_classical_convergence, run_quantum_fixed_hbar, run_uniform_sweep, run_uniform_with, ReferenceCheck,
    RunOutput, Summary, SweepContext,
};

use serde::{Deserialize, Serialize};

use crate::classical::Scheme;
use crate::error::{Error, Result};

/// What an [`ErrorRecord`] measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    W2Classical,
    L2Quantum,
    W2Husimi,
    Dist1Husimi,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::W2Classical => "w2_classical",
            Metric::L2Quantum => "l2_quantum",
            Metric::W2Husimi => "w2_husimi",
            Metric::Dist1Husimi => "dist1_husimi",
        }
    }
}

/// One measured error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub scheme: Scheme,
    pub metric: Metric,
    pub dt: f64,
    pub hbar: Option<f64>,
    pub n_steps: usize,
    pub value: f64,
    pub mc_stderr: Option<f64>,
    pub bound_value: Option<f64>,
    pub bound_satisfied: Option<bool>,
}

impl ErrorRecord {
    pub fn new(scheme: Scheme, metric: Metric, dt: f64, hbar: Option<f64>, n_steps: usize, value: f64) -> Self {
        ErrorRecord {
            scheme,
            metric,
            dt,
            hbar,
            n_steps,
            value,
            mc_stderr: None,
            bound_value: None,
            bound_satisfied: None,
        }
    }

    /// Attaches a bound and its verdict.
    pub fn with_bound(mut self, bound: Option<f64>) -> Self {
        self.bound_value = bound;
        self.bound_satisfied = bound.map(|b| self.value <= b);
        self
    }

    pub fn with_stderr(mut self, se: Option<f64>) -> Self {
        self.mc_stderr = se;
        self
    }
}

/// Least-squares fit of `log(value)` against `log(dt)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub metric: Metric,
    pub scheme: Scheme,
    pub hbar: Option<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points_used: usize,
    /// Zero values dropped before fitting.
    pub zeros_excluded: usize,
}

/// Smallest spread of the fitted values, in decades.
pub const MIN_SPAN_DECADES: f64 = 1.0;

/// Fits `log(y) = slope·log(x) + intercept` on strictly positive `y`.
pub fn fit_loglog(xs: &[f64], ys: &[f64], min_span_decades: f64) -> Result<(f64, f64, f64, usize, usize)> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(_, y)| **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let zeros = ys.iter().filter(|y| **y == 0.0).count();
    if xs.iter().any(|x| !(*x > 0.0)) || ys.iter().any(|y| !(*y >= 0.0) || !y.is_finite()) {
        return Err(Error::DegenerateFit("coordinates must be positive and finite".into()));
    }
    if pts.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "{} positive points ({zeros} zeros excluded), need 3",
            pts.len()
        )));
    }
    let (lo, hi) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let span = (hi - lo) / std::f64::consts::LN_10;
    if span < min_span_decades {
        return Err(Error::DegenerateFit(format!(
            "values span {span:.3} decades, need {min_span_decades}"
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("all dt values coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    Ok((slope, intercept, r2, pts.len(), zeros))
}

/// Rate fit over the records matching `metric`, `scheme` and `hbar`.
pub fn fit_rate(records: &[ErrorRecord], metric: Metric, scheme: Scheme, hbar: Option<f64>) -> Result<RateFit> {
    fit_rate_with_span(records, metric, scheme, hbar, MIN_SPAN_DECADES)
}

pub fn fit_rate_with_span(
    records: &[ErrorRecord],
    metric: Metric,
    scheme: Scheme,
    hbar: Option<f64>,
    min_span_decades: f64,
) -> Result<RateFit> {
    let sel: Vec<&ErrorRecord> = records
        .iter()
        .filter(|r| r.metric == metric && r.scheme == scheme && r.hbar == hbar)
        .collect();
    let xs: Vec<f64> = sel.iter().map(|r| r.dt).collect();
    let ys: Vec<f64> = sel.iter().map(|r| r.value).collect();
    let (slope, intercept, r_squared, points_used, zeros_excluded) = fit_loglog(&xs, &ys, min_span_decades)?;
    Ok(RateFit {
        metric,
        scheme,
        hbar,
        slope,
        intercept,
        r_squared,
        points_used,
        zeros_excluded,
    })
}

/// True when, sorted by `dt`, each value is at least 95% of the value at
/// the next smaller `dt`.
pub fn nondecreasing_in_dt(records: &[&ErrorRecord]) -> bool {
    let mut v: Vec<(f64, f64)> = records.iter().map(|r| (r.dt, r.value)).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    v.windows(2).all(|w| w[1].1 >= 0.95 * w[0].1)
}
