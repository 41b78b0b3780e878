//! Optimal-transport distances between discrete phase-space measures.
//!
//! Supports up to `exact_cap` points on each side are solved exactly with a
//! network simplex; larger problems fall back to an entropic solver whose
//! answer is certified by a duality gap.

mod oracle;
mod simplex;
mod sinkhorn;

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classical::PhaseEnsemble;
use crate::error::{Error, Result};

pub use oracle::ORACLE_CAP;

/// Probability measure with finitely many atoms in `R^k`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    point_dim: usize,
    support: Vec<f64>,
    weights: Vec<f64>,
    discarded_mass: f64,
}

impl DiscreteMeasure {
    /// `support` is flat, `point_dim` coordinates per atom. Weights must be
    /// positive and sum to one within `1e-12`; atoms must be distinct.
    pub fn new(point_dim: usize, support: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if point_dim == 0 || weights.is_empty() || support.len() != point_dim * weights.len() {
            return Err(Error::InvalidInput("support and weights do not match".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput("weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("weights sum to {total}, not 1")));
        }
        if support.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("support has non-finite coordinates".into()));
        }
        let mu = DiscreteMeasure {
            point_dim,
            support,
            weights,
            discarded_mass: 0.0,
        };
        let mut order: Vec<usize> = (0..mu.len()).collect();
        order.sort_by(|&a, &b| mu.point(a).partial_cmp(mu.point(b)).unwrap());
        if order.windows(2).any(|w| mu.point(w[0]) == mu.point(w[1])) {
            return Err(Error::InvalidInput("support points must be distinct".into()));
        }
        Ok(mu)
    }

    /// Like [`DiscreteMeasure::new`] but rescales the weights to sum to one.
    pub fn normalized(point_dim: usize, support: Vec<f64>, mut weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidInput("total mass must be positive".into()));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(point_dim, support, weights)
    }

    pub fn dirac(point: &[f64]) -> Result<Self> {
        Self::new(point.len(), point.to_vec(), vec![1.0])
    }

    /// Empirical measure of a particle cloud, atoms `(x, ξ)`.
    pub fn from_ensemble(ens: &PhaseEnsemble) -> Result<Self> {
        let d = ens.dim();
        let mut support = Vec::with_capacity(2 * d * ens.len());
        for p in ens.points() {
            support.extend_from_slice(&p.x);
            support.extend_from_slice(&p.xi);
        }
        Self::normalized(2 * d, support, ens.weights().to_vec())
    }

    pub(crate) fn with_discarded_mass(mut self, mass: f64) -> Self {
        self.discarded_mass = mass;
        self
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point_dim(&self) -> usize {
        self.point_dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.support[i * self.point_dim..(i + 1) * self.point_dim]
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Mass dropped when this measure was thresholded from a density.
    pub fn discarded_mass(&self) -> f64 {
        self.discarded_mass
    }

    /// Copy shifted by `v` in every atom.
    pub fn translated(&self, v: &[f64]) -> Self {
        let mut out = self.clone();
        for (k, c) in out.support.iter_mut().enumerate() {
            *c += v[k % self.point_dim];
        }
        out
    }
}

/// Ground cost between atoms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostKind {
    /// `|a − b|²`
    SquaredEuclidean,
    /// `min(1, |a − b|)`
    Truncated,
}

impl CostKind {
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        match self {
            CostKind::SquaredEuclidean => r2,
            CostKind::Truncated => r2.sqrt().min(1.0),
        }
    }

    fn finish(self, cost: f64) -> f64 {
        match self {
            CostKind::SquaredEuclidean => cost.max(0.0).sqrt(),
            CostKind::Truncated => cost.clamp(0.0, 1.0),
        }
    }
}

/// Sparse transport plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub rows: usize,
    pub cols: usize,
    /// `(source, target, mass)` sorted by source then target.
    pub entries: Vec<(usize, usize, f64)>,
}

impl Coupling {
    pub fn row_sums(&self) -> Vec<f64> {
        let mut r = vec![0.0; self.rows];
        for &(i, _, m) in &self.entries {
            r[i] += m;
        }
        r
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.cols];
        for &(_, j, m) in &self.entries {
            c[j] += m;
        }
        c
    }

    /// Writes `source,target,mass` triplets.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "source,target,mass")?;
        for &(i, j, m) in &self.entries {
            writeln!(f, "{i},{j},{m:e}")?;
        }
        f.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OtMethod {
    ExactLp,
    Entropic,
    IdentityUpperBound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportResult {
    pub distance: f64,
    pub plan: Option<Coupling>,
    pub method: OtMethod,
    /// Relative duality gap of the returned cost (zero for the identity
    /// coupling bound, which is not an optimum).
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OtConfig {
    /// Largest support size solved by the exact network simplex.
    pub exact_cap: usize,
    /// Relative duality gap required from the entropic solver.
    pub tol: f64,
    /// Sinkhorn sweep budget.
    pub max_iterations: usize,
    /// Keep the transport plan in the result.
    pub keep_plan: bool,
}

impl Default for OtConfig {
    fn default() -> Self {
        OtConfig {
            exact_cap: 2000,
            tol: 1e-4,
            max_iterations: 100_000,
            keep_plan: false,
        }
    }
}

impl OtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.exact_cap == 0 || !(self.tol > 0.0 && self.tol < 1.0) || self.max_iterations == 0 {
            return Err(Error::InvalidConfig(format!("bad ot settings {self:?}")));
        }
        Ok(())
    }
}

fn check_pair(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<()> {
    if mu.point_dim != nu.point_dim {
        return Err(Error::InvalidInput(format!(
            "measures live in R^{} and R^{}",
            mu.point_dim, nu.point_dim
        )));
    }
    Ok(())
}

fn transport(mu: &DiscreteMeasure, nu: &DiscreteMeasure, kind: CostKind, cfg: &OtConfig) -> Result<TransportResult> {
    check_pair(mu, nu)?;
    let (n, m) = (mu.len(), nu.len());
    if n <= cfg.exact_cap && m <= cfg.exact_cap {
        let mut cost = vec![0.0; n * m];
        cost.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
            let a = mu.point(i);
            for (j, c) in row.iter_mut().enumerate() {
                *c = kind.eval(a, nu.point(j));
            }
        });
        let sol = simplex::solve(&mu.weights, &nu.weights, &cost)?;
        let gap = (sol.cost - sol.dual).max(0.0);
        let tolerance = if sol.cost > 0.0 { gap / sol.cost } else { 0.0 };
        return Ok(TransportResult {
            distance: kind.finish(sol.cost),
            plan: cfg.keep_plan.then(|| Coupling {
                rows: n,
                cols: m,
                entries: sol.flows,
            }),
            method: OtMethod::ExactLp,
            tolerance,
        });
    }
    let sol = sinkhorn::solve(
        &mu.weights,
        &nu.weights,
        |i, j| kind.eval(mu.point(i), nu.point(j)),
        cfg.tol,
        cfg.max_iterations,
        cfg.keep_plan,
    )?;
    let tolerance = if sol.primal > 0.0 {
        (sol.primal - sol.dual).max(0.0) / sol.primal
    } else {
        0.0
    };
    let plan = sol.plan.map(|p| Coupling {
        rows: n,
        cols: m,
        entries: p
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(|(k, v)| (k / m, k % m, *v))
            .collect(),
    });
    Ok(TransportResult {
        distance: kind.finish(sol.primal),
        plan,
        method: OtMethod::Entropic,
        tolerance,
    })
}

/// Quadratic Wasserstein distance `dist_MK,2`.
pub fn wasserstein2(mu: &DiscreteMeasure, nu: &DiscreteMeasure, cfg: &OtConfig) -> Result<TransportResult> {
    transport(mu, nu, CostKind::SquaredEuclidean, cfg)
}

/// Transport distance with cost `min(1, |a − b|)`; always in `[0, 1]`.
pub fn dist1_truncated(mu: &DiscreteMeasure, nu: &DiscreteMeasure, cfg: &OtConfig) -> Result<TransportResult> {
    transport(mu, nu, CostKind::Truncated, cfg)
}

/// `(Σ_i w_i |a_i − b_i|²)^{1/2}` for two clouds evolved from the same
/// particles: the cost of the identity coupling, an upper bound on `W₂`.
pub fn coupled_particle_upper_bound(a: &PhaseEnsemble, b: &PhaseEnsemble) -> Result<TransportResult> {
    if a.len() != b.len() || a.dim() != b.dim() {
        return Err(Error::ProvenanceMismatch(format!(
            "{} vs {} particles in dimensions {} and {}",
            a.len(),
            b.len(),
            a.dim(),
            b.dim()
        )));
    }
    if a.weights() != b.weights() || a.seed() != b.seed() {
        return Err(Error::ProvenanceMismatch("weights or seeds differ".into()));
    }
    let s: f64 = a
        .points()
        .iter()
        .zip(b.points())
        .zip(a.weights())
        .map(|((p, q), w)| w * p.distance(q).powi(2))
        .sum();
    Ok(TransportResult {
        distance: s.sqrt(),
        plan: None,
        method: OtMethod::IdentityUpperBound,
        tolerance: 0.0,
    })
}

/// Exact `W₂` by vertex enumeration; supports of at most four points.
pub fn brute_force_oracle(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    Ok(oracle::brute_force_cost(mu, nu, CostKind::SquaredEuclidean)?.sqrt())
}

/// Exact `dist_1` by vertex enumeration; supports of at most four points.
pub fn brute_force_oracle_dist1(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    oracle::brute_force_cost(mu, nu, CostKind::Truncated)
}
