//! Log-domain Sinkhorn with ε-scaling, certified by a duality gap.
//!
//! Costs are evaluated on the fly so memory stays linear in the support
//! sizes. The returned primal value is the cost of a rounded, exactly
//! feasible coupling; the dual value comes from c-transform-feasible
//! potentials, so `dual ≤ OPT ≤ primal` holds regardless of ε.

use crate::error::{Error, Result};

/// Over-relaxation factor of the dual updates once ε is small; plain
/// updates are used while ε is a sizeable fraction of the cost range.
const OMEGA: f64 = 1.8;

pub(crate) struct EntropicSolution {
    pub primal: f64,
    pub dual: f64,
    /// Rounded coupling, dense row-major; only kept for small problems.
    pub plan: Option<Vec<f64>>,
}

fn logsumexp(vals: impl Iterator<Item = f64>, buf: &mut Vec<f64>) -> f64 {
    buf.clear();
    buf.extend(vals);
    let m = buf.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + buf.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// `cost(i, j)` must be nonnegative.
pub(crate) fn solve<C>(a: &[f64], b: &[f64], cost: C, rel_tol: f64, max_iter: usize, keep_plan: bool) -> Result<EntropicSolution>
where
    C: Fn(usize, usize) -> f64,
{
    let (n, m) = (a.len(), b.len());
    let la: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let lb: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let mut cmax = 0.0f64;
    for i in 0..n {
        for j in 0..m {
            cmax = cmax.max(cost(i, j));
        }
    }
    if cmax == 0.0 {
        return Ok(EntropicSolution {
            primal: 0.0,
            dual: 0.0,
            plan: keep_plan.then(|| (0..n * m).map(|k| a[k / m] * b[k % m]).collect()),
        });
    }
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut buf = Vec::with_capacity(n.max(m));
    let mut eps = cmax;
    let eps_floor = cmax * 1e-7;
    let mut iterations = 0;
    // Marginal error tolerated before rounding; rounding moves at most
    // `err · cmax` of cost, so it is tied to the current cost estimate.
    let mut estimate = cmax;
    loop {
        let err_target = (0.1 * rel_tol * estimate / cmax).max(1e-15);
        let omega = if eps > 0.05 * cmax { 1.0 } else { OMEGA };
        for _ in 0..5000 {
            for i in 0..n {
                let new = -eps * logsumexp((0..m).map(|j| (g[j] - cost(i, j)) / eps + lb[j]), &mut buf);
                f[i] += omega * (new - f[i]);
            }
            for j in 0..m {
                let new = -eps * logsumexp((0..n).map(|i| (f[i] - cost(i, j)) / eps + la[i]), &mut buf);
                g[j] += omega * (new - g[j]);
            }
            iterations += 1;
            let mut err = 0.0;
            for i in 0..n {
                let r: f64 = (0..m)
                    .map(|j| ((f[i] + g[j] - cost(i, j)) / eps + la[i] + lb[j]).exp())
                    .sum();
                err += (r - a[i]).abs();
            }
            if err < err_target || iterations >= max_iter {
                break;
            }
        }
        let cert = certify(a, b, &f, &g, eps, &cost, keep_plan);
        let gap = cert.primal - cert.dual;
        estimate = cert.dual.max(cmax * 1e-12);
        if gap <= rel_tol * cert.primal.max(1e-300) || (cert.primal == 0.0 && gap <= 0.0) {
            return Ok(cert);
        }
        if iterations >= max_iter || eps <= eps_floor {
            return Err(Error::NonConvergence {
                gap: gap / cert.primal.max(1e-300),
                tol: rel_tol,
                iterations,
            });
        }
        eps = (eps * 0.5).max(eps_floor);
    }
}

/// Rounds the Gibbs plan onto the marginals and pairs it with c-transform
/// dual potentials.
fn certify<C>(a: &[f64], b: &[f64], f: &[f64], g: &[f64], eps: f64, cost: &C, keep_plan: bool) -> EntropicSolution
where
    C: Fn(usize, usize) -> f64,
{
    let (n, m) = (a.len(), b.len());
    let la: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let lb: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let entry = |i: usize, j: usize| ((f[i] + g[j] - cost(i, j)) / eps + la[i] + lb[j]).exp();
    // row scaling
    let x: Vec<f64> = (0..n)
        .map(|i| {
            let r: f64 = (0..m).map(|j| entry(i, j)).sum();
            if r > 0.0 {
                (a[i] / r).min(1.0)
            } else {
                1.0
            }
        })
        .collect();
    let mut col = vec![0.0; m];
    for i in 0..n {
        for j in 0..m {
            col[j] += x[i] * entry(i, j);
        }
    }
    let y: Vec<f64> = (0..m)
        .map(|j| if col[j] > 0.0 { (b[j] / col[j]).min(1.0) } else { 1.0 })
        .collect();
    let mut row_err = a.to_vec();
    let mut col_err = b.to_vec();
    let mut primal = 0.0;
    for i in 0..n {
        for j in 0..m {
            let p = x[i] * entry(i, j) * y[j];
            row_err[i] -= p;
            col_err[j] -= p;
            primal += p * cost(i, j);
        }
    }
    row_err.iter_mut().for_each(|v| *v = v.max(0.0));
    col_err.iter_mut().for_each(|v| *v = v.max(0.0));
    let total: f64 = row_err.iter().sum();
    if total > 0.0 {
        for i in 0..n {
            if row_err[i] == 0.0 {
                continue;
            }
            for j in 0..m {
                primal += row_err[i] * col_err[j] / total * cost(i, j);
            }
        }
    }
    let plan = keep_plan.then(|| {
        let mut p = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                p[i * m + j] = x[i] * entry(i, j) * y[j] + if total > 0.0 { row_err[i] * col_err[j] / total } else { 0.0 };
            }
        }
        p
    });
    // c-transform: g'_j = min_i (c_ij − f_i), then f'_i = min_j (c_ij − g'_j)
    let gt: Vec<f64> = (0..m)
        .map(|j| (0..n).map(|i| cost(i, j) - f[i]).fold(f64::INFINITY, f64::min))
        .collect();
    let ft: Vec<f64> = (0..n)
        .map(|i| (0..m).map(|j| cost(i, j) - gt[j]).fold(f64::INFINITY, f64::min))
        .collect();
    let dual = a.iter().zip(&ft).map(|(w, v)| w * v).sum::<f64>() + b.iter().zip(&gt).map(|(w, v)| w * v).sum::<f64>();
    EntropicSolution {
        primal,
        dual,
        plan,
    }
}
