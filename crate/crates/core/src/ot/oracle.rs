//! Exhaustive transport solver for supports of at most four points.
//!
//! Every vertex of the transportation polytope is the unique flow on some
//! spanning tree of the complete bipartite graph, so enumerating all
//! `(n+m−1)`-edge subsets, keeping the spanning trees and solving each by
//! leaf peeling visits every vertex. With uniform weights and equal counts
//! the vertices are permutations, which are enumerated directly.

use super::{CostKind, DiscreteMeasure};
use crate::error::{Error, Result};

pub const ORACLE_CAP: usize = 4;

/// Exact optimal cost (not its square root) for `kind`.
pub fn brute_force_cost(mu: &DiscreteMeasure, nu: &DiscreteMeasure, kind: CostKind) -> Result<f64> {
    let (n, m) = (mu.len(), nu.len());
    if n > ORACLE_CAP || m > ORACLE_CAP {
        return Err(Error::TooLarge(n.max(m)));
    }
    if mu.point_dim() != nu.point_dim() {
        return Err(Error::InvalidInput("measures live in different dimensions".into()));
    }
    let cost: Vec<f64> = (0..n * m).map(|k| kind.eval(mu.point(k / m), nu.point(k % m))).collect();
    let uniform = n == m
        && mu.weights().iter().chain(nu.weights()).all(|w| (w - 1.0 / n as f64).abs() < 1e-15);
    if uniform {
        return Ok(best_permutation(&cost, n) / n as f64);
    }
    Ok(best_tree(mu.weights(), nu.weights(), &cost))
}

fn best_permutation(cost: &[f64], n: usize) -> f64 {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, cost, n, &mut best);
    best
}

fn permute(perm: &mut [usize], k: usize, cost: &[f64], n: usize, best: &mut f64) {
    if k == n {
        let c: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
        *best = best.min(c);
        return;
    }
    for s in k..n {
        perm.swap(k, s);
        permute(perm, k + 1, cost, n, best);
        perm.swap(k, s);
    }
}

fn best_tree(a: &[f64], b: &[f64], cost: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let edges = n * m;
    let need = n + m - 1;
    let mut best = f64::INFINITY;
    for mask in 0u32..(1u32 << edges) {
        if mask.count_ones() as usize != need {
            continue;
        }
        if let Some(flow) = tree_flow(a, b, mask) {
            if flow.iter().all(|f| *f >= -1e-15) {
                let c: f64 = flow.iter().zip(cost).map(|(f, c)| f.max(0.0) * c).sum();
                best = best.min(c);
            }
        }
    }
    best
}

/// Flow on the spanning tree `mask` meeting the marginals, or `None` when
/// the edge set is not a spanning tree.
fn tree_flow(a: &[f64], b: &[f64], mask: u32) -> Option<Vec<f64>> {
    let (n, m) = (a.len(), b.len());
    let mut flow = vec![0.0; n * m];
    let mut alive: Vec<bool> = (0..n * m).map(|e| mask & (1 << e) != 0).collect();
    let mut rem: Vec<f64> = a.iter().copied().chain(b.iter().copied()).collect();
    let mut removed = vec![false; n + m];
    for _ in 0..(n + m - 1) {
        // find a leaf among the remaining nodes
        let mut leaf = None;
        for v in 0..n + m {
            if removed[v] {
                continue;
            }
            let inc: Vec<usize> = incident(v, n, m).filter(|&e| alive[e]).collect();
            if inc.len() == 1 {
                leaf = Some((v, inc[0]));
                break;
            }
        }
        let (v, e) = leaf?;
        let (i, j) = (e / m, n + e % m);
        let other = if v == i { j } else { i };
        flow[e] = rem[v];
        rem[other] -= rem[v];
        alive[e] = false;
        removed[v] = true;
    }
    // exactly one node is left; a spanning tree leaves no edge behind
    if alive.iter().any(|x| *x) || removed.iter().filter(|r| !**r).count() != 1 {
        return None;
    }
    Some(flow)
}

fn incident(v: usize, n: usize, m: usize) -> Box<dyn Iterator<Item = usize>> {
    if v < n {
        Box::new((0..m).map(move |j| v * m + j))
    } else {
        let j = v - n;
        Box::new((0..n).map(move |i| i * m + j))
    }
}
