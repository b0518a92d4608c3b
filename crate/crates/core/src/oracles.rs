//! Loop-based reference implementations of the partition statistics and
//! losses, plus a central-difference gradient oracle. Slow on purpose: every
//! quantity is an explicit sum over nodes or ordered adjacency entries.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numerics::Dense;
use crate::scalar::Scalar;

/// Expected size, edge count, cut, volume and label histogram of one soft shard.
/// Edges and cuts count ordered adjacency entries.
#[derive(Clone, Debug, PartialEq)]
pub struct ShardStats {
    pub exp_nodes: f64,
    pub exp_edges: f64,
    pub exp_cut: f64,
    pub exp_degree_sum: f64,
    pub exp_label_counts: Vec<f64>,
}

const EPS: f64 = 1e-12;

fn check_assignment<T: Scalar>(p: &Dense<T>, graph: &Graph<T>) -> Result<()> {
    if p.rows() != graph.n_nodes() || p.cols() == 0 {
        return Err(Error::contract(format!("assignment is {}x{}, graph has {} nodes", p.rows(), p.cols(), graph.n_nodes())));
    }
    for i in 0..p.rows() {
        let s: f64 = p.row(i).iter().map(|v| v.as_f64()).sum();
        if (s - 1.0).abs() > 1e-6 || p.row(i).iter().any(|v| v.as_f64() < 0.0) {
            return Err(Error::contract(format!("row {i} of the assignment sums to {s}")));
        }
    }
    Ok(())
}

pub fn expected_stats<T: Scalar>(p: &Dense<T>, graph: &Graph<T>) -> Result<Vec<ShardStats>> {
    check_assignment(p, graph)?;
    let n = graph.n_nodes();
    let degrees = graph.degrees();
    let pr = |j: usize, i: usize| p[(j, i)].as_f64();
    let mut out = Vec::with_capacity(p.cols());
    for i in 0..p.cols() {
        let mut nodes = 0.0;
        let mut deg_sum = 0.0;
        let mut labels = vec![0.0; graph.n_classes()];
        for j in 0..n {
            nodes += pr(j, i);
            deg_sum += degrees[j].as_f64() * pr(j, i);
            labels[graph.labels()[j]] += pr(j, i);
        }
        let mut edges = 0.0;
        let mut cut = 0.0;
        for (j, k, a) in graph.adjacency().entries() {
            let a = a.as_f64();
            edges += a * pr(j, i) * pr(k, i);
            cut += a * pr(j, i) * (1.0 - pr(k, i));
        }
        out.push(ShardStats { exp_nodes: nodes, exp_edges: edges, exp_cut: cut, exp_degree_sum: deg_sum, exp_label_counts: labels });
    }
    Ok(out)
}

/// Expected retraining cost `Σ_i (E|V_i| / N) E|E_i|`.
pub fn oracle_loss_time<T: Scalar>(p: &Dense<T>, graph: &Graph<T>) -> Result<f64> {
    let n = graph.n_nodes() as f64;
    Ok(expected_stats(p, graph)?.iter().map(|s| s.exp_nodes / n * s.exp_edges).sum())
}

/// Expected normalized cut `Σ_i E[cut_i] / E[vol_i]`.
pub fn oracle_loss_struct<T: Scalar>(p: &Dense<T>, graph: &Graph<T>) -> Result<f64> {
    Ok(expected_stats(p, graph)?.iter().map(|s| s.exp_cut / s.exp_degree_sum.max(EPS)).sum())
}

/// Mean over shards of the entropy of the expected label distribution.
pub fn oracle_loss_sem<T: Scalar>(p: &Dense<T>, graph: &Graph<T>) -> Result<f64> {
    let stats = expected_stats(p, graph)?;
    let mut total = 0.0;
    for s in &stats {
        let mut h = 0.0;
        for &c in &s.exp_label_counts {
            let q = c / s.exp_nodes.max(EPS);
            if q > 0.0 {
                h -= q * q.max(EPS).ln();
            }
        }
        total += h;
    }
    Ok(total / stats.len() as f64)
}

/// Central differences `(f(θ + h) − f(θ − h)) / 2h`, one entry at a time.
pub fn finite_diff<F>(loss: F, params: &BTreeMap<String, Dense<f64>>, step: f64) -> Result<BTreeMap<String, Dense<f64>>>
where
    F: Fn(&BTreeMap<String, Dense<f64>>) -> f64,
{
    let mut work = params.clone();
    let eval = |work: &BTreeMap<String, Dense<f64>>| {
        let v = loss(work);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::contract(format!("loss evaluated to {v}")))
        }
    };
    eval(&work)?;
    let mut out = BTreeMap::new();
    for (name, value) in params {
        let mut grad = Dense::zeros(value.rows(), value.cols());
        for k in 0..value.len() {
            let orig = value.as_slice()[k];
            work.get_mut(name).unwrap().as_mut_slice()[k] = orig + step;
            let plus = eval(&work)?;
            work.get_mut(name).unwrap().as_mut_slice()[k] = orig - step;
            let minus = eval(&work)?;
            work.get_mut(name).unwrap().as_mut_slice()[k] = orig;
            grad.as_mut_slice()[k] = (plus - minus) / (2.0 * step);
        }
        out.insert(name.clone(), grad);
    }
    Ok(out)
}
