use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{DeleteSet, Graph, Splits};
use crate::numerics::{Dense, Sparse};
use crate::scalar::Scalar;
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.7, val: 0.2, test: 0.1 }
    }
}

impl SplitRatios {
    /// `(train, val, test)` sizes: val and test are floored, train takes the rest.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        let total = self.train + self.val + self.test;
        if (total - 1.0).abs() > 1e-9 || [self.train, self.val, self.test].iter().any(|&r| r < 0.0) {
            return Err(Error::contract(format!("split ratios {self:?} must be non-negative and sum to 1")));
        }
        let val = (self.val * n as f64).floor() as usize;
        let test = (self.test * n as f64).floor() as usize;
        Ok((n - val - test, val, test))
    }
}

/// Random train/val/test split, a pure function of `(n, ratios, seed)`.
pub fn split_random<T: Scalar>(graph: Graph<T>, ratios: SplitRatios, seed: u64) -> Result<Graph<T>> {
    let n = graph.n_nodes();
    let (n_train, n_val, _) = ratios.sizes(n)?;
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut seed::rng(seed::derive(seed, &[seed::STREAM_SPLIT])));
    let train = ids[..n_train].to_vec();
    let val = ids[n_train..n_train + n_val].to_vec();
    let test = ids[n_train + n_val..].to_vec();
    graph.with_splits(Splits::new(train, val, test))
}

/// Stochastic block model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SbmConfig {
    pub n: usize,
    pub n_classes: usize,
    pub blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// Feature width; at least `blocks`. Extra columns carry only noise.
    pub feature_dim: usize,
    /// Half-width of the uniform noise added to every feature.
    pub feature_noise: f64,
    /// Probability that a node's indicator feature points at a random block.
    pub feature_flip: f64,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self { n: 200, n_classes: 4, blocks: 4, p_in: 0.1, p_out: 0.005, feature_dim: 0, feature_noise: 0.1, feature_flip: 0.0, seed: 0 }
    }
}

impl SbmConfig {
    /// Block of node `u`: contiguous equal-size runs.
    pub fn block_of(&self, u: usize) -> usize {
        u * self.blocks / self.n.max(1)
    }
}

/// Labels are `block mod n_classes`; features are a (possibly flipped)
/// one-hot block indicator plus seeded uniform noise. Splits are 0.7/0.2/0.1.
pub fn synth_graph<T: Scalar>(cfg: &SbmConfig) -> Result<Graph<T>> {
    if !(0.0 <= cfg.p_out && cfg.p_out <= cfg.p_in && cfg.p_in <= 1.0) {
        return Err(Error::contract(format!("need 0 <= p_out <= p_in <= 1, got {} / {}", cfg.p_out, cfg.p_in)));
    }
    if cfg.blocks == 0 || cfg.n_classes == 0 {
        return Err(Error::contract("blocks and n_classes must be positive"));
    }
    let mut rng = seed::rng(cfg.seed);
    let mut edges = Vec::new();
    for u in 0..cfg.n {
        for v in (u + 1)..cfg.n {
            let p = if cfg.block_of(u) == cfg.block_of(v) { cfg.p_in } else { cfg.p_out };
            if p > 0.0 && rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let adjacency = Sparse::adjacency(cfg.n, &edges)?;
    let dim = cfg.feature_dim.max(cfg.blocks);
    let mut features = Dense::zeros(cfg.n, dim);
    for u in 0..cfg.n {
        let hot = if cfg.feature_flip > 0.0 && rng.gen_bool(cfg.feature_flip) { rng.gen_range(0..cfg.blocks) } else { cfg.block_of(u) };
        for j in 0..dim {
            let base = if j == hot { 1.0 } else { 0.0 };
            let noise = if cfg.feature_noise > 0.0 { rng.gen_range(-cfg.feature_noise..cfg.feature_noise) } else { 0.0 };
            features[(u, j)] = T::of(base + noise);
        }
    }
    let labels = (0..cfg.n).map(|u| cfg.block_of(u) % cfg.n_classes).collect();
    let graph = Graph::new(adjacency, features, labels, cfg.n_classes, Splits::default())?;
    split_random(graph, SplitRatios::default(), cfg.seed)
}

/// Appends `n_nodes` mislabelled nodes, each wired to `edges_per_node`
/// distinct pre-existing nodes. Features are copied from a random existing
/// node and the label is drawn uniformly from the classes other than that
/// node's label. Injected nodes join the training split and are returned as
/// the delete set that undoes the injection.
pub fn inject_noise<T: Scalar>(graph: &Graph<T>, n_nodes: usize, edges_per_node: usize, seed: u64) -> Result<(Graph<T>, DeleteSet)> {
    let n = graph.n_nodes();
    if n_nodes == 0 {
        return Ok((graph.clone(), DeleteSet::default()));
    }
    if n < edges_per_node || n == 0 {
        return Err(Error::contract(format!("cannot wire {edges_per_node} edges into a {n}-node graph")));
    }
    let mut rng = seed::rng(seed::derive(seed, &[seed::STREAM_NOISE]));
    let c = graph.n_classes();
    let total = n + n_nodes;
    let mut entries: Vec<(usize, usize, T)> = graph.adjacency().entries().collect();
    let mut features = Dense::zeros(total, graph.feature_dim());
    for u in 0..n {
        features.row_mut(u).copy_from_slice(graph.features().row(u));
    }
    let mut labels = graph.labels().to_vec();
    let existing: Vec<usize> = (0..n).collect();
    for k in 0..n_nodes {
        let u = n + k;
        let source = rng.gen_range(0..n);
        features.row_mut(u).copy_from_slice(graph.features().row(source));
        let label = if c > 1 {
            let shift = rng.gen_range(1..c);
            (graph.labels()[source] + shift) % c
        } else {
            0
        };
        labels.push(label);
        for &v in existing.choose_multiple(&mut rng, edges_per_node) {
            entries.push((u, v, T::one()));
            entries.push((v, u, T::one()));
        }
    }
    let adjacency = Sparse::from_triplets(total, total, entries)?;
    let s = graph.splits();
    let mut train = s.train.clone();
    train.extend(n..total);
    let splits = Splits::new(train, s.val.clone(), s.test.clone());
    let noisy = Graph::new(adjacency, features, labels, c, splits)?;
    Ok((noisy, DeleteSet::new(n..total)))
}
