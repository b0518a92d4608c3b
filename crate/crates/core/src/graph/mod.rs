//! Attributed, labelled, undirected graphs and their sharded views.

mod io;
mod shard;
mod synth;

use std::collections::BTreeSet;

pub use io::{load_graph, read_partition, write_graph, write_partition, GraphFiles, LoadReport};
pub use shard::{induce_shards, induce_train_shards, remove_nodes, Shard};
pub use synth::{inject_noise, split_random, synth_graph, SbmConfig, SplitRatios};

use crate::error::{Error, Result};
use crate::numerics::{Dense, Sparse};
use crate::scalar::Scalar;

/// Disjoint train/validation/test node sets, each sorted ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn new(mut train: Vec<usize>, mut val: Vec<usize>, mut test: Vec<usize>) -> Self {
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        Self { train, val, test }
    }

    pub fn is_train(&self, u: usize) -> bool {
        self.train.binary_search(&u).is_ok()
    }

    fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for (name, ids) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for &u in ids {
                if u >= n {
                    return Err(Error::Validation(format!("{name} split contains node {u} but the graph has {n} nodes")));
                }
                if std::mem::replace(&mut seen[u], true) {
                    return Err(Error::Validation(format!("node {u} appears in more than one split")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Graph<T> {
    adjacency: Sparse<T>,
    features: Dense<T>,
    labels: Vec<usize>,
    n_classes: usize,
    splits: Splits,
}

impl<T: Scalar> Graph<T> {
    pub fn new(adjacency: Sparse<T>, features: Dense<T>, labels: Vec<usize>, n_classes: usize, splits: Splits) -> Result<Self> {
        let n = features.rows();
        if adjacency.shape() != (n, n) {
            return Err(Error::Validation(format!(
                "adjacency is {}x{} but there are {n} feature rows",
                adjacency.rows(),
                adjacency.cols()
            )));
        }
        if labels.len() != n {
            return Err(Error::Validation(format!("{} labels for {n} nodes", labels.len())));
        }
        if let Some((u, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= n_classes) {
            return Err(Error::Validation(format!("label {l} of node {u} outside [0, {n_classes})")));
        }
        if !adjacency.is_symmetric() {
            return Err(Error::Validation("adjacency is not symmetric".into()));
        }
        if !adjacency.has_zero_diagonal() {
            return Err(Error::Validation("adjacency has self-loops".into()));
        }
        splits.validate(n)?;
        Ok(Self { adjacency, features, labels, n_classes, splits })
    }

    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    /// Undirected edge count (half the adjacency entries).
    pub fn n_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn adjacency(&self) -> &Sparse<T> {
        &self.adjacency
    }

    pub fn features(&self) -> &Dense<T> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        self.adjacency.row(u).0
    }

    /// Row sums of the adjacency.
    pub fn degrees(&self) -> Vec<T> {
        self.adjacency.row_sums()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`.
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        self.adjacency.entries().filter(|&(i, j, _)| i < j).map(|(i, j, _)| (i, j)).collect()
    }

    pub fn with_splits(mut self, splits: Splits) -> Result<Self> {
        splits.validate(self.n_nodes())?;
        self.splits = splits;
        Ok(self)
    }

    /// Subgraph induced by `ids` (any order, duplicates ignored). Node `k` of
    /// the result is the `k`-th smallest id; returns that id map too.
    pub fn induced(&self, ids: &[usize]) -> Result<(Self, Vec<usize>)> {
        let keep: Vec<usize> = ids.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        if let Some(&bad) = keep.iter().find(|&&u| u >= self.n_nodes()) {
            return Err(Error::Validation(format!("node {bad} out of range")));
        }
        let local = |g: usize| keep.binary_search(&g).ok();
        let mut entries = Vec::new();
        for (li, &g) in keep.iter().enumerate() {
            let (cols, vals) = self.adjacency.row(g);
            for (&h, &v) in cols.iter().zip(vals) {
                if let Some(lj) = local(h) {
                    entries.push((li, lj, v));
                }
            }
        }
        let adjacency = Sparse::from_triplets(keep.len(), keep.len(), entries)?;
        let features = self.features.select_rows(&keep);
        let labels = keep.iter().map(|&g| self.labels[g]).collect();
        let remap = |ids: &[usize]| ids.iter().filter_map(|&g| local(g)).collect::<Vec<_>>();
        let splits = Splits::new(remap(&self.splits.train), remap(&self.splits.val), remap(&self.splits.test));
        let g = Self { adjacency, features, labels, n_classes: self.n_classes, splits };
        Ok((g, keep))
    }

    /// Drops every edge incident to `ids`, zeroes their features and removes
    /// them from all splits. Node ids of everything else are unchanged.
    pub fn scrub_nodes(&self, ids: &BTreeSet<usize>) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&u| u >= self.n_nodes()) {
            return Err(Error::Validation(format!("node {bad} out of range")));
        }
        let entries = self.adjacency.entries().filter(|(i, j, _)| !ids.contains(i) && !ids.contains(j)).collect();
        let adjacency = Sparse::from_triplets(self.n_nodes(), self.n_nodes(), entries)?;
        let mut features = self.features.clone();
        for &u in ids {
            features.row_mut(u).iter_mut().for_each(|v| *v = T::zero());
        }
        let keep = |v: &Vec<usize>| v.iter().copied().filter(|u| !ids.contains(u)).collect();
        let splits = Splits::new(keep(&self.splits.train), keep(&self.splits.val), keep(&self.splits.test));
        Ok(Self { adjacency, features, labels: self.labels.clone(), n_classes: self.n_classes, splits })
    }

    pub fn cast<U: Scalar>(&self) -> Graph<U> {
        Graph {
            adjacency: self.adjacency.cast(),
            features: self.features.cast(),
            labels: self.labels.clone(),
            n_classes: self.n_classes,
            splits: self.splits.clone(),
        }
    }
}

/// Hard assignment of every node to one of `n_shards` shards.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    n_shards: usize,
    assignment: Vec<usize>,
}

impl Partition {
    pub fn new(n_shards: usize, assignment: Vec<usize>) -> Result<Self> {
        if n_shards == 0 {
            return Err(Error::Validation("a partition needs at least one shard".into()));
        }
        if let Some((u, &s)) = assignment.iter().enumerate().find(|(_, &s)| s >= n_shards) {
            return Err(Error::Validation(format!("node {u} assigned to shard {s} of {n_shards}")));
        }
        Ok(Self { n_shards, assignment })
    }

    pub fn n_shards(&self) -> usize {
        self.n_shards
    }

    pub fn n_nodes(&self) -> usize {
        self.assignment.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn shard_of(&self, u: usize) -> usize {
        self.assignment[u]
    }

    pub fn shard_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_shards];
        for &s in &self.assignment {
            sizes[s] += 1;
        }
        sizes
    }

    /// Members of each shard, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_shards];
        for (u, &s) in self.assignment.iter().enumerate() {
            out[s].push(u);
        }
        out
    }

    /// Ordered adjacency entries whose endpoints sit in different shards.
    pub fn cross_shard_entries<T: Scalar>(&self, adjacency: &Sparse<T>) -> usize {
        adjacency.entries().filter(|&(i, j, _)| self.assignment[i] != self.assignment[j]).count()
    }
}

/// Nodes whose removal is requested.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DeleteSet {
    node_ids: BTreeSet<usize>,
}

impl DeleteSet {
    pub fn new(ids: impl IntoIterator<Item = usize>) -> Self {
        Self { node_ids: ids.into_iter().collect() }
    }

    pub fn ids(&self) -> &BTreeSet<usize> {
        &self.node_ids
    }

    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn contains(&self, u: usize) -> bool {
        self.node_ids.contains(&u)
    }

    /// Ids must exist and belong to the training split.
    pub fn validate<T: Scalar>(&self, graph: &Graph<T>) -> Result<()> {
        for &u in &self.node_ids {
            if u >= graph.n_nodes() {
                return Err(Error::Validation(format!("delete request names node {u}, graph has {}", graph.n_nodes())));
            }
            if !graph.splits().is_train(u) {
                return Err(Error::Validation(format!("node {u} is not a training node")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Path graph 0-1-2-3, two features per node, labels `[0, 1, 0, 1]`.
    pub fn p4() -> Graph<f64> {
        let adj = Sparse::adjacency(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let x = Dense::from_fn(4, 2, |i, j| (i + j) as f64 * 0.5);
        Graph::new(adj, x, vec![0, 1, 0, 1], 2, Splits::new((0..4).collect(), vec![], vec![])).unwrap()
    }
}
