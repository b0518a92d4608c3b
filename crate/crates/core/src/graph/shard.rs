use crate::error::{Error, Result};
use crate::graph::{DeleteSet, Graph, Partition};
use crate::numerics::{Dense, Sparse};
use crate::scalar::Scalar;

/// One isolated subgraph: its members, induced edges and node data, all in
/// local indices. `node_ids[k]` is the graph id of local node `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Shard<T> {
    pub shard_id: usize,
    node_ids: Vec<usize>,
    adjacency: Sparse<T>,
    features: Dense<T>,
    labels: Vec<usize>,
    train_local: Vec<usize>,
}

impl<T: Scalar> Shard<T> {
    /// The subgraph of `graph` induced by `members` (sorted, unique).
    pub fn induce(graph: &Graph<T>, shard_id: usize, members: Vec<usize>) -> Result<Self> {
        debug_assert!(members.windows(2).all(|w| w[0] < w[1]));
        let local = |g: usize| members.binary_search(&g).ok();
        let mut entries = Vec::new();
        for (li, &g) in members.iter().enumerate() {
            let (cols, vals) = graph.adjacency().row(g);
            for (&h, &v) in cols.iter().zip(vals) {
                if let Some(lj) = local(h) {
                    entries.push((li, lj, v));
                }
            }
        }
        let n = members.len();
        let adjacency = Sparse::from_triplets(n, n, entries)?;
        let features = graph.features().select_rows(&members);
        let labels = members.iter().map(|&g| graph.labels()[g]).collect();
        let train_local = (0..n).filter(|&k| graph.splits().is_train(members[k])).collect();
        Ok(Self { shard_id, node_ids: members, adjacency, features, labels, train_local })
    }

    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn node_ids(&self) -> &[usize] {
        &self.node_ids
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

    /// Local indices of members that belong to the training split.
    pub fn train_local(&self) -> &[usize] {
        &self.train_local
    }

    pub fn local_index(&self, global: usize) -> Option<usize> {
        self.node_ids.binary_search(&global).ok()
    }

    pub fn contains(&self, global: usize) -> bool {
        self.local_index(global).is_some()
    }

    /// Undirected edge count.
    pub fn n_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }
}

/// Splits `graph` into one shard per partition column, dropping every edge
/// whose endpoints land in different shards.
pub fn induce_shards<T: Scalar>(graph: &Graph<T>, partition: &Partition) -> Result<Vec<Shard<T>>> {
    if partition.n_nodes() != graph.n_nodes() {
        return Err(Error::contract(format!("partition covers {} nodes, graph has {}", partition.n_nodes(), graph.n_nodes())));
    }
    partition.members().into_iter().enumerate().map(|(s, members)| Shard::induce(graph, s, members)).collect()
}

/// Like [`induce_shards`], but each shard keeps only its training-split
/// members. Other nodes stay out of every shard and are embedded inductively.
pub fn induce_train_shards<T: Scalar>(graph: &Graph<T>, partition: &Partition) -> Result<Vec<Shard<T>>> {
    if partition.n_nodes() != graph.n_nodes() {
        return Err(Error::contract(format!("partition covers {} nodes, graph has {}", partition.n_nodes(), graph.n_nodes())));
    }
    partition
        .members()
        .into_iter()
        .enumerate()
        .map(|(s, members)| {
            let train = members.into_iter().filter(|&u| graph.splits().is_train(u)).collect();
            Shard::induce(graph, s, train)
        })
        .collect()
}

/// The shard without the deleted nodes and every edge touching them.
pub fn remove_nodes<T: Scalar>(shard: &Shard<T>, delete: &DeleteSet) -> Shard<T> {
    if !shard.node_ids.iter().any(|&g| delete.contains(g)) {
        return shard.clone();
    }
    let kept: Vec<usize> = (0..shard.len()).filter(|&k| !delete.contains(shard.node_ids[k])).collect();
    let mut new_index = vec![usize::MAX; shard.len()];
    for (new, &old) in kept.iter().enumerate() {
        new_index[old] = new;
    }
    let entries = shard
        .adjacency
        .entries()
        .filter(|&(i, j, _)| new_index[i] != usize::MAX && new_index[j] != usize::MAX)
        .map(|(i, j, v)| (new_index[i], new_index[j], v))
        .collect();
    let adjacency = Sparse::from_triplets(kept.len(), kept.len(), entries).expect("filtered canonical entries stay canonical");
    Shard {
        shard_id: shard.shard_id,
        node_ids: kept.iter().map(|&k| shard.node_ids[k]).collect(),
        adjacency,
        features: shard.features.select_rows(&kept),
        labels: kept.iter().map(|&k| shard.labels[k]).collect(),
        train_local: shard.train_local.iter().filter(|&&k| new_index[k] != usize::MAX).map(|&k| new_index[k]).collect(),
    }
}
