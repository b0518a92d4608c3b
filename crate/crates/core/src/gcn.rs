//! Two-layer GCN sub-models trained in isolation on one shard each, and
//! inductive embedding of nodes that live outside a shard.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Shard};
use crate::numerics::{AdamW, Dense, ParamStore, Sparse, Tape, Var};
use crate::scalar::Scalar;
use crate::seed::SeedLineage;

pub const W1: &str = "w1";
pub const W2: &str = "w2";
pub const HEAD: &str = "head";
pub const BIAS: &str = "bias";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Width of both the hidden layer and the output embedding.
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 100, lr: 1e-2, weight_decay: 1e-5, hidden: 64 }
    }
}

#[inline]
fn norm_weight<T: Scalar>(a: T, di: T, dj: T) -> T {
    a / (di * dj).sqrt()
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃` the degrees of `A + I`.
pub fn normalize_adjacency<T: Scalar>(a: &Sparse<T>) -> Result<Sparse<T>> {
    if a.rows() != a.cols() {
        return Err(Error::shape("normalize_adjacency", format!("{}x{} is not square", a.rows(), a.cols())));
    }
    let d: Vec<T> = a.row_sums().into_iter().map(|s| s + T::one()).collect();
    let mut entries = Vec::with_capacity(a.nnz() + a.rows());
    for i in 0..a.rows() {
        entries.push((i, i, norm_weight(T::one(), d[i], d[i])));
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            entries.push((i, j, norm_weight(v, d[i], d[j])));
        }
    }
    Sparse::from_triplets(a.rows(), a.cols(), entries)
}

/// Glorot-initialised weights and a zero bias, drawn in a fixed order.
pub fn init_gcn<T: Scalar, R: Rng + ?Sized>(in_dim: usize, hidden: usize, n_classes: usize, rng: &mut R) -> ParamStore<T> {
    let mut p = ParamStore::new();
    p.insert(W1, Dense::glorot(in_dim, hidden, rng));
    p.insert(W2, Dense::glorot(hidden, hidden, rng));
    p.insert(HEAD, Dense::glorot(hidden, n_classes, rng));
    p.insert(BIAS, Dense::zeros(1, n_classes));
    p
}

fn check_params<T: Scalar>(params: &ParamStore<T>, in_dim: usize) -> Result<()> {
    let w1 = params.expect(W1)?;
    let w2 = params.expect(W2)?;
    let head = params.expect(HEAD)?;
    let bias = params.expect(BIAS)?;
    if w1.rows() != in_dim || w2.rows() != w1.cols() || head.rows() != w2.cols() || bias.shape() != (1, head.cols()) {
        return Err(Error::contract(format!(
            "gcn parameters {:?}/{:?}/{:?}/{:?} do not fit {in_dim} input features",
            w1.shape(),
            w2.shape(),
            head.shape(),
            bias.shape()
        )));
    }
    Ok(())
}

/// Records the forward pass; returns `(embeddings, logits)`.
pub(crate) fn gcn_tape<T: Scalar>(
    tape: &mut Tape<T>,
    a_hat: &Arc<Sparse<T>>,
    x: &Dense<T>,
    vars: &BTreeMap<String, Var>,
) -> Result<(Var, Var)> {
    let x = tape.constant(x.clone());
    let xw = tape.matmul(x, vars[W1])?;
    let h = tape.spmm(a_hat, xw)?;
    let h = tape.relu(h);
    let hw = tape.matmul(h, vars[W2])?;
    let e = tape.spmm(a_hat, hw)?;
    let logits = tape.matmul(e, vars[HEAD])?;
    let logits = tape.add(logits, vars[BIAS])?;
    Ok((e, logits))
}

/// `E = Â relu(Â X W1) W2` and `logits = E head + bias` on a raw adjacency.
pub fn gcn_forward<T: Scalar>(adjacency: &Sparse<T>, features: &Dense<T>, params: &ParamStore<T>) -> Result<(Dense<T>, Dense<T>)> {
    check_params(params, features.cols())?;
    if adjacency.rows() != features.rows() {
        return Err(Error::contract(format!("{} adjacency rows for {} feature rows", adjacency.rows(), features.rows())));
    }
    let a_hat = Arc::new(normalize_adjacency(adjacency)?);
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let (e, logits) = gcn_tape(&mut tape, &a_hat, features, &vars)?;
    Ok((tape.value(e).clone(), tape.value(logits).clone()))
}

/// Class logits from embeddings through the sub-model's own head.
pub fn head_logits<T: Scalar>(params: &ParamStore<T>, embeddings: &Dense<T>) -> Result<Dense<T>> {
    let mut logits = embeddings.matmul(params.expect(HEAD)?)?;
    let bias = params.expect(BIAS)?;
    for i in 0..logits.rows() {
        for (o, &b) in logits.row_mut(i).iter_mut().zip(bias.row(0)) {
            *o += b;
        }
    }
    Ok(logits)
}

/// One shard's sub-model. `params` is `None` when the shard had no training
/// nodes; such models take no part in aggregation.
#[derive(Clone, Debug, PartialEq)]
pub struct ShardModel<T> {
    pub shard_id: usize,
    pub lineage: SeedLineage,
    pub params: Option<ParamStore<T>>,
    pub epochs: usize,
    pub final_train_loss: Option<f64>,
}

impl<T: Scalar> ShardModel<T> {
    pub fn is_trained(&self) -> bool {
        self.params.is_some()
    }

    pub fn untrained(shard_id: usize, lineage: SeedLineage) -> Self {
        Self { shard_id, lineage, params: None, epochs: 0, final_train_loss: None }
    }
}

fn train_loss<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ParamStore<T>,
    a_hat: &Arc<Sparse<T>>,
    shard: &Shard<T>,
    labels: &[usize],
) -> Result<Var> {
    let vars = params.bind(tape);
    let (_, logits) = gcn_tape(tape, a_hat, shard.features(), &vars)?;
    let picked = tape.gather_rows(logits, shard.train_local())?;
    tape.cross_entropy(picked, labels)
}

/// Full-batch AdamW on the mean cross-entropy over the shard's training
/// nodes. A pure function of the shard contents, `cfg` and `lineage`.
pub fn train_submodel<T: Scalar>(shard: &Shard<T>, n_classes: usize, cfg: &TrainConfig, lineage: SeedLineage) -> Result<ShardModel<T>> {
    if shard.train_local().is_empty() {
        log::debug!("shard {} has no training nodes; left untrained", shard.shard_id);
        return Ok(ShardModel::untrained(shard.shard_id, lineage));
    }
    let mut rng = lineage.rng();
    let mut params = init_gcn(shard.features().cols(), cfg.hidden, n_classes, &mut rng);
    let a_hat = Arc::new(normalize_adjacency(shard.adjacency())?);
    let labels: Vec<usize> = shard.train_local().iter().map(|&k| shard.labels()[k]).collect();
    let opt = AdamW::new(cfg.lr, cfg.weight_decay);
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let loss = train_loss(&mut tape, &params, &a_hat, shard, &labels)?;
        let value = tape.scalar(loss)?;
        if !value.is_finite() {
            return Err(Error::Training { stage: "submodel", epoch, msg: format!("shard {} loss is {value}", shard.shard_id) });
        }
        let grads = tape.gradients(loss)?;
        params.adamw_step(&grads, &opt)?;
    }
    let mut tape = Tape::new();
    let loss = train_loss(&mut tape, &params, &a_hat, shard, &labels)?;
    let final_train_loss = Some(tape.scalar(loss)?.as_f64());
    Ok(ShardModel { shard_id: shard.shard_id, lineage, params: Some(params), epochs: cfg.epochs, final_train_loss })
}

/// Cached per-shard quantities for embedding arbitrary graph nodes.
///
/// A query outside the shard is embedded in a virtual view made of the shard
/// plus the query, wired to the shard members it touches in the full graph.
/// Only the query's two-hop neighbourhood changes, so the view is evaluated
/// locally instead of re-running the whole shard.
pub struct ShardEncoder<'a, T> {
    shard: &'a Shard<T>,
    params: &'a ParamStore<T>,
    degree: Vec<T>,
    xw: Dense<T>,
    embeddings: Dense<T>,
}

impl<'a, T: Scalar> ShardEncoder<'a, T> {
    pub fn new(model: &'a ShardModel<T>, shard: &'a Shard<T>) -> Result<Self> {
        let params = model.params.as_ref().ok_or_else(|| Error::contract(format!("shard {} has no trained model", model.shard_id)))?;
        check_params(params, shard.features().cols())?;
        let (embeddings, _) = gcn_forward(shard.adjacency(), shard.features(), params)?;
        let degree = shard.adjacency().row_sums().into_iter().map(|d| d + T::one()).collect();
        let xw = shard.features().matmul(params.expect(W1)?)?;
        Ok(Self { shard, params, degree, xw, embeddings })
    }

    pub fn member_embeddings(&self) -> &Dense<T> {
        &self.embeddings
    }

    /// Embedding rows for `queries`, in order. Members get their row from the
    /// plain shard forward pass.
    pub fn embed(&self, graph: &Graph<T>, queries: &[usize]) -> Result<Dense<T>> {
        if let Some(&bad) = queries.iter().find(|&&u| u >= graph.n_nodes()) {
            return Err(Error::Validation(format!("query node {bad} out of range")));
        }
        let outsiders: Vec<usize> = queries.iter().copied().filter(|&u| !self.shard.contains(u)).collect();
        let xw_q = graph.features().select_rows(&outsiders).matmul(self.params.expect(W1)?)?;
        let hidden = self.xw.cols();
        let mut mixed = Dense::zeros(outsiders.len(), hidden);
        for (q, &u) in outsiders.iter().enumerate() {
            let z = self.mix_outsider(graph, u, xw_q.row(q));
            mixed.row_mut(q).copy_from_slice(&z);
        }
        let outside_emb = mixed.matmul(self.params.expect(W2)?)?;
        let d = self.embeddings.cols();
        let mut out = Dense::zeros(queries.len(), d);
        let mut q = 0;
        for (row, &u) in queries.iter().enumerate() {
            match self.shard.local_index(u) {
                Some(k) => out.row_mut(row).copy_from_slice(self.embeddings.row(k)),
                None => {
                    out.row_mut(row).copy_from_slice(outside_emb.row(q));
                    q += 1;
                }
            }
        }
        Ok(out)
    }

    /// Second-layer input of the virtual node: `Σ_v Â'[u,v] h1[v]`, before `W2`.
    fn mix_outsider(&self, graph: &Graph<T>, u: usize, xw_u: &[T]) -> Vec<T> {
        let (cols, vals) = graph.adjacency().row(u);
        // (local index, edge weight) of shard members adjacent to u, ascending
        let links: Vec<(usize, T)> = cols.iter().zip(vals).filter_map(|(&g, &a)| self.shard.local_index(g).map(|k| (k, a))).collect();
        let linked = |k: usize| links.binary_search_by_key(&k, |&(j, _)| j).ok().map(|i| links[i].1);
        let d_u = links.iter().fold(T::one(), |acc, &(_, a)| acc + a);
        let d_view = |k: usize| self.degree[k] + linked(k).unwrap_or_else(T::zero);
        let hidden = self.xw.cols();
        let relu = |v: &mut Vec<T>| v.iter_mut().filter(|x| **x < T::zero()).for_each(|x| *x = T::zero());
        let axpy = |acc: &mut [T], c: T, x: &[T]| acc.iter_mut().zip(x).for_each(|(o, &v)| *o += c * v);

        let mut h_u = vec![T::zero(); hidden];
        for &(k, a) in &links {
            axpy(&mut h_u, norm_weight(a, d_u, d_view(k)), self.xw.row(k));
        }
        axpy(&mut h_u, norm_weight(T::one(), d_u, d_u), xw_u);
        relu(&mut h_u);

        let mut z = vec![T::zero(); hidden];
        for &(v, a_uv) in &links {
            let dv = d_view(v);
            let mut h_v = vec![T::zero(); hidden];
            axpy(&mut h_v, norm_weight(T::one(), dv, dv), self.xw.row(v));
            let (ncols, nvals) = self.shard.adjacency().row(v);
            for (&w, &a) in ncols.iter().zip(nvals) {
                axpy(&mut h_v, norm_weight(a, dv, d_view(w)), self.xw.row(w));
            }
            axpy(&mut h_v, norm_weight(a_uv, dv, d_u), xw_u);
            relu(&mut h_v);
            axpy(&mut z, norm_weight(a_uv, d_u, dv), &h_v);
        }
        axpy(&mut z, norm_weight(T::one(), d_u, d_u), &h_u);
        z
    }
}

/// Embeds `query_ids` against one trained shard model.
pub fn embed_query<T: Scalar>(model: &ShardModel<T>, shard: &Shard<T>, graph: &Graph<T>, query_ids: &[usize]) -> Result<Dense<T>> {
    ShardEncoder::new(model, shard)?.embed(graph, query_ids)
}
