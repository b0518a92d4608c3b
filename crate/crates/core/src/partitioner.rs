//! Differentiable graph partitioning: a small GCN `ψ` maps node features to a
//! row-stochastic soft assignment `P`, trained on the expected retraining
//! cost, expected normalized cut and expected per-shard label entropy.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gcn::normalize_adjacency;
use crate::graph::{Graph, Partition};
use crate::numerics::{AdamW, Dense, ParamStore, Sparse, Tape, Var};
use crate::scalar::Scalar;
use crate::seed;

pub const PSI_W1: &str = "psi.w1";
pub const PSI_W2: &str = "psi.w2";
pub const PSI_OUT: &str = "psi.out";

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionConfig {
    pub n_shards: usize,
    pub hidden: usize,
    pub lambda_time: f64,
    pub lambda_sem: f64,
    /// L2 coefficient, used both in the loss and as AdamW weight decay.
    pub gamma: f64,
    pub lr: f64,
    pub epochs: usize,
    /// Sign applied to the entropy term: `-1` rewards label-diverse shards.
    pub sem_sign: f64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self { n_shards: 20, hidden: 64, lambda_time: 1e-3, lambda_sem: 1e-3, gamma: 1e-5, lr: 1e-3, epochs: 30, sem_sign: -1.0 }
    }
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_shards == 0 || self.hidden == 0 {
            return Err(Error::Config("partition.n_shards and partition.hidden must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("partition.lr must be positive, got {}", self.lr)));
        }
        if self.sem_sign != 1.0 && self.sem_sign != -1.0 {
            return Err(Error::Config(format!("partition.sem_sign must be +1 or -1, got {}", self.sem_sign)));
        }
        Ok(())
    }
}

/// Constant graph data shared by the three losses.
pub struct PartitionLosses<T> {
    adjacency: Arc<Sparse<T>>,
    degree: Dense<T>,
    labels: Dense<T>,
}

impl<T: Scalar> PartitionLosses<T> {
    pub fn new(graph: &Graph<T>) -> Self {
        let degree = Dense::from_vec(graph.n_nodes(), 1, graph.degrees()).expect("one degree per node");
        Self { adjacency: Arc::new(graph.adjacency().clone()), degree, labels: Dense::one_hot(graph.labels(), graph.n_classes()) }
    }

    fn n_nodes(&self) -> usize {
        self.degree.rows()
    }

    /// Expected ordered-pair edges per shard, `colsum(P ⊙ A P)`, as `1 x S`.
    fn expected_edges(&self, tape: &mut Tape<T>, p: Var) -> Result<Var> {
        let ap = tape.spmm(&self.adjacency, p)?;
        let pap = tape.mul(p, ap)?;
        Ok(tape.sum_rows(pap))
    }

    /// `(1/N) Σ_i n_i E_i` with `n = colsum(P)`.
    pub fn time(&self, tape: &mut Tape<T>, p: Var) -> Result<Var> {
        let edges = self.expected_edges(tape, p)?;
        let nodes = tape.sum_rows(p);
        let prod = tape.mul(nodes, edges)?;
        let total = tape.sum(prod);
        Ok(tape.scale(total, T::one() / T::of(self.n_nodes() as f64)))
    }

    /// `Σ_i (vol_i − E_i) / max(vol_i, ε)` with `vol = dᵀP`.
    pub fn structure(&self, tape: &mut Tape<T>, p: Var) -> Result<Var> {
        let edges = self.expected_edges(tape, p)?;
        let deg = tape.constant(self.degree.clone());
        let weighted = tape.mul(p, deg)?;
        let vol = tape.sum_rows(weighted);
        let cut = tape.sub(vol, edges)?;
        let den = tape.clamp_min(vol, T::tiny());
        let ratio = tape.div(cut, den)?;
        Ok(tape.sum(ratio))
    }

    /// Mean over shards of `−Σ_j q_ij ln q_ij`, `q_i = (PᵀY)_i / n_i`.
    pub fn semantic(&self, tape: &mut Tape<T>, p: Var) -> Result<Var> {
        let s = tape.value(p).cols();
        let pt = tape.transpose(p);
        let y = tape.constant(self.labels.clone());
        let counts = tape.matmul(pt, y)?;
        let nodes = tape.sum_cols(pt);
        let nodes = tape.clamp_min(nodes, T::tiny());
        let q = tape.div(counts, nodes)?;
        let lq = tape.log(q);
        let qlq = tape.mul(q, lq)?;
        let total = tape.sum(qlq);
        Ok(tape.scale(total, -T::one() / T::of(s as f64)))
    }

    /// `λ_time L_time + L_struct + sem_sign λ_sem L_sem + γ/2 ‖θ‖²`.
    pub fn combined(&self, tape: &mut Tape<T>, p: Var, cfg: &PartitionConfig, params: Option<&BTreeMap<String, Var>>) -> Result<Var> {
        let time = self.time(tape, p)?;
        let time = tape.scale(time, T::of(cfg.lambda_time));
        let structure = self.structure(tape, p)?;
        let sem = self.semantic(tape, p)?;
        let sem = tape.scale(sem, T::of(cfg.sem_sign * cfg.lambda_sem));
        let mut loss = tape.add(time, structure)?;
        loss = tape.add(loss, sem)?;
        if let Some(vars) = params {
            if let Some(l2) = ParamStore::l2_penalty(tape, vars)? {
                let l2 = tape.scale(l2, T::of(cfg.gamma));
                loss = tape.add(loss, l2)?;
            }
        }
        Ok(loss)
    }
}

fn eval_on<T: Scalar>(p: &Dense<T>, graph: &Graph<T>, f: impl Fn(&PartitionLosses<T>, &mut Tape<T>, Var) -> Result<Var>) -> Result<T> {
    if p.rows() != graph.n_nodes() {
        return Err(Error::contract(format!("assignment has {} rows, graph {} nodes", p.rows(), graph.n_nodes())));
    }
    let losses = PartitionLosses::new(graph);
    let mut tape = Tape::new();
    let pv = tape.constant(p.clone());
    let out = f(&losses, &mut tape, pv)?;
    tape.scalar(out)
}

pub fn loss_time<T: Scalar>(p: &Dense<T>, graph: &Graph<T>) -> Result<T> {
    eval_on(p, graph, |l, t, v| l.time(t, v))
}

pub fn loss_struct<T: Scalar>(p: &Dense<T>, graph: &Graph<T>) -> Result<T> {
    eval_on(p, graph, |l, t, v| l.structure(t, v))
}

pub fn loss_sem<T: Scalar>(p: &Dense<T>, graph: &Graph<T>) -> Result<T> {
    eval_on(p, graph, |l, t, v| l.semantic(t, v))
}

/// The combined objective at a fixed `P`; `params` adds the L2 term.
pub fn loss_part<T: Scalar>(p: &Dense<T>, graph: &Graph<T>, cfg: &PartitionConfig, params: Option<&ParamStore<T>>) -> Result<T> {
    eval_on(p, graph, |l, t, v| {
        let vars = params.map(|ps| ps.bind(t));
        l.combined(t, v, cfg, vars.as_ref())
    })
}

pub fn init_partitioner<T: Scalar, R: Rng + ?Sized>(in_dim: usize, cfg: &PartitionConfig, rng: &mut R) -> ParamStore<T> {
    let mut p = ParamStore::new();
    p.insert(PSI_W1, Dense::glorot(in_dim, cfg.hidden, rng));
    p.insert(PSI_W2, Dense::glorot(cfg.hidden, cfg.hidden, rng));
    p.insert(PSI_OUT, Dense::glorot(cfg.hidden, cfg.n_shards, rng));
    p
}

fn psi_tape<T: Scalar>(tape: &mut Tape<T>, a_hat: &Arc<Sparse<T>>, x: &Dense<T>, vars: &BTreeMap<String, Var>) -> Result<Var> {
    let x = tape.constant(x.clone());
    let xw = tape.matmul(x, vars[PSI_W1])?;
    let h = tape.spmm(a_hat, xw)?;
    let h = tape.relu(h);
    let hw = tape.matmul(h, vars[PSI_W2])?;
    let h2 = tape.spmm(a_hat, hw)?;
    let logits = tape.matmul(h2, vars[PSI_OUT])?;
    Ok(tape.row_softmax(logits))
}

fn check_psi<T: Scalar>(params: &ParamStore<T>, in_dim: usize) -> Result<()> {
    let (w1, w2, out) = (params.expect(PSI_W1)?, params.expect(PSI_W2)?, params.expect(PSI_OUT)?);
    if w1.rows() != in_dim || w2.rows() != w1.cols() || out.rows() != w2.cols() {
        return Err(Error::contract(format!(
            "partition network {:?}/{:?}/{:?} does not fit {in_dim} input features",
            w1.shape(),
            w2.shape(),
            out.shape()
        )));
    }
    Ok(())
}

/// `P = rowSoftmax(Â relu(Â X W1) W2 W_out)`.
pub fn psi_forward<T: Scalar>(graph: &Graph<T>, params: &ParamStore<T>) -> Result<Dense<T>> {
    check_psi(params, graph.feature_dim())?;
    let a_hat = Arc::new(normalize_adjacency(graph.adjacency())?);
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let p = psi_tape(&mut tape, &a_hat, graph.features(), &vars)?;
    Ok(tape.value(p).clone())
}

/// The combined objective at `P = ψ(graph)` and its gradient for every
/// parameter of `ψ`.
pub fn psi_loss_grad<T: Scalar>(
    graph: &Graph<T>,
    cfg: &PartitionConfig,
    params: &ParamStore<T>,
) -> Result<(T, BTreeMap<String, Dense<T>>)> {
    check_psi(params, graph.feature_dim())?;
    let a_hat = Arc::new(normalize_adjacency(graph.adjacency())?);
    let losses = PartitionLosses::new(graph);
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let p = psi_tape(&mut tape, &a_hat, graph.features(), &vars)?;
    let loss = losses.combined(&mut tape, p, cfg, Some(&vars))?;
    Ok((tape.scalar(loss)?, tape.gradients(loss)?))
}

/// Trained `ψ` plus the loss recorded before each update.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionModel<T> {
    pub params: ParamStore<T>,
    pub loss_trace: Vec<f64>,
}

/// Full-batch AdamW on the combined objective; one step per epoch.
pub fn train_partitioner<T: Scalar>(graph: &Graph<T>, cfg: &PartitionConfig, seed: u64) -> Result<PartitionModel<T>> {
    cfg.validate()?;
    let mut rng = seed::rng(seed::derive(seed, &[seed::STREAM_PARTITION]));
    let mut params = init_partitioner(graph.feature_dim(), cfg, &mut rng);
    let a_hat = Arc::new(normalize_adjacency(graph.adjacency())?);
    let losses = PartitionLosses::new(graph);
    let opt = AdamW::new(cfg.lr, cfg.gamma);
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        let p = psi_tape(&mut tape, &a_hat, graph.features(), &vars)?;
        let loss = losses.combined(&mut tape, p, cfg, Some(&vars))?;
        let value = tape.scalar(loss)?.as_f64();
        if !value.is_finite() {
            return Err(Error::Training { stage: "partition", epoch, msg: format!("loss is {value}") });
        }
        loss_trace.push(value);
        let grads = tape.gradients(loss)?;
        params.adamw_step(&grads, &opt)?;
    }
    Ok(PartitionModel { params, loss_trace })
}

/// Row-wise argmax; ties go to the lowest shard index.
pub fn infer_partition<T: Scalar>(p: &Dense<T>) -> Result<Partition> {
    let assignment = (0..p.rows())
        .map(|i| {
            let row = p.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    Partition::new(p.cols(), assignment)
}

/// Independent uniform shard per node.
pub fn random_partition(n: usize, s: usize, seed: u64) -> Result<Partition> {
    if s == 0 {
        return Err(Error::contract("random_partition needs at least one shard"));
    }
    let mut rng = seed::rng(seed::derive(seed, &[seed::STREAM_PARTITION, 1]));
    Partition::new(s, (0..n).map(|_| rng.gen_range(0..s)).collect())
}
