//! Attention-weighted fusion of frozen per-shard embeddings.
//!
//! The fusion is trained on a small node sample with a classification loss
//! plus two self-supervised terms: an InfoNCE contrast between a node's full
//! fusion and a randomly masked one, and a margin loss that pulls together
//! neighbours the partition put in different shards.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gcn::{embed_query, head_logits, ShardModel};
use crate::graph::{Graph, Partition, Shard};
use crate::numerics::{AdamW, Dense, ParamStore, Tape, Var};
use crate::scalar::Scalar;
use crate::seed;

pub const ATTENTION: &str = "agg.att";
pub const HEAD: &str = "agg.head";
pub const HEAD_BIAS: &str = "agg.bias";

/// Name of shard `i`'s projection matrix.
pub fn projection(i: usize) -> String {
    format!("agg.w.{i:04}")
}

pub fn projection_bias(i: usize) -> String {
    format!("agg.b.{i:04}")
}

/// What each live shard contributes to the fusion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Fusion {
    /// Pre-head sub-model embeddings, classified by a linear head trained
    /// with the fusion.
    Embedding,
    /// Sub-model class posteriors. `S ē_u = Σ_k α_u^k p_u^k` is then a class
    /// distribution and is scored directly, so there is no head.
    #[default]
    Posterior,
}

impl Fusion {
    pub fn name(self) -> &'static str {
        match self {
            Fusion::Embedding => "embedding",
            Fusion::Posterior => "posterior",
        }
    }
}

impl std::str::FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "embedding" => Ok(Fusion::Embedding),
            "posterior" => Ok(Fusion::Posterior),
            _ => Err(Error::Config(format!("unknown fusion `{s}`, expected embedding or posterior"))),
        }
    }
}

/// How many training nodes the aggregator sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleSize {
    /// 1000 nodes (every node when there are fewer) up to 10k training
    /// nodes, 10% of them beyond that.
    Auto,
    Fixed(usize),
}

impl SampleSize {
    pub fn resolve(self, n_train: usize) -> Result<usize> {
        let m = match self {
            SampleSize::Auto if n_train <= 10_000 => n_train.min(1000),
            SampleSize::Auto => n_train / 10,
            SampleSize::Fixed(m) => m,
        };
        if m == 0 || m > n_train {
            return Err(Error::contract(format!("aggregator sample of {m} from {n_train} training nodes")));
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggTrainConfig {
    pub sample_size: SampleSize,
    pub tau: f64,
    pub lambda_contra: f64,
    pub lambda_recon: f64,
    /// L2 coefficient, used both in the loss and as AdamW weight decay.
    pub weight_decay: f64,
    pub lr: f64,
    pub epochs: usize,
    pub mask_rate: f64,
    pub seed: u64,
    /// Use the contrast with the fraction turned upside down.
    pub inverted_infonce: bool,
    /// Use the margin loss with positive and negative swapped.
    pub swapped_triplet: bool,
    /// Pin every attention weight at `1/S`; the projections go unused.
    pub uniform_attention: bool,
    pub fusion: Fusion,
}

impl Default for AggTrainConfig {
    fn default() -> Self {
        Self {
            sample_size: SampleSize::Auto,
            tau: 0.5,
            lambda_contra: 1e-4,
            lambda_recon: 1e-4,
            weight_decay: 1e-5,
            lr: 1e-2,
            epochs: 20,
            mask_rate: 0.5,
            seed: 0,
            inverted_infonce: false,
            swapped_triplet: false,
            uniform_attention: false,
            fusion: Fusion::Posterior,
        }
    }
}

impl AggTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("aggregator.tau must be positive, got {}", self.tau)));
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(Error::Config(format!("aggregator.mask_rate must lie in (0, 1), got {}", self.mask_rate)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("aggregator.lr must be positive, got {}", self.lr)));
        }
        for (name, v) in [("lambda_contra", self.lambda_contra), ("lambda_recon", self.lambda_recon), ("weight_decay", self.weight_decay)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("aggregator.{name} must be a finite non-negative number, got {v}")));
            }
        }
        Ok(())
    }
}

/// One batch pushed through the fusion. Column `k` of `alpha` and `masks`
/// and entry `k` of `embeddings` belong to shard `shard_ids[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedBatch<T> {
    pub node_ids: Vec<usize>,
    pub shard_ids: Vec<usize>,
    pub embeddings: Vec<Dense<T>>,
    pub alpha: Dense<T>,
    pub fused: Dense<T>,
    pub local: Option<Dense<T>>,
    pub masks: Option<Dense<T>>,
}

/// Projections and attention vector only. The attention vector starts at
/// zero, so training departs from mean fusion.
pub fn init_attention<T: Scalar, R: Rng + ?Sized>(shard_ids: &[usize], dim: usize, rng: &mut R) -> ParamStore<T> {
    let mut p = ParamStore::new();
    for &i in shard_ids {
        p.insert(projection(i), Dense::glorot(dim, dim, rng));
        p.insert(projection_bias(i), Dense::zeros(1, dim));
    }
    p.insert(ATTENTION, Dense::zeros(dim, 1));
    p
}

pub fn init_aggregator<T: Scalar, R: Rng + ?Sized>(shard_ids: &[usize], dim: usize, n_classes: usize, rng: &mut R) -> ParamStore<T> {
    let mut p = init_attention(shard_ids, dim, rng);
    p.insert(HEAD, Dense::glorot(dim, n_classes, rng));
    p.insert(HEAD_BIAS, Dense::zeros(1, n_classes));
    p
}

fn var(vars: &BTreeMap<String, Var>, name: &str) -> Result<Var> {
    vars.get(name).copied().ok_or_else(|| Error::contract(format!("missing aggregator parameter `{name}`")))
}

fn check_embeddings<T: Scalar>(shard_ids: &[usize], embeddings: &[Dense<T>]) -> Result<(usize, usize)> {
    let first = embeddings.first().ok_or_else(|| Error::contract("no live shard to aggregate"))?;
    if shard_ids.len() != embeddings.len() {
        return Err(Error::contract(format!("{} shard ids for {} embedding blocks", shard_ids.len(), embeddings.len())));
    }
    if embeddings.iter().any(|e| e.shape() != first.shape()) {
        return Err(Error::shape("attentive_fuse", "per-shard embedding blocks differ in shape"));
    }
    Ok(first.shape())
}

/// `Σ_k e_k ⊙ w[:, k]`, the weights broadcast along each row.
fn weighted_sum<T: Scalar>(tape: &mut Tape<T>, e: &[Var], weights: Var) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (k, &ek) in e.iter().enumerate() {
        let wk = tape.slice_cols(weights, k..k + 1)?;
        let term = tape.mul(ek, wk)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    acc.ok_or_else(|| Error::contract("no live shard to aggregate"))
}

/// Returns `(alpha, fused)`.
fn fuse_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &BTreeMap<String, Var>,
    shard_ids: &[usize],
    e: &[Var],
    uniform: bool,
) -> Result<(Var, Var)> {
    let l = e.len();
    if l == 0 {
        return Err(Error::contract("no live shard to aggregate"));
    }
    let rows = tape.value(e[0]).rows();
    let alpha = if uniform {
        tape.constant(Dense::filled(rows, l, T::one() / T::of(l as f64)))
    } else {
        let att = var(vars, ATTENTION)?;
        let mut scores = Vec::with_capacity(l);
        for (&i, &ei) in shard_ids.iter().zip(e) {
            let z = tape.matmul(ei, var(vars, &projection(i))?)?;
            let z = tape.add(z, var(vars, &projection_bias(i))?)?;
            let z = tape.relu(z);
            scores.push(tape.matmul(z, att)?);
        }
        let s = tape.concat_cols(&scores)?;
        tape.row_softmax(s)
    };
    let sum = weighted_sum(tape, e, alpha)?;
    let fused = tape.scale(sum, T::one() / T::of(l as f64));
    Ok((alpha, fused))
}

/// `ẽ_u = (S / ‖m_u‖₁) Σ_k m_uk α_uk e_uk`.
fn local_on_tape<T: Scalar>(tape: &mut Tape<T>, e: &[Var], alpha: Var, masks: &Dense<T>) -> Result<Var> {
    let l = T::of(e.len() as f64);
    let m = tape.constant(masks.clone());
    let kept = tape.mul(alpha, m)?;
    let sum = weighted_sum(tape, e, kept)?;
    let mut rescale = Dense::zeros(masks.rows(), 1);
    for i in 0..masks.rows() {
        let active: T = masks.row(i).iter().copied().sum();
        if active < T::one() {
            return Err(Error::contract(format!("mask row {i} keeps no shard")));
        }
        rescale[(i, 0)] = l / active;
    }
    let r = tape.constant(rescale);
    tape.mul(sum, r)
}

fn fuse_batch<T: Scalar>(
    node_ids: &[usize],
    shard_ids: &[usize],
    embeddings: Vec<Dense<T>>,
    params: &ParamStore<T>,
    uniform: bool,
) -> Result<FusedBatch<T>> {
    let (rows, _) = check_embeddings(shard_ids, &embeddings)?;
    if rows != node_ids.len() {
        return Err(Error::shape("attentive_fuse", format!("{} node ids for {rows} embedding rows", node_ids.len())));
    }
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let e: Vec<Var> = embeddings.iter().map(|x| tape.constant(x.clone())).collect();
    let (alpha, fused) = fuse_on_tape(&mut tape, &vars, shard_ids, &e, uniform)?;
    Ok(FusedBatch {
        node_ids: node_ids.to_vec(),
        shard_ids: shard_ids.to_vec(),
        alpha: tape.value(alpha).clone(),
        fused: tape.value(fused).clone(),
        embeddings,
        local: None,
        masks: None,
    })
}

/// `α_u = softmax_k(wᵀ relu(W_k e_u^k + b_k))`, `ē_u = (1/S) Σ_k α_u^k e_u^k`,
/// with `S` the number of live shards.
pub fn attentive_fuse<T: Scalar>(
    node_ids: &[usize],
    shard_ids: &[usize],
    embeddings: Vec<Dense<T>>,
    params: &ParamStore<T>,
) -> Result<FusedBatch<T>> {
    fuse_batch(node_ids, shard_ids, embeddings, params, false)
}

/// One 0/1 row per node, each entry kept with probability `1 − mask_rate`,
/// redrawn until at least one entry survives.
pub fn sample_masks<T: Scalar, R: Rng + ?Sized>(rows: usize, shards: usize, mask_rate: f64, rng: &mut R) -> Dense<T> {
    let mut m = Dense::zeros(rows, shards);
    for i in 0..rows {
        loop {
            let mut any = false;
            for k in 0..shards {
                let keep = rng.gen_bool(1.0 - mask_rate);
                m[(i, k)] = if keep { T::one() } else { T::zero() };
                any |= keep;
            }
            if any || shards == 0 {
                break;
            }
        }
    }
    m
}

/// Local views under the given masks.
pub fn local_view_with_masks<T: Scalar>(mut fused: FusedBatch<T>, masks: Dense<T>) -> Result<FusedBatch<T>> {
    if masks.shape() != fused.alpha.shape() {
        return Err(Error::shape("local_view", format!("mask {:?} for attention {:?}", masks.shape(), fused.alpha.shape())));
    }
    let mut tape = Tape::new();
    let e: Vec<Var> = fused.embeddings.iter().map(|x| tape.constant(x.clone())).collect();
    let alpha = tape.constant(fused.alpha.clone());
    let local = local_on_tape(&mut tape, &e, alpha, &masks)?;
    fused.local = Some(tape.value(local).clone());
    fused.masks = Some(masks);
    Ok(fused)
}

/// Draws one mask per node and attaches the resulting local views.
pub fn local_view<T: Scalar, R: Rng + ?Sized>(fused: FusedBatch<T>, mask_rate: f64, rng: &mut R) -> Result<FusedBatch<T>> {
    let (rows, shards) = fused.alpha.shape();
    let masks = sample_masks(rows, shards, mask_rate, rng);
    local_view_with_masks(fused, masks)
}

/// For each row, another row chosen uniformly.
pub fn sample_negatives<R: Rng + ?Sized>(rows: usize, rng: &mut R) -> Result<Vec<usize>> {
    if rows < 2 {
        return Err(Error::contract(format!("contrast needs at least 2 nodes, got {rows}")));
    }
    Ok((0..rows)
        .map(|a| {
            let r = rng.gen_range(0..rows - 1);
            if r >= a {
                r + 1
            } else {
                r
            }
        })
        .collect())
}

/// InfoNCE over `(ē_u, ẽ_u)` against `ē_v` and `ẽ_v`, `v = negatives[u]`,
/// cosine similarity over temperature `tau`, mean over rows.
pub fn contra_with_negatives<T: Scalar>(
    tape: &mut Tape<T>,
    fused: Var,
    local: Var,
    tau: f64,
    negatives: &[usize],
    inverted: bool,
) -> Result<Var> {
    let rows = tape.value(fused).rows();
    if rows < 2 {
        return Err(Error::contract(format!("contrast needs at least 2 nodes, got {rows}")));
    }
    if negatives.len() != rows || negatives.iter().enumerate().any(|(a, &v)| v == a) {
        return Err(Error::contract("every anchor needs one negative other than itself"));
    }
    let pos = tape.row_cosine(fused, local)?;
    let fv = tape.gather_rows(fused, negatives)?;
    let lv = tape.gather_rows(local, negatives)?;
    let inter = tape.row_cosine(fused, fv)?;
    let intra = tape.row_cosine(fused, lv)?;
    let sims = tape.concat_cols(&[pos, inter, intra])?;
    let logits = tape.scale(sims, T::one() / T::of(tau));
    let nll = tape.cross_entropy(logits, &vec![0; rows])?;
    // the inverted fraction is exactly the negated standard loss
    Ok(if inverted { tape.scale(nll, -T::one()) } else { nll })
}

pub fn loss_contra<T: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    fused: Var,
    local: Var,
    tau: f64,
    inverted: bool,
    rng: &mut R,
) -> Result<Var> {
    let negatives = sample_negatives(tape.value(fused).rows(), rng)?;
    contra_with_negatives(tape, fused, local, tau, &negatives, inverted)
}

/// `(anchor, positive, negative)` batch rows. The positive is a neighbour of
/// the anchor in another shard, the negative a non-neighbour; both are drawn
/// from the batch. Anchors lacking either are skipped.
pub fn sample_triplets<T: Scalar, R: Rng + ?Sized>(
    node_ids: &[usize],
    graph: &Graph<T>,
    partition: &Partition,
    rng: &mut R,
) -> Result<Vec<(usize, usize, usize)>> {
    if partition.n_nodes() != graph.n_nodes() {
        return Err(Error::contract("partition and graph disagree on node count"));
    }
    let row_of: HashMap<usize, usize> = node_ids.iter().enumerate().map(|(r, &u)| (u, r)).collect();
    let mut out = Vec::new();
    for (a, &u) in node_ids.iter().enumerate() {
        let nbrs = graph.neighbors(u);
        let positives: Vec<usize> =
            nbrs.iter().filter(|&&v| partition.shard_of(v) != partition.shard_of(u)).filter_map(|v| row_of.get(v).copied()).collect();
        if positives.is_empty() {
            continue;
        }
        let negatives: Vec<usize> = (0..node_ids.len()).filter(|&r| r != a && nbrs.binary_search(&node_ids[r]).is_err()).collect();
        if negatives.is_empty() {
            continue;
        }
        let p = positives[rng.gen_range(0..positives.len())];
        let n = negatives[rng.gen_range(0..negatives.len())];
        out.push((a, p, n));
    }
    Ok(out)
}

/// Mean of `max{φ(u, v⁻) − φ(u, v⁺) + 1, 0}` over the triplets; 0 when there are none.
pub fn recon_with_triplets<T: Scalar>(tape: &mut Tape<T>, fused: Var, triplets: &[(usize, usize, usize)], swapped: bool) -> Result<Var> {
    if triplets.is_empty() {
        return Ok(tape.constant(Dense::scalar(T::zero())));
    }
    let pick = |sel: fn(&(usize, usize, usize)) -> usize| triplets.iter().map(sel).collect::<Vec<_>>();
    let anchor = tape.gather_rows(fused, &pick(|t| t.0))?;
    let pos = tape.gather_rows(fused, &pick(|t| t.1))?;
    let neg = tape.gather_rows(fused, &pick(|t| t.2))?;
    let sp = tape.row_cosine(anchor, pos)?;
    let sn = tape.row_cosine(anchor, neg)?;
    let gap = if swapped { tape.sub(sp, sn)? } else { tape.sub(sn, sp)? };
    let shifted = tape.add_scalar(gap, T::one());
    let hinge = tape.clamp_min(shifted, T::zero());
    Ok(tape.mean(hinge))
}

pub fn loss_recon<T: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    fused: Var,
    node_ids: &[usize],
    graph: &Graph<T>,
    partition: &Partition,
    swapped: bool,
    rng: &mut R,
) -> Result<Var> {
    let triplets = sample_triplets(node_ids, graph, partition, rng)?;
    recon_with_triplets(tape, fused, &triplets, swapped)
}

fn head_on_tape<T: Scalar>(tape: &mut Tape<T>, vars: &BTreeMap<String, Var>, fused: Var) -> Result<Var> {
    let z = tape.matmul(fused, var(vars, HEAD)?)?;
    tape.add(z, var(vars, HEAD_BIAS)?)
}

/// Mean cross-entropy of the head applied to the fused embeddings.
pub fn loss_cls<T: Scalar>(tape: &mut Tape<T>, vars: &BTreeMap<String, Var>, fused: Var, labels: &[usize]) -> Result<Var> {
    let logits = head_on_tape(tape, vars, fused)?;
    tape.cross_entropy(logits, labels)
}

/// `log(S ē_u)`, the log of the attention-weighted posterior mixture.
fn posterior_log_probs<T: Scalar>(tape: &mut Tape<T>, fused: Var, live: usize) -> Var {
    let mix = tape.scale(fused, T::of(live as f64));
    let mix = tape.clamp_min(mix, T::of(POSTERIOR_FLOOR));
    tape.log(mix)
}

const POSTERIOR_FLOOR: f64 = 1e-12;

/// Mean negative log-likelihood of the labels under `S ē_u`, for fused
/// posteriors of `live` shards.
pub fn loss_cls_posterior<T: Scalar>(tape: &mut Tape<T>, fused: Var, live: usize, labels: &[usize]) -> Result<Var> {
    let (rows, cols) = tape.value(fused).shape();
    if labels.len() != rows || labels.iter().any(|&y| y >= cols) {
        return Err(Error::shape("loss_cls_posterior", format!("{} labels for a {rows}x{cols} mixture", labels.len())));
    }
    let logp = posterior_log_probs(tape, fused, live);
    let pick = tape.constant(Dense::one_hot(labels, cols));
    let hit = tape.mul(logp, pick)?;
    let total = tape.sum(hit);
    Ok(tape.scale(total, -T::one() / T::of(rows.max(1) as f64)))
}

/// Frozen inputs of aggregator training.
#[derive(Clone, Debug, PartialEq)]
pub struct AggBatch<T> {
    pub node_ids: Vec<usize>,
    pub labels: Vec<usize>,
    pub shard_ids: Vec<usize>,
    pub embeddings: Vec<Dense<T>>,
}

/// The random choices of one training step.
#[derive(Clone, Debug, PartialEq)]
pub struct Draws<T> {
    pub masks: Dense<T>,
    pub negatives: Vec<usize>,
    pub triplets: Vec<(usize, usize, usize)>,
}

impl<T: Scalar> Draws<T> {
    pub fn sample<R: Rng + ?Sized>(
        batch: &AggBatch<T>,
        graph: &Graph<T>,
        partition: &Partition,
        cfg: &AggTrainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let rows = batch.node_ids.len();
        let masks = sample_masks(rows, batch.shard_ids.len(), cfg.mask_rate, rng);
        let negatives = sample_negatives(rows, rng)?;
        let triplets = sample_triplets(&batch.node_ids, graph, partition, rng)?;
        Ok(Self { masks, negatives, triplets })
    }
}

fn objective_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ParamStore<T>,
    batch: &AggBatch<T>,
    cfg: &AggTrainConfig,
    draws: &Draws<T>,
) -> Result<Var> {
    check_embeddings(&batch.shard_ids, &batch.embeddings)?;
    let vars = params.bind(tape);
    let e: Vec<Var> = batch.embeddings.iter().map(|x| tape.constant(x.clone())).collect();
    let (alpha, fused) = fuse_on_tape(tape, &vars, &batch.shard_ids, &e, cfg.uniform_attention)?;
    let mut loss = match cfg.fusion {
        Fusion::Embedding => loss_cls(tape, &vars, fused, &batch.labels)?,
        Fusion::Posterior => loss_cls_posterior(tape, fused, e.len(), &batch.labels)?,
    };
    if cfg.lambda_contra != 0.0 {
        let local = local_on_tape(tape, &e, alpha, &draws.masks)?;
        let c = contra_with_negatives(tape, fused, local, cfg.tau, &draws.negatives, cfg.inverted_infonce)?;
        let c = tape.scale(c, T::of(cfg.lambda_contra));
        loss = tape.add(loss, c)?;
    }
    if cfg.lambda_recon != 0.0 {
        let r = recon_with_triplets(tape, fused, &draws.triplets, cfg.swapped_triplet)?;
        let r = tape.scale(r, T::of(cfg.lambda_recon));
        loss = tape.add(loss, r)?;
    }
    if cfg.weight_decay != 0.0 {
        if let Some(l2) = ParamStore::l2_penalty(tape, &vars)? {
            let l2 = tape.scale(l2, T::of(cfg.weight_decay));
            loss = tape.add(loss, l2)?;
        }
    }
    Ok(loss)
}

/// `L_cls + λ_c L_contra + λ_r L_recon + (γ′/2)‖Θ‖²` under fixed draws.
pub fn aggregator_loss<T: Scalar>(params: &ParamStore<T>, batch: &AggBatch<T>, cfg: &AggTrainConfig, draws: &Draws<T>) -> Result<T> {
    let mut tape = Tape::new();
    let loss = objective_on_tape(&mut tape, params, batch, cfg, draws)?;
    tape.scalar(loss)
}

/// Objective value and its gradient for every parameter.
pub fn aggregator_loss_grad<T: Scalar>(
    params: &ParamStore<T>,
    batch: &AggBatch<T>,
    cfg: &AggTrainConfig,
    draws: &Draws<T>,
) -> Result<(T, BTreeMap<String, Dense<T>>)> {
    let mut tape = Tape::new();
    let loss = objective_on_tape(&mut tape, params, batch, cfg, draws)?;
    Ok((tape.scalar(loss)?, tape.gradients(loss)?))
}

/// Trained fusion plus what is needed to check it against a pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregator<T> {
    pub n_shards: usize,
    /// Shards with a trained model, ascending.
    pub live: Vec<usize>,
    pub params: ParamStore<T>,
    pub config: AggTrainConfig,
    /// The training sample, ascending.
    pub sample: Vec<usize>,
    pub loss_trace: Vec<f64>,
}

impl<T: Scalar> Aggregator<T> {
    /// Fusion without masking.
    pub fn fuse(&self, node_ids: &[usize], embeddings: Vec<Dense<T>>) -> Result<FusedBatch<T>> {
        fuse_batch(node_ids, &self.live, embeddings, &self.params, self.config.uniform_attention)
    }

    /// Class scores whose row softmax is the predicted distribution.
    pub fn logits(&self, fused: &Dense<T>) -> Result<Dense<T>> {
        let mut tape = Tape::new();
        let f = tape.constant(fused.clone());
        let z = match self.config.fusion {
            Fusion::Embedding => {
                let vars = self.params.bind(&mut tape);
                head_on_tape(&mut tape, &vars, f)?
            }
            Fusion::Posterior => posterior_log_probs(&mut tape, f, self.live.len()),
        };
        Ok(tape.value(z).clone())
    }
}

fn live_models<T: Scalar>(models: &[ShardModel<T>], shards: &[Shard<T>]) -> Result<Vec<usize>> {
    if models.len() != shards.len() {
        return Err(Error::contract(format!("{} shard models for {} shards", models.len(), shards.len())));
    }
    for (i, (m, s)) in models.iter().zip(shards).enumerate() {
        if m.shard_id != i || s.shard_id != i {
            return Err(Error::contract(format!("shard slot {i} holds model {} and shard {}", m.shard_id, s.shard_id)));
        }
    }
    Ok(models.iter().filter(|m| m.is_trained()).map(|m| m.shard_id).collect())
}

fn softmax_rows<T: Scalar>(x: Dense<T>) -> Dense<T> {
    let mut tape = Tape::new();
    let v = tape.constant(x);
    let p = tape.row_softmax(v);
    tape.value(p).clone()
}

/// What every live shard model contributes for `node_ids` under `fusion`,
/// computed in parallel. Returns the live shard ids alongside.
pub fn shard_embeddings<T: Scalar>(
    models: &[ShardModel<T>],
    shards: &[Shard<T>],
    graph: &Graph<T>,
    node_ids: &[usize],
    fusion: Fusion,
) -> Result<(Vec<usize>, Vec<Dense<T>>)> {
    let live = live_models(models, shards)?;
    if live.is_empty() {
        return Err(Error::contract("no shard has a trained model"));
    }
    let embeddings = live
        .par_iter()
        .map(|&i| {
            let e = embed_query(&models[i], &shards[i], graph, node_ids)?;
            match (fusion, &models[i].params) {
                (Fusion::Posterior, Some(p)) => Ok(softmax_rows(head_logits(p, &e)?)),
                _ => Ok(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((live, embeddings))
}

/// Full-batch AdamW on the aggregator objective over a seeded sample of the
/// training split. Sub-models stay frozen.
pub fn train_aggregator<T: Scalar>(
    models: &[ShardModel<T>],
    shards: &[Shard<T>],
    graph: &Graph<T>,
    partition: &Partition,
    cfg: &AggTrainConfig,
) -> Result<Aggregator<T>> {
    cfg.validate()?;
    let train = &graph.splits().train;
    let m = cfg.sample_size.resolve(train.len())?;
    let mut rng = seed::rng(seed::derive(cfg.seed, &[seed::STREAM_AGGREGATOR]));
    let mut sample: Vec<usize> = train.choose_multiple(&mut rng, m).copied().collect();
    sample.sort_unstable();
    let (live, embeddings) = shard_embeddings(models, shards, graph, &sample, cfg.fusion)?;
    let dim = embeddings[0].cols();
    let mut params = match cfg.fusion {
        Fusion::Embedding => init_aggregator(&live, dim, graph.n_classes(), &mut rng),
        Fusion::Posterior => init_attention(&live, dim, &mut rng),
    };
    let batch = AggBatch {
        labels: sample.iter().map(|&u| graph.labels()[u]).collect(),
        node_ids: sample.clone(),
        shard_ids: live.clone(),
        embeddings,
    };
    let opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let draws = Draws::sample(&batch, graph, partition, cfg, &mut rng)?;
        let mut tape = Tape::new();
        let loss = objective_on_tape(&mut tape, &params, &batch, cfg, &draws)?;
        let value = tape.scalar(loss)?.as_f64();
        if !value.is_finite() {
            return Err(Error::Training { stage: "aggregator", epoch, msg: format!("loss is {value}") });
        }
        loss_trace.push(value);
        let grads = tape.gradients(loss)?;
        params.adamw_step(&grads, &opt)?;
    }
    Ok(Aggregator { n_shards: models.len(), live, params, config: cfg.clone(), sample, loss_trace })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<T> {
    pub labels: Vec<usize>,
    pub probabilities: Dense<T>,
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows<T: Scalar>(x: &Dense<T>) -> Vec<usize> {
    (0..x.rows())
        .map(|i| {
            let row = x.row(i);
            (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
        })
        .collect()
}

/// Class probabilities and labels for `query_ids` from the full pipeline.
pub fn predict<T: Scalar>(
    models: &[ShardModel<T>],
    shards: &[Shard<T>],
    aggregator: &Aggregator<T>,
    graph: &Graph<T>,
    query_ids: &[usize],
) -> Result<Prediction<T>> {
    if models.len() != aggregator.n_shards {
        return Err(Error::contract(format!("aggregator built for {} shards, pipeline has {}", aggregator.n_shards, models.len())));
    }
    let (live, embeddings) = shard_embeddings(models, shards, graph, query_ids, aggregator.config.fusion)?;
    if live != aggregator.live {
        return Err(Error::contract(format!("live shards {live:?} differ from the aggregator's {:?}", aggregator.live)));
    }
    let fused = aggregator.fuse(query_ids, embeddings)?;
    let logits = aggregator.logits(&fused.fused)?;
    let mut tape = Tape::new();
    let z = tape.constant(logits);
    let p = tape.row_softmax(z);
    let probabilities = tape.value(p).clone();
    Ok(Prediction { labels: argmax_rows(&probabilities), probabilities })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcn::{train_submodel, TrainConfig};
    use crate::graph::{induce_train_shards, synth_graph, SbmConfig};
    use crate::oracles::finite_diff;
    use crate::partitioner::random_partition;
    use crate::seed::SeedLineage;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_dense(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Dense<f64> {
        Dense::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn random_params(rng: &mut ChaCha8Rng, shard_ids: &[usize], d: usize, c: usize) -> ParamStore<f64> {
        let mut p = ParamStore::new();
        for &i in shard_ids {
            p.insert(projection(i), rand_dense(rng, d, d));
            p.insert(projection_bias(i), rand_dense(rng, 1, d));
        }
        p.insert(ATTENTION, rand_dense(rng, d, 1));
        p.insert(HEAD, rand_dense(rng, d, c));
        p.insert(HEAD_BIAS, rand_dense(rng, 1, c));
        p
    }

    fn zero_params(shard_ids: &[usize], d: usize, c: usize) -> ParamStore<f64> {
        let mut p = init_aggregator(shard_ids, d, c, &mut ChaCha8Rng::seed_from_u64(0));
        let names: Vec<String> = p.names().map(str::to_string).collect();
        for n in names {
            p.get_mut(&n).unwrap().as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        }
        p
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn sample_size_rule() {
        assert_eq!(SampleSize::Auto.resolve(140).unwrap(), 140);
        assert_eq!(SampleSize::Auto.resolve(5000).unwrap(), 1000);
        assert_eq!(SampleSize::Auto.resolve(50_000).unwrap(), 5000);
        assert_eq!(SampleSize::Fixed(10).resolve(10).unwrap(), 10);
        assert!(SampleSize::Fixed(11).resolve(10).is_err());
        assert!(SampleSize::Auto.resolve(0).is_err());
    }

    #[test]
    fn zero_params_give_uniform_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ids = [0, 2, 5];
        let e: Vec<Dense<f64>> = (0..3).map(|_| rand_dense(&mut rng, 4, 3)).collect();
        let f = attentive_fuse(&[10, 11, 12, 13], &ids, e.clone(), &zero_params(&ids, 3, 2)).unwrap();
        assert!(f.alpha.as_slice().iter().all(|&a| close(a, 1.0 / 3.0, 1e-15)));
        for i in 0..4 {
            for j in 0..3 {
                let mean = (e[0][(i, j)] + e[1][(i, j)] + e[2][(i, j)]) / 9.0;
                assert!(close(f.fused[(i, j)], mean, 1e-15));
            }
        }
    }

    #[test]
    fn single_shard_fusion_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = rand_dense(&mut rng, 5, 4);
        let f = attentive_fuse(&[0, 1, 2, 3, 4], &[7], vec![e.clone()], &random_params(&mut rng, &[7], 4, 3)).unwrap();
        assert!(f.alpha.as_slice().iter().all(|&a| a == 1.0));
        assert!(f.fused.max_abs_diff(&e).unwrap() < 1e-15);
        let l = local_view(f, 0.5, &mut rng).unwrap();
        assert_eq!(l.masks.unwrap().as_slice(), &[1.0; 5]);
        assert!(l.local.unwrap().max_abs_diff(&e).unwrap() < 1e-15);
    }

    #[test]
    fn two_shard_hand_value() {
        let mut p = zero_params(&[0, 1], 1, 2);
        *p.get_mut(&projection(0)).unwrap() = Dense::scalar(1.0);
        *p.get_mut(&projection(1)).unwrap() = Dense::scalar(2.0);
        *p.get_mut(&projection_bias(1)).unwrap() = Dense::scalar(-1.0);
        *p.get_mut(ATTENTION).unwrap() = Dense::scalar(0.5);
        let e = vec![Dense::scalar(1.0), Dense::scalar(3.0)];
        let f = attentive_fuse(&[0], &[0, 1], e, &p).unwrap();
        // scores 0.5 * relu(1) and 0.5 * relu(2 * 3 - 1)
        let (s0, s1) = (0.5f64, 2.5f64);
        let a0 = s0.exp() / (s0.exp() + s1.exp());
        assert!(close(f.alpha[(0, 0)], a0, 1e-15));
        assert!(close(f.fused[(0, 0)], 0.5 * (a0 + 3.0 * (1.0 - a0)), 1e-15));
        assert!(attentive_fuse::<f64>(&[], &[], vec![], &p).is_err());
    }

    #[test]
    fn local_view_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ids = [0, 1, 2];
        let e: Vec<Dense<f64>> = (0..3).map(|_| rand_dense(&mut rng, 2, 4)).collect();
        let f = attentive_fuse(&[0, 1], &ids, e.clone(), &random_params(&mut rng, &ids, 4, 2)).unwrap();

        let full = local_view_with_masks(f.clone(), Dense::filled(2, 3, 1.0)).unwrap();
        let scaled = f.fused.map(|v| 3.0 * v);
        assert!(full.local.unwrap().max_abs_diff(&scaled).unwrap() < 1e-14);

        let mask = Dense::from_rows(&[vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let part = local_view_with_masks(f.clone(), mask).unwrap().local.unwrap();
        for j in 0..4 {
            let a = &f.alpha;
            let row0 = 1.5 * (a[(0, 0)] * e[0][(0, j)] + a[(0, 2)] * e[2][(0, j)]);
            let row1 = 3.0 * a[(1, 1)] * e[1][(1, j)];
            assert!(close(part[(0, j)], row0, 1e-14));
            assert!(close(part[(1, j)], row1, 1e-14));
        }
        assert!(local_view_with_masks(f, Dense::zeros(2, 3)).is_err());
    }

    #[test]
    fn masks_keep_at_least_one_shard() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m: Dense<f64> = sample_masks(500, 3, 0.9, &mut rng);
        assert!((0..500).all(|i| m.row(i).iter().sum::<f64>() >= 1.0));
        let kept = m.sum() / 1500.0;
        // conditioned on a non-empty row: 0.1 / (1 - 0.9^3)
        assert!(close(kept, 0.1 / (1.0 - 0.729), 0.04));
    }

    fn contra_value(f: Dense<f64>, l: Dense<f64>, tau: f64, neg: &[usize], literal: bool) -> Result<f64> {
        let mut tape = Tape::new();
        let (fv, lv) = (tape.constant(f), tape.constant(l));
        let loss = contra_with_negatives(&mut tape, fv, lv, tau, neg, literal)?;
        tape.scalar(loss)
    }

    #[test]
    fn contrast_degenerate_values() {
        let same = Dense::from_fn(2, 3, |_, j| if j == 0 { 1.0 } else { 0.0 });
        for tau in [0.1, 0.5, 2.0] {
            assert!(close(contra_value(same.clone(), same.clone(), tau, &[1, 0], false).unwrap(), 3f64.ln(), 1e-12));
        }
        let ortho = Dense::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let e = std::f64::consts::E;
        let v = contra_value(ortho.clone(), ortho.clone(), 1.0, &[1, 0], false).unwrap();
        assert!(close(v, -(e / (e + 2.0)).ln(), 1e-12));
        assert!(close(v, 0.551444, 1e-6));
        let lit = contra_value(ortho.clone(), ortho, 1.0, &[1, 0], true).unwrap();
        assert!(close(lit, -v, 1e-15));

        let opposed = Dense::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let sharp = contra_value(opposed.clone(), opposed, 0.01, &[1, 0], false).unwrap();
        assert!(sharp < 1e-80);

        assert!(contra_value(Dense::filled(1, 2, 1.0), Dense::filled(1, 2, 1.0), 0.5, &[0], false).is_err());
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Dense::filled(1, 2, 1.0));
        assert!(loss_contra(&mut tape, x, x, 0.5, false, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn negatives_avoid_the_anchor() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for rows in 2..10 {
            let neg = sample_negatives(rows, &mut rng).unwrap();
            assert!(neg.iter().enumerate().all(|(a, &v)| v != a && v < rows));
        }
        let mut hits = [0usize; 4];
        for _ in 0..6000 {
            hits[sample_negatives(4, &mut rng).unwrap()[0]] += 1;
        }
        assert_eq!(hits[0], 0);
        assert!(hits[1..].iter().all(|&h| (1800..2200).contains(&h)));
    }

    #[test]
    fn contrast_is_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let f = rand_dense(&mut rng, 6, 3);
            let l = rand_dense(&mut rng, 6, 3);
            let neg = sample_negatives(6, &mut rng).unwrap();
            assert!(contra_value(f, l, 0.5, &neg, false).unwrap() >= 0.0);
        }
    }

    fn recon_value(f: Dense<f64>, triplets: &[(usize, usize, usize)], literal: bool) -> f64 {
        let mut tape = Tape::new();
        let fv = tape.constant(f);
        let loss = recon_with_triplets(&mut tape, fv, triplets, literal).unwrap();
        tape.scalar(loss).unwrap()
    }

    #[test]
    fn margin_terms() {
        // rows: anchor, its copy, its opposite
        let f = Dense::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert_eq!(recon_value(f.clone(), &[(0, 1, 2)], false), 0.0);
        assert_eq!(recon_value(f.clone(), &[(0, 1, 1)], false), 1.0);
        assert_eq!(recon_value(f.clone(), &[(0, 2, 1)], false), 3.0);
        assert_eq!(recon_value(f.clone(), &[(0, 1, 2), (0, 2, 1)], false), 1.5);
        assert_eq!(recon_value(f.clone(), &[(0, 2, 1)], true), 0.0);
        assert_eq!(recon_value(f, &[], false), 0.0);
    }

    #[test]
    fn margin_loss_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = rand_dense(&mut rng, 6, 4);
        let t: Vec<_> = (0..6).map(|a| (a, (a + 1) % 6, (a + 3) % 6)).collect();
        let base = recon_value(f.clone(), &t, false);
        assert!(close(recon_value(f.map(|v| 7.5 * v), &t, false), base, 1e-12));
    }

    #[test]
    fn triplets_follow_the_partition() {
        let g: Graph<f64> = synth_graph(&SbmConfig { n: 60, p_in: 0.3, p_out: 0.1, seed: 3, ..SbmConfig::default() }).unwrap();
        let part = random_partition(60, 3, 1).unwrap();
        let batch: Vec<usize> = (0..60).step_by(2).collect();
        let t = sample_triplets(&batch, &g, &part, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(!t.is_empty());
        for &(a, p, n) in &t {
            let (u, v, w) = (batch[a], batch[p], batch[n]);
            assert!(g.neighbors(u).contains(&v) && part.shard_of(u) != part.shard_of(v));
            assert!(!g.neighbors(u).contains(&w) && w != u);
        }
        let one_shard = Partition::new(1, vec![0; 60]).unwrap();
        assert!(sample_triplets(&batch, &g, &one_shard, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().is_empty());
    }

    #[test]
    fn classification_loss() {
        let vars_for = |tape: &mut Tape<f64>, p: &ParamStore<f64>| p.bind(tape);
        let p = zero_params(&[0], 3, 4);
        let mut tape = Tape::new();
        let vars = vars_for(&mut tape, &p);
        let f = tape.constant(Dense::filled(5, 3, 0.3));
        let l = loss_cls(&mut tape, &vars, f, &[0, 1, 2, 3, 0]).unwrap();
        assert!(close(tape.scalar(l).unwrap(), 4f64.ln(), 1e-12));

        let mut p = zero_params(&[0], 2, 2);
        *p.get_mut(HEAD).unwrap() = Dense::from_rows(&[vec![10.0, -10.0], vec![-10.0, 10.0]]).unwrap();
        let mut tape = Tape::new();
        let vars = vars_for(&mut tape, &p);
        let f = tape.constant(Dense::identity(2));
        let l = loss_cls(&mut tape, &vars, f, &[0, 1]).unwrap();
        assert!(tape.scalar(l).unwrap() < 1e-6);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_params(&mut rng, &[0], 3, 3);
        let x = rand_dense(&mut rng, 5, 3);
        let labels = [2, 0, 1, 1, 2];
        let mut tape = Tape::new();
        let vars = vars_for(&mut tape, &p);
        let f = tape.constant(x.clone());
        let l = loss_cls(&mut tape, &vars, f, &labels).unwrap();
        let (h, b) = (p.get(HEAD).unwrap(), p.get(HEAD_BIAS).unwrap());
        let mut want = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let z: Vec<f64> = (0..3).map(|c| b[(0, c)] + (0..3).map(|k| x[(i, k)] * h[(k, c)]).sum::<f64>()).collect();
            let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
            want += lse - z[y];
        }
        assert!(close(tape.scalar(l).unwrap(), want / 5.0, 1e-12));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g: Graph<f64> =
            synth_graph(&SbmConfig { n: 8, n_classes: 2, blocks: 2, p_in: 0.8, p_out: 0.4, seed: 1, ..SbmConfig::default() }).unwrap();
        let part = Partition::new(2, vec![0, 1, 0, 1, 0, 1, 0, 1]).unwrap();
        let ids = [0, 1];
        for trial in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + trial);
            let fusion = if trial % 2 == 0 { Fusion::Embedding } else { Fusion::Posterior };
            let mut embeddings = vec![rand_dense(&mut rng, 8, 3), rand_dense(&mut rng, 8, 3)];
            if fusion == Fusion::Posterior {
                embeddings = embeddings.into_iter().map(softmax_rows).collect();
            }
            let batch = AggBatch { node_ids: (0..8).collect(), labels: g.labels().to_vec(), shard_ids: ids.to_vec(), embeddings };
            let cfg = AggTrainConfig {
                lambda_contra: 0.7,
                lambda_recon: 0.9,
                weight_decay: 0.1,
                inverted_infonce: trial % 4 == 1,
                swapped_triplet: trial % 4 == 2,
                fusion,
                ..AggTrainConfig::default()
            };
            let draws = Draws::sample(&batch, &g, &part, &cfg, &mut rng).unwrap();
            let mut params = random_params(&mut rng, &ids, 3, 2);
            if fusion == Fusion::Posterior {
                params = params.iter().filter(|(k, _)| *k != HEAD && *k != HEAD_BIAS).fold(ParamStore::new(), |mut p, (k, v)| {
                    p.insert(k, v.clone());
                    p
                });
            }
            let mut tape = Tape::new();
            let loss = objective_on_tape(&mut tape, &params, &batch, &cfg, &draws).unwrap();
            let analytic = tape.gradients(loss).unwrap();
            let raw: BTreeMap<String, Dense<f64>> = params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
            let numeric = finite_diff(
                |p| {
                    let mut ps = ParamStore::new();
                    for (k, v) in p {
                        ps.insert(k.clone(), v.clone());
                    }
                    aggregator_loss(&ps, &batch, &cfg, &draws).unwrap()
                },
                &raw,
                1e-6,
            )
            .unwrap();
            for (name, num) in &numeric {
                for (a, n) in analytic[name].as_slice().iter().zip(num.as_slice()) {
                    let tol = 1e-4 * a.abs().max(n.abs()).max(1e-2);
                    assert!((a - n).abs() <= tol, "trial {trial} {name}: {a} vs {n}");
                }
            }
        }
    }

    struct Fixture {
        graph: Graph<f64>,
        partition: Partition,
        shards: Vec<Shard<f64>>,
        models: Vec<ShardModel<f64>>,
    }

    fn fixture(n_shards: usize, seed: u64) -> Fixture {
        let graph: Graph<f64> =
            synth_graph(&SbmConfig { n: 200, p_in: 0.1, p_out: 0.005, feature_noise: 0.6, seed, ..SbmConfig::default() }).unwrap();
        let partition = random_partition(200, n_shards, seed).unwrap();
        let shards = induce_train_shards(&graph, &partition).unwrap();
        let cfg = TrainConfig { epochs: 40, hidden: 16, ..TrainConfig::default() };
        let models =
            shards.iter().map(|s| train_submodel(s, graph.n_classes(), &cfg, SeedLineage::new(seed, s.shard_id, 0)).unwrap()).collect();
        Fixture { graph, partition, shards, models }
    }

    fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
        pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
    }

    #[test]
    fn training_basics() {
        let fx = fixture(4, 1);
        for fusion in [Fusion::Embedding, Fusion::Posterior] {
            let cfg = AggTrainConfig { epochs: 0, seed: 3, fusion, ..AggTrainConfig::default() };
            let agg = train_aggregator(&fx.models, &fx.shards, &fx.graph, &fx.partition, &cfg).unwrap();
            let mut rng = seed::rng(seed::derive(3, &[seed::STREAM_AGGREGATOR]));
            let _: Vec<usize> = fx.graph.splits().train.choose_multiple(&mut rng, agg.sample.len()).copied().collect();
            let init = match fusion {
                Fusion::Embedding => init_aggregator(&agg.live, 16, 4, &mut rng),
                Fusion::Posterior => init_attention(&agg.live, 4, &mut rng),
            };
            assert_eq!(agg.params, init);
            assert_eq!(agg.sample.len(), 140);
        }

        let cfg = AggTrainConfig { epochs: 5, seed: 3, sample_size: SampleSize::Fixed(50), ..AggTrainConfig::default() };
        let a = train_aggregator(&fx.models, &fx.shards, &fx.graph, &fx.partition, &cfg).unwrap();
        let b = train_aggregator(&fx.models, &fx.shards, &fx.graph, &fx.partition, &cfg).unwrap();
        assert!(a.params.values_bit_equal(&b.params));
        assert_eq!(a.sample.len(), 50);
        assert!(a.sample.iter().all(|&u| fx.graph.splits().is_train(u)));

        let too_many = AggTrainConfig { sample_size: SampleSize::Fixed(141), ..cfg.clone() };
        assert!(train_aggregator(&fx.models, &fx.shards, &fx.graph, &fx.partition, &too_many).is_err());
        let bad = AggTrainConfig { mask_rate: 1.0, ..cfg };
        assert!(matches!(train_aggregator(&fx.models, &fx.shards, &fx.graph, &fx.partition, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn attention_beats_mean_fusion_on_the_sample() {
        for fusion in [Fusion::Embedding, Fusion::Posterior] {
            let mut gain = 0.0;
            for seed in 0..5 {
                gain += attention_gain(seed, fusion);
            }
            assert!(gain >= 0.0, "{fusion:?}: attention lost {gain} accuracy in total over mean fusion");
        }
    }

    fn attention_gain(seed: u64, fusion: Fusion) -> f64 {
        {
            let fx = fixture(4, seed);
            let cfg = AggTrainConfig { seed, fusion, ..AggTrainConfig::default() };
            let att = train_aggregator(&fx.models, &fx.shards, &fx.graph, &fx.partition, &cfg).unwrap();
            let uni = AggTrainConfig { uniform_attention: true, ..cfg };
            let mean = train_aggregator(&fx.models, &fx.shards, &fx.graph, &fx.partition, &uni).unwrap();
            assert_eq!(att.sample, mean.sample);
            let truth: Vec<usize> = att.sample.iter().map(|&u| fx.graph.labels()[u]).collect();
            let acc = |agg: &Aggregator<f64>| {
                let p = predict(&fx.models, &fx.shards, agg, &fx.graph, &agg.sample).unwrap();
                accuracy(&p.labels, &truth)
            };
            acc(&att) - acc(&mean)
        }
    }

    #[test]
    fn prediction_properties() {
        let fx = fixture(4, 2);
        let test = &fx.graph.splits().test;
        let truth: Vec<usize> = test.iter().map(|&u| fx.graph.labels()[u]).collect();
        let mut counts = [0usize; 4];
        truth.iter().for_each(|&y| counts[y] += 1);
        let majority = *counts.iter().max().unwrap() as f64 / truth.len() as f64;
        for fusion in [Fusion::Embedding, Fusion::Posterior] {
            let cfg = AggTrainConfig { seed: 2, fusion, ..AggTrainConfig::default() };
            let agg = train_aggregator(&fx.models, &fx.shards, &fx.graph, &fx.partition, &cfg).unwrap();
            let p = predict(&fx.models, &fx.shards, &agg, &fx.graph, test).unwrap();
            assert_eq!(p, predict(&fx.models, &fx.shards, &agg, &fx.graph, test).unwrap());
            for i in 0..p.probabilities.rows() {
                assert!(close(p.probabilities.row(i).iter().sum(), 1.0, 1e-12));
            }
            assert!(accuracy(&p.labels, &truth) >= majority, "{fusion:?}");

            if fusion == Fusion::Embedding {
                let mut shifted = agg.clone();
                shifted.params.get_mut(HEAD_BIAS).unwrap().as_mut_slice().iter_mut().for_each(|b| *b += 3.0);
                assert_eq!(predict(&fx.models, &fx.shards, &shifted, &fx.graph, test).unwrap().labels, p.labels);
            } else {
                assert!(agg.params.get(HEAD).is_none());
            }

            let mut fewer = fx.models.clone();
            fewer.pop();
            assert!(predict(&fewer, &fx.shards[..3], &agg, &fx.graph, test).is_err());
        }
    }

    #[test]
    fn single_shard_pipeline_reduces_to_the_head() {
        let fx = fixture(1, 4);
        let test = &fx.graph.splits().test;
        let e = embed_query(&fx.models[0], &fx.shards[0], &fx.graph, test).unwrap();

        let cfg = AggTrainConfig { seed: 4, ..AggTrainConfig::default() };
        let agg = train_aggregator(&fx.models, &fx.shards, &fx.graph, &fx.partition, &cfg).unwrap();
        let p = predict(&fx.models, &fx.shards, &agg, &fx.graph, test).unwrap();
        let own = softmax_rows(head_logits(fx.models[0].params.as_ref().unwrap(), &e).unwrap());
        assert!(p.probabilities.max_abs_diff(&own).unwrap() < 1e-12);

        let cfg = AggTrainConfig { seed: 4, fusion: Fusion::Embedding, ..AggTrainConfig::default() };
        let agg = train_aggregator(&fx.models, &fx.shards, &fx.graph, &fx.partition, &cfg).unwrap();
        let p = predict(&fx.models, &fx.shards, &agg, &fx.graph, test).unwrap();
        let z = agg.logits(&e).unwrap();
        for i in 0..z.rows() {
            let lse = z.row(i).iter().map(|v| v.exp()).sum::<f64>();
            for c in 0..z.cols() {
                assert!(close(p.probabilities[(i, c)], z[(i, c)].exp() / lse, 1e-12));
            }
        }
    }

    #[test]
    fn untrained_shards_are_left_out() {
        let mut fx = fixture(4, 5);
        let empty = Shard::induce(&fx.graph, 2, vec![]).unwrap();
        fx.shards[2] = empty;
        fx.models[2] = ShardModel::untrained(2, SeedLineage::new(5, 2, 0));
        let cfg = AggTrainConfig { seed: 5, epochs: 3, ..AggTrainConfig::default() };
        let agg = train_aggregator(&fx.models, &fx.shards, &fx.graph, &fx.partition, &cfg).unwrap();
        assert_eq!(agg.live, vec![0, 1, 3]);
        assert!(agg.params.get(&projection(2)).is_none());
        let p = predict(&fx.models, &fx.shards, &agg, &fx.graph, &fx.graph.splits().test).unwrap();
        assert_eq!(p.labels.len(), fx.graph.splits().test.len());

        let none: Vec<ShardModel<f64>> = (0..4).map(|i| ShardModel::untrained(i, SeedLineage::new(5, i, 0))).collect();
        assert!(train_aggregator(&none, &fx.shards, &fx.graph, &fx.partition, &cfg).is_err());
    }
}
