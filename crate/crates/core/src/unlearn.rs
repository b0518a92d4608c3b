//! Sharded pipeline state and node unlearning by partial retraining.
//!
//! The partition is frozen once built. Deleting nodes scrubs them from the
//! graph, drops them from their shards and retrains exactly the shards that
//! held them, each under the next retrain counter of its seed lineage. The
//! aggregator is then rebuilt from a fresh initialization.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use crate::aggregator::{predict, train_aggregator, AggTrainConfig, Aggregator, Prediction};
use crate::error::{Error, Result};
use crate::gcn::{train_submodel, ShardModel, TrainConfig};
use crate::graph::{induce_train_shards, remove_nodes, DeleteSet, Graph, Partition, Shard};
use crate::metrics::f1_micro;
use crate::partitioner::{infer_partition, psi_forward, random_partition, train_partitioner, PartitionConfig};
use crate::scalar::Scalar;
use crate::seed::SeedLineage;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    /// Learned soft assignment, hardened by argmax.
    Trained,
    /// Uniform random shard per node.
    Random,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Trained => "trained",
            Strategy::Random => "random",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub strategy: Strategy,
    pub partition: PartitionConfig,
    pub train: TrainConfig,
    pub aggregator: AggTrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Trained,
            partition: PartitionConfig::default(),
            train: TrainConfig::default(),
            aggregator: AggTrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.partition.validate()?;
        self.aggregator.validate()?;
        if self.train.hidden == 0 || !(self.train.lr > 0.0) {
            return Err(Error::Config("train.hidden and train.lr must be positive".into()));
        }
        Ok(())
    }

    /// The aggregator settings with the pipeline seed filled in.
    pub fn aggregator_config(&self, global_seed: u64) -> AggTrainConfig {
        AggTrainConfig { seed: global_seed, ..self.aggregator.clone() }
    }
}

/// Everything needed to answer queries and to serve further delete requests.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineState<T> {
    /// The graph with every deleted node scrubbed.
    pub graph: Graph<T>,
    pub partition: Partition,
    pub shards: Vec<Shard<T>>,
    pub models: Vec<ShardModel<T>>,
    pub aggregator: Aggregator<T>,
    pub global_seed: u64,
    pub config: PipelineConfig,
    /// Cumulative deletions.
    pub deleted: DeleteSet,
}

impl<T: Scalar> PipelineState<T> {
    pub fn n_shards(&self) -> usize {
        self.partition.n_shards()
    }

    pub fn retrain_counters(&self) -> Vec<u64> {
        self.models.iter().map(|m| m.lineage.retrain_counter).collect()
    }

    pub fn predict(&self, query_ids: &[usize]) -> Result<Prediction<T>> {
        if let Some(u) = query_ids.iter().find(|&&u| self.deleted.contains(u)) {
            return Err(Error::Validation(format!("node {u} has been deleted")));
        }
        predict(&self.models, &self.shards, &self.aggregator, &self.graph, query_ids)
    }

    /// Micro-F1 on the test split.
    pub fn evaluate_test(&self) -> Result<f64> {
        let test = &self.graph.splits().test;
        let pred = self.predict(test)?;
        let truth: Vec<usize> = test.iter().map(|&u| self.graph.labels()[u]).collect();
        f1_micro(&pred.labels, &truth)
    }
}

/// Wall-clock seconds of each build stage.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BuildTimings {
    pub partition: f64,
    pub submodels: f64,
    pub aggregator: f64,
    pub total: f64,
}

/// Runs `f` on a pool of `jobs` threads, or on the global pool when `None`.
pub fn with_jobs<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("cannot start {n} worker threads: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Hard partition of every node. A trained partitioner is fitted on the
/// subgraph induced by the training split and then applied to the full graph;
/// training nodes keep the assignment computed on the subgraph.
pub fn partition_graph<T: Scalar>(graph: &Graph<T>, cfg: &PipelineConfig, seed: u64) -> Result<Partition> {
    let s = cfg.partition.n_shards;
    match cfg.strategy {
        Strategy::Random => random_partition(graph.n_nodes(), s, seed),
        Strategy::Trained => {
            let (sub, ids) = graph.induced(&graph.splits().train)?;
            let model = train_partitioner(&sub, &cfg.partition, seed)?;
            let mut assignment = infer_partition(&psi_forward(graph, &model.params)?)?.assignment().to_vec();
            let on_train = infer_partition(&psi_forward(&sub, &model.params)?)?;
            for (k, &u) in ids.iter().enumerate() {
                assignment[u] = on_train.shard_of(k);
            }
            Partition::new(s, assignment)
        }
    }
}

fn train_all<T: Scalar>(
    shards: &[Shard<T>],
    lineages: &[SeedLineage],
    n_classes: usize,
    cfg: &TrainConfig,
) -> Result<Vec<(ShardModel<T>, f64)>> {
    shards
        .par_iter()
        .zip(lineages)
        .map(|(shard, &lineage)| {
            let t = Instant::now();
            let model = train_submodel(shard, n_classes, cfg, lineage)?;
            Ok((model, t.elapsed().as_secs_f64()))
        })
        .collect()
}

/// Partition, isolated shard training and aggregation, in that order.
pub fn build_pipeline<T: Scalar>(
    graph: Graph<T>,
    cfg: &PipelineConfig,
    global_seed: u64,
    jobs: Option<usize>,
) -> Result<(PipelineState<T>, BuildTimings)> {
    cfg.validate()?;
    if graph.splits().train.is_empty() {
        return Err(Error::Validation("the graph has no training nodes".into()));
    }
    let start = Instant::now();
    let partition = partition_graph(&graph, cfg, global_seed).map_err(|e| e.in_stage("partition"))?;
    let partition_secs = start.elapsed().as_secs_f64();

    let shards = induce_train_shards(&graph, &partition)?;
    let lineages: Vec<SeedLineage> = (0..shards.len()).map(|i| SeedLineage::new(global_seed, i, 0)).collect();
    let t = Instant::now();
    let trained = with_jobs(jobs, || train_all(&shards, &lineages, graph.n_classes(), &cfg.train))?.map_err(|e| e.in_stage("submodels"))?;
    let submodel_secs = t.elapsed().as_secs_f64();
    let models: Vec<ShardModel<T>> = trained.into_iter().map(|(m, _)| m).collect();

    let t = Instant::now();
    let aggregator = with_jobs(jobs, || train_aggregator(&models, &shards, &graph, &partition, &cfg.aggregator_config(global_seed)))?
        .map_err(|e| e.in_stage("aggregator"))?;
    let aggregator_secs = t.elapsed().as_secs_f64();

    let timings = BuildTimings {
        partition: partition_secs,
        submodels: submodel_secs,
        aggregator: aggregator_secs,
        total: start.elapsed().as_secs_f64(),
    };
    let state =
        PipelineState { graph, partition, shards, models, aggregator, global_seed, config: cfg.clone(), deleted: DeleteSet::default() };
    Ok((state, timings))
}

/// Shards holding at least one node of `delete`.
pub fn locate_affected(partition: &Partition, delete: &DeleteSet) -> BTreeSet<usize> {
    delete.ids().iter().map(|&u| partition.shard_of(u)).collect()
}

/// Cost breakdown of one delete request. Only the retraining and aggregator
/// phases are timed into `total_seconds` alongside validation and scrubbing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UnlearnReport {
    pub request_size: usize,
    pub affected: Vec<usize>,
    /// `(shard id, seconds)` per retrained shard.
    pub shard_seconds: Vec<(usize, f64)>,
    /// Wall-clock of the concurrent retraining phase.
    pub makespan_seconds: f64,
    pub aggregator_seconds: f64,
    pub total_seconds: f64,
    pub untouched: usize,
}

impl UnlearnReport {
    /// `key=value` lines.
    pub fn to_kv(&self) -> String {
        let ids: Vec<String> = self.affected.iter().map(usize::to_string).collect();
        let mut s = String::new();
        writeln!(s, "request_size={}", self.request_size).unwrap();
        writeln!(s, "affected={}", ids.join(",")).unwrap();
        writeln!(s, "untouched={}", self.untouched).unwrap();
        for (i, secs) in &self.shard_seconds {
            writeln!(s, "time.shard.{i}={secs}").unwrap();
        }
        writeln!(s, "time.makespan={}", self.makespan_seconds).unwrap();
        writeln!(s, "time.aggregator={}", self.aggregator_seconds).unwrap();
        writeln!(s, "time.total={}", self.total_seconds).unwrap();
        s
    }
}

/// Removes `delete` from the pipeline: scrub, retrain affected shards under
/// the next retrain counter, rebuild the aggregator. Unaffected shard models
/// are carried over untouched. An empty request changes nothing.
pub fn unlearn<T: Scalar>(state: &PipelineState<T>, delete: &DeleteSet, jobs: Option<usize>) -> Result<(PipelineState<T>, UnlearnReport)> {
    let start = Instant::now();
    if let Some(u) = delete.ids().iter().find(|&&u| state.deleted.contains(u)) {
        return Err(Error::contract(format!("node {u} was already deleted")));
    }
    delete.validate(&state.graph)?;
    let s = state.n_shards();
    if delete.is_empty() {
        let report = UnlearnReport { untouched: s, total_seconds: start.elapsed().as_secs_f64(), ..UnlearnReport::default() };
        return Ok((state.clone(), report));
    }
    let affected: Vec<usize> = locate_affected(&state.partition, delete).into_iter().collect();
    let graph = state.graph.scrub_nodes(delete.ids())?;

    let t = Instant::now();
    let retrained = with_jobs(jobs, || {
        affected
            .par_iter()
            .map(|&i| {
                let t = Instant::now();
                let shard = remove_nodes(&state.shards[i], delete);
                let prev = state.models[i].lineage;
                let lineage = SeedLineage::new(prev.global_seed, i, prev.retrain_counter + 1);
                let model = train_submodel(&shard, graph.n_classes(), &state.config.train, lineage)?;
                Ok((i, shard, model, t.elapsed().as_secs_f64()))
            })
            .collect::<Result<Vec<_>>>()
    })?
    .map_err(|e| e.in_stage("submodels"))?;
    let makespan = t.elapsed().as_secs_f64();

    let mut shards = state.shards.clone();
    let mut models = state.models.clone();
    let mut shard_seconds = Vec::with_capacity(retrained.len());
    for (i, shard, model, secs) in retrained {
        shards[i] = shard;
        models[i] = model;
        shard_seconds.push((i, secs));
    }

    let t = Instant::now();
    let agg_cfg = state.config.aggregator_config(state.global_seed);
    let aggregator = with_jobs(jobs, || train_aggregator(&models, &shards, &graph, &state.partition, &agg_cfg))?
        .map_err(|e| e.in_stage("aggregator"))?;
    let aggregator_seconds = t.elapsed().as_secs_f64();

    let deleted = DeleteSet::new(state.deleted.ids().iter().chain(delete.ids()).copied());
    let next = PipelineState {
        graph,
        partition: state.partition.clone(),
        shards,
        models,
        aggregator,
        global_seed: state.global_seed,
        config: state.config.clone(),
        deleted,
    };
    let report = UnlearnReport {
        request_size: delete.len(),
        untouched: s - affected.len(),
        affected,
        shard_seconds,
        makespan_seconds: makespan,
        aggregator_seconds,
        total_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((next, report))
}

/// The from-scratch reference: scrub `deleted` from `graph` and rebuild
/// everything, partition included.
pub fn full_retrain<T: Scalar>(
    graph: &Graph<T>,
    deleted: &DeleteSet,
    cfg: &PipelineConfig,
    global_seed: u64,
    jobs: Option<usize>,
) -> Result<(PipelineState<T>, BuildTimings)> {
    deleted.validate(graph)?;
    let reduced = graph.scrub_nodes(deleted.ids())?;
    let (mut state, timings) = build_pipeline(reduced, cfg, global_seed, jobs)?;
    state.deleted = deleted.clone();
    Ok((state, timings))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShardCheck {
    pub shard_id: usize,
    pub retrain_counter: u64,
    /// The stored shard equals one induced afresh from the scrubbed graph.
    pub content_matches: bool,
    pub max_abs_delta: f64,
    pub bit_identical: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExactnessReport {
    pub shards: Vec<ShardCheck>,
}

impl ExactnessReport {
    pub fn is_exact(&self) -> bool {
        self.shards.iter().all(|c| c.content_matches && c.bit_identical)
    }

    pub fn max_delta(&self) -> f64 {
        self.shards.iter().map(|c| c.max_abs_delta).fold(0.0, f64::max)
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for c in &self.shards {
            writeln!(
                s,
                "shard.{}.counter={} shard.{}.content_matches={} shard.{}.max_abs_delta={} shard.{}.bit_identical={}",
                c.shard_id, c.retrain_counter, c.shard_id, c.content_matches, c.shard_id, c.max_abs_delta, c.shard_id, c.bit_identical
            )
            .unwrap();
        }
        writeln!(s, "max_abs_delta={}", self.max_delta()).unwrap();
        writeln!(s, "exact={}", self.is_exact()).unwrap();
        s
    }
}

/// Retrains every shard from scratch on its current content with the
/// recorded seed lineage and compares parameters with the stored models.
pub fn verify_exactness<T: Scalar>(state: &PipelineState<T>, jobs: Option<usize>) -> Result<ExactnessReport> {
    let fresh = induce_train_shards(&state.graph, &state.partition)?;
    if fresh.len() != state.models.len() {
        return Err(Error::contract("shard count changed since the pipeline was built"));
    }
    let checks = with_jobs(jobs, || {
        fresh
            .par_iter()
            .zip(&state.models)
            .enumerate()
            .map(|(i, (shard, stored))| {
                let redo = train_submodel(shard, state.graph.n_classes(), &state.config.train, stored.lineage)?;
                let (delta, same) = match (&redo.params, &stored.params) {
                    (None, None) => (0.0, true),
                    (Some(a), Some(b)) => (a.max_abs_diff(b), a.values_bit_equal(b)),
                    _ => (f64::INFINITY, false),
                };
                Ok(ShardCheck {
                    shard_id: i,
                    retrain_counter: stored.lineage.retrain_counter,
                    content_matches: *shard == state.shards[i],
                    max_abs_delta: delta,
                    bit_identical: same,
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(ExactnessReport { shards: checks })
}
