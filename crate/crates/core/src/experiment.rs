//! Command-level orchestration: build, unlearn, noise recovery, strategy
//! comparison and exactness checks, with their on-disk artifacts.
//!
//! A run directory holds `metrics.txt` (`key=value` records, one block per
//! run, grouped under `[group]` headers) and `summary.json`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::aggregator::argmax_rows;
use crate::config::{DatasetSpec, DeleteSpec, ExperimentConfig};
use crate::error::{Error, Result};
use crate::gcn::{embed_query, head_logits, train_submodel, ShardModel, TrainConfig};
use crate::graph::{
    induce_train_shards, inject_noise, load_graph, split_random, synth_graph, DeleteSet, Graph, GraphFiles, Partition, Shard, SplitRatios,
};
use crate::metrics::{f1_micro, mean_std, MetricsRecord};
use crate::scalar::Scalar;
use crate::seed::{self, SeedLineage};
use crate::store::{load_state, save_state};
use crate::unlearn::{build_pipeline, full_retrain, unlearn, verify_exactness, ExactnessReport, PipelineState, Strategy, UnlearnReport};

pub const STATE_DIR: &str = "state";
pub const METRICS_FILE: &str = "metrics.txt";
pub const SUMMARY_FILE: &str = "summary.json";
pub const UNLEARN_LOG: &str = "unlearn_log.txt";
pub const BENCH_FILE: &str = "bench.tsv";

pub fn load_dataset<T: Scalar>(spec: &DatasetSpec, seed: u64) -> Result<Graph<T>> {
    match spec {
        DatasetSpec::Synthetic(s) => synth_graph(s),
        DatasetSpec::Dir { path, n_classes } => {
            let mut files = GraphFiles::in_dir(path);
            files.n_classes = *n_classes;
            let (graph, report) = load_graph(&files)?;
            if report.duplicate_edges + report.self_loops > 0 {
                log::warn!("{}: dropped {} duplicate edges and {} self loops", path.display(), report.duplicate_edges, report.self_loops);
            }
            if graph.splits().train.is_empty() {
                split_random(graph, SplitRatios::default(), seed)
            } else {
                Ok(graph)
            }
        }
    }
}

/// The nodes a request removes. Fractions take `ceil(fraction * N)` current
/// training nodes, drawn under `(seed, round)`.
pub fn draw_delete<T: Scalar>(graph: &Graph<T>, spec: &DeleteSpec, seed: u64, round: u64) -> DeleteSet {
    match spec {
        DeleteSpec::Ids(ids) => DeleteSet::new(ids.iter().copied()),
        DeleteSpec::Fraction(f) => {
            let train = &graph.splits().train;
            let k = ((f * graph.n_nodes() as f64).ceil() as usize).min(train.len());
            let mut rng = seed::rng(seed::derive(seed, &[seed::STREAM_DELETE, round]));
            DeleteSet::new(train.choose_multiple(&mut rng, k).copied())
        }
    }
}

/// Node ids separated by whitespace or commas; `#` starts a comment.
pub fn read_request(path: &Path) -> Result<DeleteSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut ids = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("");
        for tok in body.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
            let id = tok.parse().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("`{tok}` is not a node id: {e}"),
            })?;
            ids.push(id);
        }
    }
    Ok(DeleteSet::new(ids))
}

/// Seeds `base, base + 1, ...`.
pub fn repetition_seeds(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|k| base.wrapping_add(k)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub records: Vec<MetricsRecord>,
    pub f1_mean: f64,
    pub f1_std: f64,
    pub stage_min: BTreeMap<String, f64>,
    pub stage_mean: BTreeMap<String, f64>,
}

impl GroupSummary {
    pub fn new(records: Vec<MetricsRecord>) -> Self {
        let f1: Vec<f64> = records.iter().map(|r| r.f1).collect();
        let (f1_mean, f1_std) = mean_std(&f1);
        let mut times: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in &records {
            for (k, &v) in &r.stages {
                times.entry(k.clone()).or_default().push(v);
            }
        }
        let stage_min = times.iter().map(|(k, v)| (k.clone(), v.iter().copied().fold(f64::INFINITY, f64::min))).collect();
        let stage_mean = times.iter().map(|(k, v)| (k.clone(), mean_std(v).0)).collect();
        Self { records, f1_mean, f1_std, stage_min, stage_mean }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub command: String,
    pub config_hash: String,
    pub groups: BTreeMap<String, GroupSummary>,
}

impl RunSummary {
    pub fn new(command: &str, config_hash: &str) -> Self {
        Self { command: command.into(), config_hash: config_hash.into(), groups: BTreeMap::new() }
    }

    pub fn group(mut self, name: &str, records: Vec<MetricsRecord>) -> Self {
        self.groups.insert(name.into(), GroupSummary::new(records));
        self
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "command={}", self.command).unwrap();
        writeln!(s, "config_hash={}", self.config_hash).unwrap();
        for (name, g) in &self.groups {
            writeln!(s, "\n[{name}]").unwrap();
            for r in &g.records {
                writeln!(s, "{}", r.to_kv()).unwrap();
            }
            writeln!(s, "f1.mean={}", g.f1_mean).unwrap();
            writeln!(s, "f1.std={}", g.f1_std).unwrap();
            for (k, v) in &g.stage_min {
                writeln!(s, "time.{k}.min={v}").unwrap();
            }
            for (k, v) in &g.stage_mean {
                writeln!(s, "time.{k}.mean={v}").unwrap();
            }
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let metrics = dir.join(METRICS_FILE);
        fs::write(&metrics, self.to_kv()).map_err(|e| Error::io(&metrics, e))?;
        let summary = dir.join(SUMMARY_FILE);
        let json = serde_json::to_string_pretty(self).expect("summary serializes");
        fs::write(&summary, json).map_err(|e| Error::io(&summary, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(SUMMARY_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse { path, line: e.line(), msg: e.to_string() })
    }
}

fn build_record<T: Scalar>(
    run_id: String,
    graph: Graph<T>,
    cfg: &ExperimentConfig,
    seed: u64,
    jobs: Option<usize>,
) -> Result<(PipelineState<T>, MetricsRecord)> {
    let (state, t) = build_pipeline(graph, &cfg.pipeline, seed, jobs)?;
    let f1 = state.evaluate_test()?;
    let record = MetricsRecord::new(run_id, f1, seed, cfg.hash())?
        .with_stage("partition", t.partition)
        .with_stage("submodels", t.submodels)
        .with_stage("aggregator", t.aggregator)
        .with_stage("total", t.total);
    Ok((state, record))
}

fn unlearn_record<T: Scalar>(run_id: String, state: &PipelineState<T>, report: &UnlearnReport, hash: &str) -> Result<MetricsRecord> {
    Ok(MetricsRecord::new(run_id, state.evaluate_test()?, state.global_seed, hash)?
        .with_stage("makespan", report.makespan_seconds)
        .with_stage("aggregator", report.aggregator_seconds)
        .with_stage("total", report.total_seconds))
}

pub struct BuildOutcome {
    /// Pipeline for the first seed, as persisted under `<out>/state`.
    pub state: PipelineState<f64>,
    pub summary: RunSummary,
}

/// Builds one pipeline per repetition seed (10 by default), persists the
/// first and writes the run metrics under `cfg.out`.
pub fn cmd_build(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<BuildOutcome> {
    cfg.validate()?;
    let graph = load_dataset::<f64>(&cfg.dataset, cfg.seed)?;
    let mut first = None;
    let mut records = Vec::new();
    for (k, seed) in repetition_seeds(cfg.seed, cfg.repetitions.unwrap_or(10)).into_iter().enumerate() {
        let (state, record) = build_record(format!("build-{k}"), graph.clone(), cfg, seed, jobs)?;
        log::info!("build seed {seed}: f1 {:.4}", record.f1);
        records.push(record);
        first.get_or_insert(state);
    }
    let state = first.expect("at least one repetition");
    save_state(&state, cfg, &cfg.out.join(STATE_DIR))?;
    let summary = RunSummary::new("build", &cfg.hash()).group("build", records);
    summary.write(&cfg.out)?;
    Ok(BuildOutcome { state, summary })
}

pub struct UnlearnOutcome {
    pub state: PipelineState<f64>,
    pub request: DeleteSet,
    pub report: UnlearnReport,
    pub record: MetricsRecord,
}

/// Loads the state in `state_dir`, removes `request` (or a draw from the
/// stored config's delete spec under `seed`), re-evaluates, writes the
/// updated state back and appends the report to the state's log.
pub fn cmd_unlearn(state_dir: &Path, request: Option<DeleteSet>, seed: Option<u64>, jobs: Option<usize>) -> Result<UnlearnOutcome> {
    let (state, cfg) = load_state::<f64>(state_dir)?;
    let request = request.unwrap_or_else(|| {
        let round = state.retrain_counters().iter().sum();
        draw_delete(&state.graph, &cfg.delete, seed.unwrap_or(state.global_seed), round)
    });
    let (next, report) = unlearn(&state, &request, jobs)?;
    let round = next.deleted.len();
    let record = unlearn_record(format!("unlearn-{round}"), &next, &report, &cfg.hash())?;
    save_state(&next, &cfg, state_dir)?;

    let log_path = state_dir.join(UNLEARN_LOG);
    let ids: Vec<String> = request.ids().iter().map(usize::to_string).collect();
    let entry = format!("request={}\n{}{}\n", ids.join(","), report.to_kv(), record.to_kv());
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .and_then(|mut f| f.write_all(entry.as_bytes()))
        .map_err(|e| Error::io(&log_path, e))?;
    Ok(UnlearnOutcome { state: next, request, report, record })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseRecovery {
    pub clean: MetricsRecord,
    pub poisoned: MetricsRecord,
    pub unlearned: MetricsRecord,
    pub report: UnlearnReport,
}

/// Per seed: build on the clean graph, inject mislabelled nodes and rebuild,
/// then unlearn exactly the injected nodes.
pub fn cmd_noise_recovery(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<(Vec<NoiseRecovery>, RunSummary)> {
    cfg.validate()?;
    let graph = load_dataset::<f64>(&cfg.dataset, cfg.seed)?;
    let hash = cfg.hash();
    let mut runs = Vec::new();
    for (k, seed) in repetition_seeds(cfg.seed, cfg.repetitions.unwrap_or(10)).into_iter().enumerate() {
        let (_, clean) = build_record(format!("clean-{k}"), graph.clone(), cfg, seed, jobs)?;
        let (noisy, injected) = inject_noise(&graph, cfg.noise_nodes, cfg.noise_edges_per_node, seed)?;
        let (poisoned_state, poisoned) = build_record(format!("poisoned-{k}"), noisy, cfg, seed, jobs)?;
        let (unlearned_state, report) = unlearn(&poisoned_state, &injected, jobs)?;
        let unlearned = unlearn_record(format!("unlearned-{k}"), &unlearned_state, &report, &hash)?;
        log::info!("noise seed {seed}: clean {:.4} poisoned {:.4} unlearned {:.4}", clean.f1, poisoned.f1, unlearned.f1);
        runs.push(NoiseRecovery { clean, poisoned, unlearned, report });
    }
    let pick = |f: fn(&NoiseRecovery) -> &MetricsRecord| runs.iter().map(|r| f(r).clone()).collect::<Vec<_>>();
    let summary = RunSummary::new("noise-recovery", &hash)
        .group("clean", pick(|r| &r.clean))
        .group("poisoned", pick(|r| &r.poisoned))
        .group("unlearned", pick(|r| &r.unlearned));
    summary.write(&cfg.out)?;
    Ok((runs, summary))
}

/// A single GCN over every training node: the retrain-from-scratch baseline.
pub struct SingleModel<T> {
    pub shard: Shard<T>,
    pub model: ShardModel<T>,
}

impl<T: Scalar> SingleModel<T> {
    pub fn train(graph: &Graph<T>, cfg: &TrainConfig, seed: u64) -> Result<Self> {
        let partition = Partition::new(1, vec![0; graph.n_nodes()])?;
        let shard = induce_train_shards(graph, &partition)?.remove(0);
        let model = train_submodel(&shard, graph.n_classes(), cfg, SeedLineage::new(seed, 0, 0))?;
        Ok(Self { shard, model })
    }

    pub fn predict(&self, graph: &Graph<T>, ids: &[usize]) -> Result<Vec<usize>> {
        let params = self.model.params.as_ref().ok_or_else(|| Error::Validation("the graph has no training nodes".into()))?;
        let e = embed_query(&self.model, &self.shard, graph, ids)?;
        Ok(argmax_rows(&head_logits(params, &e)?))
    }

    pub fn evaluate_test(&self, graph: &Graph<T>) -> Result<f64> {
        let test = &graph.splits().test;
        let truth: Vec<usize> = test.iter().map(|&u| graph.labels()[u]).collect();
        f1_micro(&self.predict(graph, test)?, &truth)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub strategy: String,
    pub seed: u64,
    /// Test F1 before the deletion.
    pub f1: f64,
    /// Time to serve the deletion: partial retraining for sharded strategies,
    /// a from-scratch fit for the single model.
    pub unlearn_seconds: f64,
    /// Time to rebuild the same strategy from scratch without the deleted nodes.
    pub full_retrain_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
}

const BENCH_HEADER: &str = "strategy\tseed\tf1\tunlearn_seconds\tfull_retrain_seconds";

impl BenchTable {
    pub const RETRAIN: &'static str = "retrain";

    pub fn to_tsv(&self) -> String {
        let mut s = format!("{BENCH_HEADER}\n");
        for r in &self.rows {
            writeln!(s, "{}\t{}\t{}\t{}\t{}", r.strategy, r.seed, r.f1, r.unlearn_seconds, r.full_retrain_seconds).unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(BENCH_HEADER) {
            return Err(Error::Validation("bench table header missing".into()));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let bad = |what: &str| Error::Validation(format!("bench table row {}: {what}", i + 1));
            let f: Vec<&str> = line.split('\t').collect();
            let [strategy, seed, f1, unlearn, full] = f[..] else {
                return Err(bad("expected 5 fields"));
            };
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("`{s}` is not a number")));
            rows.push(BenchRow {
                strategy: strategy.to_string(),
                seed: seed.parse().map_err(|_| bad("bad seed"))?,
                f1: num(f1)?,
                unlearn_seconds: num(unlearn)?,
                full_retrain_seconds: num(full)?,
            });
        }
        Ok(Self { rows })
    }

    fn column(&self, strategy: &str, f: fn(&BenchRow) -> f64) -> Vec<f64> {
        self.rows.iter().filter(|r| r.strategy == strategy).map(f).collect()
    }

    pub fn mean_f1(&self, strategy: &str) -> f64 {
        mean_std(&self.column(strategy, |r| r.f1)).0
    }

    pub fn mean_unlearn(&self, strategy: &str) -> f64 {
        mean_std(&self.column(strategy, |r| r.unlearn_seconds)).0
    }

    pub fn mean_full_retrain(&self, strategy: &str) -> f64 {
        mean_std(&self.column(strategy, |r| r.full_retrain_seconds)).0
    }
}

/// Single-model retraining against the random and trained partitioners,
/// under the same seeds and the same deletion per seed.
pub fn cmd_bench_compare(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<(BenchTable, RunSummary)> {
    cfg.validate()?;
    let graph = load_dataset::<f64>(&cfg.dataset, cfg.seed)?;
    let hash = cfg.hash();
    let mut table = BenchTable::default();
    let mut groups: BTreeMap<String, Vec<MetricsRecord>> = BTreeMap::new();
    for seed in repetition_seeds(cfg.seed, cfg.repetitions.unwrap_or(10)) {
        let delete = draw_delete(&graph, &cfg.delete, seed, 0);

        let t = Instant::now();
        let single = SingleModel::train(&graph, &cfg.pipeline.train, seed)?;
        let fit = t.elapsed().as_secs_f64();
        let f1 = single.evaluate_test(&graph)?;
        let reduced = graph.scrub_nodes(delete.ids())?;
        let t = Instant::now();
        SingleModel::train(&reduced, &cfg.pipeline.train, seed)?;
        let refit = t.elapsed().as_secs_f64();
        table.rows.push(BenchRow { strategy: BenchTable::RETRAIN.into(), seed, f1, unlearn_seconds: refit, full_retrain_seconds: refit });
        groups
            .entry(BenchTable::RETRAIN.into())
            .or_default()
            .push(MetricsRecord::new(format!("retrain-{seed}"), f1, seed, &hash)?.with_stage("fit", fit).with_stage("refit", refit));

        for strategy in [Strategy::Random, Strategy::Trained] {
            let mut scfg = cfg.clone();
            scfg.pipeline.strategy = strategy;
            let (state, record) = build_record(format!("{}-{seed}", strategy.name()), graph.clone(), &scfg, seed, jobs)?;
            let (_, report) = unlearn(&state, &delete, jobs)?;
            let (_, rebuilt) = full_retrain(&graph, &delete, &scfg.pipeline, seed, jobs)?;
            table.rows.push(BenchRow {
                strategy: strategy.name().into(),
                seed,
                f1: record.f1,
                unlearn_seconds: report.total_seconds,
                full_retrain_seconds: rebuilt.total,
            });
            let record = record.with_stage("unlearn", report.total_seconds).with_stage("full_retrain", rebuilt.total);
            groups.entry(strategy.name().into()).or_default().push(record);
        }
    }
    let mut summary = RunSummary::new("bench-compare", &hash);
    for (name, records) in groups {
        summary = summary.group(&name, records);
    }
    summary.write(&cfg.out)?;
    let path = cfg.out.join(BENCH_FILE);
    fs::write(&path, table.to_tsv()).map_err(|e| Error::io(&path, e))?;
    Ok((table, summary))
}

pub fn cmd_verify_exactness(state_dir: &Path, jobs: Option<usize>) -> Result<ExactnessReport> {
    let (state, _) = load_state::<f64>(state_dir)?;
    verify_exactness(&state, jobs)
}

/// `<out>/state`.
pub fn state_dir(out: &Path) -> PathBuf {
    out.join(STATE_DIR)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(out: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::parse(
            "synthetic.n = 120\npartition.shards = 3\npartition.strategy = random\ntrain.epochs = 15\ntrain.hidden = 8\n\
             aggregator.epochs = 3\nrun.repetitions = 2\ndelete.fraction = 0.02\nnoise.nodes = 0\n",
        )
        .unwrap();
        cfg.out = out.to_path_buf();
        cfg
    }

    #[test]
    fn build_persists_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        let a = cmd_build(&cfg, Some(2)).unwrap();
        let g = &a.summary.groups["build"];
        assert_eq!(g.records.len(), 2);
        assert_ne!(g.records[0].seed, g.records[1].seed);
        for f in ["manifest.txt", "partition.txt", "aggregator.manifest", "shard_0000.manifest", "config.txt"] {
            assert!(state_dir(dir.path()).join(f).exists(), "{f}");
        }
        assert_eq!(RunSummary::read(dir.path()).unwrap(), a.summary);
        let b = cmd_build(&cfg, None).unwrap();
        let f1 = |s: &RunSummary| s.groups["build"].records.iter().map(|r| r.f1).collect::<Vec<_>>();
        assert_eq!(f1(&a.summary), f1(&b.summary));
    }

    #[test]
    fn unlearn_command_round() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        let built = cmd_build(&cfg, None).unwrap();
        let sd = state_dir(dir.path());

        let empty = cmd_unlearn(&sd, Some(DeleteSet::default()), None, None).unwrap();
        assert_eq!(empty.record.f1, built.summary.groups["build"].records[0].f1);
        assert_eq!(empty.report.untouched, 3);

        let out = cmd_unlearn(&sd, None, None, None).unwrap();
        assert_eq!(out.request.len(), 3);
        assert_eq!(out.report.untouched, 3 - out.report.affected.len());
        let (reloaded, _) = load_state::<f64>(&sd).unwrap();
        assert_eq!(reloaded.deleted, out.request);
        assert!(cmd_verify_exactness(&sd, None).unwrap().is_exact());
        let log = fs::read_to_string(sd.join(UNLEARN_LOG)).unwrap();
        assert_eq!(log.matches("request=").count(), 2);
        assert!(cmd_unlearn(&sd, Some(out.request.clone()), None, None).is_err());
    }

    #[test]
    fn zero_noise_gives_equal_scores() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.repetitions = Some(1);
        let (runs, _) = cmd_noise_recovery(&cfg, None).unwrap();
        let r = &runs[0];
        assert_eq!(r.clean.f1, r.poisoned.f1);
        assert_eq!(r.poisoned.f1, r.unlearned.f1);
    }

    #[test]
    fn bench_table_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.repetitions = Some(1);
        cfg.pipeline.partition.epochs = 5;
        let (table, _) = cmd_bench_compare(&cfg, None).unwrap();
        assert_eq!(table.rows.len(), 3);
        let text = fs::read_to_string(dir.path().join(BENCH_FILE)).unwrap();
        assert_eq!(BenchTable::parse(&text).unwrap(), table);
        assert!(BenchTable::parse("nope").is_err());
    }

    #[test]
    fn requests_and_draws() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("req.txt");
        fs::write(&p, "3, 1 # first\n\n7\n").unwrap();
        assert_eq!(read_request(&p).unwrap(), DeleteSet::new([1, 3, 7]));
        fs::write(&p, "3 x\n").unwrap();
        assert!(matches!(read_request(&p), Err(Error::Parse { line: 1, .. })));

        let g = synth_graph::<f64>(&Default::default()).unwrap();
        let d = draw_delete(&g, &DeleteSpec::Fraction(0.005), 4, 0);
        assert_eq!(d.len(), 1);
        assert!(d.ids().iter().all(|&u| g.splits().is_train(u)));
        assert_eq!(d, draw_delete(&g, &DeleteSpec::Fraction(0.005), 4, 0));
        assert!(draw_delete(&g, &DeleteSpec::Fraction(0.0), 4, 0).is_empty());
    }
}
