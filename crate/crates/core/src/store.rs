//! On-disk pipeline state.
//!
//! ```text
//! <dir>/manifest.txt            key=value: format, config hash, seed, shard count, deletions
//! <dir>/config.txt              rendered experiment configuration
//! <dir>/graph/                  current (scrubbed) graph, four text files
//! <dir>/partition.txt
//! <dir>/shard_NNNN.{manifest,bin}
//! <dir>/aggregator.{manifest,bin}
//! ```
//!
//! Shards are re-induced from the graph and partition on load. Every
//! checkpoint carries the config hash and loading refuses a mismatch.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::aggregator::{Aggregator, Fusion};
use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::gcn::ShardModel;
use crate::graph::{induce_train_shards, load_graph, read_partition, write_graph, write_partition, DeleteSet, GraphFiles};
use crate::scalar::Scalar;
use crate::seed::SeedLineage;
use crate::unlearn::PipelineState;

const FORMAT: &str = "graph-unlearn-state-v1";

pub fn shard_stem(i: usize) -> String {
    format!("shard_{i:04}")
}

fn ids_text<'a>(ids: impl Iterator<Item = &'a usize>) -> String {
    ids.map(usize::to_string).collect::<Vec<_>>().join(" ")
}

fn parse_ids(raw: &str) -> Result<Vec<usize>> {
    raw.split_whitespace().map(|t| t.parse().map_err(|e| Error::Checkpoint(format!("bad node id `{t}`: {e}")))).collect()
}

fn floats_text(xs: &[f64]) -> String {
    xs.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `state` under `dir`, creating it if needed.
pub fn save_state<T: Scalar>(state: &PipelineState<T>, config: &ExperimentConfig, dir: &Path) -> Result<()> {
    let hash = config.hash();
    fs::create_dir_all(dir.join("graph")).map_err(|e| Error::io(dir, e))?;
    write_text(&dir.join("config.txt"), &config.render())?;
    write_graph(&state.graph, &GraphFiles::in_dir(dir.join("graph")))?;
    write_partition(&state.partition, &dir.join("partition.txt"))?;

    for m in &state.models {
        let mut ck = Checkpoint::new();
        ck.set("config_hash", &hash)
            .set("shard_id", m.shard_id)
            .set("global_seed", m.lineage.global_seed)
            .set("retrain_counter", m.lineage.retrain_counter)
            .set("epochs", m.epochs)
            .set("trained", m.is_trained());
        if let Some(loss) = m.final_train_loss {
            ck.set("final_train_loss", loss);
        }
        if let Some(p) = &m.params {
            ck.push_params(p);
        }
        ck.save(dir, &shard_stem(m.shard_id))?;
    }

    let a = &state.aggregator;
    let mut ck = Checkpoint::new();
    ck.set("config_hash", &hash)
        .set("n_shards", a.n_shards)
        .set("live", ids_text(a.live.iter()))
        .set("tau", a.config.tau)
        .set("inverted_infonce", a.config.inverted_infonce)
        .set("swapped_triplet", a.config.swapped_triplet)
        .set("uniform_attention", a.config.uniform_attention)
        .set("fusion", a.config.fusion.name())
        .set("sample", ids_text(a.sample.iter()))
        .set("loss_trace", floats_text(&a.loss_trace))
        .push_params(&a.params);
    ck.save(dir, "aggregator")?;

    let mut manifest = String::new();
    writeln!(manifest, "format={FORMAT}").unwrap();
    writeln!(manifest, "config_hash={hash}").unwrap();
    writeln!(manifest, "global_seed={}", state.global_seed).unwrap();
    writeln!(manifest, "n_shards={}", state.n_shards()).unwrap();
    writeln!(manifest, "n_classes={}", state.graph.n_classes()).unwrap();
    writeln!(manifest, "deleted={}", ids_text(state.deleted.ids().iter())).unwrap();
    write_text(&dir.join("manifest.txt"), &manifest)
}

fn read_manifest(dir: &Path) -> Result<BTreeMap<String, String>> {
    let path = dir.join("manifest.txt");
    let text = read_text(&path)?;
    let mut out = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Checkpoint(format!("{}: bad line `{line}`", path.display())))?;
        out.insert(k.to_string(), v.to_string());
    }
    Ok(out)
}

fn field<'a>(m: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    m.get(key).map(String::as_str).ok_or_else(|| Error::Checkpoint(format!("manifest lacks `{key}`")))
}

fn number<F: std::str::FromStr>(m: &BTreeMap<String, String>, key: &str) -> Result<F> {
    let raw = field(m, key)?;
    raw.parse().map_err(|_| Error::Checkpoint(format!("manifest `{key}` = `{raw}` is not a number")))
}

fn check_hash(ck: &Checkpoint, hash: &str, what: &str) -> Result<()> {
    let found = ck.get("config_hash")?;
    if found != hash {
        return Err(Error::Checkpoint(format!("{what} was written under config {found}, expected {hash}")));
    }
    Ok(())
}

/// Reads a state written by [`save_state`], with the configuration it was built under.
pub fn load_state<T: Scalar>(dir: &Path) -> Result<(PipelineState<T>, ExperimentConfig)> {
    let manifest = read_manifest(dir)?;
    if field(&manifest, "format")? != FORMAT {
        return Err(Error::Checkpoint(format!("{}: unknown state format", dir.display())));
    }
    let config = ExperimentConfig::parse(&read_text(&dir.join("config.txt"))?)?;
    let hash = config.hash();
    if field(&manifest, "config_hash")? != hash {
        return Err(Error::Checkpoint(format!("{}: config.txt does not match the recorded config hash", dir.display())));
    }
    let global_seed: u64 = number(&manifest, "global_seed")?;
    let n_shards: usize = number(&manifest, "n_shards")?;
    let n_classes: usize = number(&manifest, "n_classes")?;
    let deleted = DeleteSet::new(parse_ids(field(&manifest, "deleted")?)?);

    let mut files = GraphFiles::in_dir(dir.join("graph"));
    files.n_classes = Some(n_classes);
    let (graph, _) = load_graph::<T>(&files)?;
    let partition = read_partition(&dir.join("partition.txt"))?;
    if partition.n_shards() != n_shards || partition.n_nodes() != graph.n_nodes() {
        return Err(Error::Checkpoint("partition does not fit the stored graph".into()));
    }
    let shards = induce_train_shards(&graph, &partition)?;

    let mut models = Vec::with_capacity(n_shards);
    for i in 0..n_shards {
        let ck = Checkpoint::load(dir, &shard_stem(i))?;
        check_hash(&ck, &hash, &format!("shard {i}"))?;
        if ck.parse::<usize>("shard_id")? != i {
            return Err(Error::Checkpoint(format!("{} holds another shard", shard_stem(i))));
        }
        let lineage = SeedLineage::new(ck.parse("global_seed")?, i, ck.parse("retrain_counter")?);
        let trained: bool = ck.parse("trained")?;
        let final_train_loss = match ck.meta.get("final_train_loss") {
            Some(_) => Some(ck.parse("final_train_loss")?),
            None => None,
        };
        models.push(ShardModel {
            shard_id: i,
            lineage,
            params: trained.then(|| ck.params()),
            epochs: ck.parse("epochs")?,
            final_train_loss,
        });
    }

    let ck = Checkpoint::load(dir, "aggregator")?;
    check_hash(&ck, &hash, "aggregator")?;
    let agg_cfg = config.pipeline.aggregator_config(global_seed);
    let stored_flags = (
        ck.parse::<f64>("tau")?,
        ck.parse::<bool>("inverted_infonce")?,
        ck.parse::<bool>("swapped_triplet")?,
        ck.parse::<bool>("uniform_attention")?,
        ck.parse::<Fusion>("fusion")?,
    );
    let wanted = (agg_cfg.tau, agg_cfg.inverted_infonce, agg_cfg.swapped_triplet, agg_cfg.uniform_attention, agg_cfg.fusion);
    if stored_flags != wanted {
        return Err(Error::Checkpoint(format!("aggregator settings {stored_flags:?} differ from the config's {wanted:?}")));
    }
    if ck.parse::<usize>("n_shards")? != n_shards {
        return Err(Error::Checkpoint("aggregator was built for another shard count".into()));
    }
    let loss_trace = ck
        .get("loss_trace")?
        .split_whitespace()
        .map(|t| t.parse().map_err(|e| Error::Checkpoint(format!("bad loss value `{t}`: {e}"))))
        .collect::<Result<Vec<f64>>>()?;
    let aggregator = Aggregator {
        n_shards,
        live: parse_ids(ck.get("live")?)?,
        params: ck.params(),
        config: agg_cfg,
        sample: parse_ids(ck.get("sample")?)?,
        loss_trace,
    };

    let state = PipelineState { graph, partition, shards, models, aggregator, global_seed, config: config.pipeline.clone(), deleted };
    Ok((state, config))
}
