//! Experiment configuration in line-oriented `section.key = value` form.
//!
//! Blank lines and `#` comments are ignored. Unknown keys, repeated keys and
//! unparsable values are errors. [`ExperimentConfig::render`] writes every
//! key with its effective value, so equal configurations render identically.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::aggregator::SampleSize;
use crate::checkpoint::config_hash;
use crate::error::{Error, Result};
use crate::graph::SbmConfig;
use crate::unlearn::{PipelineConfig, Strategy};

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    Synthetic(SbmConfig),
    /// Directory with `edges.tsv`, `features.txt`, `labels.txt` and
    /// optionally `splits.txt`; without the latter the nodes are split at random.
    Dir {
        path: PathBuf,
        n_classes: Option<usize>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum DeleteSpec {
    /// `ceil(fraction * N)` training nodes drawn at random.
    Fraction(f64),
    Ids(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub pipeline: PipelineConfig,
    pub delete: DeleteSpec,
    pub noise_nodes: usize,
    pub noise_edges_per_node: usize,
    pub seed: u64,
    /// `None` leaves the count to the command.
    pub repetitions: Option<usize>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::Synthetic(SbmConfig::default()),
            pipeline: PipelineConfig::default(),
            delete: DeleteSpec::Fraction(0.005),
            noise_nodes: 100,
            noise_edges_per_node: 10,
            seed: 0,
            repetitions: None,
            out: PathBuf::from("runs"),
        }
    }
}

fn value<F: FromStr>(key: &str, raw: &str) -> Result<F>
where
    F::Err: std::fmt::Display,
{
    raw.parse().map_err(|e| Error::Config(format!("{key} = {raw}: {e}")))
}

fn flag(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key} = {raw}: expected true or false"))),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut sbm = SbmConfig::default();
        let mut kind = "synthetic".to_string();
        let mut path: Option<PathBuf> = None;
        let mut classes: Option<usize> = None;
        let mut seen = std::collections::BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = |e: Error| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", i + 1)),
                other => other,
            };
            let (key, raw) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config(format!("line {}: expected `section.key = value`", i + 1)))?;
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: `{key}` set twice", i + 1)));
            }
            cfg.apply(key, raw, &mut sbm, &mut kind, &mut path, &mut classes).map_err(at)?;
        }
        cfg.dataset = match kind.as_str() {
            "synthetic" => {
                if path.is_some() || classes.is_some() {
                    return Err(Error::Config("dataset.path and dataset.classes need dataset.kind = dir".into()));
                }
                DatasetSpec::Synthetic(sbm)
            }
            "dir" => DatasetSpec::Dir {
                path: path.ok_or_else(|| Error::Config("dataset.kind = dir needs dataset.path".into()))?,
                n_classes: classes,
            },
            other => return Err(Error::Config(format!("dataset.kind = {other}: expected synthetic or dir"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(
        &mut self,
        key: &str,
        raw: &str,
        sbm: &mut SbmConfig,
        kind: &mut String,
        path: &mut Option<PathBuf>,
        classes: &mut Option<usize>,
    ) -> Result<()> {
        let p = &mut self.pipeline;
        match key {
            "dataset.kind" => *kind = raw.to_string(),
            "dataset.path" => *path = Some(PathBuf::from(raw)),
            "dataset.classes" => *classes = Some(value(key, raw)?),
            "synthetic.n" => sbm.n = value(key, raw)?,
            "synthetic.classes" => sbm.n_classes = value(key, raw)?,
            "synthetic.blocks" => sbm.blocks = value(key, raw)?,
            "synthetic.p_in" => sbm.p_in = value(key, raw)?,
            "synthetic.p_out" => sbm.p_out = value(key, raw)?,
            "synthetic.feature_dim" => sbm.feature_dim = value(key, raw)?,
            "synthetic.feature_noise" => sbm.feature_noise = value(key, raw)?,
            "synthetic.feature_flip" => sbm.feature_flip = value(key, raw)?,
            "synthetic.seed" => sbm.seed = value(key, raw)?,
            "partition.strategy" => {
                p.strategy = match raw {
                    "trained" => Strategy::Trained,
                    "random" => Strategy::Random,
                    _ => return Err(Error::Config(format!("{key} = {raw}: expected trained or random"))),
                }
            }
            "partition.shards" => p.partition.n_shards = value(key, raw)?,
            "partition.hidden" => p.partition.hidden = value(key, raw)?,
            "partition.lambda_time" => p.partition.lambda_time = value(key, raw)?,
            "partition.lambda_sem" => p.partition.lambda_sem = value(key, raw)?,
            "partition.gamma" => p.partition.gamma = value(key, raw)?,
            "partition.lr" => p.partition.lr = value(key, raw)?,
            "partition.epochs" => p.partition.epochs = value(key, raw)?,
            "partition.sem_sign" => p.partition.sem_sign = value(key, raw)?,
            "train.epochs" => p.train.epochs = value(key, raw)?,
            "train.lr" => p.train.lr = value(key, raw)?,
            "train.weight_decay" => p.train.weight_decay = value(key, raw)?,
            "train.hidden" => p.train.hidden = value(key, raw)?,
            "aggregator.sample_size" => {
                p.aggregator.sample_size = match raw {
                    "auto" => SampleSize::Auto,
                    n => SampleSize::Fixed(value(key, n)?),
                }
            }
            "aggregator.tau" => p.aggregator.tau = value(key, raw)?,
            "aggregator.lambda_contra" => p.aggregator.lambda_contra = value(key, raw)?,
            "aggregator.lambda_recon" => p.aggregator.lambda_recon = value(key, raw)?,
            "aggregator.weight_decay" => p.aggregator.weight_decay = value(key, raw)?,
            "aggregator.lr" => p.aggregator.lr = value(key, raw)?,
            "aggregator.epochs" => p.aggregator.epochs = value(key, raw)?,
            "aggregator.mask_rate" => p.aggregator.mask_rate = value(key, raw)?,
            "aggregator.inverted_infonce" => p.aggregator.inverted_infonce = flag(key, raw)?,
            "aggregator.swapped_triplet" => p.aggregator.swapped_triplet = flag(key, raw)?,
            "aggregator.uniform_attention" => p.aggregator.uniform_attention = flag(key, raw)?,
            "aggregator.fusion" => p.aggregator.fusion = value(key, raw)?,
            "delete.fraction" => self.delete = DeleteSpec::Fraction(value(key, raw)?),
            "delete.ids" => {
                let ids = raw
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|t| !t.is_empty())
                    .map(|t| value(key, t))
                    .collect::<Result<Vec<usize>>>()?;
                self.delete = DeleteSpec::Ids(ids);
            }
            "noise.nodes" => self.noise_nodes = value(key, raw)?,
            "noise.edges_per_node" => self.noise_edges_per_node = value(key, raw)?,
            "run.seed" => self.seed = value(key, raw)?,
            "run.repetitions" => self.repetitions = Some(value(key, raw)?),
            "run.out" => self.out = PathBuf::from(raw),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        if let DeleteSpec::Fraction(f) = self.delete {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Config(format!("delete.fraction must lie in [0, 1), got {f}")));
            }
        }
        if self.repetitions == Some(0) {
            return Err(Error::Config("run.repetitions must be positive".into()));
        }
        if let DatasetSpec::Synthetic(s) = &self.dataset {
            if s.n == 0 || s.blocks == 0 || s.n_classes == 0 {
                return Err(Error::Config("synthetic.n, synthetic.blocks and synthetic.classes must be positive".into()));
            }
        }
        Ok(())
    }

    /// Every key with its effective value, in a fixed order.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        match &self.dataset {
            DatasetSpec::Synthetic(c) => {
                kv("dataset.kind", "synthetic".into());
                kv("synthetic.n", c.n.to_string());
                kv("synthetic.classes", c.n_classes.to_string());
                kv("synthetic.blocks", c.blocks.to_string());
                kv("synthetic.p_in", c.p_in.to_string());
                kv("synthetic.p_out", c.p_out.to_string());
                kv("synthetic.feature_dim", c.feature_dim.to_string());
                kv("synthetic.feature_noise", c.feature_noise.to_string());
                kv("synthetic.feature_flip", c.feature_flip.to_string());
                kv("synthetic.seed", c.seed.to_string());
            }
            DatasetSpec::Dir { path, n_classes } => {
                kv("dataset.kind", "dir".into());
                kv("dataset.path", path.display().to_string());
                if let Some(c) = n_classes {
                    kv("dataset.classes", c.to_string());
                }
            }
        }
        let p = &self.pipeline;
        kv("partition.strategy", p.strategy.name().into());
        kv("partition.shards", p.partition.n_shards.to_string());
        kv("partition.hidden", p.partition.hidden.to_string());
        kv("partition.lambda_time", p.partition.lambda_time.to_string());
        kv("partition.lambda_sem", p.partition.lambda_sem.to_string());
        kv("partition.gamma", p.partition.gamma.to_string());
        kv("partition.lr", p.partition.lr.to_string());
        kv("partition.epochs", p.partition.epochs.to_string());
        kv("partition.sem_sign", p.partition.sem_sign.to_string());
        kv("train.epochs", p.train.epochs.to_string());
        kv("train.lr", p.train.lr.to_string());
        kv("train.weight_decay", p.train.weight_decay.to_string());
        kv("train.hidden", p.train.hidden.to_string());
        let a = &p.aggregator;
        kv(
            "aggregator.sample_size",
            match a.sample_size {
                SampleSize::Auto => "auto".into(),
                SampleSize::Fixed(m) => m.to_string(),
            },
        );
        kv("aggregator.tau", a.tau.to_string());
        kv("aggregator.lambda_contra", a.lambda_contra.to_string());
        kv("aggregator.lambda_recon", a.lambda_recon.to_string());
        kv("aggregator.weight_decay", a.weight_decay.to_string());
        kv("aggregator.lr", a.lr.to_string());
        kv("aggregator.epochs", a.epochs.to_string());
        kv("aggregator.mask_rate", a.mask_rate.to_string());
        kv("aggregator.inverted_infonce", a.inverted_infonce.to_string());
        kv("aggregator.swapped_triplet", a.swapped_triplet.to_string());
        kv("aggregator.uniform_attention", a.uniform_attention.to_string());
        kv("aggregator.fusion", a.fusion.name().to_string());
        match &self.delete {
            DeleteSpec::Fraction(f) => kv("delete.fraction", f.to_string()),
            DeleteSpec::Ids(ids) => kv("delete.ids", ids.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")),
        }
        kv("noise.nodes", self.noise_nodes.to_string());
        kv("noise.edges_per_node", self.noise_edges_per_node.to_string());
        kv("run.seed", self.seed.to_string());
        if let Some(r) = self.repetitions {
            kv("run.repetitions", r.to_string());
        }
        kv("run.out", self.out.display().to_string());
        s
    }

    /// Hash of the rendered configuration.
    pub fn hash(&self) -> String {
        config_hash(&self.render())
    }
}
