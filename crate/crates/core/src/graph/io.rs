use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::{Graph, Partition, Splits};
use crate::numerics::{Dense, Sparse};
use crate::scalar::Scalar;

/// Paths of the four text files describing a dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphFiles {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
    /// May be absent, in which case every split is empty.
    pub splits: PathBuf,
    /// Declared class count; inferred as `max label + 1` when absent.
    pub n_classes: Option<usize>,
}

impl GraphFiles {
    /// `edges.tsv`, `features.txt`, `labels.txt`, `splits.txt` under `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            edges: dir.join("edges.tsv"),
            features: dir.join("features.txt"),
            labels: dir.join("labels.txt"),
            splits: dir.join("splits.txt"),
            n_classes: None,
        }
    }
}

/// What the loader dropped while building a simple graph.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub duplicate_edges: usize,
    pub self_loops: usize,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

/// Content lines with their 1-based line numbers; blanks and `#` comments skipped.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn load_graph<T: Scalar>(files: &GraphFiles) -> Result<(Graph<T>, LoadReport)> {
    let feat_text = read(&files.features)?;
    let mut rows = Vec::new();
    for (line, text) in content_lines(&feat_text) {
        let row = text
            .split_whitespace()
            .map(|tok| tok.parse::<f64>().map(T::of))
            .collect::<std::result::Result<Vec<T>, _>>()
            .map_err(|e| parse_err(&files.features, line, format!("bad float: {e}")))?;
        if let Some(first) = rows.first().map(Vec::len) {
            if row.len() != first {
                return Err(parse_err(&files.features, line, format!("{} values, expected {first}", row.len())));
            }
        }
        rows.push(row);
    }
    let features = Dense::from_rows(&rows)?;
    let n = features.rows();

    let label_text = read(&files.labels)?;
    let mut labels = Vec::with_capacity(n);
    for (line, text) in content_lines(&label_text) {
        let l = text.parse::<usize>().map_err(|e| parse_err(&files.labels, line, format!("bad label: {e}")))?;
        if let Some(c) = files.n_classes {
            if l >= c {
                return Err(Error::Validation(format!("{}:{line}: label {l} outside [0, {c})", files.labels.display())));
            }
        }
        labels.push(l);
    }
    if labels.len() != n {
        return Err(Error::Validation(format!("{} labels for {n} feature rows", labels.len())));
    }
    let n_classes = files.n_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));

    let edge_text = read(&files.edges)?;
    let mut report = LoadReport::default();
    let mut seen = BTreeSet::new();
    for (line, text) in content_lines(&edge_text) {
        let mut it = text.split_whitespace();
        let mut endpoint = || -> Result<usize> {
            let tok = it.next().ok_or_else(|| parse_err(&files.edges, line, "expected `src<TAB>dst`"))?;
            let u = tok.parse::<usize>().map_err(|e| parse_err(&files.edges, line, format!("bad node id: {e}")))?;
            if u >= n {
                return Err(parse_err(&files.edges, line, format!("node {u} out of range for {n} nodes")));
            }
            Ok(u)
        };
        let (a, b) = (endpoint()?, endpoint()?);
        if it.next().is_some() {
            return Err(parse_err(&files.edges, line, "trailing tokens"));
        }
        if a == b {
            report.self_loops += 1;
        } else if !seen.insert((a.min(b), a.max(b))) {
            report.duplicate_edges += 1;
        }
    }
    if report.self_loops + report.duplicate_edges > 0 {
        log::warn!("{}: dropped {} self-loops and {} duplicate edges", files.edges.display(), report.self_loops, report.duplicate_edges);
    }
    let edges: Vec<_> = seen.into_iter().collect();
    let adjacency = Sparse::adjacency(n, &edges)?;

    let splits = if files.splits.exists() {
        parse_splits(&files.splits, &read(&files.splits)?)?
    } else {
        log::info!("{} not found; graph loaded without splits", files.splits.display());
        Splits::default()
    };
    let graph = Graph::new(adjacency, features, labels, n_classes, splits)?;
    Ok((graph, report))
}

fn parse_splits(path: &Path, text: &str) -> Result<Splits> {
    let (mut train, mut val, mut test) = (None, None, None);
    for (line, text) in content_lines(text) {
        let (key, rest) = text.split_once(':').ok_or_else(|| parse_err(path, line, "expected `name: ids`"))?;
        let ids = rest
            .split_whitespace()
            .map(str::parse::<usize>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(path, line, format!("bad node id: {e}")))?;
        let slot = match key.trim() {
            "train" => &mut train,
            "val" => &mut val,
            "test" => &mut test,
            other => return Err(parse_err(path, line, format!("unknown split `{other}`"))),
        };
        if slot.replace(ids).is_some() {
            return Err(parse_err(path, line, format!("split `{}` given twice", key.trim())));
        }
    }
    match (train, val, test) {
        (Some(a), Some(b), Some(c)) => Ok(Splits::new(a, b, c)),
        _ => Err(parse_err(path, 0, "need `train:`, `val:` and `test:` lines")),
    }
}

fn join_ids(ids: &[usize]) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes a graph in the same four-file layout [`load_graph`] reads.
pub fn write_graph<T: Scalar>(graph: &Graph<T>, files: &GraphFiles) -> Result<()> {
    let mut edges = String::from("# src\tdst\n");
    for (a, b) in graph.edge_list() {
        writeln!(edges, "{a}\t{b}").unwrap();
    }
    write(&files.edges, &edges)?;

    let mut feats = String::new();
    for i in 0..graph.n_nodes() {
        let row: Vec<String> = graph.features().row(i).iter().map(|v| format!("{}", v.as_f64())).collect();
        writeln!(feats, "{}", row.join(" ")).unwrap();
    }
    write(&files.features, &feats)?;

    let labels: String = graph.labels().iter().map(|l| format!("{l}\n")).collect();
    write(&files.labels, &labels)?;

    let s = graph.splits();
    let splits = format!("train: {}\nval: {}\ntest: {}\n", join_ids(&s.train), join_ids(&s.val), join_ids(&s.test));
    write(&files.splits, &splits)
}

pub fn write_partition(partition: &Partition, path: &Path) -> Result<()> {
    let mut text = format!("#shards={}\n", partition.n_shards());
    for s in partition.assignment() {
        writeln!(text, "{s}").unwrap();
    }
    write(path, &text)
}

pub fn read_partition(path: &Path) -> Result<Partition> {
    let text = read(path)?;
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l.trim()).unwrap_or("");
    let n_shards = header
        .strip_prefix("#shards=")
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| parse_err(path, 1, "expected `#shards=S` header"))?;
    let mut assignment = Vec::new();
    for (i, l) in lines {
        let l = l.trim();
        if l.is_empty() {
            continue;
        }
        assignment.push(l.parse::<usize>().map_err(|e| parse_err(path, i + 1, format!("bad shard id: {e}")))?);
    }
    Partition::new(n_shards, assignment)
}
