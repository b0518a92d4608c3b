use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Micro-averaged F1, which for single-label prediction is plain accuracy.
pub fn f1_micro(predicted: &[usize], actual: &[usize]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::contract(format!("{} predictions for {} labels", predicted.len(), actual.len())));
    }
    if actual.is_empty() {
        return Err(Error::contract("f1 of an empty prediction set"));
    }
    let correct = predicted.iter().zip(actual).filter(|(p, a)| p == a).count();
    Ok(correct as f64 / actual.len() as f64)
}

/// Sample mean and (n − 1) standard deviation; 0 spread for a single value.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One evaluated run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub f1: f64,
    pub seed: u64,
    pub config_hash: String,
    /// Wall-clock seconds per stage.
    pub stages: BTreeMap<String, f64>,
}

impl MetricsRecord {
    pub fn new(run_id: impl Into<String>, f1: f64, seed: u64, config_hash: impl Into<String>) -> Result<Self> {
        if !(0.0..=1.0).contains(&f1) {
            return Err(Error::contract(format!("f1 {f1} outside [0, 1]")));
        }
        Ok(Self { run_id: run_id.into(), f1, seed, config_hash: config_hash.into(), stages: BTreeMap::new() })
    }

    pub fn with_stage(mut self, stage: &str, seconds: f64) -> Self {
        self.stages.insert(stage.to_string(), seconds);
        self
    }

    /// `key=value` lines; stage timings appear as `time.<stage>`.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "run_id={}", self.run_id).unwrap();
        writeln!(s, "f1={}", self.f1).unwrap();
        writeln!(s, "seed={}", self.seed).unwrap();
        writeln!(s, "config_hash={}", self.config_hash).unwrap();
        for (k, v) in &self.stages {
            writeln!(s, "time.{k}={v}").unwrap();
        }
        s
    }
}
