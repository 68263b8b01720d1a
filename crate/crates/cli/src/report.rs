//! `summary.json`: enough to reproduce and audit a run.

use crate::config::RunConfig;
use crate::experiments::{Check, Outcome};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

/// SHA-256 of the materialized configuration, hex encoded.
pub fn config_hash(cfg: &RunConfig) -> String {
    let digest = Sha256::digest(cfg.resolved().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// The first twelve hex digits of the hash, used as the `run` column.
pub fn run_id(hash: &str) -> String {
    hash[..12].to_string()
}

#[derive(Serialize)]
pub struct Summary<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub experiment: &'static str,
    pub run: String,
    pub config_hash: String,
    pub seed: u64,
    pub replica_seeds: Vec<u64>,
    pub config: &'a RunConfig,
    pub metrics: BTreeMap<String, f64>,
    pub checks: &'a [Check],
    pub passed: bool,
    pub records: &'a BTreeMap<String, serde_json::Value>,
    pub files: &'a [String],
}

pub fn summary<'a>(cfg: &'a RunConfig, hash: &str, outcome: &'a Outcome) -> Summary<'a> {
    Summary {
        tool: "kmplab",
        version: env!("CARGO_PKG_VERSION"),
        experiment: cfg.experiment.name(),
        run: run_id(hash),
        config_hash: hash.to_string(),
        seed: cfg.seed,
        replica_seeds: (0..cfg.replicas as u64)
            .map(|r| kmplab::rng::replica_seed(cfg.seed, r))
            .collect(),
        config: cfg,
        metrics: outcome.metrics.iter().cloned().collect(),
        checks: &outcome.checks,
        passed: outcome.checks.iter().all(|c| c.passed),
        records: &outcome.records,
        files: &outcome.files,
    }
}
