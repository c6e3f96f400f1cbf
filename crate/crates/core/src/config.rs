//! Scenario configuration: a plain `key = value` file. Lines starting with
//! `#` are comments. Unknown keys are rejected.
//!
//! Keys (defaults come from the preset named by `preset`, itself defaulting
//! to `rapid_reduction`):
//!
//! | key | meaning |
//! |---|---|
//! | `preset` | `rapid_reduction` or `bitcoin`; must come first if present |
//! | `seed` | master seed (required) |
//! | `epochs` | epochs to simulate (required) |
//! | `nodes` | initial node count N0 |
//! | `lambda_leave`, `lambda_join` | Poisson churn rates per epoch |
//! | `alpha` | confirmation depth in blocks |
//! | `beta` | blocks per epoch |
//! | `block_bytes` | bytes per original block, used for traffic accounting |
//! | `field_bits` | symbol width p (1..=16) |
//! | `payload_symbols` | symbols per simulated payload; 0 derives it from `block_bytes` |
//! | `precode_rate` | pre-code rate r = k/n |
//! | `c`, `delta` | robust soliton parameters |
//! | `zeta` | target group failure probability, in (0, 1) |
//! | `gamma` | re-encode horizon in epochs |
//! | `reencode_factor` | re-mine when N falls below this fraction of N at encoding |
//! | `initial_unencoded` | confirmed, pooled blocks at epoch 0 |
//! | `one_enhanced_per_epoch` | at most one enhanced block per epoch |
//! | `payload_mode` | `structural` or `full` |
//! | `failure_table_path` | read the failure table from here instead of building it |
//! | `table_nodes` | comma-separated N grid; empty means 60%..100% of `nodes` |
//! | `table_ratios` | comma-separated k/N grid |
//! | `table_budget` | Monte Carlo trials per cell |
//! | `table_zero_run` | stop descending in k after this many zero-failure cells |
//! | `table_failure_cap` | a cell stops early after this many failures |
//! | `sizing_patience` | epochs of failed sizing tolerated before aborting |
//! | `claim_jitter`, `claim_latency` | claim-race timing in ticks |
//! | `ping_accounting` | add 32-byte ping/pong traffic per alive node to each join |
//! | `trace_path` | `epoch,joins,leaves` file replacing Poisson churn |

use std::path::{Path, PathBuf};

use crate::error::ConfigError;
use crate::protocol::PayloadMode;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub epochs: u64,
    pub nodes: usize,
    pub lambda_leave: f64,
    pub lambda_join: f64,
    pub alpha: u64,
    pub beta: u64,
    pub block_bytes: u64,
    pub field_bits: u32,
    pub payload_symbols: usize,
    pub precode_rate: f64,
    pub c: f64,
    pub delta: f64,
    pub zeta: f64,
    pub gamma: f64,
    pub reencode_factor: f64,
    pub initial_unencoded: u64,
    pub one_enhanced_per_epoch: bool,
    pub payload_mode: PayloadMode,
    pub failure_table_path: Option<PathBuf>,
    pub table_nodes: Vec<usize>,
    pub table_ratios: Vec<f64>,
    pub table_budget: u64,
    pub table_zero_run: usize,
    pub table_failure_cap: u64,
    pub sizing_patience: u64,
    pub claim_jitter: u64,
    pub claim_latency: u64,
    pub ping_accounting: bool,
    pub trace_path: Option<PathBuf>,
}

/// k/N from 0.84 down to 0.20 in steps of 0.01.
fn default_ratios() -> Vec<f64> {
    (20..=84).rev().map(|i| i as f64 / 100.0).collect()
}

impl ScenarioConfig {
    /// Shrinking network: N0 = 5000, 12 leaves and 4 joins per epoch.
    pub fn rapid_reduction() -> Self {
        ScenarioConfig {
            seed: 1,
            epochs: 200,
            nodes: 5000,
            lambda_leave: 12.0,
            lambda_join: 4.0,
            alpha: 244,
            beta: 144,
            block_bytes: 125_000,
            field_bits: 16,
            payload_symbols: 16,
            precode_rate: 0.8,
            c: 0.1,
            delta: 0.5,
            zeta: 1e-12,
            gamma: 98.0,
            reencode_factor: 1.0,
            initial_unencoded: 10_000,
            one_enhanced_per_epoch: true,
            payload_mode: PayloadMode::Structural,
            failure_table_path: None,
            table_nodes: Vec::new(),
            table_ratios: default_ratios(),
            table_budget: 200,
            table_zero_run: 2,
            table_failure_cap: 50,
            sizing_patience: 50,
            claim_jitter: 16,
            claim_latency: 1,
            ping_accounting: false,
            trace_path: None,
        }
    }

    /// Slowly growing network with churn rates fitted to Bitcoin node data.
    pub fn bitcoin() -> Self {
        ScenarioConfig {
            nodes: 10_000,
            lambda_leave: 42.18,
            lambda_join: 43.16,
            alpha: 144,
            beta: 144,
            reencode_factor: 0.7,
            ..Self::rapid_reduction()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "rapid_reduction" => Some(Self::rapid_reduction()),
            "bitcoin" => Some(Self::bitcoin()),
            _ => None,
        }
    }

    /// N grid for the failure table.
    pub fn table_nodes(&self) -> Vec<usize> {
        if !self.table_nodes.is_empty() {
            return self.table_nodes.clone();
        }
        let mut v: Vec<usize> = [0.6, 0.7, 0.8, 0.9, 1.0]
            .iter()
            .map(|f| (f * self.nodes as f64).round() as usize)
            .filter(|&n| n > 0)
            .collect();
        v.dedup();
        v
    }

    /// Symbols per simulated payload.
    pub fn symbols(&self) -> usize {
        if self.payload_symbols > 0 {
            self.payload_symbols
        } else {
            (self.block_bytes as usize).div_ceil(self.field_bits.div_ceil(8) as usize)
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, msg: String| Err(ConfigError::InvalidValue { key: key.into(), msg });
        if self.nodes == 0 {
            return bad("nodes", "must be >= 1".into());
        }
        for (key, v) in [("lambda_leave", self.lambda_leave), ("lambda_join", self.lambda_join)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(key, format!("{v} is not a non-negative rate"));
            }
        }
        if self.alpha == 0 {
            return bad("alpha", "must be >= 1".into());
        }
        if self.beta == 0 {
            return bad("beta", "must be >= 1".into());
        }
        if self.block_bytes == 0 {
            return bad("block_bytes", "must be >= 1".into());
        }
        if !(1..=16).contains(&self.field_bits) {
            return bad("field_bits", format!("{} not in 1..=16", self.field_bits));
        }
        if !(self.precode_rate > 0.0 && self.precode_rate <= 1.0) {
            return bad("precode_rate", format!("{} not in (0, 1]", self.precode_rate));
        }
        if !(self.c > 0.0) {
            return bad("c", "must be > 0".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta", format!("{} not in (0, 1)", self.delta));
        }
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return bad("zeta", format!("{} not in (0, 1)", self.zeta));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return bad("gamma", "must be >= 0".into());
        }
        if !(self.reencode_factor > 0.0 && self.reencode_factor <= 1.0) {
            return bad("reencode_factor", format!("{} not in (0, 1]", self.reencode_factor));
        }
        if self.table_ratios.is_empty() || self.table_ratios.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
            return bad("table_ratios", "need one or more ratios in (0, 1]".into());
        }
        if self.table_nodes.contains(&0) {
            return bad("table_nodes", "node counts must be >= 1".into());
        }
        if self.table_budget == 0 {
            return bad("table_budget", "must be >= 1".into());
        }
        if self.table_failure_cap == 0 {
            return bad("table_failure_cap", "must be >= 1".into());
        }
        if self.table_zero_run == 0 {
            return bad("table_zero_run", "must be >= 1".into());
        }
        if self.claim_jitter == 0 {
            return bad("claim_jitter", "must be >= 1".into());
        }
        Ok(())
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let base = origin.parent().unwrap_or(Path::new(""));
        let mut cfg = ScenarioConfig::rapid_reduction();
        let (mut seed, mut epochs) = (None, None);
        let mut first = true;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let syntax = |msg: &str| ConfigError::Syntax {
                path: origin.display().to_string(),
                line: i + 1,
                msg: msg.into(),
            };
            let (key, value) = line.split_once('=').ok_or_else(|| syntax("expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            let invalid = |msg: String| ConfigError::InvalidValue { key: key.into(), msg };
            macro_rules! num {
                () => {
                    value.parse().map_err(|e| invalid(format!("`{value}`: {e}")))?
                };
            }
            let path = || (!value.is_empty()).then(|| base.join(value));
            match key {
                "preset" => {
                    if !first {
                        return Err(syntax("preset must be the first key"));
                    }
                    cfg = ScenarioConfig::preset(value).ok_or_else(|| invalid(format!("unknown preset `{value}`")))?;
                }
                "seed" => seed = Some(num!()),
                "epochs" => epochs = Some(num!()),
                "nodes" => cfg.nodes = num!(),
                "lambda_leave" => cfg.lambda_leave = num!(),
                "lambda_join" => cfg.lambda_join = num!(),
                "alpha" => cfg.alpha = num!(),
                "beta" => cfg.beta = num!(),
                "block_bytes" => cfg.block_bytes = num!(),
                "field_bits" => cfg.field_bits = num!(),
                "payload_symbols" => cfg.payload_symbols = num!(),
                "precode_rate" => cfg.precode_rate = num!(),
                "c" => cfg.c = num!(),
                "delta" => cfg.delta = num!(),
                "zeta" => cfg.zeta = num!(),
                "gamma" => cfg.gamma = num!(),
                "reencode_factor" => cfg.reencode_factor = num!(),
                "initial_unencoded" => cfg.initial_unencoded = num!(),
                "one_enhanced_per_epoch" => cfg.one_enhanced_per_epoch = num!(),
                "payload_mode" => {
                    cfg.payload_mode = match value {
                        "structural" => PayloadMode::Structural,
                        "full" => PayloadMode::Full,
                        _ => return Err(invalid(format!("`{value}` is not structural or full"))),
                    }
                }
                "failure_table_path" => cfg.failure_table_path = path(),
                "table_nodes" => cfg.table_nodes = list(value).map_err(invalid)?,
                "table_ratios" => cfg.table_ratios = list(value).map_err(invalid)?,
                "table_budget" => cfg.table_budget = num!(),
                "table_zero_run" => cfg.table_zero_run = num!(),
                "table_failure_cap" => cfg.table_failure_cap = num!(),
                "sizing_patience" => cfg.sizing_patience = num!(),
                "claim_jitter" => cfg.claim_jitter = num!(),
                "claim_latency" => cfg.claim_latency = num!(),
                "ping_accounting" => cfg.ping_accounting = num!(),
                "trace_path" => cfg.trace_path = path(),
                _ => return Err(ConfigError::UnknownKey(key.into())),
            }
            first = false;
        }
        cfg.seed = seed.ok_or(ConfigError::MissingKey("seed"))?;
        cfg.epochs = epochs.ok_or(ConfigError::MissingKey("epochs"))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn list<T: std::str::FromStr>(value: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e| format!("`{s}`: {e}")))
        .collect()
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    ScenarioConfig::parse(&text, path)
}

/// Reads an `epoch,joins,leaves` churn trace. A header line is optional.
pub fn load_trace(path: &Path) -> Result<std::collections::BTreeMap<u64, (usize, usize)>, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = std::collections::BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with("epoch")) {
            continue;
        }
        let syntax = |msg: String| ConfigError::Syntax {
            path: path.display().to_string(),
            line: i + 1,
            msg,
        };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(syntax("expected epoch,joins,leaves".into()));
        }
        let n = |s: &str| s.parse::<u64>().map_err(|e| syntax(format!("`{s}`: {e}")));
        out.insert(n(f[0])?, (n(f[1])? as usize, n(f[2])? as usize));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<ScenarioConfig, ConfigError> {
        ScenarioConfig::parse(s, Path::new("/tmp/x.conf"))
    }

    #[test]
    fn rapid_preset_values() {
        let c = parse("seed = 7\nepochs = 200\n").unwrap();
        assert_eq!(c.nodes, 5000);
        assert_eq!((c.lambda_leave, c.lambda_join), (12.0, 4.0));
        assert_eq!(c.zeta, 1e-12);
        assert_eq!(c.gamma, 98.0);
        assert_eq!((c.alpha, c.beta), (244, 144));
        assert_eq!(c.initial_unencoded, 10_000);
        assert_eq!(c.seed, 7);
    }

    #[test]
    fn bitcoin_preset_values() {
        let c = parse("preset = bitcoin\nseed = 1\nepochs = 5\n").unwrap();
        assert_eq!((c.lambda_leave, c.lambda_join), (42.18, 43.16));
        assert_eq!(c.nodes, 10_000);
        assert_eq!(c.alpha, 144);
        assert_eq!(c.gamma, 98.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            parse("seed=1\nepochs=1\nzeta=0\n"),
            Err(ConfigError::InvalidValue { key, .. }) if key == "zeta"
        ));
        assert!(matches!(
            parse("seed=1\nepochs=1\nalpha=0\n"),
            Err(ConfigError::InvalidValue { key, .. }) if key == "alpha"
        ));
        assert!(matches!(parse("seed=1\nepochs=1\ncolour=red\n"), Err(ConfigError::UnknownKey(k)) if k == "colour"));
        assert!(matches!(parse("epochs=1\n"), Err(ConfigError::MissingKey("seed"))));
        assert!(matches!(parse("seed=1\nepochs\n"), Err(ConfigError::Syntax { line: 2, .. })));
        assert!(matches!(parse("seed=1\npreset=bitcoin\nepochs=1\n"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(parse("seed=x\nepochs=1\n"), Err(ConfigError::InvalidValue { .. })));
    }

    #[test]
    fn lists_and_paths() {
        let c = parse("seed=1\nepochs=1\ntable_nodes=100, 200\ntable_ratios=0.5,0.4\nfailure_table_path=t.csv\npayload_symbols=0\n")
            .unwrap();
        assert_eq!(c.table_nodes(), vec![100, 200]);
        assert_eq!(c.table_ratios, vec![0.5, 0.4]);
        assert_eq!(c.failure_table_path, Some(PathBuf::from("/tmp/t.csv")));
        assert_eq!(c.symbols(), 62_500);
        let d = parse("seed=1\nepochs=1\n").unwrap();
        assert_eq!(d.table_nodes(), vec![3000, 3500, 4000, 4500, 5000]);
    }

    #[test]
    fn trace_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.csv");
        std::fs::write(&p, "epoch,joins,leaves\n1,3,2\n4,0,9\n").unwrap();
        let t = load_trace(&p).unwrap();
        assert_eq!(t[&1], (3, 2));
        assert_eq!(t[&4], (0, 9));
        assert_eq!(t.len(), 2);
    }
}
