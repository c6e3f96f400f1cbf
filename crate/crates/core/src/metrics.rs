//! Per-epoch metrics, the event log, and the storage and communication
//! coefficients derived from them.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::{BufRead, Write as _};
use std::path::Path;
use std::str::FromStr;

pub const METRICS_HEADER: &str =
    "epoch,nodes,W,sum_k,groups,R_s,comm_coded_bytes,comm_pool_bytes,joins,fallbacks,groups_lost";
pub const EVENTS_HEADER: &str = "epoch,kind,node,group,blocks,bytes";
pub const JOIN_CDF_HEADER: &str = "blocks,count,cdf";

/// Per-node storage of the coded chain relative to full replication:
/// (W - sum k + |M|) / W. A chain with no blocks stores nothing extra.
pub fn storage_reduction(w: u64, sum_k: u64, groups: u64) -> f64 {
    if w == 0 {
        return 1.0;
    }
    debug_assert!(sum_k <= w && groups <= sum_k);
    (w - sum_k + groups) as f64 / w as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EpochRecord {
    pub epoch: u64,
    pub nodes: u64,
    pub w: u64,
    pub sum_k: u64,
    pub groups: u64,
    pub comm_coded_bytes: u64,
    pub comm_pool_bytes: u64,
    pub joins: u64,
    pub fallbacks: u64,
    pub groups_lost: u64,
}

impl EpochRecord {
    pub fn storage_reduction(&self) -> f64 {
        storage_reduction(self.w, self.sum_k, self.groups)
    }

    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.9},{},{},{},{},{}",
            self.epoch,
            self.nodes,
            self.w,
            self.sum_k,
            self.groups,
            self.storage_reduction(),
            self.comm_coded_bytes,
            self.comm_pool_bytes,
            self.joins,
            self.fallbacks,
            self.groups_lost
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsLedger {
    pub records: Vec<EpochRecord>,
}

impl MetricsLedger {
    pub fn push(&mut self, r: EpochRecord) {
        assert!(r.sum_k <= r.w, "encoded total {} exceeds chain length {}", r.sum_k, r.w);
        self.records.push(r);
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{METRICS_HEADER}\n");
        for r in &self.records {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }

    pub fn read_csv(path: &Path) -> Result<MetricsLedger, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(METRICS_HEADER) {
            return Err(format!("{}: unexpected header", path.display()));
        }
        let mut out = MetricsLedger::default();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 11 {
                return Err(format!("{}: line {}: expected 11 fields", path.display(), i + 2));
            }
            let u = |j: usize| {
                f[j].parse::<u64>()
                    .map_err(|e| format!("{}: line {}: {e}", path.display(), i + 2))
            };
            out.records.push(EpochRecord {
                epoch: u(0)?,
                nodes: u(1)?,
                w: u(2)?,
                sum_k: u(3)?,
                groups: u(4)?,
                comm_coded_bytes: u(6)?,
                comm_pool_bytes: u(7)?,
                joins: u(8)?,
                fallbacks: u(9)?,
                groups_lost: u(10)?,
            });
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Claim,
    Join,
    Repair,
    Fallback,
    Leave,
    Mine,
    Verify,
    Reencode,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Claim => "claim",
            EventKind::Join => "join",
            EventKind::Repair => "repair",
            EventKind::Fallback => "fallback",
            EventKind::Leave => "leave",
            EventKind::Mine => "mine",
            EventKind::Verify => "verify",
            EventKind::Reencode => "reencode",
        })
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "claim" => EventKind::Claim,
            "join" => EventKind::Join,
            "repair" => EventKind::Repair,
            "fallback" => EventKind::Fallback,
            "leave" => EventKind::Leave,
            "mine" => EventKind::Mine,
            "verify" => EventKind::Verify,
            "reencode" => EventKind::Reencode,
            other => return Err(format!("unknown event kind `{other}`")),
        })
    }
}

/// One log line. Join-path events (`join`, `repair`, `fallback`) with a
/// group carry that group's coded-block transfers; a `join` without a group
/// is the joiner's copy of the un-encoded blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub epoch: u64,
    pub kind: EventKind,
    pub node: Option<u32>,
    pub group: Option<u32>,
    pub blocks: u64,
    pub bytes: u64,
}

impl Event {
    pub fn is_coded_join(&self) -> bool {
        self.group.is_some() && matches!(self.kind, EventKind::Join | EventKind::Repair | EventKind::Fallback)
    }

    pub fn is_pool_copy(&self) -> bool {
        self.kind == EventKind::Join && self.group.is_none()
    }
}

fn opt(v: Option<u32>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EventLog {
    pub events: Vec<Event>,
}

impl EventLog {
    pub fn push(&mut self, e: Event) {
        self.events.push(e);
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "{EVENTS_HEADER}")?;
        for e in &self.events {
            writeln!(f, "{},{},{},{},{},{}", e.epoch, e.kind, opt(e.node), opt(e.group), e.blocks, e.bytes)?;
        }
        f.flush()
    }

    pub fn read_csv(path: &Path) -> Result<EventLog, String> {
        let file = std::fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut lines = std::io::BufReader::new(file).lines();
        let err = |i: usize, m: String| format!("{}: line {}: {m}", path.display(), i);
        match lines.next() {
            Some(Ok(h)) if h.trim() == EVENTS_HEADER => {}
            _ => return Err(format!("{}: unexpected header", path.display())),
        }
        let mut log = EventLog::default();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| err(i + 2, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(err(i + 2, "expected 6 fields".into()));
            }
            let num = |s: &str| s.parse::<u64>().map_err(|e| err(i + 2, e.to_string()));
            let id = |s: &str| -> Result<Option<u32>, String> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|e: std::num::ParseIntError| err(i + 2, e.to_string()))
                }
            };
            log.events.push(Event {
                epoch: num(f[0])?,
                kind: f[1].parse().map_err(|e| err(i + 2, e))?,
                node: id(f[2])?,
                group: id(f[3])?,
                blocks: num(f[4])?,
                bytes: num(f[5])?,
            });
        }
        Ok(log)
    }
}

/// Empirical CDF of per-group coded blocks transferred on joins.
pub fn join_cdf(log: &EventLog) -> Vec<(u64, u64, f64)> {
    let mut counts: BTreeMap<u64, u64> = BTreeMap::new();
    for e in log.events.iter().filter(|e| e.is_coded_join()) {
        *counts.entry(e.blocks).or_default() += 1;
    }
    let total: u64 = counts.values().sum();
    let mut acc = 0;
    counts
        .into_iter()
        .map(|(b, c)| {
            acc += c;
            (b, c, acc as f64 / total as f64)
        })
        .collect()
}

/// Fraction of per-group joins that moved at most `blocks` coded blocks.
pub fn cdf_at(cdf: &[(u64, u64, f64)], blocks: u64) -> f64 {
    cdf.iter().take_while(|r| r.0 <= blocks).last().map_or(0.0, |r| r.2)
}

pub fn write_join_cdf(cdf: &[(u64, u64, f64)], path: &Path) -> std::io::Result<()> {
    let mut s = format!("{JOIN_CDF_HEADER}\n");
    for (b, c, p) in cdf {
        writeln!(s, "{b},{c},{p:.9}").unwrap();
    }
    std::fs::write(path, s)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct JoinCost {
    pub epoch: u64,
    pub node: u32,
    pub coded_bytes: u64,
    pub pool_bytes: u64,
    /// (coded + pool) relative to downloading the whole chain.
    pub reduction: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CommunicationSummary {
    pub joins: Vec<JoinCost>,
    /// epoch -> (coded bytes, pool bytes)
    pub per_epoch: BTreeMap<u64, (u64, u64)>,
    pub coded_total: u64,
    pub pool_total: u64,
    /// Mean per-join reduction coefficient.
    pub mean_reduction: f64,
    pub max_coded_bytes: u64,
    pub cdf: Vec<(u64, u64, f64)>,
}

/// Join costs from an event log. Each join is compared against a full
/// download of the chain at that epoch (W from `metrics`, `block_bytes` per
/// block).
pub fn communication_metrics(log: &EventLog, metrics: &MetricsLedger, block_bytes: u64) -> CommunicationSummary {
    let w_at: BTreeMap<u64, u64> = metrics.records.iter().map(|r| (r.epoch, r.w)).collect();
    let mut per_join: BTreeMap<(u64, u32), (u64, u64)> = BTreeMap::new();
    let mut per_epoch: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
    for e in &log.events {
        let Some(node) = e.node else { continue };
        if e.is_coded_join() {
            per_join.entry((e.epoch, node)).or_default().0 += e.bytes;
            per_epoch.entry(e.epoch).or_default().0 += e.bytes;
        } else if e.is_pool_copy() {
            per_join.entry((e.epoch, node)).or_default().1 += e.bytes;
            per_epoch.entry(e.epoch).or_default().1 += e.bytes;
        }
    }
    let joins: Vec<JoinCost> = per_join
        .into_iter()
        .map(|((epoch, node), (coded, pool))| {
            let w = w_at.get(&epoch).copied().unwrap_or(0);
            let full = w * block_bytes;
            JoinCost {
                epoch,
                node,
                coded_bytes: coded,
                pool_bytes: pool,
                reduction: if full == 0 { 0.0 } else { (coded + pool) as f64 / full as f64 },
            }
        })
        .collect();
    let mean_reduction = if joins.is_empty() {
        0.0
    } else {
        joins.iter().map(|j| j.reduction).sum::<f64>() / joins.len() as f64
    };
    CommunicationSummary {
        coded_total: joins.iter().map(|j| j.coded_bytes).sum(),
        pool_total: joins.iter().map(|j| j.pool_bytes).sum(),
        max_coded_bytes: joins.iter().map(|j| j.coded_bytes).max().unwrap_or(0),
        mean_reduction,
        joins,
        per_epoch,
        cdf: join_cdf(log),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn storage_reduction_values() {
        assert_eq!(storage_reduction(10_000, 0, 0), 1.0);
        assert!((storage_reduction(10_000, 9_000, 3) - 0.1003).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn reduction_in_unit_interval(w in 1u64..1_000_000, frac in 0.0f64..=1.0, gfrac in 0.0f64..=1.0) {
            let sum_k = (w as f64 * frac) as u64;
            let groups = (sum_k as f64 * gfrac) as u64;
            let r = storage_reduction(w, sum_k, groups);
            prop_assert!(r > 0.0 && r <= 1.0);
        }
    }

    fn ev(epoch: u64, kind: EventKind, node: u32, group: Option<u32>, blocks: u64) -> Event {
        Event {
            epoch,
            kind,
            node: Some(node),
            group,
            blocks,
            bytes: blocks * 10,
        }
    }

    #[test]
    fn no_groups_means_pool_only() {
        let mut log = EventLog::default();
        log.push(ev(1, EventKind::Join, 7, None, 100));
        let mut m = MetricsLedger::default();
        m.push(EpochRecord {
            epoch: 1,
            w: 100,
            ..Default::default()
        });
        let s = communication_metrics(&log, &m, 10);
        assert_eq!(s.coded_total, 0);
        assert_eq!(s.mean_reduction, 1.0);
        assert!(s.cdf.is_empty());
    }

    #[test]
    fn cdf_counts_group_joins() {
        let mut log = EventLog::default();
        for (b, kind) in [(3, EventKind::Join), (5, EventKind::Repair), (5, EventKind::Join), (40, EventKind::Fallback)] {
            log.push(ev(2, kind, 1, Some(1), b));
        }
        log.push(ev(2, EventKind::Join, 1, None, 1000));
        log.push(ev(2, EventKind::Claim, 1, Some(1), 1));
        let cdf = join_cdf(&log);
        assert_eq!(cdf, vec![(3, 1, 0.25), (5, 2, 0.75), (40, 1, 1.0)]);
        assert_eq!(cdf_at(&cdf, 10), 0.75);
        assert_eq!(cdf_at(&cdf, 2), 0.0);
        let mut m = MetricsLedger::default();
        m.push(EpochRecord {
            epoch: 2,
            w: 2000,
            ..Default::default()
        });
        let s = communication_metrics(&log, &m, 10);
        assert_eq!(s.coded_total, 530);
        assert_eq!(s.pool_total, 10_000);
        assert!((s.mean_reduction - 10_530.0 / 20_000.0).abs() < 1e-15);
    }

    #[test]
    fn csv_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = EventLog::default();
        log.push(ev(1, EventKind::Mine, 3, Some(2), 1910));
        log.push(Event {
            epoch: 4,
            kind: EventKind::Leave,
            node: Some(9),
            group: None,
            blocks: 0,
            bytes: 0,
        });
        let p = dir.path().join("events.csv");
        log.write_csv(&p).unwrap();
        assert_eq!(EventLog::read_csv(&p).unwrap(), log);

        let mut m = MetricsLedger::default();
        m.push(EpochRecord {
            epoch: 1,
            nodes: 5000,
            w: 10_144,
            sum_k: 1910,
            groups: 1,
            comm_coded_bytes: 12,
            comm_pool_bytes: 34,
            joins: 4,
            fallbacks: 0,
            groups_lost: 0,
        });
        let p = dir.path().join("metrics.csv");
        m.write_csv(&p).unwrap();
        assert_eq!(MetricsLedger::read_csv(&p).unwrap(), m);
        assert!(std::fs::read_to_string(&p).unwrap().starts_with(METRICS_HEADER));
    }
}
