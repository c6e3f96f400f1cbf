//! The seeded epoch-by-epoch simulator: block production, confirmation,
//! enhanced-block mining and verification, decentralized encoding, churn
//! with network maintenance, and re-encoding.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{load_trace, ScenarioConfig};
use crate::error::{SimError, SizingError};
use crate::field::{BlockVector, CodecConfig};
use crate::ledger::{
    mine_enhanced_block, remine_decision, verify_enhanced_block, ChainConfig, ChainState, EnhancedBlockHeader,
    RemineDecision, SyntheticStore, Verdict,
};
use crate::metrics::{join_cdf, write_join_cdf, EpochRecord, Event, EventKind, EventLog, MetricsLedger};
use crate::protocol::{ChurnModel, ClaimRace, EpsilonSchedule, GroupSpec, JoinKind, Network, PayloadMode};
use crate::sizing::{
    build_failure_table, choose_group_size, encoding_omega, write_rows, FailureModel, FailureTable, KGrid,
    SizingPolicy, TableBuild,
};

pub const HISTORY_HEADER: &str = "seq,mined_epoch,k_m,n,nodes,height";

/// Bytes of one ping or pong message.
const PING_BYTES: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HistoryRow {
    pub seq: u32,
    pub mined_epoch: u64,
    pub k: usize,
    pub n: usize,
    pub nodes: usize,
    pub height: u64,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub metrics: MetricsLedger,
    pub events: EventLog,
    pub history: Vec<HistoryRow>,
    pub table: FailureTable,
    /// (seq, epoch) of every re-encode trigger.
    pub reencodes: Vec<(u32, u64)>,
    pub final_nodes: usize,
    pub network: Network,
    pub chain: ChainState,
}

impl ScenarioOutput {
    /// k_m of successive mines of one group.
    pub fn k_sequence(&self, seq: u32) -> Vec<usize> {
        self.history.iter().filter(|h| h.seq == seq).map(|h| h.k).collect()
    }

    pub fn write_all(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        self.metrics.write_csv(&dir.join("metrics.csv"))?;
        self.events.write_csv(&dir.join("events.csv"))?;
        write_join_cdf(&join_cdf(&self.events), &dir.join("join_cdf.csv"))?;
        let rows: Vec<String> = self
            .history
            .iter()
            .map(|h| format!("{},{},{},{},{},{}", h.seq, h.mined_epoch, h.k, h.n, h.nodes, h.height))
            .collect();
        write_rows(&dir.join("enhanced_history.csv"), HISTORY_HEADER, &rows)?;
        self.table.write_csv(&dir.join("failure_table.csv"))
    }
}

pub fn failure_model(cfg: &ScenarioConfig) -> Result<FailureModel, SimError> {
    Ok(FailureModel {
        c: cfg.c,
        delta: cfg.delta,
        precode_rate: cfg.precode_rate,
        churn: ChurnModel::new(cfg.lambda_leave, cfg.lambda_join)?,
        horizon: sizing_policy(cfg).horizon(),
        schedule: EpsilonSchedule::default(),
    })
}

pub fn sizing_policy(cfg: &ScenarioConfig) -> SizingPolicy {
    SizingPolicy {
        zeta: cfg.zeta,
        gamma: cfg.gamma,
        alpha: cfg.alpha,
        beta: cfg.beta,
    }
}

pub fn table_build(cfg: &ScenarioConfig) -> TableBuild {
    TableBuild {
        nodes: cfg.table_nodes(),
        ks: KGrid::Ratios(cfg.table_ratios.clone()),
        budget: cfg.table_budget,
        seed: cfg.seed,
        zero_run: cfg.table_zero_run,
        failure_cap: cfg.table_failure_cap,
    }
}

/// Original block contents of a scenario's chain.
pub fn block_store(cfg: &ScenarioConfig) -> SyntheticStore {
    SyntheticStore {
        seed: cfg.seed,
        symbols: cfg.symbols(),
        field_bits: cfg.field_bits,
    }
}

/// The failure table for a scenario: read from `failure_table_path` when
/// set, otherwise built under the configured budget.
pub fn obtain_table(cfg: &ScenarioConfig) -> Result<FailureTable, SimError> {
    match &cfg.failure_table_path {
        Some(p) => Ok(FailureTable::read_csv(p)?),
        None => Ok(build_failure_table(&table_build(cfg), &failure_model(cfg)?)?),
    }
}

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    table: &'a FailureTable,
    model: FailureModel,
    policy: SizingPolicy,
    codec: CodecConfig,
    store: SyntheticStore,
    chain: ChainState,
    net: Network,
    rng: ChaCha8Rng,
    metrics: MetricsLedger,
    events: EventLog,
    history: Vec<HistoryRow>,
    reencodes: Vec<(u32, u64)>,
    /// Intermediates of mined groups awaiting confirmation (full payloads).
    pending_payloads: BTreeMap<u64, Arc<Vec<BlockVector>>>,
    lost: BTreeSet<u32>,
}

pub fn run_scenario(cfg: &ScenarioConfig, table: &FailureTable) -> Result<ScenarioOutput, SimError> {
    cfg.validate()?;
    let trace = cfg.trace_path.as_deref().map(load_trace).transpose()?;
    let chain_cfg = ChainConfig::new(cfg.alpha, cfg.beta, cfg.precode_rate, cfg.reencode_factor)?;
    let codec = CodecConfig::new(cfg.field_bits, cfg.symbols(), cfg.precode_rate)?;
    let mut sim = Sim {
        cfg,
        table,
        model: failure_model(cfg)?,
        policy: sizing_policy(cfg),
        codec,
        store: block_store(cfg),
        chain: ChainState::new(chain_cfg, cfg.initial_unencoded)?,
        net: Network::with_nodes(cfg.payload_mode, cfg.nodes),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        metrics: MetricsLedger::default(),
        events: EventLog::default(),
        history: Vec::new(),
        reencodes: Vec::new(),
        pending_payloads: BTreeMap::new(),
        lost: BTreeSet::new(),
    };
    let mut stalled = 0u64;
    for epoch in 1..=cfg.epochs {
        sim.reencode(epoch);
        let mut rec = EpochRecord {
            epoch,
            ..Default::default()
        };
        let sizing_failed = sim.produce_blocks(epoch)?;
        if sizing_failed {
            stalled += 1;
            if stalled > cfg.sizing_patience {
                return Err(SimError::SizingStalled { epoch, epochs: stalled });
            }
        } else {
            stalled = 0;
        }
        let (leaves, joins) = match &trace {
            Some(t) => {
                let (j, l) = t.get(&epoch).copied().unwrap_or((0, 0));
                (l, j)
            }
            None => (
                crate::protocol::sample_poisson(&mut sim.rng, cfg.lambda_leave) as usize,
                crate::protocol::sample_poisson(&mut sim.rng, cfg.lambda_join) as usize,
            ),
        };
        sim.churn(epoch, leaves, joins, &mut rec)?;
        if cfg!(debug_assertions) {
            sim.chain.check_partition().map_err(|e| SimError::Ledger(crate::error::LedgerError::Config(e)))?;
        }
        rec.nodes = sim.net.alive_count() as u64;
        rec.w = sim.chain.length();
        rec.sum_k = sim.chain.encoded_total();
        rec.groups = sim.chain.groups().len() as u64;
        sim.metrics.push(rec);
    }
    Ok(ScenarioOutput {
        final_nodes: sim.net.alive_count(),
        metrics: sim.metrics,
        events: sim.events,
        history: sim.history,
        table: table.clone(),
        reencodes: sim.reencodes,
        network: sim.net,
        chain: sim.chain,
    })
}

impl Sim<'_> {
    fn event(&mut self, epoch: u64, kind: EventKind, node: Option<u32>, group: Option<u32>, blocks: u64) {
        self.events.push(Event {
            epoch,
            kind,
            node,
            group,
            blocks,
            bytes: blocks * self.cfg.block_bytes,
        });
    }

    /// Groups encoded at least γ epochs ago go back to the pool when the
    /// network has shrunk enough.
    fn reencode(&mut self, epoch: u64) {
        let nodes = self.net.alive_count();
        let due: Vec<u32> = self
            .chain
            .groups()
            .values()
            .filter(|g| (epoch - g.encoded_epoch) as f64 >= self.cfg.gamma)
            .filter(|g| remine_decision(nodes, g.nodes_at_encoding, &self.chain.cfg) == RemineDecision::Reencode)
            .map(|g| g.seq)
            .collect();
        for seq in due {
            let g = self.chain.release_group(seq).unwrap();
            self.net.remove_group(seq);
            self.lost.remove(&seq);
            self.reencodes.push((seq, epoch));
            self.event(epoch, EventKind::Reencode, None, Some(seq), g.heights.len() as u64);
        }
    }

    /// β block slots. Returns true if mining was wanted but sizing failed.
    fn produce_blocks(&mut self, epoch: u64) -> Result<bool, SimError> {
        let nodes = self.net.alive_count();
        let k_next = match choose_group_size(nodes, self.table, &self.policy) {
            Ok(k) => Some(k),
            Err(SizingError::Infeasible { .. }) | Err(SizingError::Uncovered(_)) => None,
            Err(e) => return Err(e.into()),
        };
        let sizing_failed = k_next.is_none() && !self.chain.pool().is_empty();
        let mut mined = 0;
        for _ in 0..self.cfg.beta {
            let can_mine = !(self.cfg.one_enhanced_per_epoch && mined > 0);
            let confirmed = match k_next {
                Some(k) if can_mine && self.chain.pool().len() >= k => {
                    mined += 1;
                    self.mine(epoch, k)?
                }
                _ => self.chain.append_block(epoch),
            };
            for header in confirmed {
                self.encode(epoch, &header);
            }
        }
        Ok(sizing_failed)
    }

    fn mine(&mut self, epoch: u64, k: usize) -> Result<Vec<EnhancedBlockHeader>, SimError> {
        let seq = self.chain.next_group_seq();
        let alive = self.net.alive_ids();
        let miner = alive[self.rng.gen_range(0..alive.len())];
        let verifier = alive[self.rng.gen_range(0..alive.len())];
        let m = mine_enhanced_block(self.chain.pool(), k, seq, self.chain.tip(), epoch, &self.codec, &self.store)?;
        let verdict = verify_enhanced_block(&m.header, self.chain.pool(), &self.codec, &self.store);
        if verdict != Verdict::Accept {
            return Err(crate::error::LedgerError::Config(format!("own enhanced block rejected: {verdict:?}")).into());
        }
        let n = m.header.n();
        self.history.push(HistoryRow {
            seq,
            mined_epoch: epoch,
            k,
            n,
            nodes: self.net.alive_count(),
            height: m.header.base.height,
        });
        self.event(epoch, EventKind::Mine, Some(miner), Some(seq), k as u64);
        self.event(epoch, EventKind::Verify, Some(verifier), Some(seq), 0);
        if self.cfg.payload_mode == PayloadMode::Full {
            self.pending_payloads.insert(m.header.base.height, Arc::new(m.intermediates));
        }
        Ok(self.chain.append_enhanced(m.header)?)
    }

    fn encode(&mut self, epoch: u64, header: &EnhancedBlockHeader) {
        let k = header.k();
        let seq = header.group_seq;
        let intermediates = self.pending_payloads.remove(&header.base.height);
        let spec = GroupSpec {
            seq,
            k,
            n: header.n(),
            omega: encoding_omega(k, &self.model).expect("group too small for any degree law"),
            generator: intermediates.as_ref().map(|_| Arc::new(header.generator.clone())),
            intermediates,
        };
        self.net.register_group(spec);
        let race = ClaimRace {
            jitter_per_node: self.cfg.claim_jitter,
            latency: self.cfg.claim_latency,
        };
        let report = self.net.decentralized_encode(seq, race, &mut self.rng);
        self.event(epoch, EventKind::Claim, None, Some(seq), report.claims.len() as u64);
        let nodes = self.net.alive_count();
        self.chain.record_encoded(header, epoch, nodes);
    }

    fn churn(&mut self, epoch: u64, leaves: usize, joins: usize, rec: &mut EpochRecord) -> Result<(), SimError> {
        let report = self.net.churn_counts(leaves, joins, &mut self.rng, &self.model.schedule);
        for &id in &report.left {
            self.event(epoch, EventKind::Leave, Some(id), None, 0);
        }
        if report.network_died {
            return Err(SimError::NetworkDeath { epoch });
        }
        let unencoded = self.chain.length() - self.chain.encoded_total();
        for j in &report.joins {
            rec.joins += 1;
            self.event(epoch, EventKind::Join, Some(j.node), None, unencoded);
            rec.comm_pool_bytes += unencoded * self.cfg.block_bytes;
            if self.cfg.ping_accounting {
                let ping = 2 * PING_BYTES * self.net.alive_count() as u64;
                rec.comm_pool_bytes += ping;
                self.events.events.last_mut().unwrap().bytes += ping;
            }
            for g in &j.groups {
                let kind = match g.kind {
                    JoinKind::Encoded => EventKind::Join,
                    JoinKind::Repaired => EventKind::Repair,
                    JoinKind::Fallback | JoinKind::Lost => {
                        rec.fallbacks += 1;
                        EventKind::Fallback
                    }
                };
                if g.kind == JoinKind::Lost && self.lost.insert(g.group_seq) {
                    rec.groups_lost += 1;
                }
                rec.comm_coded_bytes += g.blocks as u64 * self.cfg.block_bytes;
                self.event(epoch, kind, Some(j.node), Some(g.group_seq), g.blocks as u64);
                if g.claimed.is_some() {
                    self.event(epoch, EventKind::Claim, Some(j.node), Some(g.group_seq), 1);
                }
            }
        }
        for seq in self.net.group_seqs() {
            if self.net.is_group_lost(seq) && self.lost.insert(seq) {
                rec.groups_lost += 1;
            }
        }
        if cfg!(debug_assertions) {
            self.net.check_invariants().map_err(|e| SimError::Ledger(crate::error::LedgerError::Config(e)))?;
        }
        Ok(())
    }
}
