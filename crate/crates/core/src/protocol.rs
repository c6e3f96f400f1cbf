//! Per-node storage and the network maintenance algorithm (NMA).
//!
//! The network is simulated in one process: a "broadcast" is a scan of the
//! relevant per-group index, and every answer goes through [`Network::serve_request`]
//! so dead nodes stay silent. Two payload modes exist: `Full` carries real
//! symbols and decodes them, `Structural` tracks neighbour sets only and decides
//! decodability from the peeling graph (recovered >= k, guaranteed by MDS).

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::degree::DegreeDistribution;
use crate::error::LtError;
use crate::field::BlockVector;
use crate::lt::{draw_neighbors, peel_count, raptor_decode, repair_from_edge, CodedBlock, RaptorOutcome};
use crate::precode::{precode_column, GeneratorMatrix};

pub type NodeId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadMode {
    Full,
    Structural,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChurnModel {
    pub lambda_leave: f64,
    pub lambda_join: f64,
}

impl ChurnModel {
    pub fn new(lambda_leave: f64, lambda_join: f64) -> Result<Self, LtError> {
        if !(lambda_leave >= 0.0 && lambda_join >= 0.0) || !lambda_leave.is_finite() || !lambda_join.is_finite() {
            return Err(LtError::Domain(format!(
                "churn rates must be finite and >= 0, got ({lambda_leave}, {lambda_join})"
            )));
        }
        Ok(ChurnModel {
            lambda_leave,
            lambda_join,
        })
    }

    /// Same model over a fraction of an epoch.
    pub fn scaled(&self, factor: f64) -> ChurnModel {
        ChurnModel {
            lambda_leave: self.lambda_leave * factor,
            lambda_join: self.lambda_join * factor,
        }
    }
}

pub fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let p = Poisson::new(mean).expect("positive finite mean");
    let x: f64 = p.sample(rng);
    x as u64
}

/// Decoding overheads tried, in order, by the full-group fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonSchedule(pub Vec<f64>);

impl Default for EpsilonSchedule {
    /// 0.03, then +0.02 per retry up to 0.25.
    fn default() -> Self {
        let mut v = Vec::new();
        let mut e = 0.03;
        while e <= 0.25 + 1e-9 {
            v.push((e * 100.0f64).round() / 100.0);
            e += 0.02;
        }
        EpsilonSchedule(v)
    }
}

/// "I store intermediate block i", stamped with logical time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClaimMessage {
    pub group_seq: u32,
    pub index: u32,
    pub claimer: NodeId,
    pub timestamp: u64,
}

impl ClaimMessage {
    /// Earlier timestamp wins; ties go to the smaller node id.
    pub fn precedes(&self, other: &ClaimMessage) -> bool {
        (self.timestamp, self.claimer) < (other.timestamp, other.claimer)
    }
}

/// Winning claim per index, and every claim that lost a conflict.
pub fn resolve_claims(claims: &[ClaimMessage]) -> (BTreeMap<u32, ClaimMessage>, Vec<ClaimMessage>) {
    let mut winners: BTreeMap<u32, ClaimMessage> = BTreeMap::new();
    let mut losers = Vec::new();
    for c in claims {
        match winners.get_mut(&c.index) {
            None => {
                winners.insert(c.index, *c);
            }
            Some(w) if c.precedes(w) => {
                losers.push(std::mem::replace(w, *c));
            }
            Some(_) => losers.push(*c),
        }
    }
    (winners, losers)
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: NodeId,
    pub alive: bool,
    /// One coded block per encoded group.
    pub stored: BTreeMap<u32, CodedBlock>,
}

/// Everything the network needs to know about one encoded group.
#[derive(Debug, Clone)]
pub struct GroupSpec {
    pub seq: u32,
    pub k: usize,
    pub n: usize,
    pub omega: Arc<DegreeDistribution>,
    /// Full mode only.
    pub generator: Option<Arc<GeneratorMatrix>>,
    /// Full mode only: the true intermediates, for decoding re-encodes and
    /// soundness checks.
    pub intermediates: Option<Arc<Vec<BlockVector>>>,
}

#[derive(Debug, Clone)]
struct GroupIndex {
    spec: GroupSpec,
    /// Alive node holding the degree-one block for each index.
    holder: Vec<Option<NodeId>>,
    /// Nodes whose block has index i as a neighbour; dead entries pruned lazily.
    edges: Vec<Vec<NodeId>>,
    alive_holders: usize,
    lost: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    /// Which of these indices do you hold as a degree-one block?
    Availability { group: u32, indices: Vec<u32> },
    /// Is `index` a neighbour of your block? Reply with your neighbour set.
    EdgeQuery { group: u32, index: u32 },
    /// Send your coded block.
    Fetch { group: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    Holds(Vec<u32>),
    Neighbors(Vec<u32>),
    Block(CodedBlock),
}

/// Repair bookkeeping for one group during one join.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepairSession {
    pub group_seq: u32,
    /// R: unavailable intermediates seen so far.
    pub missing: BTreeSet<u32>,
    /// Q: indices that could not be repaired; always a subset of `missing`.
    pub dead_ends: BTreeSet<u32>,
    pub discovered_edges: BTreeMap<u32, Vec<NodeId>>,
    pub iterations: usize,
    /// R \ Q, in no particular order.
    open: Vec<u32>,
    /// Dense mirror of `missing` and `availability`: bit 0 = in R,
    /// bit 1 = phi known, bit 2 = phi value.
    flags: Vec<u8>,
}

const IN_R: u8 = 1;
const PHI_KNOWN: u8 = 2;
const PHI_SET: u8 = 4;

impl RepairSession {
    pub fn new(group_seq: u32, missing: BTreeSet<u32>) -> Self {
        RepairSession {
            group_seq,
            open: missing.iter().copied().collect(),
            flags: Vec::new(),
            missing,
            dead_ends: BTreeSet::new(),
            discovered_edges: BTreeMap::new(),
            iterations: 0,
        }
    }

    /// phi: availability answers gathered so far.
    pub fn availability(&self) -> BTreeMap<u32, bool> {
        self.flags
            .iter()
            .enumerate()
            .filter(|(_, f)| **f & PHI_KNOWN != 0)
            .map(|(i, f)| (i as u32, f & PHI_SET != 0))
            .collect()
    }

    fn ensure_len(&mut self, n: usize) {
        if self.flags.len() < n {
            self.flags.resize(n, 0);
            for &m in &self.missing {
                self.flags[m as usize] |= IN_R;
            }
        }
    }

    fn flag(&mut self, i: u32) -> &mut u8 {
        &mut self.flags[i as usize]
    }

    fn add_missing(&mut self, i: u32) {
        let f = self.flag(i);
        if *f & IN_R == 0 {
            *f |= IN_R;
            self.missing.insert(i);
            self.open.push(i);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RepairOutcome {
    Repaired {
        index: u32,
        block: CodedBlock,
        transfers: usize,
    },
    FallbackNeeded,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FallbackOutcome {
    Stored {
        index: u32,
        block: CodedBlock,
        transfers: usize,
        decode_attempts: usize,
    },
    GroupLost {
        transfers: usize,
        decode_attempts: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JoinKind {
    /// All neighbours available; stored the XOR.
    Encoded,
    /// Repaired a missing intermediate from an edge block.
    Repaired,
    /// Decoded the whole group and stored a missing intermediate.
    Fallback,
    /// Fallback decoding failed: the group is unrecoverable.
    Lost,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupJoin {
    pub group_seq: u32,
    pub kind: JoinKind,
    /// Coded blocks transferred to the joiner for this group.
    pub blocks: usize,
    pub decode_attempts: usize,
    /// Index stored as a degree-one block after repair or fallback.
    pub claimed: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinReport {
    pub node: NodeId,
    pub groups: Vec<GroupJoin>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChurnReport {
    pub left: Vec<NodeId>,
    pub joins: Vec<JoinReport>,
    pub network_died: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EncodeReport {
    /// Every claim broadcast, including ones that lost a conflict.
    pub claims: Vec<ClaimMessage>,
    pub lost_claims: usize,
    pub systematic: usize,
    pub parity: usize,
    /// Intermediates left unclaimed because the network had fewer than n nodes.
    pub deficit: usize,
}

/// Timing of the decentralized claim race, in logical ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClaimRace {
    /// Start times are uniform in 0..jitter_per_node * alive.
    pub jitter_per_node: u64,
    /// Delivery delay of a claim broadcast.
    pub latency: u64,
}

impl Default for ClaimRace {
    fn default() -> Self {
        ClaimRace {
            jitter_per_node: 16,
            latency: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    mode: PayloadMode,
    nodes: Vec<NodeState>,
    alive: Vec<NodeId>,
    alive_pos: Vec<usize>,
    groups: BTreeMap<u32, GroupIndex>,
}

const DEAD: usize = usize::MAX;

impl Network {
    pub fn new(mode: PayloadMode) -> Self {
        Network {
            mode,
            nodes: Vec::new(),
            alive: Vec::new(),
            alive_pos: Vec::new(),
            groups: BTreeMap::new(),
        }
    }

    /// Network of `count` alive nodes with nothing stored.
    pub fn with_nodes(mode: PayloadMode, count: usize) -> Self {
        let mut net = Network::new(mode);
        for _ in 0..count {
            net.add_node();
        }
        net
    }

    pub fn mode(&self) -> PayloadMode {
        self.mode
    }

    pub fn add_node(&mut self) -> NodeId {
        let id = self.nodes.len() as NodeId;
        self.nodes.push(NodeState {
            id,
            alive: true,
            stored: BTreeMap::new(),
        });
        self.alive_pos.push(self.alive.len());
        self.alive.push(id);
        id
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeState> {
        self.nodes.get(id as usize)
    }

    pub fn alive_count(&self) -> usize {
        self.alive.len()
    }

    pub fn alive_ids(&self) -> &[NodeId] {
        &self.alive
    }

    pub fn is_alive(&self, id: NodeId) -> bool {
        self.nodes.get(id as usize).is_some_and(|n| n.alive)
    }

    pub fn group_seqs(&self) -> Vec<u32> {
        self.groups.keys().copied().collect()
    }

    pub fn group_spec(&self, seq: u32) -> Option<&GroupSpec> {
        self.groups.get(&seq).map(|g| &g.spec)
    }

    pub fn is_group_lost(&self, seq: u32) -> bool {
        self.groups.get(&seq).is_some_and(|g| g.lost)
    }

    /// Alive nodes holding any block of the group.
    pub fn alive_holders(&self, seq: u32) -> usize {
        self.groups.get(&seq).map_or(0, |g| g.alive_holders)
    }

    /// n*: intermediates currently held as degree-one blocks by alive nodes.
    pub fn available_intermediates(&self, seq: u32) -> usize {
        self.groups
            .get(&seq)
            .map_or(0, |g| g.holder.iter().filter(|h| h.is_some()).count())
    }

    pub fn is_available(&self, seq: u32, index: u32) -> bool {
        self.groups
            .get(&seq)
            .and_then(|g| g.holder.get(index as usize).copied().flatten())
            .is_some()
    }

    /// Registers a group with no holders yet. Replaces any older group with the
    /// same sequence number (only the latest enhanced block is valid).
    pub fn register_group(&mut self, spec: GroupSpec) {
        if self.mode == PayloadMode::Full {
            assert!(
                spec.generator.is_some() && spec.intermediates.is_some(),
                "full payload mode needs generator and intermediates"
            );
        }
        self.remove_group(spec.seq);
        let n = spec.n;
        self.groups.insert(
            spec.seq,
            GroupIndex {
                spec,
                holder: vec![None; n],
                edges: vec![Vec::new(); n],
                alive_holders: 0,
                lost: false,
            },
        );
    }

    /// Drops a group and every node's block for it.
    pub fn remove_group(&mut self, seq: u32) {
        if self.groups.remove(&seq).is_some() {
            for node in &mut self.nodes {
                node.stored.remove(&seq);
            }
        }
    }

    /// Stores `block` at `node`, updating the group index.
    pub fn store(&mut self, node: NodeId, block: CodedBlock) {
        let seq = block.group_seq;
        let g = self.groups.get_mut(&seq).expect("registered group");
        if let Some(truth) = &g.spec.intermediates {
            debug_assert!(
                block.is_consistent_with(truth),
                "stored block for group {seq} is not the XOR of its neighbours"
            );
        }
        if let Some(i) = block.single() {
            // Only a replication law (Ω(1) > 0, tiny groups) can produce a
            // second copy; the first holder keeps the claim.
            debug_assert!(
                g.holder[i as usize].is_none() || g.spec.omega.prob(1) > 0.0,
                "intermediate {i} of group {seq} already has a holder"
            );
            if g.holder[i as usize].is_none() {
                g.holder[i as usize] = Some(node);
            }
        }
        for &i in block.neighbors() {
            g.edges[i as usize].push(node);
        }
        g.alive_holders += 1;
        let prev = self.nodes[node as usize].stored.insert(seq, block);
        assert!(prev.is_none(), "node {node} already stores a block for group {seq}");
    }

    /// Adds an alive node that already stores `blocks` (fixtures, bootstrap).
    pub fn insert_node_with(&mut self, blocks: Vec<CodedBlock>) -> NodeId {
        let id = self.add_node();
        for b in blocks {
            self.store(id, b);
        }
        id
    }

    fn payload_of(&self, seq: u32, index: u32) -> BlockVector {
        match &self.groups[&seq].spec.intermediates {
            Some(u) if self.mode == PayloadMode::Full => u[index as usize].clone(),
            _ => BlockVector::default(),
        }
    }

    /// Removes a node; its stored blocks vanish.
    pub fn leave(&mut self, id: NodeId) {
        let pos = self.alive_pos[id as usize];
        if pos == DEAD {
            return;
        }
        self.alive.swap_remove(pos);
        if pos < self.alive.len() {
            let moved = self.alive[pos];
            self.alive_pos[moved as usize] = pos;
        }
        self.alive_pos[id as usize] = DEAD;
        let node = &mut self.nodes[id as usize];
        node.alive = false;
        let stored = std::mem::take(&mut node.stored);
        for (seq, block) in stored {
            if let Some(g) = self.groups.get_mut(&seq) {
                g.alive_holders -= 1;
                if let Some(i) = block.single() {
                    if g.holder[i as usize] == Some(id) {
                        g.holder[i as usize] = None;
                    }
                }
            }
        }
    }

    /// Answers a request on behalf of `holder`. Dead holders, and holders with
    /// nothing relevant, stay silent.
    pub fn serve_request(&self, holder: NodeId, req: &Request) -> Option<Response> {
        let node = self.nodes.get(holder as usize)?;
        if !node.alive {
            return None;
        }
        match req {
            Request::Availability { group, indices } => {
                let single = node.stored.get(group)?.single()?;
                indices.contains(&single).then(|| Response::Holds(vec![single]))
            }
            Request::EdgeQuery { group, index } => {
                let b = node.stored.get(group)?;
                b.contains(*index).then(|| Response::Neighbors(b.neighbors().to_vec()))
            }
            Request::Fetch { group } => node.stored.get(group).map(|b| Response::Block(b.clone())),
        }
    }

    /// phi(u_i): asks the index's holder, if any.
    fn query_available(&self, seq: u32, index: u32) -> bool {
        let Some(holder) = self.groups[&seq].holder[index as usize] else {
            return false;
        };
        matches!(
            self.serve_request(
                holder,
                &Request::Availability {
                    group: seq,
                    indices: vec![index]
                }
            ),
            Some(Response::Holds(_))
        )
    }

    fn fetch(&self, seq: u32, from: NodeId) -> CodedBlock {
        match self.serve_request(from, &Request::Fetch { group: seq }) {
            Some(Response::Block(b)) => b,
            _ => panic!("node {from} cannot serve group {seq}"),
        }
    }

    fn fetch_intermediate(&self, seq: u32, index: u32) -> BlockVector {
        let holder = self.groups[&seq].holder[index as usize].expect("available intermediate");
        self.fetch(seq, holder).payload
    }

    /// Decentralized systematic encoding by claim race. Each alive node claims
    /// the lowest intermediate it has not yet heard claimed; a node that loses a
    /// conflict restarts once it hears the winner. Nodes that find nothing left
    /// to claim store an LT parity block.
    pub fn decentralized_encode<R: Rng + ?Sized>(
        &mut self,
        seq: u32,
        race: ClaimRace,
        rng: &mut R,
    ) -> EncodeReport {
        let alive = self.alive.clone();
        let horizon = (race.jitter_per_node * alive.len() as u64).max(1);
        let starts: Vec<(NodeId, u64)> = alive.iter().map(|&id| (id, rng.gen_range(0..horizon))).collect();
        self.encode_with_start_times(seq, &starts, race.latency, rng)
    }

    /// Claim race with explicit start times.
    pub fn encode_with_start_times<R: Rng + ?Sized>(
        &mut self,
        seq: u32,
        starts: &[(NodeId, u64)],
        latency: u64,
        rng: &mut R,
    ) -> EncodeReport {
        let n = self.groups[&seq].spec.n;
        let mut report = EncodeReport::default();
        let mut queue: BinaryHeap<Reverse<(u64, NodeId)>> =
            starts.iter().map(|&(id, t)| Reverse((t, id))).collect();
        let mut board: Vec<Option<ClaimMessage>> = vec![None; n];
        let mut unheard: BTreeSet<u32> = (0..n as u32).collect();
        let mut in_flight: std::collections::VecDeque<ClaimMessage> = Default::default();
        let mut parity_nodes = Vec::new();

        while let Some(Reverse((t, id))) = queue.pop() {
            while in_flight.front().is_some_and(|c| c.timestamp + latency <= t) {
                let c = in_flight.pop_front().unwrap();
                unheard.remove(&c.index);
            }
            let Some(&index) = unheard.iter().next() else {
                parity_nodes.push(id);
                continue;
            };
            let claim = ClaimMessage {
                group_seq: seq,
                index,
                claimer: id,
                timestamp: t,
            };
            report.claims.push(claim);
            match board[index as usize] {
                Some(winner) if winner.precedes(&claim) => {
                    report.lost_claims += 1;
                    queue.push(Reverse(((winner.timestamp + latency).max(t + 1), id)));
                }
                _ => {
                    board[index as usize] = Some(claim);
                    in_flight.push_back(claim);
                }
            }
        }

        for claim in board.iter().flatten() {
            let payload = self.payload_of(seq, claim.index);
            self.store(claim.claimer, CodedBlock::systematic(seq, claim.index, payload));
            report.systematic += 1;
        }
        report.deficit = n - report.systematic;
        parity_nodes.sort_unstable();
        for id in parity_nodes {
            let block = self.parity_block(seq, rng);
            self.store(id, block);
            report.parity += 1;
        }
        report
    }

    /// Statistically equivalent outcome of the claim race without simulating
    /// it: a random n of the alive nodes hold the intermediates, the rest hold
    /// parity blocks.
    pub fn assign_encoding<R: Rng + ?Sized>(&mut self, seq: u32, rng: &mut R) -> EncodeReport {
        let n = self.groups[&seq].spec.n;
        let mut order = self.alive.clone();
        order.shuffle(rng);
        let mut report = EncodeReport::default();
        for (pos, id) in order.into_iter().enumerate() {
            let block = if pos < n {
                report.systematic += 1;
                CodedBlock::systematic(seq, pos as u32, self.payload_of(seq, pos as u32))
            } else {
                report.parity += 1;
                self.parity_block(seq, rng)
            };
            self.store(id, block);
        }
        report.deficit = n.saturating_sub(report.systematic);
        report
    }

    fn parity_block<R: Rng + ?Sized>(&self, seq: u32, rng: &mut R) -> CodedBlock {
        let spec = &self.groups[&seq].spec;
        let neighbors = draw_neighbors(&spec.omega, spec.n, rng);
        self.combine(seq, neighbors)
    }

    fn combine(&self, seq: u32, neighbors: Vec<u32>) -> CodedBlock {
        let mut payload = BlockVector::default();
        if self.mode == PayloadMode::Full {
            let u = self.groups[&seq].spec.intermediates.as_ref().unwrap();
            payload = u[neighbors[0] as usize].clone();
            for &i in &neighbors[1..] {
                payload.xor_assign(&u[i as usize]);
            }
        }
        CodedBlock::new(seq, neighbors, payload)
    }

    /// A new node joins: for every live group it encodes, repairs, or falls
    /// back to a full decode.
    pub fn join_node<R: Rng + ?Sized>(&mut self, rng: &mut R, schedule: &EpsilonSchedule) -> JoinReport {
        let id = self.add_node();
        let seqs: Vec<u32> = self.groups.iter().filter(|(_, g)| !g.lost).map(|(s, _)| *s).collect();
        let mut groups = Vec::with_capacity(seqs.len());
        for seq in seqs {
            groups.push(self.join_group(id, seq, rng, schedule));
        }
        JoinReport { node: id, groups }
    }

    fn join_group<R: Rng + ?Sized>(
        &mut self,
        id: NodeId,
        seq: u32,
        rng: &mut R,
        schedule: &EpsilonSchedule,
    ) -> GroupJoin {
        let spec = &self.groups[&seq].spec;
        let neighbors = draw_neighbors(&spec.omega, spec.n, rng);
        let missing: BTreeSet<u32> = neighbors
            .iter()
            .copied()
            .filter(|&i| !self.query_available(seq, i))
            .collect();

        if missing.is_empty() {
            let blocks = neighbors.len();
            let block = if self.mode == PayloadMode::Full {
                let mut payload = self.fetch_intermediate(seq, neighbors[0]);
                for &i in &neighbors[1..] {
                    payload.xor_assign(&self.fetch_intermediate(seq, i));
                }
                CodedBlock::new(seq, neighbors, payload)
            } else {
                CodedBlock::new(seq, neighbors, BlockVector::default())
            };
            self.store(id, block);
            return GroupJoin {
                group_seq: seq,
                kind: JoinKind::Encoded,
                blocks,
                decode_attempts: 0,
                claimed: None,
            };
        }

        let mut session = RepairSession::new(seq, missing);
        match self.repair_intermediate(id, &mut session, rng) {
            RepairOutcome::Repaired {
                index,
                block,
                transfers,
            } => {
                self.store(id, block);
                GroupJoin {
                    group_seq: seq,
                    kind: JoinKind::Repaired,
                    blocks: transfers,
                    decode_attempts: 0,
                    claimed: Some(index),
                }
            }
            RepairOutcome::FallbackNeeded => match self.group_decode_fallback(id, &session, schedule, rng) {
                FallbackOutcome::Stored {
                    index,
                    block,
                    transfers,
                    decode_attempts,
                } => {
                    self.store(id, block);
                    GroupJoin {
                        group_seq: seq,
                        kind: JoinKind::Fallback,
                        blocks: transfers,
                        decode_attempts,
                        claimed: Some(index),
                    }
                }
                FallbackOutcome::GroupLost {
                    transfers,
                    decode_attempts,
                } => {
                    self.groups.get_mut(&seq).unwrap().lost = true;
                    GroupJoin {
                        group_seq: seq,
                        kind: JoinKind::Lost,
                        blocks: transfers,
                        decode_attempts,
                        claimed: None,
                    }
                }
            },
        }
    }

    /// Alive edge holders of `index`, with their neighbour sets, excluding `asker`.
    fn edge_responses(&mut self, asker: NodeId, seq: u32, index: u32) -> Vec<(NodeId, Vec<u32>)> {
        let nodes = &self.nodes;
        let g = self.groups.get_mut(&seq).unwrap();
        g.edges[index as usize].retain(|&x| nodes[x as usize].alive);
        let candidates = g.edges[index as usize].clone();
        let req = Request::EdgeQuery { group: seq, index };
        candidates
            .into_iter()
            .filter(|&x| x != asker)
            .filter_map(|x| match self.serve_request(x, &req) {
                Some(Response::Neighbors(nb)) => Some((x, nb)),
                _ => None,
            })
            .collect()
    }

    /// Tries to repair one intermediate in R \ Q from an edge block whose other
    /// neighbours are all available, growing R and Q on each dead end.
    pub fn repair_intermediate<R: Rng + ?Sized>(
        &mut self,
        asker: NodeId,
        session: &mut RepairSession,
        rng: &mut R,
    ) -> RepairOutcome {
        let seq = session.group_seq;
        session.ensure_len(self.groups[&seq].spec.n);
        loop {
            if session.open.is_empty() {
                return RepairOutcome::FallbackNeeded;
            }
            session.iterations += 1;
            let pick = rng.gen_range(0..session.open.len());
            let target = session.open.swap_remove(pick);
            let responders = self.edge_responses(asker, seq, target);
            session
                .discovered_edges
                .insert(target, responders.iter().map(|(x, _)| *x).collect());

            let mut best: Option<(usize, NodeId, Vec<u32>)> = None;
            for (x, nb) in &responders {
                let mut ok = true;
                for &o in nb.iter().filter(|&&o| o != target) {
                    let f = *session.flag(o);
                    let avail = if f & PHI_KNOWN != 0 {
                        f & PHI_SET != 0
                    } else {
                        let a = self.query_available(seq, o);
                        *session.flag(o) |= PHI_KNOWN | if a { PHI_SET } else { 0 };
                        a
                    };
                    if !avail {
                        ok = false;
                        session.add_missing(o);
                    }
                }
                if ok && best.as_ref().is_none_or(|(d, _, _)| nb.len() < *d) {
                    best = Some((nb.len(), *x, nb.clone()));
                }
            }

            if let Some((degree, edge_node, nb)) = best {
                let block = if self.mode == PayloadMode::Full {
                    let edge = self.fetch(seq, edge_node);
                    let others: BTreeMap<u32, BlockVector> = nb
                        .iter()
                        .filter(|&&o| o != target)
                        .map(|&o| (o, self.fetch_intermediate(seq, o)))
                        .collect();
                    let u = repair_from_edge(target, &edge, &others).expect("all other neighbours available");
                    CodedBlock::systematic(seq, target, u)
                } else {
                    CodedBlock::systematic(seq, target, BlockVector::default())
                };
                return RepairOutcome::Repaired {
                    index: target,
                    block,
                    transfers: degree,
                };
            }
            session.dead_ends.insert(target);
        }
    }

    /// Collects ceil((1+eps) k) distinct coded blocks at each eps of the
    /// schedule, then everything alive, and decodes. On success the joiner
    /// stores the smallest still-missing index of R.
    pub fn group_decode_fallback<R: Rng + ?Sized>(
        &mut self,
        asker: NodeId,
        session: &RepairSession,
        schedule: &EpsilonSchedule,
        rng: &mut R,
    ) -> FallbackOutcome {
        let seq = session.group_seq;
        let k = self.groups[&seq].spec.k;
        let mut holders: Vec<NodeId> = self
            .alive
            .iter()
            .copied()
            .filter(|&x| x != asker && self.nodes[x as usize].stored.contains_key(&seq))
            .collect();
        if holders.len() < k {
            return FallbackOutcome::GroupLost {
                transfers: 0,
                decode_attempts: 0,
            };
        }
        holders.sort_unstable();
        holders.shuffle(rng);

        let mut sizes: Vec<usize> = schedule
            .0
            .iter()
            .map(|e| (((1.0 + e) * k as f64).ceil() as usize).min(holders.len()))
            .collect();
        sizes.push(holders.len());
        sizes.dedup();

        let mut attempts = 0;
        for take in sizes {
            attempts += 1;
            let picked = &holders[..take];
            if let Some(originals) = self.try_decode(seq, picked) {
                let index = session
                    .missing
                    .iter()
                    .copied()
                    .find(|&i| !self.is_available(seq, i))
                    .expect("R holds an unavailable index");
                let payload = match originals {
                    Some(orig) => {
                        let g = self.groups[&seq].spec.generator.as_ref().unwrap();
                        precode_column(&orig, g, index as usize).expect("decoded originals match generator")
                    }
                    None => BlockVector::default(),
                };
                return FallbackOutcome::Stored {
                    index,
                    block: CodedBlock::systematic(seq, index, payload),
                    transfers: take,
                    decode_attempts: attempts,
                };
            }
            if take == holders.len() {
                return FallbackOutcome::GroupLost {
                    transfers: take,
                    decode_attempts: attempts,
                };
            }
        }
        unreachable!("the last attempt uses every holder")
    }

    /// Decodes from the given holders. `Some(Some(originals))` in full mode,
    /// `Some(None)` for a structural success, `None` on failure.
    fn try_decode(&self, seq: u32, from: &[NodeId]) -> Option<Option<Vec<BlockVector>>> {
        let spec = &self.groups[&seq].spec;
        match self.mode {
            PayloadMode::Structural => {
                let neighbors: Vec<&[u32]> = from
                    .iter()
                    .map(|&x| self.nodes[x as usize].stored[&seq].neighbors())
                    .collect();
                (peel_count(&neighbors, spec.n) >= spec.k).then_some(None)
            }
            PayloadMode::Full => {
                let coded: Vec<CodedBlock> = from.iter().map(|&x| self.fetch(seq, x)).collect();
                match raptor_decode(&coded, spec.generator.as_ref().unwrap()) {
                    Ok(RaptorOutcome::Decoded(orig)) => Some(Some(orig)),
                    _ => None,
                }
            }
        }
    }

    /// Can a node that collects every alive block of the group decode it?
    pub fn probe_decode(&self, seq: u32) -> bool {
        let Some(g) = self.groups.get(&seq) else {
            return false;
        };
        if g.lost || g.alive_holders < g.spec.k {
            return false;
        }
        let from: Vec<NodeId> = self
            .alive
            .iter()
            .copied()
            .filter(|&x| self.nodes[x as usize].stored.contains_key(&seq))
            .collect();
        self.try_decode(seq, &from).is_some()
    }

    /// Full decode of a group's originals from every alive holder (full mode).
    pub fn decode_group(&self, seq: u32) -> Option<Vec<BlockVector>> {
        let from: Vec<NodeId> = self
            .alive
            .iter()
            .copied()
            .filter(|&x| self.nodes[x as usize].stored.contains_key(&seq))
            .collect();
        self.try_decode(seq, &from).flatten()
    }

    /// One epoch of churn: Poisson leaves (uniform over alive nodes), then
    /// Poisson joins running the NMA.
    pub fn churn_step<R: Rng + ?Sized>(
        &mut self,
        churn: &ChurnModel,
        rng: &mut R,
        schedule: &EpsilonSchedule,
    ) -> ChurnReport {
        let leaves = sample_poisson(rng, churn.lambda_leave) as usize;
        let joins = sample_poisson(rng, churn.lambda_join) as usize;
        self.churn_counts(leaves, joins, rng, schedule)
    }

    /// One epoch with given leave and join counts.
    pub fn churn_counts<R: Rng + ?Sized>(
        &mut self,
        leaves: usize,
        joins: usize,
        rng: &mut R,
        schedule: &EpsilonSchedule,
    ) -> ChurnReport {
        let mut left = Vec::with_capacity(leaves.min(self.alive.len()));
        if leaves >= self.alive.len() {
            let all = self.alive.clone();
            for id in all {
                self.leave(id);
                left.push(id);
            }
            return ChurnReport {
                left,
                joins: Vec::new(),
                network_died: true,
            };
        }
        for _ in 0..leaves {
            let id = self.alive[rng.gen_range(0..self.alive.len())];
            self.leave(id);
            left.push(id);
        }
        let joins = (0..joins).map(|_| self.join_node(rng, schedule)).collect();
        ChurnReport {
            left,
            joins,
            network_died: false,
        }
    }

    /// Checks the single-claimant and payload invariants over the whole network.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (seq, g) in &self.groups {
            let mut seen = vec![None; g.spec.n];
            let mut holders = 0;
            for &id in &self.alive {
                let Some(b) = self.nodes[id as usize].stored.get(seq) else {
                    continue;
                };
                holders += 1;
                if let Some(i) = b.single() {
                    match seen[i as usize] {
                        Some(prev) if g.spec.omega.prob(1) == 0.0 => {
                            return Err(format!("group {seq}: index {i} held by {prev} and {id}"));
                        }
                        Some(_) => {}
                        None => seen[i as usize] = Some(id),
                    }
                }
                if let (PayloadMode::Full, Some(u)) = (self.mode, &g.spec.intermediates) {
                    if !b.is_consistent_with(u) {
                        return Err(format!("group {seq}: node {id} payload unsound"));
                    }
                }
            }
            if g.spec.omega.prob(1) == 0.0 && seen != g.holder {
                return Err(format!("group {seq}: holder index out of sync"));
            }
            if holders != g.alive_holders {
                return Err(format!("group {seq}: holder count {} != {holders}", g.alive_holders));
            }
        }
        Ok(())
    }
}
