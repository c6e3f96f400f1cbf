//! Chain data model: plain and enhanced block headers, the block pool of
//! confirmed-but-unencoded heights, enhanced-block mining and verification,
//! and the re-mining rule.

use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest as _, Sha256};

use crate::error::{CodecError, LedgerError};
use crate::field::{BlockVector, CodecConfig, FieldSymbol};
use crate::precode::{build_systematic_generator, precode_encode, GeneratorMatrix};

pub type Digest = [u8; 32];

pub fn sha256(bytes: &[u8]) -> Digest {
    Sha256::digest(bytes).into()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockHeader {
    pub height: u64,
    pub prev_hash: Digest,
    pub merkle_root: Digest,
    /// Epoch index.
    pub timestamp: u64,
}

impl BlockHeader {
    pub fn genesis() -> Self {
        BlockHeader {
            height: 0,
            prev_hash: [0; 32],
            merkle_root: sha256(&0u64.to_le_bytes()),
            timestamp: 0,
        }
    }

    /// The next block on top of `self`. Block contents are opaque, so the
    /// merkle root is a digest of the height.
    pub fn child(&self, timestamp: u64) -> Self {
        let height = self.height + 1;
        BlockHeader {
            height,
            prev_hash: self.hash(),
            merkle_root: sha256(&height.to_le_bytes()),
            timestamp,
        }
    }

    pub fn preimage(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(80);
        v.extend_from_slice(&self.height.to_le_bytes());
        v.extend_from_slice(&self.prev_hash);
        v.extend_from_slice(&self.merkle_root);
        v.extend_from_slice(&self.timestamp.to_le_bytes());
        v
    }

    pub fn hash(&self) -> Digest {
        sha256(&self.preimage())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnhancedBlockHeader {
    pub base: BlockHeader,
    pub group_seq: u32,
    /// Sorted heights of the group's original blocks.
    pub group_indices: Vec<u64>,
    pub generator: GeneratorMatrix,
    /// Digests of intermediates k..n.
    pub nonsys_hashes: Vec<Digest>,
}

impl EnhancedBlockHeader {
    pub fn k(&self) -> usize {
        self.group_indices.len()
    }

    pub fn n(&self) -> usize {
        self.generator.n()
    }

    pub fn preimage(&self) -> Vec<u8> {
        let mut v = self.base.preimage();
        v.extend_from_slice(&self.group_seq.to_le_bytes());
        for &h in &self.group_indices {
            v.extend_from_slice(&(h as u32).to_le_bytes());
        }
        v.extend_from_slice(&self.generator.to_bytes());
        for d in &self.nonsys_hashes {
            v.extend_from_slice(d);
        }
        v
    }

    pub fn hash(&self) -> Digest {
        sha256(&self.preimage())
    }
}

/// Confirmed heights not yet assigned to any group.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BlockPool {
    heights: BTreeSet<u64>,
}

impl BlockPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.heights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heights.is_empty()
    }

    pub fn contains(&self, h: u64) -> bool {
        self.heights.contains(&h)
    }

    pub fn insert(&mut self, h: u64) -> bool {
        self.heights.insert(h)
    }

    pub fn heights(&self) -> impl Iterator<Item = u64> + '_ {
        self.heights.iter().copied()
    }

    /// The `k` lowest heights.
    pub fn oldest(&self, k: usize) -> Vec<u64> {
        self.heights.iter().take(k).copied().collect()
    }
}

impl FromIterator<u64> for BlockPool {
    fn from_iter<I: IntoIterator<Item = u64>>(iter: I) -> Self {
        BlockPool {
            heights: iter.into_iter().collect(),
        }
    }
}

/// Pool after a group is confirmed: P \ G.
pub fn update_pool(pool: &BlockPool, group: &[u64]) -> Result<BlockPool, LedgerError> {
    if let Some(&h) = group.iter().find(|h| !pool.contains(**h)) {
        return Err(LedgerError::NotInPool(h));
    }
    let g: BTreeSet<u64> = group.iter().copied().collect();
    Ok(BlockPool {
        heights: pool.heights.difference(&g).copied().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainConfig {
    /// Confirmation depth.
    pub alpha: u64,
    /// Blocks per epoch.
    pub beta: u64,
    pub precode_rate: f64,
    /// Shrink factor below which an encoded group is re-mined.
    pub reencode_factor: f64,
}

impl ChainConfig {
    pub fn new(alpha: u64, beta: u64, precode_rate: f64, reencode_factor: f64) -> Result<Self, LedgerError> {
        let cfg = ChainConfig {
            alpha,
            beta,
            precode_rate,
            reencode_factor,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), LedgerError> {
        if self.alpha < 1 {
            return Err(LedgerError::Config("alpha must be >= 1".into()));
        }
        if self.beta < 1 {
            return Err(LedgerError::Config("beta must be >= 1".into()));
        }
        if !(self.precode_rate > 0.0 && self.precode_rate <= 1.0) {
            return Err(LedgerError::Config(format!("precode_rate {} not in (0, 1]", self.precode_rate)));
        }
        if !(self.reencode_factor > 0.0 && self.reencode_factor <= 1.0) {
            return Err(LedgerError::Config(format!(
                "reencode_factor {} not in (0, 1]",
                self.reencode_factor
            )));
        }
        Ok(())
    }
}

/// Source of original block payloads by height.
pub trait BlockStore {
    fn block(&self, height: u64) -> Option<BlockVector>;
}

impl BlockStore for BTreeMap<u64, BlockVector> {
    fn block(&self, height: u64) -> Option<BlockVector> {
        self.get(&height).cloned()
    }
}

/// Deterministic pseudo-random block contents: symbols expanded from
/// SHA-256(seed || height || counter).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticStore {
    pub seed: u64,
    pub symbols: usize,
    pub field_bits: u32,
}

impl BlockStore for SyntheticStore {
    fn block(&self, height: u64) -> Option<BlockVector> {
        let mask = ((1u32 << self.field_bits) - 1) as u16;
        let mut out = Vec::with_capacity(self.symbols);
        let mut counter = 0u64;
        while out.len() < self.symbols {
            let mut pre = Vec::with_capacity(24);
            pre.extend_from_slice(&self.seed.to_le_bytes());
            pre.extend_from_slice(&height.to_le_bytes());
            pre.extend_from_slice(&counter.to_le_bytes());
            let d = sha256(&pre);
            for pair in d.chunks_exact(2) {
                if out.len() == self.symbols {
                    break;
                }
                out.push(FieldSymbol(u16::from_le_bytes([pair[0], pair[1]]) & mask));
            }
            counter += 1;
        }
        Some(BlockVector(out))
    }
}

fn intermediate_digest(u: &BlockVector, symbol_bytes: usize) -> Digest {
    sha256(&u.to_bytes(symbol_bytes))
}

/// A mined enhanced block with the intermediates it commits to.
#[derive(Debug, Clone, PartialEq)]
pub struct MinedGroup {
    pub header: EnhancedBlockHeader,
    pub intermediates: Vec<BlockVector>,
}

fn collect_originals(heights: &[u64], codec: &CodecConfig, store: &dyn BlockStore) -> Result<Vec<BlockVector>, LedgerError> {
    heights
        .iter()
        .map(|&h| {
            let b = store.block(h).ok_or(LedgerError::MissingBlock(h))?;
            if b.len() != codec.symbols {
                return Err(LedgerError::Codec(CodecError::Shape(format!(
                    "block {h} has {} symbols, codec expects {}",
                    b.len(),
                    codec.symbols
                ))));
            }
            Ok(b)
        })
        .collect()
}

/// Forms the next group from the `k_next` oldest pool heights, pre-codes it,
/// and assembles the enhanced header on top of `tip`. Proof of work is not
/// searched.
pub fn mine_enhanced_block(
    pool: &BlockPool,
    k_next: usize,
    group_seq: u32,
    tip: &BlockHeader,
    timestamp: u64,
    codec: &CodecConfig,
    store: &dyn BlockStore,
) -> Result<MinedGroup, LedgerError> {
    if k_next == 0 || pool.len() < k_next {
        return Err(LedgerError::NotReady {
            have: pool.len(),
            need: k_next.max(1),
        });
    }
    let group = pool.oldest(k_next);
    let n = codec.code_length(k_next);
    let generator = build_systematic_generator(k_next, n, codec.field_bits)?;
    let originals = collect_originals(&group, codec, store)?;
    let intermediates = precode_encode(&originals, &generator)?;
    let sb = codec.field()?.symbol_bytes();
    let nonsys_hashes = intermediates[k_next..].iter().map(|u| intermediate_digest(u, sb)).collect();
    Ok(MinedGroup {
        header: EnhancedBlockHeader {
            base: tip.child(timestamp),
            group_seq,
            group_indices: group,
            generator,
            nonsys_hashes,
        },
        intermediates,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectReason {
    Malformed(String),
    PoolTooSmall { have: usize, need: usize },
    UnknownGroupMember(u64),
    HashMismatch { index: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

/// Checks, in order: structure, |pool| >= k, G within the pool, and the
/// recomputed non-systematic intermediate hashes. Reports the first failure.
pub fn verify_enhanced_block(
    candidate: &EnhancedBlockHeader,
    local_pool: &BlockPool,
    codec: &CodecConfig,
    store: &dyn BlockStore,
) -> Verdict {
    use RejectReason::*;
    let k = candidate.k();
    let malformed = |m: String| Verdict::Reject(Malformed(m));
    if k == 0 {
        return malformed("empty group".into());
    }
    if candidate.group_indices.windows(2).any(|w| w[0] >= w[1]) {
        return malformed("group heights not strictly increasing".into());
    }
    if candidate.group_indices.iter().any(|&h| h >= candidate.base.height) {
        return malformed("group height not below the enhanced block".into());
    }
    if candidate.group_indices.iter().any(|&h| h > u32::MAX as u64) {
        return malformed("group height exceeds 32 bits".into());
    }
    let n = codec.code_length(k);
    if candidate.generator.k() != k || candidate.generator.n() != n {
        return malformed(format!(
            "generator is {}x{}, expected {k}x{n}",
            candidate.generator.k(),
            candidate.generator.n()
        ));
    }
    if candidate.nonsys_hashes.len() != n - k {
        return malformed(format!("{} parity hashes, expected {}", candidate.nonsys_hashes.len(), n - k));
    }
    match build_systematic_generator(k, n, codec.field_bits) {
        Ok(g) if g == candidate.generator => {}
        Ok(_) => return malformed("generator differs from the canonical construction".into()),
        Err(e) => return malformed(e.to_string()),
    }
    if local_pool.len() < k {
        return Verdict::Reject(PoolTooSmall {
            have: local_pool.len(),
            need: k,
        });
    }
    if let Some(&h) = candidate.group_indices.iter().find(|h| !local_pool.contains(**h)) {
        return Verdict::Reject(UnknownGroupMember(h));
    }
    let originals = match collect_originals(&candidate.group_indices, codec, store) {
        Ok(o) => o,
        Err(e) => return malformed(e.to_string()),
    };
    let intermediates = match precode_encode(&originals, &candidate.generator) {
        Ok(u) => u,
        Err(e) => return malformed(e.to_string()),
    };
    let sb = match codec.field() {
        Ok(f) => f.symbol_bytes(),
        Err(e) => return malformed(e.to_string()),
    };
    for (j, (u, d)) in intermediates[k..].iter().zip(&candidate.nonsys_hashes).enumerate() {
        if intermediate_digest(u, sb) != *d {
            return Verdict::Reject(HashMismatch { index: k + j });
        }
    }
    Verdict::Accept
}

/// Enhanced block at height h is confirmed once the tip is α blocks deeper.
pub fn confirmation_check(enhanced: &EnhancedBlockHeader, tip_height: u64, alpha: u64) -> bool {
    tip_height >= enhanced.base.height + alpha
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemineDecision {
    Keep,
    Reencode,
}

/// For a group encoded at least γ epochs ago: re-encode iff the network has
/// shrunk below `reencode_factor` times its size at encoding.
pub fn remine_decision(current_nodes: usize, nodes_at_encoding: usize, cfg: &ChainConfig) -> RemineDecision {
    if (current_nodes as f64) < cfg.reencode_factor * nodes_at_encoding as f64 {
        RemineDecision::Reencode
    } else {
        RemineDecision::Keep
    }
}

/// An encoded (confirmed) group.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfirmedGroup {
    pub seq: u32,
    pub heights: Vec<u64>,
    pub n: usize,
    pub enhanced_height: u64,
    pub encoded_epoch: u64,
    pub nodes_at_encoding: usize,
}

/// One canonical chain with its pool and group bookkeeping. Enhanced blocks
/// are kept replicated (they carry the decoding parameters) and never enter
/// the pool.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub cfg: ChainConfig,
    headers: Vec<BlockHeader>,
    pool: BlockPool,
    /// Confirmed regular heights not yet in the pool: the next to confirm.
    next_unconfirmed: u64,
    /// Mined, not yet confirmed: enhanced height -> header.
    pending: BTreeMap<u64, EnhancedBlockHeader>,
    /// Heights committed to by pending enhanced blocks.
    reserved: BTreeSet<u64>,
    enhanced_heights: BTreeSet<u64>,
    groups: BTreeMap<u32, ConfirmedGroup>,
    /// Sequence numbers waiting to be re-mined, smallest first.
    remine: BTreeSet<u32>,
    next_seq: u32,
}

impl ChainState {
    /// A chain whose first `initial_blocks` heights (1..=initial_blocks) are
    /// confirmed and pooled. Height 0 is the genesis header.
    pub fn new(cfg: ChainConfig, initial_blocks: u64) -> Result<Self, LedgerError> {
        cfg.validate()?;
        let mut headers = vec![BlockHeader::genesis()];
        for _ in 0..initial_blocks {
            let next = headers.last().unwrap().child(0);
            headers.push(next);
        }
        Ok(ChainState {
            cfg,
            headers,
            pool: (1..=initial_blocks).collect(),
            next_unconfirmed: initial_blocks + 1,
            pending: BTreeMap::new(),
            reserved: BTreeSet::new(),
            enhanced_heights: BTreeSet::new(),
            groups: BTreeMap::new(),
            remine: BTreeSet::new(),
            next_seq: 1,
        })
    }

    pub fn tip(&self) -> &BlockHeader {
        self.headers.last().unwrap()
    }

    /// W: number of blocks after genesis.
    pub fn length(&self) -> u64 {
        self.tip().height
    }

    pub fn header(&self, height: u64) -> Option<&BlockHeader> {
        self.headers.get(height as usize)
    }

    pub fn pool(&self) -> &BlockPool {
        &self.pool
    }

    pub fn groups(&self) -> &BTreeMap<u32, ConfirmedGroup> {
        &self.groups
    }

    pub fn pending(&self) -> impl Iterator<Item = &EnhancedBlockHeader> {
        self.pending.values()
    }

    pub fn encoded_total(&self) -> u64 {
        self.groups.values().map(|g| g.heights.len() as u64).sum()
    }

    /// Sequence number the next enhanced block will carry.
    pub fn next_group_seq(&self) -> u32 {
        self.remine.iter().next().copied().unwrap_or(self.next_seq)
    }

    pub fn awaiting_remine(&self) -> &BTreeSet<u32> {
        &self.remine
    }

    /// Appends a regular block and returns enhanced blocks that became
    /// confirmed with it.
    pub fn append_block(&mut self, timestamp: u64) -> Vec<EnhancedBlockHeader> {
        let next = self.tip().child(timestamp);
        self.headers.push(next);
        self.advance_confirmations()
    }

    /// Appends a mined enhanced block (its base must extend the tip).
    pub fn append_enhanced(&mut self, header: EnhancedBlockHeader) -> Result<Vec<EnhancedBlockHeader>, LedgerError> {
        if header.base.prev_hash != self.tip().hash() || header.base.height != self.tip().height + 1 {
            return Err(LedgerError::Config("enhanced block does not extend the tip".into()));
        }
        for &h in &header.group_indices {
            if !self.pool.contains(h) {
                return Err(LedgerError::NotInPool(h));
            }
        }
        let new_pool = update_pool(&self.pool, &header.group_indices)?;
        self.pool = new_pool;
        self.reserved.extend(header.group_indices.iter().copied());
        if !self.remine.remove(&header.group_seq) {
            debug_assert_eq!(header.group_seq, self.next_seq);
            self.next_seq += 1;
        }
        self.enhanced_heights.insert(header.base.height);
        self.headers.push(header.base.clone());
        self.pending.insert(header.base.height, header);
        Ok(self.advance_confirmations())
    }

    fn advance_confirmations(&mut self) -> Vec<EnhancedBlockHeader> {
        let tip = self.tip().height;
        while self.next_unconfirmed + self.cfg.alpha <= tip {
            let h = self.next_unconfirmed;
            if !self.enhanced_heights.contains(&h) {
                self.pool.insert(h);
            }
            self.next_unconfirmed += 1;
        }
        let ready: Vec<u64> = self
            .pending
            .values()
            .filter(|e| confirmation_check(e, tip, self.cfg.alpha))
            .map(|e| e.base.height)
            .collect();
        let mut out = Vec::new();
        for h in ready {
            let e = self.pending.remove(&h).unwrap();
            for g in &e.group_indices {
                self.reserved.remove(g);
            }
            out.push(e);
        }
        out
    }

    /// Records that a confirmed enhanced block's group is now encoded.
    pub fn record_encoded(&mut self, header: &EnhancedBlockHeader, epoch: u64, nodes: usize) {
        self.groups.insert(
            header.group_seq,
            ConfirmedGroup {
                seq: header.group_seq,
                heights: header.group_indices.clone(),
                n: header.n(),
                enhanced_height: header.base.height,
                encoded_epoch: epoch,
                nodes_at_encoding: nodes,
            },
        );
    }

    /// Puts a group's heights back in the pool; the next enhanced block
    /// reuses its sequence number.
    pub fn release_group(&mut self, seq: u32) -> Option<ConfirmedGroup> {
        let g = self.groups.remove(&seq)?;
        for &h in &g.heights {
            self.pool.insert(h);
        }
        self.remine.insert(seq);
        Some(g)
    }

    /// Confirmed groups, pending groups, the pool, enhanced blocks and the
    /// unconfirmed suffix partition heights 1..=W.
    pub fn check_partition(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        let mut add = |h: u64, what: &str| -> Result<(), String> {
            if !seen.insert(h) {
                return Err(format!("height {h} counted twice ({what})"));
            }
            Ok(())
        };
        for g in self.groups.values() {
            for &h in &g.heights {
                add(h, "group")?;
            }
        }
        for &h in &self.reserved {
            add(h, "pending group")?;
        }
        for h in self.pool.heights() {
            add(h, "pool")?;
        }
        for &h in &self.enhanced_heights {
            add(h, "enhanced")?;
        }
        for h in self.next_unconfirmed..=self.length() {
            if !self.enhanced_heights.contains(&h) {
                add(h, "unconfirmed")?;
            }
        }
        let w = self.length();
        if seen.len() as u64 != w || seen.iter().next().is_some_and(|&h| h != 1) || seen.last().is_some_and(|&h| h != w) {
            return Err(format!("partition covers {} heights, chain has {w}", seen.len()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn codec(rate: f64) -> CodecConfig {
        CodecConfig::new(16, 4, rate).unwrap()
    }

    fn store() -> SyntheticStore {
        SyntheticStore {
            seed: 3,
            symbols: 4,
            field_bits: 16,
        }
    }

    fn tip_at(height: u64) -> BlockHeader {
        let mut h = BlockHeader::genesis();
        for _ in 0..height {
            h = h.child(0);
        }
        h
    }

    #[test]
    fn header_hash_chains() {
        let g = BlockHeader::genesis();
        let c = g.child(5);
        assert_eq!(c.prev_hash, g.hash());
        assert_eq!(c.height, 1);
        assert_eq!(g.preimage().len(), 80);
        assert_ne!(c.hash(), g.hash());
    }

    #[test]
    fn exact_pool_becomes_group() {
        let pool: BlockPool = (1..=6).collect();
        let m = mine_enhanced_block(&pool, 6, 1, &tip_at(10), 1, &codec(0.8), &store()).unwrap();
        assert_eq!(m.header.group_indices, vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(m.header.n(), 8);
        assert_eq!(m.header.nonsys_hashes.len(), 2);
        assert_eq!(m.intermediates.len(), 8);
    }

    #[test]
    fn oldest_heights_first() {
        let pool: BlockPool = [9, 3, 7, 1, 5].into_iter().collect();
        let m = mine_enhanced_block(&pool, 3, 1, &tip_at(10), 1, &codec(0.8), &store()).unwrap();
        assert_eq!(m.header.group_indices, vec![1, 3, 5]);
    }

    #[test]
    fn rate_one_has_no_parity() {
        let pool: BlockPool = (1..=5).collect();
        let m = mine_enhanced_block(&pool, 5, 1, &tip_at(10), 1, &codec(1.0), &store()).unwrap();
        assert_eq!(m.header.n(), 5);
        assert!(m.header.nonsys_hashes.is_empty());
    }

    #[test]
    fn pool_too_small_is_not_ready() {
        let pool: BlockPool = (1..=3).collect();
        assert_eq!(
            mine_enhanced_block(&pool, 4, 1, &tip_at(10), 1, &codec(0.8), &store()),
            Err(LedgerError::NotReady { have: 3, need: 4 })
        );
    }

    #[test]
    fn verify_accepts_own_output_and_catches_tampering() {
        let pool: BlockPool = (1..=12).collect();
        let c = codec(0.8);
        let m = mine_enhanced_block(&pool, 10, 2, &tip_at(20), 1, &c, &store()).unwrap();
        assert_eq!(verify_enhanced_block(&m.header, &pool, &c, &store()), Verdict::Accept);

        let mut bad = m.header.clone();
        bad.nonsys_hashes[1][7] ^= 1;
        assert_eq!(
            verify_enhanced_block(&bad, &pool, &c, &store()),
            Verdict::Reject(RejectReason::HashMismatch { index: 11 })
        );

        let small: BlockPool = (1..=9).collect();
        assert_eq!(
            verify_enhanced_block(&m.header, &small, &c, &store()),
            Verdict::Reject(RejectReason::PoolTooSmall { have: 9, need: 10 })
        );

        let other: BlockPool = (2..=13).collect();
        assert_eq!(
            verify_enhanced_block(&m.header, &other, &c, &store()),
            Verdict::Reject(RejectReason::UnknownGroupMember(1))
        );

        let mut unsorted = m.header.clone();
        unsorted.group_indices.swap(0, 1);
        assert!(matches!(
            verify_enhanced_block(&unsorted, &pool, &c, &store()),
            Verdict::Reject(RejectReason::Malformed(_))
        ));
    }

    #[test]
    fn any_symbol_mutation_of_parity_intermediate_is_detected() {
        let pool: BlockPool = (1..=8).collect();
        let c = codec(0.5);
        let m = mine_enhanced_block(&pool, 8, 1, &tip_at(9), 1, &c, &store()).unwrap();
        let sb = 2;
        for j in 8..16 {
            for s in 0..4 {
                let mut u = m.intermediates[j].clone();
                u.0[s].0 ^= 1 << (s * 3);
                assert_ne!(intermediate_digest(&u, sb), m.header.nonsys_hashes[j - 8]);
            }
        }
    }

    #[test]
    fn enhanced_preimage_layout() {
        let pool: BlockPool = (1..=4).collect();
        let m = mine_enhanced_block(&pool, 4, 7, &tip_at(5), 2, &codec(0.8), &store()).unwrap();
        let h = &m.header;
        let pre = h.preimage();
        let gbytes = h.generator.to_bytes();
        assert_eq!(pre.len(), 80 + 4 + 4 * 4 + gbytes.len() + 32);
        assert_eq!(&pre[80..84], &7u32.to_le_bytes());
        assert_eq!(&pre[84..88], &1u32.to_le_bytes());
        assert_eq!(&pre[100..100 + gbytes.len()], &gbytes[..]);
        assert_eq!(h.hash(), sha256(&pre));
    }

    #[test]
    fn pool_updates() {
        let pool: BlockPool = (1..=10).collect();
        let all: Vec<u64> = (1..=10).collect();
        assert!(update_pool(&pool, &all).unwrap().is_empty());
        assert_eq!(update_pool(&pool, &[]).unwrap(), pool);
        let g: Vec<u64> = (1..=5).collect();
        assert_eq!(update_pool(&pool, &g).unwrap(), (6..=10).collect());
        assert_eq!(update_pool(&pool, &[11]), Err(LedgerError::NotInPool(11)));
    }

    #[test]
    fn confirmation_depth_boundary() {
        let pool: BlockPool = (1..=4).collect();
        let m = mine_enhanced_block(&pool, 4, 1, &tip_at(10), 1, &codec(0.8), &store()).unwrap();
        assert!(!confirmation_check(&m.header, 11 + 5, 6));
        assert!(confirmation_check(&m.header, 11 + 6, 6));
        assert!(ChainConfig::new(0, 10, 0.8, 1.0).is_err());
        assert!(ChainConfig::new(1, 0, 0.8, 1.0).is_err());
        assert!(ChainConfig::new(1, 1, 0.8, 1.1).is_err());
    }

    #[test]
    fn remine_thresholds() {
        let strict = ChainConfig::new(1, 1, 0.8, 1.0).unwrap();
        assert_eq!(remine_decision(4999, 5000, &strict), RemineDecision::Reencode);
        assert_eq!(remine_decision(5000, 5000, &strict), RemineDecision::Keep);
        let loose = ChainConfig::new(1, 1, 0.8, 0.7).unwrap();
        assert_eq!(remine_decision(8000, 10000, &loose), RemineDecision::Keep);
        assert_eq!(remine_decision(7000, 10000, &loose), RemineDecision::Keep);
        assert_eq!(remine_decision(6999, 10000, &loose), RemineDecision::Reencode);
    }

    #[test]
    fn chain_state_lifecycle() {
        let cfg = ChainConfig::new(3, 4, 0.8, 1.0).unwrap();
        let mut chain = ChainState::new(cfg, 20).unwrap();
        chain.check_partition().unwrap();
        let c = codec(0.8);
        let m = mine_enhanced_block(chain.pool(), 8, chain.next_group_seq(), chain.tip(), 1, &c, &store()).unwrap();
        assert_eq!(verify_enhanced_block(&m.header, chain.pool(), &c, &store()), Verdict::Accept);
        let h = m.header.clone();
        assert!(chain.append_enhanced(m.header).unwrap().is_empty());
        assert_eq!(chain.pool().len(), 12);
        chain.check_partition().unwrap();
        // A second group cannot reuse reserved heights.
        let m2 = mine_enhanced_block(chain.pool(), 8, chain.next_group_seq(), chain.tip(), 1, &c, &store()).unwrap();
        assert_eq!(m2.header.group_seq, 2);
        assert_eq!(m2.header.group_indices[0], 9);
        assert!(chain.append_block(1).is_empty());
        assert!(chain.append_block(1).is_empty());
        let confirmed = chain.append_block(1);
        assert_eq!(confirmed, vec![h.clone()]);
        chain.record_encoded(&h, 1, 50);
        assert_eq!(chain.encoded_total(), 8);
        chain.check_partition().unwrap();
        // Regular blocks after the initial ones confirm at depth alpha.
        for _ in 0..5 {
            chain.append_block(2);
        }
        chain.check_partition().unwrap();
        let released = chain.release_group(1).unwrap();
        assert_eq!(released.heights, h.group_indices);
        assert_eq!(chain.next_group_seq(), 1);
        chain.check_partition().unwrap();
        let again = mine_enhanced_block(chain.pool(), 6, chain.next_group_seq(), chain.tip(), 3, &c, &store()).unwrap();
        assert_eq!(again.header.group_seq, 1);
        assert_eq!(again.header.group_indices, (1..=6).collect::<Vec<_>>());
        chain.append_enhanced(again.header).unwrap();
        assert_eq!(chain.next_group_seq(), 2);
        chain.check_partition().unwrap();
    }

    #[test]
    fn synthetic_store_is_deterministic_and_in_field() {
        let s = SyntheticStore { seed: 1, symbols: 40, field_bits: 8 };
        let a = s.block(17).unwrap();
        assert_eq!(a, s.block(17).unwrap());
        assert_ne!(a, s.block(18).unwrap());
        assert!(a.0.iter().all(|x| x.0 < 256));
    }
}
