//! LT layer of the raptor code: coded blocks, encoding, peeling and repair.
//!
//! Intermediate indices are zero-based throughout (0..n).

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::degree::DegreeDistribution;
use crate::error::LtError;
use crate::field::BlockVector;
use crate::precode::{precode_decode, GeneratorMatrix};

/// XOR of a neighbour set of intermediate blocks, plus the set itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodedBlock {
    pub group_seq: u32,
    neighbors: Vec<u32>,
    pub payload: BlockVector,
}

impl CodedBlock {
    /// `neighbors` is sorted and deduplicated here; it must be nonempty.
    pub fn new(group_seq: u32, mut neighbors: Vec<u32>, payload: BlockVector) -> Self {
        neighbors.sort_unstable();
        neighbors.dedup();
        assert!(!neighbors.is_empty(), "coded block needs at least one neighbour");
        CodedBlock {
            group_seq,
            neighbors,
            payload,
        }
    }

    /// Degree-one copy of intermediate `index`.
    pub fn systematic(group_seq: u32, index: u32, payload: BlockVector) -> Self {
        CodedBlock {
            group_seq,
            neighbors: vec![index],
            payload,
        }
    }

    pub fn neighbors(&self) -> &[u32] {
        &self.neighbors
    }

    pub fn degree(&self) -> usize {
        self.neighbors.len()
    }

    pub fn contains(&self, index: u32) -> bool {
        self.neighbors.binary_search(&index).is_ok()
    }

    /// The intermediate index if this is a degree-one block.
    pub fn single(&self) -> Option<u32> {
        match self.neighbors.as_slice() {
            [i] => Some(*i),
            _ => None,
        }
    }

    /// Checks payload == XOR of the given true intermediates.
    pub fn is_consistent_with(&self, intermediates: &[BlockVector]) -> bool {
        let mut acc = self.payload.clone();
        for &i in &self.neighbors {
            match intermediates.get(i as usize) {
                Some(u) => acc.xor_assign(u),
                None => return false,
            }
        }
        acc.is_zero()
    }

    /// Sorted neighbour list as u32 LE, for event logs.
    pub fn neighbors_le_bytes(&self) -> Vec<u8> {
        self.neighbors.iter().flat_map(|i| i.to_le_bytes()).collect()
    }
}

/// Draws a degree from `omega` and that many distinct indices out of 0..n.
pub fn draw_neighbors<R: Rng + ?Sized>(omega: &DegreeDistribution, n: usize, rng: &mut R) -> Vec<u32> {
    let d = omega.sample(rng).min(n);
    let mut picked: Vec<u32> = rand::seq::index::sample(rng, n, d)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    picked.sort_unstable();
    picked
}

/// XORs the intermediates named by `neighbors`.
pub fn lt_combine(
    group_seq: u32,
    neighbors: Vec<u32>,
    intermediates: &BTreeMap<u32, BlockVector>,
) -> Result<CodedBlock, LtError> {
    let missing: BTreeSet<u32> = neighbors
        .iter()
        .copied()
        .filter(|i| !intermediates.contains_key(i))
        .collect();
    if !missing.is_empty() {
        return Err(LtError::MissingIntermediates(missing));
    }
    let mut it = neighbors.iter();
    let first = it.next().expect("nonempty neighbour set");
    let mut payload = intermediates[first].clone();
    for i in it {
        payload.xor_assign(&intermediates[i]);
    }
    Ok(CodedBlock::new(group_seq, neighbors, payload))
}

/// Generates one coded block over the n = `omega.support()` intermediates.
pub fn lt_encode<R: Rng + ?Sized>(
    group_seq: u32,
    intermediates: &BTreeMap<u32, BlockVector>,
    omega: &DegreeDistribution,
    rng: &mut R,
) -> Result<CodedBlock, LtError> {
    let neighbors = draw_neighbors(omega, omega.support(), rng);
    lt_combine(group_seq, neighbors, intermediates)
}

/// Result of peeling: recovered intermediates and the rest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeelOutcome {
    pub decoded: BTreeMap<u32, BlockVector>,
    pub undecoded: BTreeSet<u32>,
}

impl PeelOutcome {
    pub fn is_complete(&self) -> bool {
        self.undecoded.is_empty()
    }
}

/// Peeling decoder state: residual neighbour sets via degree counters and an
/// XOR of remaining indices (the sole remaining index once degree hits one).
pub struct PeelState {
    n: usize,
    adj_start: Vec<usize>,
    adj: Vec<u32>,
    degree: Vec<u32>,
    index_xor: Vec<u32>,
    residual: Option<Vec<BlockVector>>,
    decoded: Vec<bool>,
    values: Vec<Option<BlockVector>>,
    ripple: Vec<u32>,
    recovered: usize,
}

impl PeelState {
    /// `payloads`, when given, must align with `neighbors`.
    pub fn new(neighbors: &[&[u32]], n: usize, payloads: Option<Vec<BlockVector>>) -> Self {
        let mut counts = vec![0usize; n + 1];
        for nb in neighbors {
            for &i in nb.iter() {
                if (i as usize) < n {
                    counts[i as usize + 1] += 1;
                }
            }
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let adj_start = counts.clone();
        let mut fill = counts;
        let mut adj = vec![0u32; adj_start[n]];
        let mut degree = Vec::with_capacity(neighbors.len());
        let mut index_xor = Vec::with_capacity(neighbors.len());
        let mut ripple = Vec::new();
        for (b, nb) in neighbors.iter().enumerate() {
            let mut d = 0;
            let mut x = 0;
            for &i in nb.iter() {
                if (i as usize) < n {
                    adj[fill[i as usize]] = b as u32;
                    fill[i as usize] += 1;
                    d += 1;
                    x ^= i;
                }
            }
            degree.push(d);
            index_xor.push(x);
            if d == 1 {
                ripple.push(b as u32);
            }
        }
        let with_values = payloads.is_some();
        PeelState {
            n,
            adj_start,
            adj,
            degree,
            index_xor,
            residual: payloads,
            decoded: vec![false; n],
            values: if with_values { vec![None; n] } else { Vec::new() },
            ripple,
            recovered: 0,
        }
    }

    /// Runs to completion; `pick(len)` chooses which ripple entry to resolve next.
    pub fn run_with<F: FnMut(usize) -> usize>(&mut self, mut pick: F) {
        while !self.ripple.is_empty() && self.recovered < self.n {
            let pos = pick(self.ripple.len());
            let b = self.ripple.swap_remove(pos) as usize;
            if self.degree[b] != 1 {
                continue;
            }
            let i = self.index_xor[b] as usize;
            debug_assert!(!self.decoded[i]);
            self.decoded[i] = true;
            self.recovered += 1;
            self.degree[b] = 0;
            let value = self.residual.as_mut().map(|r| std::mem::take(&mut r[b]));
            for &c in &self.adj[self.adj_start[i]..self.adj_start[i + 1]] {
                let c = c as usize;
                if c == b || self.degree[c] == 0 {
                    continue;
                }
                if let (Some(res), Some(v)) = (self.residual.as_mut(), value.as_ref()) {
                    res[c].xor_assign(v);
                }
                self.degree[c] -= 1;
                self.index_xor[c] ^= i as u32;
                if self.degree[c] == 1 {
                    self.ripple.push(c as u32);
                }
            }
            if let Some(v) = value {
                self.values[i] = Some(v);
            }
        }
    }

    pub fn run(&mut self) {
        self.run_with(|len| len - 1);
    }

    pub fn recovered(&self) -> usize {
        self.recovered
    }

    pub fn decoded_flags(&self) -> &[bool] {
        &self.decoded
    }

    pub fn into_outcome(self) -> PeelOutcome {
        let mut decoded = BTreeMap::new();
        let mut undecoded = BTreeSet::new();
        for (i, v) in self.values.into_iter().enumerate() {
            match v {
                Some(v) => {
                    decoded.insert(i as u32, v);
                }
                None => {
                    undecoded.insert(i as u32);
                }
            }
        }
        if decoded.is_empty() && undecoded.is_empty() {
            for (i, d) in self.decoded.iter().enumerate() {
                if !d {
                    undecoded.insert(i as u32);
                }
            }
        }
        PeelOutcome { decoded, undecoded }
    }
}

/// Peels `coded` over n intermediates; partial recovery is a normal result.
pub fn peel_decode(coded: &[CodedBlock], n: usize) -> PeelOutcome {
    let neighbors: Vec<&[u32]> = coded.iter().map(|c| c.neighbors()).collect();
    let payloads = coded.iter().map(|c| c.payload.clone()).collect();
    let mut st = PeelState::new(&neighbors, n, Some(payloads));
    st.run();
    st.into_outcome()
}

/// Number of intermediates peeling would recover from these neighbour sets.
pub fn peel_count(neighbors: &[&[u32]], n: usize) -> usize {
    let mut st = PeelState::new(neighbors, n, None);
    st.run();
    st.recovered()
}

/// Recovers intermediate `target` from one edge block and its other neighbours.
pub fn repair_from_edge(
    target: u32,
    edge: &CodedBlock,
    others: &BTreeMap<u32, BlockVector>,
) -> Result<BlockVector, LtError> {
    if !edge.contains(target) {
        return Err(LtError::Domain(format!(
            "target {target} is not a neighbour of the edge block"
        )));
    }
    let missing: BTreeSet<u32> = edge
        .neighbors()
        .iter()
        .copied()
        .filter(|&h| h != target && !others.contains_key(&h))
        .collect();
    if !missing.is_empty() {
        return Err(LtError::MissingIntermediates(missing));
    }
    let mut out = edge.payload.clone();
    for h in edge.neighbors() {
        if *h != target {
            out.xor_assign(&others[h]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RaptorOutcome {
    Decoded(Vec<BlockVector>),
    Failed { recovered: usize },
}

impl RaptorOutcome {
    pub fn is_success(&self) -> bool {
        matches!(self, RaptorOutcome::Decoded(_))
    }
}

/// LT peeling followed by pre-code erasure decoding.
pub fn raptor_decode(coded: &[CodedBlock], g: &GeneratorMatrix) -> Result<RaptorOutcome, LtError> {
    let peeled = peel_decode(coded, g.n());
    if peeled.decoded.len() < g.k() {
        return Ok(RaptorOutcome::Failed {
            recovered: peeled.decoded.len(),
        });
    }
    let available: BTreeMap<usize, BlockVector> = peeled
        .decoded
        .into_iter()
        .map(|(i, b)| (i as usize, b))
        .collect();
    Ok(RaptorOutcome::Decoded(precode_decode(&available, g)?))
}
