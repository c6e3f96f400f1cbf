use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use rateless_chain::degree::{encoding_distribution, DegreeDistribution};
use rateless_chain::lt::{lt_combine, lt_encode, peel_decode, raptor_decode, CodedBlock};
use rateless_chain::precode::{build_systematic_generator, precode_decode, precode_encode};
use rateless_chain::protocol::{GroupSpec, Network, PayloadMode};
use rateless_chain::{BlockVector, FieldSymbol};

fn random_blocks(rng: &mut ChaCha8Rng, count: usize, s: usize, bits: u32) -> Vec<BlockVector> {
    let mask = ((1u32 << bits) - 1) as u16;
    (0..count)
        .map(|_| BlockVector((0..s).map(|_| FieldSymbol(rng.gen::<u16>() & mask)).collect()))
        .collect()
}

/// Pearson statistic over bins with expected count >= 5, the rest pooled.
/// Returns (statistic, degrees of freedom).
fn chi_square(observed: &BTreeMap<usize, u64>, omega: &DegreeDistribution, draws: u64) -> (f64, f64) {
    let mut stat = 0.0;
    let mut bins = 0;
    let (mut pool_obs, mut pool_exp) = (0.0, 0.0);
    for d in 1..=omega.support() {
        let exp = omega.prob(d) * draws as f64;
        let obs = observed.get(&d).copied().unwrap_or(0) as f64;
        if exp >= 5.0 {
            stat += (obs - exp).powi(2) / exp;
            bins += 1;
        } else {
            pool_obs += obs;
            pool_exp += exp;
        }
    }
    if pool_exp > 0.0 {
        stat += (pool_obs - pool_exp).powi(2) / pool_exp;
        bins += 1;
    }
    (stat, (bins - 1) as f64)
}

fn critical(df: f64) -> f64 {
    ChiSquared::new(df).unwrap().inverse_cdf(0.999)
}

#[test]
fn small_graph_peels_in_two_stages() {
    let u: Vec<BlockVector> = (1..=4u16).map(|i| BlockVector::from_u16s(&[i, i * 7, 100 + i])).collect();
    let umap: BTreeMap<u32, BlockVector> = u.iter().cloned().enumerate().map(|(i, b)| (i as u32, b)).collect();
    let sets: [&[u32]; 5] = [&[0], &[0, 2], &[1, 2, 3], &[1, 3], &[2, 3]];
    let v: Vec<CodedBlock> = sets.iter().map(|s| lt_combine(1, s.to_vec(), &umap).unwrap()).collect();

    let mut two = u[0].clone();
    two.xor_assign(&u[2]);
    assert_eq!(v[1].payload, two);

    let four = peel_decode(&v[..4], 4);
    assert_eq!(four.decoded.keys().copied().collect::<Vec<_>>(), vec![0, 2]);
    assert_eq!(four.decoded[&0], u[0]);
    assert_eq!(four.decoded[&2], u[2]);

    let five = peel_decode(&v, 4);
    assert!(five.is_complete());
    for (i, b) in five.decoded {
        assert_eq!(b, u[i as usize]);
    }
}

#[test]
fn every_survivor_subset_decodes_small_codes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in 1..=8 {
        for k in 1..=n {
            let g = build_systematic_generator(k, n, 16).unwrap();
            let orig = random_blocks(&mut rng, k, 3, 16);
            let inter = precode_encode(&orig, &g).unwrap();
            for mask in 0u32..(1 << n) {
                if (mask.count_ones() as usize) < k {
                    continue;
                }
                let avail: BTreeMap<usize, BlockVector> =
                    (0..n).filter(|i| mask >> i & 1 == 1).map(|i| (i, inter[i].clone())).collect();
                assert_eq!(precode_decode(&avail, &g).unwrap(), orig, "k={k} n={n} mask={mask:b}");
            }
        }
    }
}

#[test]
fn raptor_roundtrip_with_surplus_symbols() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (k, n) = (200, 250);
    let g = build_systematic_generator(k, n, 16).unwrap();
    let orig = random_blocks(&mut rng, k, 4, 16);
    let inter: BTreeMap<u32, BlockVector> =
        precode_encode(&orig, &g).unwrap().into_iter().enumerate().map(|(i, b)| (i as u32, b)).collect();
    let omega = encoding_distribution(n, 0.1, 0.5).unwrap();
    // Ω(1) = 0, so peeling starts from surviving systematic blocks.
    let mut coded: Vec<CodedBlock> = inter
        .iter()
        .filter(|_| rng.gen_bool(0.6))
        .map(|(&i, b)| CodedBlock::systematic(0, i, b.clone()))
        .collect();
    coded.extend((0..150).map(|_| lt_encode(0, &inter, &omega, &mut rng).unwrap()));
    match raptor_decode(&coded, &g).unwrap() {
        rateless_chain::lt::RaptorOutcome::Decoded(out) => assert_eq!(out, orig),
        other => panic!("decode failed: {other:?}"),
    }
}

#[test]
fn lt_degree_histogram_matches_omega() {
    let n = 100;
    let omega = encoding_distribution(n, 0.1, 0.5).unwrap();
    let inter: BTreeMap<u32, BlockVector> = (0..n as u32).map(|i| (i, BlockVector::from_u16s(&[i as u16]))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let draws = 100_000u64;
    let mut hist = BTreeMap::new();
    for _ in 0..draws {
        let b = lt_encode(0, &inter, &omega, &mut rng).unwrap();
        *hist.entry(b.degree()).or_insert(0u64) += 1;
    }
    assert!(!hist.contains_key(&1));
    let (stat, df) = chi_square(&hist, &omega, draws);
    assert!(stat < critical(df), "chi2={stat} df={df}");
}

#[test]
fn parity_blocks_of_an_oversized_network_follow_omega() {
    let (k, n) = (400, 500);
    let omega = std::sync::Arc::new(encoding_distribution(n, 0.1, 0.5).unwrap());
    let mut net = Network::with_nodes(PayloadMode::Structural, n + 1000);
    net.register_group(GroupSpec {
        seq: 1,
        k,
        n,
        omega: omega.clone(),
        generator: None,
        intermediates: None,
    });
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let report = net.decentralized_encode(1, Default::default(), &mut rng);
    assert_eq!(report.parity, 1000);
    assert_eq!(report.systematic, n);
    let mut hist = BTreeMap::new();
    for &id in net.alive_ids() {
        let b = &net.node(id).unwrap().stored[&1];
        if b.degree() > 1 {
            *hist.entry(b.degree()).or_insert(0u64) += 1;
        }
    }
    assert_eq!(hist.values().sum::<u64>(), 1000);
    let (stat, df) = chi_square(&hist, &omega, 1000);
    assert!(stat < critical(df), "chi2={stat} df={df}");
}

#[test]
fn decode_from_random_survivors_of_a_full_network() {
    let (k, n) = (60, 75);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let g = build_systematic_generator(k, n, 16).unwrap();
    let orig = random_blocks(&mut rng, k, 5, 16);
    let inter = precode_encode(&orig, &g).unwrap();
    let mut net = Network::with_nodes(PayloadMode::Full, 200);
    net.register_group(GroupSpec {
        seq: 3,
        k,
        n,
        omega: std::sync::Arc::new(encoding_distribution(n, 0.1, 0.5).unwrap()),
        generator: Some(std::sync::Arc::new(g)),
        intermediates: Some(std::sync::Arc::new(inter)),
    });
    net.decentralized_encode(3, Default::default(), &mut rng);
    let mut ids = net.alive_ids().to_vec();
    ids.shuffle(&mut rng);
    for &id in &ids[..60] {
        net.leave(id);
    }
    net.check_invariants().unwrap();
    assert_eq!(net.decode_group(3).unwrap(), orig);
}
