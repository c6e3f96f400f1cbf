//! Fixed-rate systematic MDS pre-code (Reed–Solomon).
//!
//! The generator is the systematic form of the evaluation code at the points
//! 1..=n. Row-reducing the k x n Vandermonde matrix to `[I | P]` yields Lagrange
//! basis values, `P[i][j] = L_i(y_j)`, which are computed here in closed form
//! in O(k (n - k)) instead of by elimination.

use std::collections::BTreeMap;

use crate::error::CodecError;
use crate::field::{BlockVector, Field, FieldSymbol};

/// Systematic k x n generator. Only the k x (n - k) parity part is stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorMatrix {
    k: usize,
    n: usize,
    field_bits: u32,
    parity: Vec<FieldSymbol>,
}

impl GeneratorMatrix {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn field_bits(&self) -> u32 {
        self.field_bits
    }

    pub fn parity_cols(&self) -> usize {
        self.n - self.k
    }

    /// Parity entry for original `row` and parity column `col` (0-based, col < n-k).
    #[inline]
    pub fn parity(&self, row: usize, col: usize) -> FieldSymbol {
        self.parity[row * (self.n - self.k) + col]
    }

    /// Entry of the full k x n matrix.
    pub fn entry(&self, row: usize, col: usize) -> FieldSymbol {
        if col < self.k {
            if row == col {
                FieldSymbol::ONE
            } else {
                FieldSymbol::ZERO
            }
        } else {
            self.parity(row, col - self.k)
        }
    }

    /// k, n, p as u32 LE, then parity row-major, ceil(p/8) bytes per symbol LE.
    pub fn to_bytes(&self) -> Vec<u8> {
        let sb = self.field_bits.div_ceil(8) as usize;
        let mut out = Vec::with_capacity(12 + self.parity.len() * sb);
        out.extend_from_slice(&(self.k as u32).to_le_bytes());
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        out.extend_from_slice(&self.field_bits.to_le_bytes());
        for s in &self.parity {
            out.extend_from_slice(&s.0.to_le_bytes()[..sb]);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let word = |i: usize| -> Result<u32, CodecError> {
            bytes
                .get(4 * i..4 * i + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or_else(|| CodecError::Shape("truncated generator header".into()))
        };
        let (k, n, bits) = (word(0)? as usize, word(1)? as usize, word(2)?);
        let field = Field::get(bits)?;
        if k == 0 || k > n {
            return Err(CodecError::Shape(format!("bad dimensions k={k} n={n}")));
        }
        let sb = field.symbol_bytes();
        let body = &bytes[12..];
        if body.len() != k * (n - k) * sb {
            return Err(CodecError::Shape(format!(
                "expected {} parity bytes, got {}",
                k * (n - k) * sb,
                body.len()
            )));
        }
        let parity = body
            .chunks_exact(sb)
            .map(|c| {
                let mut v = [0u8; 2];
                v[..sb].copy_from_slice(c);
                FieldSymbol(u16::from_le_bytes(v))
            })
            .collect();
        Ok(GeneratorMatrix {
            k,
            n,
            field_bits: bits,
            parity,
        })
    }
}

/// Builds the systematic Reed–Solomon generator for (k, n) over GF(2^p).
pub fn build_systematic_generator(
    k: usize,
    n: usize,
    field_bits: u32,
) -> Result<GeneratorMatrix, CodecError> {
    let field = Field::get(field_bits)?;
    let max = (field.size() - 1) as usize;
    if k == 0 || k > n {
        return Err(CodecError::InvalidParameter(format!(
            "need 1 <= k <= n, got k={k} n={n}"
        )));
    }
    if n > max {
        return Err(CodecError::FieldTooSmall {
            n,
            bits: field_bits,
            max,
        });
    }
    let point = |i: usize| FieldSymbol((i + 1) as u16);
    let r = n - k;

    // w_i = 1 / prod_{l != i} (x_i - x_l)
    let mut weights = Vec::with_capacity(k);
    for i in 0..k {
        let mut denom = FieldSymbol::ONE;
        for l in 0..k {
            if l != i {
                denom = field.mul(denom, point(i) + point(l));
            }
        }
        weights.push(field.inv(denom)?);
    }
    // P(y_j) = prod_l (y_j - x_l)
    let node_poly: Vec<FieldSymbol> = (0..r)
        .map(|j| {
            let y = point(k + j);
            (0..k).fold(FieldSymbol::ONE, |acc, l| field.mul(acc, y + point(l)))
        })
        .collect();

    let mut parity = vec![FieldSymbol::ZERO; k * r];
    for i in 0..k {
        for j in 0..r {
            let y = point(k + j);
            let num = field.mul(weights[i], node_poly[j]);
            parity[i * r + j] = field.div(num, y + point(i))?;
        }
    }
    Ok(GeneratorMatrix {
        k,
        n,
        field_bits,
        parity,
    })
}

fn check_shape(blocks: &[&BlockVector]) -> Result<usize, CodecError> {
    let s = blocks.first().map(|b| b.len()).unwrap_or(0);
    if let Some(bad) = blocks.iter().position(|b| b.len() != s) {
        return Err(CodecError::Shape(format!(
            "block {bad} has {} symbols, expected {s}",
            blocks[bad].len()
        )));
    }
    Ok(s)
}

/// Encodes k originals into n intermediates; the first k are copies.
pub fn precode_encode(
    originals: &[BlockVector],
    g: &GeneratorMatrix,
) -> Result<Vec<BlockVector>, CodecError> {
    if originals.len() != g.k {
        return Err(CodecError::Shape(format!(
            "expected {} originals, got {}",
            g.k,
            originals.len()
        )));
    }
    let refs: Vec<&BlockVector> = originals.iter().collect();
    let s = check_shape(&refs)?;
    let field = Field::get(g.field_bits)?;
    let mut out: Vec<BlockVector> = originals.to_vec();
    for j in 0..g.parity_cols() {
        let mut acc = BlockVector::zeros(s);
        for (i, b) in originals.iter().enumerate() {
            field.mul_add_into(&mut acc.0, g.parity(i, j), &b.0);
        }
        out.push(acc);
    }
    Ok(out)
}

/// Computes a single intermediate `index` (0-based, < n) from the originals.
pub fn precode_column(
    originals: &[BlockVector],
    g: &GeneratorMatrix,
    index: usize,
) -> Result<BlockVector, CodecError> {
    if index < g.k {
        return Ok(originals[index].clone());
    }
    let field = Field::get(g.field_bits)?;
    let s = originals.first().map(|b| b.len()).unwrap_or(0);
    let mut acc = BlockVector::zeros(s);
    for (i, b) in originals.iter().enumerate() {
        field.mul_add_into(&mut acc.0, g.parity(i, index - g.k), &b.0);
    }
    Ok(acc)
}

/// Erasure-decodes the k originals from any k or more intermediates.
///
/// There is no error detection: corrupted inputs decode to wrong originals and
/// must be caught by the caller (header hashes / merkle roots).
pub fn precode_decode(
    available: &BTreeMap<usize, BlockVector>,
    g: &GeneratorMatrix,
) -> Result<Vec<BlockVector>, CodecError> {
    let k = g.k;
    let usable: BTreeMap<usize, &BlockVector> = available
        .iter()
        .filter(|(&i, _)| i < g.n)
        .map(|(&i, b)| (i, b))
        .collect();
    if usable.len() < k {
        return Err(CodecError::InsufficientSymbols {
            have: usable.len(),
            need: k,
        });
    }
    let refs: Vec<&BlockVector> = usable.values().copied().collect();
    let s = check_shape(&refs)?;

    let missing: Vec<usize> = (0..k).filter(|i| !usable.contains_key(i)).collect();
    let mut originals: Vec<Option<BlockVector>> =
        (0..k).map(|i| usable.get(&i).map(|b| (*b).clone())).collect();
    if missing.is_empty() {
        return Ok(originals.into_iter().map(Option::unwrap).collect());
    }

    let field = Field::get(g.field_bits)?;
    let e = missing.len();
    let parity_idx: Vec<usize> = usable
        .keys()
        .copied()
        .filter(|&i| i >= k)
        .take(e)
        .collect();
    debug_assert_eq!(parity_idx.len(), e);

    // For chosen parity column c: sum_{i in missing} b_i G[i][c] = u_c - sum_{known} b_i G[i][c].
    // Unknowns x_a = b_{missing[a]}; equation rows indexed by chosen parity.
    let mut mat = vec![FieldSymbol::ZERO; e * e];
    let mut rhs: Vec<BlockVector> = Vec::with_capacity(e);
    for (row, &pc) in parity_idx.iter().enumerate() {
        let col = pc - k;
        for (a, &mi) in missing.iter().enumerate() {
            mat[row * e + a] = g.parity(mi, col);
        }
        let mut r = usable[&pc].clone();
        for (i, b) in originals.iter().enumerate() {
            if let Some(b) = b {
                field.mul_add_into(&mut r.0, g.parity(i, col), &b.0);
            }
        }
        rhs.push(r);
    }

    // Gauss-Jordan elimination.
    for c in 0..e {
        let pivot = (c..e)
            .find(|&r| !mat[r * e + c].is_zero())
            .ok_or(CodecError::Singular)?;
        if pivot != c {
            for x in 0..e {
                mat.swap(pivot * e + x, c * e + x);
            }
            rhs.swap(pivot, c);
        }
        let inv = field.inv(mat[c * e + c])?;
        field.scale(&mut mat[c * e..(c + 1) * e], inv);
        field.scale(&mut rhs[c].0, inv);
        for r in 0..e {
            if r == c {
                continue;
            }
            let f = mat[r * e + c];
            if f.is_zero() {
                continue;
            }
            let (pivot_row, other_row) = if r < c {
                let (lo, hi) = mat.split_at_mut(c * e);
                (&hi[..e], &mut lo[r * e..(r + 1) * e])
            } else {
                let (lo, hi) = mat.split_at_mut(r * e);
                (&lo[c * e..(c + 1) * e], &mut hi[..e])
            };
            field.mul_add_into(other_row, f, pivot_row);
            let (src, dst) = if r < c {
                let (lo, hi) = rhs.split_at_mut(c);
                (&hi[0], &mut lo[r])
            } else {
                let (lo, hi) = rhs.split_at_mut(r);
                (&lo[c], &mut hi[0])
            };
            field.mul_add_into(&mut dst.0, f, &src.0);
        }
    }
    for (a, &mi) in missing.iter().enumerate() {
        debug_assert_eq!(rhs[a].len(), s);
        originals[mi] = Some(std::mem::take(&mut rhs[a]));
    }
    Ok(originals.into_iter().map(Option::unwrap).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_blocks(rng: &mut ChaCha8Rng, count: usize, s: usize, bits: u32) -> Vec<BlockVector> {
        let mask = ((1u32 << bits) - 1) as u16;
        (0..count)
            .map(|_| BlockVector((0..s).map(|_| FieldSymbol(rng.gen::<u16>() & mask)).collect()))
            .collect()
    }

    /// Row-reduces the k x n Vandermonde matrix at points 1..=n to [I | P].
    fn vandermonde_systematic(k: usize, n: usize, bits: u32) -> Vec<Vec<FieldSymbol>> {
        let f = Field::get(bits).unwrap();
        let mut m: Vec<Vec<FieldSymbol>> = (0..k)
            .map(|i| {
                (0..n)
                    .map(|c| {
                        let x = FieldSymbol((c + 1) as u16);
                        (0..i).fold(FieldSymbol::ONE, |acc, _| f.mul(acc, x))
                    })
                    .collect()
            })
            .collect();
        for c in 0..k {
            let p = (c..k).find(|&r| !m[r][c].is_zero()).unwrap();
            m.swap(p, c);
            let inv = f.inv(m[c][c]).unwrap();
            for x in m[c].iter_mut() {
                *x = f.mul(*x, inv);
            }
            for r in 0..k {
                if r != c && !m[r][c].is_zero() {
                    let fac = m[r][c];
                    let pivot = m[c].clone();
                    for (x, p) in m[r].iter_mut().zip(pivot) {
                        *x += f.mul(fac, p);
                    }
                }
            }
        }
        m
    }

    fn is_invertible(cols: &[Vec<FieldSymbol>], bits: u32) -> bool {
        let f = Field::get(bits).unwrap();
        let k = cols.len();
        let mut m: Vec<Vec<FieldSymbol>> = (0..k).map(|r| cols.iter().map(|c| c[r]).collect()).collect();
        for c in 0..k {
            let Some(p) = (c..k).find(|&r| !m[r][c].is_zero()) else {
                return false;
            };
            m.swap(p, c);
            let inv = f.inv(m[c][c]).unwrap();
            for r in 0..k {
                if r != c && !m[r][c].is_zero() {
                    let fac = f.mul(m[r][c], inv);
                    let pivot = m[c].clone();
                    for (x, p) in m[r].iter_mut().zip(pivot) {
                        *x += f.mul(fac, p);
                    }
                }
            }
        }
        true
    }

    fn subsets(n: usize, size: usize) -> Vec<Vec<usize>> {
        (0u32..1 << n)
            .filter(|m| m.count_ones() as usize == size)
            .map(|m| (0..n).filter(|i| m >> i & 1 == 1).collect())
            .collect()
    }

    #[test]
    fn closed_form_matches_vandermonde_row_reduction() {
        for (k, n, bits) in [(2, 3, 8), (3, 5, 8), (4, 6, 16), (5, 8, 16), (7, 12, 4)] {
            let g = build_systematic_generator(k, n, bits).unwrap();
            let v = vandermonde_systematic(k, n, bits);
            for (i, row) in v.iter().enumerate() {
                for (c, want) in row.iter().enumerate() {
                    assert_eq!(g.entry(i, c), *want, "k={k} n={n} ({i},{c})");
                }
            }
        }
    }

    #[test]
    fn rate_one_has_empty_parity() {
        let g = build_systematic_generator(3, 3, 5).unwrap();
        assert_eq!(g.parity_cols(), 0);
        assert_eq!(g.to_bytes().len(), 12);
    }

    #[test]
    fn every_k_column_subset_is_invertible() {
        for (k, n, bits) in [(2, 3, 8), (4, 6, 16), (3, 8, 16), (5, 8, 8)] {
            let g = build_systematic_generator(k, n, bits).unwrap();
            let cols: Vec<Vec<FieldSymbol>> = (0..n).map(|c| (0..k).map(|r| g.entry(r, c)).collect()).collect();
            let subs = subsets(n, k);
            if (k, n) == (4, 6) {
                assert_eq!(subs.len(), 15);
            }
            for sub in subs {
                let picked: Vec<_> = sub.iter().map(|&c| cols[c].clone()).collect();
                assert!(is_invertible(&picked, bits), "k={k} n={n} {sub:?}");
            }
        }
    }

    #[test]
    fn field_too_small() {
        assert!(matches!(
            build_systematic_generator(10, 256, 8),
            Err(CodecError::FieldTooSmall { n: 256, .. })
        ));
        assert!(build_systematic_generator(10, 255, 8).is_ok());
        assert!(build_systematic_generator(0, 3, 8).is_err());
        assert!(build_systematic_generator(4, 3, 8).is_err());
    }

    #[test]
    fn generator_bytes_are_deterministic_and_roundtrip() {
        let a = build_systematic_generator(4, 6, 16).unwrap();
        let b = build_systematic_generator(4, 6, 16).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(a.to_bytes().len(), 12 + 4 * 2 * 2);
        assert_eq!(GeneratorMatrix::from_bytes(&a.to_bytes()).unwrap(), a);
        let c = build_systematic_generator(3, 5, 8).unwrap();
        assert_eq!(c.to_bytes().len(), 12 + 3 * 2);
        assert_eq!(GeneratorMatrix::from_bytes(&c.to_bytes()).unwrap(), c);
    }

    #[test]
    fn repetition_code() {
        let g = build_systematic_generator(1, 2, 8).unwrap();
        assert_eq!(g.parity(0, 0), FieldSymbol::ONE);
        let b = BlockVector::from_u16s(&[7, 9, 200]);
        let out = precode_encode(std::slice::from_ref(&b), &g).unwrap();
        assert_eq!(out, vec![b.clone(), b]);
    }

    #[test]
    fn encode_matches_naive_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = build_systematic_generator(2, 3, 8).unwrap();
        let f = Field::get(8).unwrap();
        let b = random_blocks(&mut rng, 2, 16, 8);
        let u = precode_encode(&b, &g).unwrap();
        for h in 0..16 {
            for c in 0..3 {
                let mut acc = FieldSymbol::ZERO;
                for r in 0..2 {
                    acc += f.mul(b[r].0[h], g.entry(r, c));
                }
                assert_eq!(u[c].0[h], acc);
            }
        }
        assert_eq!(&u[..2], &b[..]);
        assert_eq!(precode_column(&b, &g, 2).unwrap(), u[2]);
    }

    #[test]
    fn shape_errors() {
        let g = build_systematic_generator(2, 3, 8).unwrap();
        let a = BlockVector::zeros(3);
        let b = BlockVector::zeros(4);
        assert!(matches!(precode_encode(&[a.clone(), b], &g), Err(CodecError::Shape(_))));
        assert!(matches!(precode_encode(&[a], &g), Err(CodecError::Shape(_))));
    }

    #[test]
    fn decode_every_survivor_subset_k4_n6() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = build_systematic_generator(4, 6, 16).unwrap();
        let b = random_blocks(&mut rng, 4, 8, 16);
        let u = precode_encode(&b, &g).unwrap();
        for sub in subsets(6, 4) {
            let avail: BTreeMap<usize, BlockVector> = sub.iter().map(|&i| (i, u[i].clone())).collect();
            assert_eq!(precode_decode(&avail, &g).unwrap(), b, "{sub:?}");
        }
        let three: BTreeMap<usize, BlockVector> = (0..3).map(|i| (i, u[i].clone())).collect();
        assert_eq!(
            precode_decode(&three, &g),
            Err(CodecError::InsufficientSymbols { have: 3, need: 4 })
        );
    }

    #[test]
    fn corrupted_input_decodes_wrong_without_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = build_systematic_generator(4, 6, 16).unwrap();
        let b = random_blocks(&mut rng, 4, 4, 16);
        let u = precode_encode(&b, &g).unwrap();
        let mut avail: BTreeMap<usize, BlockVector> = [1, 2, 4, 5].iter().map(|&i| (i, u[i].clone())).collect();
        avail.get_mut(&4).unwrap().0[0].0 ^= 1;
        let got = precode_decode(&avail, &g).unwrap();
        assert_ne!(got, b);
    }

    proptest::proptest! {
        #[test]
        fn encode_is_linear(seed in 0u64..1000, k in 1usize..6, extra in 0usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = build_systematic_generator(k, k + extra, 16).unwrap();
            let a = random_blocks(&mut rng, k, 5, 16);
            let b = random_blocks(&mut rng, k, 5, 16);
            let sum: Vec<BlockVector> = a.iter().zip(&b).map(|(x, y)| { let mut z = x.clone(); z.xor_assign(y); z }).collect();
            let ea = precode_encode(&a, &g).unwrap();
            let eb = precode_encode(&b, &g).unwrap();
            let es = precode_encode(&sum, &g).unwrap();
            for i in 0..g.n() {
                let mut z = ea[i].clone();
                z.xor_assign(&eb[i]);
                proptest::prop_assert_eq!(&z, &es[i]);
            }
        }
    }
}
