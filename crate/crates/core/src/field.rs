//! Arithmetic over GF(2^p), 1 <= p <= 16, backed by log/antilog tables.
//!
//! Tables are built lazily, once per field width, and shared process-wide.

use std::fmt;
use std::ops::{Add, AddAssign};
use std::sync::OnceLock;

use crate::error::CodecError;

/// Reduction polynomials indexed by p. For p = 8 this is the AES polynomial
/// x^8+x^4+x^3+x+1, which is irreducible but not primitive; the generator is
/// searched for rather than assumed to be x.
const REDUCTION_POLYS: [u32; 17] = [
    0, 0x3, 0x7, 0xB, 0x13, 0x25, 0x43, 0x89, 0x11B, 0x211, 0x409, 0x805, 0x1053, 0x201B, 0x4443,
    0x8003, 0x1100B,
];

pub const MAX_FIELD_BITS: u32 = 16;

/// One element of GF(2^p).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct FieldSymbol(pub u16);

impl FieldSymbol {
    pub const ZERO: FieldSymbol = FieldSymbol(0);
    pub const ONE: FieldSymbol = FieldSymbol(1);

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Debug for FieldSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#06x}", self.0)
    }
}

// Characteristic 2: addition and subtraction are both XOR.
impl Add for FieldSymbol {
    type Output = FieldSymbol;
    fn add(self, rhs: FieldSymbol) -> FieldSymbol {
        FieldSymbol(self.0 ^ rhs.0)
    }
}

impl AddAssign for FieldSymbol {
    fn add_assign(&mut self, rhs: FieldSymbol) {
        self.0 ^= rhs.0;
    }
}

/// A GF(2^p) instance. Obtain one with [`Field::get`].
pub struct Field {
    bits: u32,
    poly: u32,
    order: u32,
    // exp has 2*(order) entries so log(a)+log(b) never needs a modulo.
    exp: Vec<u16>,
    log: Vec<u32>,
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Field")
            .field("bits", &self.bits)
            .field("poly", &format_args!("{:#x}", self.poly))
            .finish()
    }
}

static FIELDS: [OnceLock<Field>; 17] = [const { OnceLock::new() }; 17];

/// Carry-less multiply with explicit reduction. Slow; used only to build the
/// tables.
fn mul_slow(a: u32, b: u32, bits: u32, poly: u32) -> u32 {
    let mut acc = 0u32;
    let mut a = a;
    let mut b = b;
    while b != 0 {
        if b & 1 != 0 {
            acc ^= a;
        }
        b >>= 1;
        a <<= 1;
        if a & (1 << bits) != 0 {
            a ^= poly;
        }
    }
    acc
}

impl Field {
    /// Returns the shared field instance for `bits`, building tables on first use.
    pub fn get(bits: u32) -> Result<&'static Field, CodecError> {
        if bits == 0 || bits > MAX_FIELD_BITS {
            return Err(CodecError::InvalidParameter(format!(
                "field bits must be in 1..=16, got {bits}"
            )));
        }
        Ok(FIELDS[bits as usize].get_or_init(|| Field::build(bits)))
    }

    fn build(bits: u32) -> Field {
        let poly = REDUCTION_POLYS[bits as usize];
        let size = 1u32 << bits;
        let order = size - 1;
        let generator = (1..size)
            .find(|&g| {
                let mut x = 1u32;
                for step in 1..=order {
                    x = mul_slow(x, g, bits, poly);
                    if x == 1 {
                        return step == order;
                    }
                }
                false
            })
            .expect("reduction polynomial table entry is irreducible");

        let mut exp = vec![0u16; 2 * order as usize];
        let mut log = vec![0u32; size as usize];
        let mut x = 1u32;
        for i in 0..order {
            exp[i as usize] = x as u16;
            exp[(i + order) as usize] = x as u16;
            log[x as usize] = i;
            x = mul_slow(x, generator, bits, poly);
        }
        Field {
            bits,
            poly,
            order,
            exp,
            log,
        }
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Number of elements, 2^p.
    pub fn size(&self) -> u32 {
        self.order + 1
    }

    /// Bytes used to serialize one symbol.
    pub fn symbol_bytes(&self) -> usize {
        self.bits.div_ceil(8) as usize
    }

    pub fn contains(&self, a: FieldSymbol) -> bool {
        (a.0 as u32) < self.size()
    }

    #[inline]
    pub fn add(&self, a: FieldSymbol, b: FieldSymbol) -> FieldSymbol {
        a + b
    }

    #[inline]
    pub fn mul(&self, a: FieldSymbol, b: FieldSymbol) -> FieldSymbol {
        if a.0 == 0 || b.0 == 0 {
            return FieldSymbol::ZERO;
        }
        let l = self.log[a.0 as usize] + self.log[b.0 as usize];
        FieldSymbol(self.exp[l as usize])
    }

    pub fn inv(&self, a: FieldSymbol) -> Result<FieldSymbol, CodecError> {
        if a.0 == 0 {
            return Err(CodecError::ZeroInverse);
        }
        let l = self.log[a.0 as usize];
        Ok(FieldSymbol(self.exp[((self.order - l) % self.order) as usize]))
    }

    pub fn div(&self, a: FieldSymbol, b: FieldSymbol) -> Result<FieldSymbol, CodecError> {
        if b.0 == 0 {
            return Err(CodecError::ZeroInverse);
        }
        if a.0 == 0 {
            return Ok(FieldSymbol::ZERO);
        }
        let l = self.log[a.0 as usize] + self.order - self.log[b.0 as usize];
        Ok(FieldSymbol(self.exp[l as usize]))
    }

    /// `dst[h] += coef * src[h]` for every h.
    pub fn mul_add_into(&self, dst: &mut [FieldSymbol], coef: FieldSymbol, src: &[FieldSymbol]) {
        debug_assert_eq!(dst.len(), src.len());
        if coef.0 == 0 {
            return;
        }
        if coef.0 == 1 {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += *s;
            }
            return;
        }
        let lc = self.log[coef.0 as usize];
        for (d, s) in dst.iter_mut().zip(src) {
            if s.0 != 0 {
                d.0 ^= self.exp[(lc + self.log[s.0 as usize]) as usize];
            }
        }
    }

    /// `row[h] = coef * row[h]` for every h.
    pub fn scale(&self, row: &mut [FieldSymbol], coef: FieldSymbol) {
        if coef.0 == 1 {
            return;
        }
        for x in row.iter_mut() {
            *x = self.mul(*x, coef);
        }
    }
}

/// Coding parameters shared by every block in one chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodecConfig {
    /// Bits per symbol.
    pub field_bits: u32,
    /// Symbols per block.
    pub symbols: usize,
    /// Pre-code rate k/n, in (0, 1].
    pub precode_rate: f64,
}

impl CodecConfig {
    pub fn new(field_bits: u32, symbols: usize, precode_rate: f64) -> Result<Self, CodecError> {
        let cfg = CodecConfig {
            field_bits,
            symbols,
            precode_rate,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Derives the symbol count from a block size in bytes.
    pub fn for_block_bytes(
        field_bits: u32,
        block_bytes: usize,
        precode_rate: f64,
    ) -> Result<Self, CodecError> {
        let per_symbol = field_bits.div_ceil(8) as usize;
        CodecConfig::new(field_bits, block_bytes.div_ceil(per_symbol), precode_rate)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if self.field_bits == 0 || self.field_bits > MAX_FIELD_BITS {
            return Err(CodecError::InvalidParameter(format!(
                "field_bits must be in 1..=16, got {}",
                self.field_bits
            )));
        }
        if self.symbols == 0 {
            return Err(CodecError::InvalidParameter("symbols must be >= 1".into()));
        }
        if !(self.precode_rate > 0.0 && self.precode_rate <= 1.0) {
            return Err(CodecError::InvalidParameter(format!(
                "precode_rate must be in (0, 1], got {}",
                self.precode_rate
            )));
        }
        Ok(())
    }

    pub fn field(&self) -> Result<&'static Field, CodecError> {
        Field::get(self.field_bits)
    }

    /// Intermediate count for a group of `k` originals: n = round(k / r), never below k.
    pub fn code_length(&self, k: usize) -> usize {
        ((k as f64 / self.precode_rate).round() as usize).max(k)
    }

    pub fn block_bytes(&self) -> usize {
        self.symbols * self.field_bits.div_ceil(8) as usize
    }
}

/// A block viewed as a column of field symbols. Original, intermediate and
/// coded blocks all share this shape.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct BlockVector(pub Vec<FieldSymbol>);

impl fmt::Debug for BlockVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BlockVector{:?}", self.0)
    }
}

impl BlockVector {
    pub fn zeros(symbols: usize) -> Self {
        BlockVector(vec![FieldSymbol::ZERO; symbols])
    }

    pub fn from_u16s(values: &[u16]) -> Self {
        BlockVector(values.iter().copied().map(FieldSymbol).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|s| s.is_zero())
    }

    pub fn symbols(&self) -> &[FieldSymbol] {
        &self.0
    }

    pub fn xor_assign(&mut self, other: &BlockVector) {
        debug_assert_eq!(self.len(), other.len(), "block length mismatch");
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += *b;
        }
    }

    /// Little-endian serialization, `symbol_bytes` bytes per symbol.
    pub fn to_bytes(&self, symbol_bytes: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * symbol_bytes);
        for s in &self.0 {
            out.extend_from_slice(&s.0.to_le_bytes()[..symbol_bytes]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Bitwise long multiplication followed by explicit polynomial division.
    fn long_mul_oracle(a: u32, b: u32, poly: u32, bits: u32) -> u32 {
        let mut prod = 0u64;
        for i in 0..bits {
            if b >> i & 1 == 1 {
                prod ^= (a as u64) << i;
            }
        }
        for deg in (bits..2 * bits).rev() {
            if prod >> deg & 1 == 1 {
                prod ^= (poly as u64) << (deg - bits);
            }
        }
        prod as u32
    }

    #[test]
    fn aes_polynomial_example() {
        let f = Field::get(8).unwrap();
        assert_eq!(long_mul_oracle(0x02, 0x80, 0x11B, 8), 0x1B);
        assert_eq!(f.mul(FieldSymbol(0x02), FieldSymbol(0x80)), FieldSymbol(0x1B));
    }

    #[test]
    fn tables_match_long_multiplication() {
        for bits in 1..=10u32 {
            let f = Field::get(bits).unwrap();
            let size = 1u32 << bits;
            let step = (size / 64).max(1);
            for a in (0..size).step_by(step as usize) {
                for b in (0..size).step_by(step as usize) {
                    let want = long_mul_oracle(a, b, REDUCTION_POLYS[bits as usize], bits);
                    assert_eq!(f.mul(FieldSymbol(a as u16), FieldSymbol(b as u16)).0 as u32, want);
                }
            }
        }
    }

    #[test]
    fn every_width_builds_a_full_cycle() {
        for bits in 1..=16u32 {
            let f = Field::get(bits).unwrap();
            assert_eq!(f.size(), 1 << bits);
            let mut seen = vec![false; f.size() as usize];
            for i in 0..f.order as usize {
                let x = f.exp[i] as usize;
                assert!(!seen[x], "p={bits}: generator cycle repeats");
                seen[x] = true;
            }
            assert!(!seen[0]);
        }
    }

    #[test]
    fn identities_and_inverse() {
        let f = Field::get(16).unwrap();
        for x in [1u16, 2, 3, 0x1234, 0xffff, 0x8000] {
            let x = FieldSymbol(x);
            assert_eq!(x + x, FieldSymbol::ZERO);
            assert_eq!(f.mul(FieldSymbol::ONE, x), x);
            assert_eq!(f.mul(x, f.inv(x).unwrap()), FieldSymbol::ONE);
            assert_eq!(f.div(x, x).unwrap(), FieldSymbol::ONE);
        }
        assert!(matches!(f.inv(FieldSymbol::ZERO), Err(CodecError::ZeroInverse)));
        assert!(Field::get(0).is_err());
        assert!(Field::get(17).is_err());
    }

    #[test]
    fn config_bounds() {
        assert!(CodecConfig::new(16, 1, 1.0).is_ok());
        assert!(CodecConfig::new(16, 0, 1.0).is_err());
        assert!(CodecConfig::new(16, 4, 0.0).is_err());
        assert!(CodecConfig::new(16, 4, 1.5).is_err());
        let c = CodecConfig::for_block_bytes(16, 125_000, 0.8).unwrap();
        assert_eq!(c.symbols, 62_500);
        assert_eq!(c.block_bytes(), 125_000);
        assert_eq!(c.code_length(1910), 2388);
        assert_eq!(c.code_length(4), 5);
    }

    proptest::proptest! {
        #[test]
        fn field_axioms_gf16(a in 0u16.., b in 0u16.., c in 0u16..) {
            let f = Field::get(16).unwrap();
            let (a, b, c) = (FieldSymbol(a), FieldSymbol(b), FieldSymbol(c));
            proptest::prop_assert_eq!(f.mul(a, b), f.mul(b, a));
            proptest::prop_assert_eq!(f.mul(a, f.mul(b, c)), f.mul(f.mul(a, b), c));
            proptest::prop_assert_eq!(f.mul(a, b + c), f.mul(a, b) + f.mul(a, c));
        }
    }
}
