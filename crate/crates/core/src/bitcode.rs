//! Bit-packed binary codes in {-1,+1}^b and ternary codewords in {-1,0,+1}^b.
//!
//! A set bit stands for +1 and a clear bit for -1, so the Hamming distance
//! is the popcount of the XOR. Ternary codewords carry a second bit plane,
//! the active mask; inactive positions are excluded by AND-ing the XOR with
//! the mask. Both distances go through the same kernel.

use crate::error::{Error, Result};

const WORD_BITS: usize = 64;

#[inline]
fn words_for(len: usize) -> usize {
    len.div_ceil(WORD_BITS)
}

/// Mask of the valid bits in the last word of a `len`-bit code.
#[inline]
fn tail_mask(len: usize) -> u64 {
    match len % WORD_BITS {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

/// popcount((a XOR b) AND mask) over the words of `mask`. When `mask` is
/// `None` every bit of `a` counts. `a` and `b` may be longer than `mask`;
/// the extra words are treated as inactive.
#[inline]
fn xor_popcount(a: &[u64], b: &[u64], mask: Option<&[u64]>) -> u32 {
    match mask {
        None => a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum(),
        Some(m) => a
            .iter()
            .zip(b)
            .zip(m)
            .map(|((x, y), m)| ((x ^ y) & m).count_ones())
            .sum(),
    }
}

/// A fixed-width binary code stored one bit per position.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PackedCode {
    len: usize,
    words: Vec<u64>,
}

impl PackedCode {
    /// All -1 (all bits clear).
    pub fn zeros(len: usize) -> Self {
        PackedCode {
            len,
            words: vec![0; words_for(len)],
        }
    }

    /// All +1 (all bits set).
    pub fn ones(len: usize) -> Self {
        let mut code = PackedCode {
            len,
            words: vec![u64::MAX; words_for(len)],
        };
        code.clear_padding();
        code
    }

    /// Packs a sequence of ±1 values.
    pub fn pack(bits: &[i8]) -> Result<Self> {
        let mut code = PackedCode::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            match b {
                1 => code.words[i / WORD_BITS] |= 1 << (i % WORD_BITS),
                -1 => {}
                other => {
                    return Err(Error::InvalidInput(format!(
                        "code element {other} at position {i} is not -1 or +1"
                    )))
                }
            }
        }
        Ok(code)
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut code = PackedCode::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            code.set(i, b);
        }
        code
    }

    /// Builds a code from raw words; bits beyond `len` are cleared.
    pub fn from_words(len: usize, mut words: Vec<u64>) -> Result<Self> {
        if words.len() != words_for(len) {
            return Err(Error::dim(words_for(len), words.len()));
        }
        if let Some(last) = words.last_mut() {
            *last &= tail_mask(len);
        }
        Ok(PackedCode { len, words })
    }

    pub fn unpack(&self) -> Vec<i8> {
        (0..self.len).map(|i| self.value(i)).collect()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// True when position `i` holds +1.
    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        self.words[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1
    }

    /// The ±1 value at position `i`.
    #[inline]
    pub fn value(&self, i: usize) -> i8 {
        if self.get(i) {
            1
        } else {
            -1
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize, bit: bool) {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        let w = &mut self.words[i / WORD_BITS];
        let m = 1u64 << (i % WORD_BITS);
        if bit {
            *w |= m;
        } else {
            *w &= !m;
        }
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// Changes the length, dropping trailing bits or appending clear ones.
    pub fn resize(&mut self, len: usize) {
        self.words.resize(words_for(len), 0);
        self.len = len;
        self.clear_padding();
    }

    /// Copy of `self` followed by `other`.
    pub fn concat(&self, other: &PackedCode) -> PackedCode {
        let mut out = self.clone();
        out.resize(self.len + other.len);
        for i in 0..other.len {
            if other.get(i) {
                out.set(self.len + i, true);
            }
        }
        out
    }

    /// Bitwise complement within the logical length.
    pub fn complement(&self) -> PackedCode {
        let mut out = PackedCode {
            len: self.len,
            words: self.words.iter().map(|w| !w).collect(),
        };
        out.clear_padding();
        out
    }

    /// Number of positions where `self` and `other` differ.
    pub fn hamming(&self, other: &PackedCode) -> Result<u32> {
        if self.len != other.len {
            return Err(Error::dim(self.len, other.len));
        }
        Ok(xor_popcount(&self.words, &other.words, None))
    }

    fn clear_padding(&mut self) {
        let mask = tail_mask(self.len);
        if let Some(last) = self.words.last_mut() {
            *last &= mask;
        }
    }
}

impl std::fmt::Debug for PackedCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let bits: String = (0..self.len)
            .map(|i| if self.get(i) { '1' } else { '0' })
            .collect();
        write!(f, "PackedCode({bits})")
    }
}

/// A code in {-1,0,+1}^b: value bits plus an active-bit mask.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct TernaryCodeword {
    values: PackedCode,
    mask: PackedCode,
}

impl TernaryCodeword {
    /// Value bits at inactive positions are cleared.
    pub fn new(values: PackedCode, mask: PackedCode) -> Result<Self> {
        if values.len() != mask.len() {
            return Err(Error::dim(values.len(), mask.len()));
        }
        let mut values = values;
        for (v, m) in values.words.iter_mut().zip(&mask.words) {
            *v &= m;
        }
        Ok(TernaryCodeword { values, mask })
    }

    /// A binary code viewed as a ternary codeword with every bit active.
    pub fn all_active(code: PackedCode) -> Self {
        let mask = PackedCode::ones(code.len());
        TernaryCodeword { values: code, mask }
    }

    /// Every position inactive.
    pub fn inactive(len: usize) -> Self {
        TernaryCodeword {
            values: PackedCode::zeros(len),
            mask: PackedCode::zeros(len),
        }
    }

    /// `offset` inactive positions, then `core` fully active, then inactive
    /// padding up to `len`.
    pub fn with_core(core: &PackedCode, offset: usize, len: usize) -> Result<Self> {
        if offset + core.len() > len {
            return Err(Error::Range {
                what: "codeword core end",
                value: offset + core.len(),
                lo: 0,
                hi: len,
            });
        }
        let mut values = PackedCode::zeros(len);
        let mut mask = PackedCode::zeros(len);
        for i in 0..core.len() {
            mask.set(offset + i, true);
            if core.get(i) {
                values.set(offset + i, true);
            }
        }
        Ok(TernaryCodeword { values, mask })
    }

    pub fn from_ternary(entries: &[i8]) -> Result<Self> {
        let mut values = PackedCode::zeros(entries.len());
        let mut mask = PackedCode::zeros(entries.len());
        for (i, &e) in entries.iter().enumerate() {
            match e {
                1 => {
                    values.set(i, true);
                    mask.set(i, true);
                }
                -1 => mask.set(i, true),
                0 => {}
                other => {
                    return Err(Error::InvalidInput(format!(
                        "ternary element {other} at position {i} is not -1, 0 or +1"
                    )))
                }
            }
        }
        Ok(TernaryCodeword { values, mask })
    }

    pub fn to_ternary(&self) -> Vec<i8> {
        (0..self.len()).map(|i| self.value(i)).collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &PackedCode {
        &self.values
    }

    pub fn mask(&self) -> &PackedCode {
        &self.mask
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.mask.get(i)
    }

    /// -1, 0 or +1.
    pub fn value(&self, i: usize) -> i8 {
        if !self.mask.get(i) {
            0
        } else {
            self.values.value(i)
        }
    }

    pub fn active_count(&self) -> u32 {
        self.mask.count_ones()
    }

    /// Indices of the active positions, ascending.
    pub fn active_positions(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.mask.get(i))
    }

    /// Same codeword extended with inactive positions up to `len`.
    pub fn padded(&self, len: usize) -> Result<Self> {
        if len < self.len() {
            return Err(Error::Range {
                what: "padded length",
                value: len,
                lo: self.len(),
                hi: usize::MAX,
            });
        }
        let mut out = self.clone();
        out.values.resize(len);
        out.mask.resize(len);
        Ok(out)
    }
}

impl std::fmt::Debug for TernaryCodeword {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s: String = (0..self.len())
            .map(|i| match self.value(i) {
                1 => '+',
                -1 => '-',
                _ => '0',
            })
            .collect();
        write!(f, "TernaryCodeword({s})")
    }
}

/// Disagreements between `query` and `cw`, counted at active positions only.
pub fn hamming_masked(query: &PackedCode, cw: &TernaryCodeword) -> Result<u32> {
    if query.len() != cw.len() {
        return Err(Error::dim(query.len(), cw.len()));
    }
    Ok(xor_popcount(
        query.words(),
        cw.values.words(),
        Some(cw.mask.words()),
    ))
}

/// Like [`hamming_masked`], but `cw` may be shorter than `query`; the missing
/// trailing positions are inactive, exactly as if `cw` had been padded.
pub fn hamming_masked_padded(query: &PackedCode, cw: &TernaryCodeword) -> Result<u32> {
    if cw.len() > query.len() {
        return Err(Error::dim(query.len(), cw.len()));
    }
    Ok(xor_popcount(
        query.words(),
        cw.values.words(),
        Some(cw.mask.words()),
    ))
}

pub fn hamming(a: &PackedCode, b: &PackedCode) -> Result<u32> {
    a.hamming(b)
}
