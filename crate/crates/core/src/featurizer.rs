//! Signed hashed bag of character n-grams.
//!
//! Text is lowercased and its whitespace runs collapsed to a single space.
//! Every window of 2, 3 and 4 consecutive `char`s contributes `±1` at
//! `fnv1a64(ngram) mod dim`, with the sign taken from the top bit of a second
//! FNV-1a pass whose initial state is `FNV_OFFSET * SIGN_SEED` (wrapping).
//! Hashes run over the UTF-8 bytes of the n-gram. The accumulated vector is
//! L2-normalized; if it cancels to zero the result is `e_0`.

use crate::error::{Error, Result};

pub const DEFAULT_DIM: usize = 2048;
pub const NGRAM_SIZES: [usize; 3] = [2, 3, 4];

pub const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
pub const SIGN_SEED: u64 = 0x9e37_79b9_7f4a_7c15;

/// Sparse, unit-norm feature vector. Entries are sorted by index.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    dim: usize,
    entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    pub fn from_dense(values: &[f64]) -> Self {
        let entries = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i as u32, *v))
            .collect();
        FeatureVector { dim: values.len(), entries }
    }

    pub fn basis(dim: usize, index: usize) -> Self {
        FeatureVector { dim, entries: vec![(index as u32, 1.0)] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            out[i as usize] = v;
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &FeatureVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.entries.len() && j < other.entries.len() {
            let (a, b) = (self.entries[i], other.entries[j]);
            match a.0.cmp(&b.0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a.1 * b.1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc / (self.norm() * other.norm())
    }
}

#[inline]
fn fnv1a(state: u64, bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(state, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub fn index_hash(bytes: &[u8]) -> u64 {
    fnv1a(FNV_OFFSET, bytes)
}

pub fn sign_hash(bytes: &[u8]) -> u64 {
    fnv1a(FNV_OFFSET.wrapping_mul(SIGN_SEED), bytes)
}

/// Lowercases and collapses whitespace runs to single spaces.
pub fn normalize_text(text: &str) -> String {
    text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Featurizer {
    dim: usize,
}

impl Default for Featurizer {
    fn default() -> Self {
        Featurizer { dim: DEFAULT_DIM }
    }
}

impl Featurizer {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("feature dimension must be positive".into()));
        }
        Ok(Featurizer { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn featurize(&self, text: &str) -> Result<FeatureVector> {
        let norm = normalize_text(text);
        if norm.is_empty() {
            return Err(Error::EmptyInput);
        }
        let chars: Vec<(usize, char)> = norm.char_indices().collect();
        let bytes = norm.as_bytes();
        let mut acc: Vec<(u32, f64)> = Vec::with_capacity(chars.len() * NGRAM_SIZES.len());
        for n in NGRAM_SIZES {
            if chars.len() < n {
                continue;
            }
            for w in 0..=chars.len() - n {
                let start = chars[w].0;
                let end = chars.get(w + n).map_or(bytes.len(), |c| c.0);
                let gram = &bytes[start..end];
                let idx = (index_hash(gram) % self.dim as u64) as u32;
                let sign = if sign_hash(gram) >> 63 == 0 { 1.0 } else { -1.0 };
                acc.push((idx, sign));
            }
        }
        acc.sort_unstable_by_key(|e| e.0);
        let mut entries: Vec<(u32, f64)> = Vec::with_capacity(acc.len());
        for (i, v) in acc {
            match entries.last_mut() {
                Some(last) if last.0 == i => last.1 += v,
                _ => entries.push((i, v)),
            }
        }
        entries.retain(|e| e.1 != 0.0);
        let n = entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
        if n == 0.0 {
            return Ok(FeatureVector::basis(self.dim, 0));
        }
        for e in &mut entries {
            e.1 /= n;
        }
        Ok(FeatureVector { dim: self.dim, entries })
    }
}

/// Featurizes with the default 2048-dimensional configuration.
pub fn featurize(text: &str) -> Result<FeatureVector> {
    Featurizer::default().featurize(text)
}
