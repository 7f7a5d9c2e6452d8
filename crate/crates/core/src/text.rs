//! Deterministic text featurization.
//!
//! Text is mapped to an L2-normalized sparse vector by hashing word unigrams
//! and character trigrams (FNV-1a, 64 bit) into `dim` buckets. The map is a
//! pure function of `(text, dim)`.

use std::collections::BTreeMap;
use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

pub const DEFAULT_DIM: usize = 4096;

/// Sparse vector with strictly increasing indices.
///
/// `empty` marks the degenerate featurization of blank text; such a vector is
/// all-zero and is never normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVec<T> {
    pub dim: usize,
    pub indices: Vec<u32>,
    pub values: Vec<T>,
    pub empty: bool,
}

impl<T: Scalar> SparseVec<T> {
    pub fn zero(dim: usize) -> Self {
        SparseVec {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
            empty: true,
        }
    }

    /// Builds from an index → value map, dropping exact zeros.
    pub fn from_map(dim: usize, map: BTreeMap<u32, T>) -> Self {
        let mut indices = Vec::with_capacity(map.len());
        let mut values = Vec::with_capacity(map.len());
        for (i, v) in map {
            if v != T::zero() {
                indices.push(i);
                values.push(v);
            }
        }
        let empty = indices.is_empty();
        SparseVec {
            dim,
            indices,
            values,
            empty,
        }
    }

    pub fn from_dense(dense: &[T]) -> Self {
        let map = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != T::zero())
            .map(|(i, v)| (i as u32, *v))
            .collect();
        Self::from_map(dense.len(), map)
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_zero(&self) -> bool {
        self.empty || self.values.iter().all(|v| *v == T::zero())
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, T)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn norm(&self) -> T {
        self.values
            .iter()
            .fold(T::zero(), |acc, v| acc + *v * *v)
            .sqrt()
    }

    pub fn dot(&self, other: &SparseVec<T>) -> T {
        let (mut i, mut j) = (0, 0);
        let mut acc = T::zero();
        while i < self.indices.len() && j < other.indices.len() {
            match self.indices[i].cmp(&other.indices[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.values[i] * other.values[j];
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    /// Unit-norm copy; zero vectors come back flagged empty.
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n == T::zero() || !n.is_finite() {
            return Self::zero(self.dim);
        }
        SparseVec {
            dim: self.dim,
            indices: self.indices.clone(),
            values: self.values.iter().map(|v| *v / n).collect(),
            empty: false,
        }
    }

    pub fn to_dense(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim];
        for (i, v) in self.iter() {
            out[i as usize] = v;
        }
        out
    }

    /// Re-buckets every index modulo `dim`, summing collisions.
    pub fn fold(&self, dim: usize) -> Self {
        let mut map = BTreeMap::new();
        for (i, v) in self.iter() {
            *map.entry(i % dim as u32).or_insert(T::zero()) += v;
        }
        Self::from_map(dim, map)
    }

    /// Elementwise mean of several vectors of equal dimension.
    pub fn mean<'a>(dim: usize, vs: impl IntoIterator<Item = &'a SparseVec<T>>) -> Self {
        let mut map: BTreeMap<u32, T> = BTreeMap::new();
        let mut n = 0usize;
        for v in vs {
            n += 1;
            for (i, x) in v.iter() {
                *map.entry(i).or_insert(T::zero()) += x;
            }
        }
        if n == 0 {
            return Self::zero(dim);
        }
        let scale = T::one() / T::of(n as f64);
        for v in map.values_mut() {
            *v *= scale;
        }
        Self::from_map(dim, map)
    }
}

/// 64-bit FNV-1a of a byte string.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Lowercased alphanumeric word tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

fn bucket(prefix: &[u8], gram: &str, dim: usize) -> u32 {
    let mut h = FnvHasher::default();
    h.write(prefix);
    h.write(gram.as_bytes());
    (h.finish() % dim as u64) as u32
}

/// Hashed unigram + character-trigram featurization, L2-normalized.
///
/// Trigrams are taken per token over `<token>` so short words still
/// contribute boundary grams. Blank text yields [`SparseVec::zero`].
pub fn featurize<T: Scalar>(text: &str, dim: usize) -> SparseVec<T> {
    assert!(dim > 0, "featurizer dimension must be positive");
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return SparseVec::zero(dim);
    }
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for tok in &tokens {
        *counts.entry(bucket(b"w:", tok, dim)).or_insert(0.0) += 1.0;
        let chars: Vec<char> = std::iter::once('<')
            .chain(tok.chars())
            .chain(std::iter::once('>'))
            .collect();
        for w in chars.windows(3) {
            let gram: String = w.iter().collect();
            *counts.entry(bucket(b"c:", &gram, dim)).or_insert(0.0) += 1.0;
        }
    }
    let norm = counts.values().map(|c| c * c).sum::<f64>().sqrt();
    let map = counts
        .into_iter()
        .map(|(i, c)| (i, T::of(c / norm)))
        .collect();
    SparseVec::from_map(dim, map)
}

/// `1 − a·b` for unit vectors, clamped to `[0, 1]`.
///
/// A zero-flagged input carries no information and scores the maximal
/// distance 1.
pub fn cosine_distance<T: Scalar>(a: &SparseVec<T>, b: &SparseVec<T>) -> T {
    if a.is_zero() || b.is_zero() {
        return T::one();
    }
    let d = T::one() - a.dot(b);
    d.max(T::zero()).min(T::one())
}

/// Cosine similarity for vectors of arbitrary norm; 0 when either is zero.
pub fn cosine_similarity<T: Scalar>(a: &SparseVec<T>, b: &SparseVec<T>) -> T {
    let na = a.norm();
    let nb = b.norm();
    if na == T::zero() || nb == T::zero() {
        return T::zero();
    }
    a.dot(b) / (na * nb)
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "about", "also", "any", "for", "from", "how", "i", "im", "in", "is",
    "it", "me", "my", "of", "on", "or", "so", "some", "that", "the", "this", "to", "want",
    "what", "with", "you", "your", "need", "looking", "can", "do", "there", "be",
];

/// Up to `n` content-bearing tokens in message order, deduplicated.
pub fn key_tokens(text: &str, n: usize) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for tok in tokenize(text) {
        if tok.chars().count() < 3 || STOPWORDS.contains(&tok.as_str()) {
            continue;
        }
        if !out.contains(&tok) {
            out.push(tok);
        }
        if out.len() == n {
            break;
        }
    }
    out
}
