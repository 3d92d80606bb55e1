//! Sentence encoders: the pluggable text-to-vector interface used for weak
//! labeling, rumour clustering and evidence selection.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datamodel::read_jsonl;
use crate::error::{Error, Result};
use crate::math::{fnv1a, mix_seed};
use crate::textenc::tokenize;

/// Deterministic map from text to a finite vector of fixed dimension.
pub trait SentenceEncoder: Send + Sync {
    fn dim(&self) -> usize;
    fn encode(&self, text: &str) -> Vec<f64>;
}

/// Seeded random projection of a token-hash bag, unit-normalized.
///
/// Each distinct token maps to a fixed Gaussian direction derived from its
/// hash and the encoder seed; a text is the normalized sum of its token
/// directions. Texts without tokens encode to the zero vector.
#[derive(Debug, Clone)]
pub struct HashEncoder {
    dim: usize,
    seed: u64,
}

impl HashEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "encoder dimension must be positive");
        HashEncoder { dim, seed }
    }

    fn token_direction(&self, token: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[self.seed, fnv1a(token.as_bytes())]));
        (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect()
    }
}

impl SentenceEncoder for HashEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Vec<f64> {
        let mut counts: Vec<(String, usize)> = Vec::new();
        for tok in tokenize(text) {
            match counts.iter_mut().find(|(t, _)| *t == tok) {
                Some((_, c)) => *c += 1,
                None => counts.push((tok, 1)),
            }
        }
        let mut v = vec![0.0; self.dim];
        for (tok, count) in &counts {
            for (acc, x) in v.iter_mut().zip(self.token_direction(tok)) {
                *acc += *count as f64 * x;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrecomputedRecord {
    pub text: String,
    pub vector: Vec<f64>,
}

/// Vectors produced offline by an external sentence model, keyed by exact text.
/// Unknown texts fall back to a [`HashEncoder`] of the same dimension.
#[derive(Debug, Clone)]
pub struct PrecomputedEncoder {
    table: HashMap<String, Vec<f64>>,
    fallback: HashEncoder,
}

impl PrecomputedEncoder {
    pub fn new(table: HashMap<String, Vec<f64>>, dim: usize, seed: u64) -> Result<Self> {
        for (text, v) in &table {
            if v.len() != dim {
                return Err(Error::Dimension(format!(
                    "precomputed vector for {text:?} has length {} (expected {dim})",
                    v.len()
                )));
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::numeric("precomputed encoder", format!("vector for {text:?}")));
            }
        }
        Ok(PrecomputedEncoder {
            table,
            fallback: HashEncoder::new(dim, seed),
        })
    }

    pub fn load(path: &Path, dim: usize, seed: u64) -> Result<Self> {
        let records: Vec<PrecomputedRecord> = read_jsonl(path)?;
        Self::new(records.into_iter().map(|r| (r.text, r.vector)).collect(), dim, seed)
    }
}

impl SentenceEncoder for PrecomputedEncoder {
    fn dim(&self) -> usize {
        self.fallback.dim
    }

    fn encode(&self, text: &str) -> Vec<f64> {
        match self.table.get(text) {
            Some(v) => v.clone(),
            None => self.fallback.encode(text),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::cosine;

    #[test]
    fn hash_encoder_is_deterministic_and_unit_norm() {
        let enc = HashEncoder::new(32, 7);
        let a = enc.encode("Masks do not stop the virus");
        let b = enc.encode("Masks do not stop the virus");
        assert_eq!(a, b);
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_eq!(enc.encode("   ").iter().filter(|x| **x != 0.0).count(), 0);
    }

    #[test]
    fn shared_tokens_raise_similarity() {
        let enc = HashEncoder::new(256, 1);
        let base = enc.encode("vaccine trial results published today");
        let near = enc.encode("vaccine trial results published today officially");
        let far = enc.encode("football league final score");
        assert!(cosine(&base, &near) > 0.8);
        assert!(cosine(&base, &far) < 0.5);
    }

    #[test]
    fn precomputed_lookup_with_fallback() {
        let mut table = HashMap::new();
        table.insert("hello".to_string(), vec![1.0, 0.0, 0.0]);
        let enc = PrecomputedEncoder::new(table, 3, 0).unwrap();
        assert_eq!(enc.encode("hello"), vec![1.0, 0.0, 0.0]);
        assert_eq!(enc.encode("other").len(), 3);
        let bad = PrecomputedEncoder::new([("x".to_string(), vec![1.0])].into_iter().collect(), 3, 0);
        assert!(bad.is_err());
    }
}
