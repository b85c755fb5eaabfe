//! Deterministic bag-of-tokens embedder.
//!
//! Each token is hashed with FNV-1a 64, the hash seeds a SplitMix64 stream,
//! and Box-Muller turns pairs of uniform draws into `d` Gaussian components.
//! Token directions are L2-normalized, averaged, and the mean is normalized
//! again. The result depends only on the normalized text.

use std::f64::consts::PI;

use super::Embedder;
use crate::error::{Error, Result};
use crate::text::{is_stopword, normalize_text};
use crate::vector::{l2_norm, UnitVector};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in (0, 1]; never zero so `ln` stays finite.
    pub fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Unit direction assigned to a single (already normalized) token.
pub fn token_direction(token: &str, dim: usize) -> Vec<f64> {
    let mut rng = SplitMix64::new(fnv1a64(token.as_bytes()));
    let mut out = Vec::with_capacity(dim + 1);
    while out.len() < dim {
        let u1 = rng.next_open01();
        let u2 = rng.next_open01();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * PI * u2;
        out.push(r * theta.cos());
        out.push(r * theta.sin());
    }
    out.truncate(dim);
    let norm = l2_norm(&out);
    out.iter_mut().for_each(|v| *v /= norm);
    out
}

#[derive(Clone, Debug)]
pub struct TokenHashEmbedder {
    dim: usize,
    drop_stopwords: bool,
}

impl TokenHashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        TokenHashEmbedder { dim, drop_stopwords: false }
    }

    /// When enabled, function words are skipped unless the text consists of
    /// nothing else.
    pub fn with_stopwords_dropped(mut self, drop: bool) -> Self {
        self.drop_stopwords = drop;
        self
    }
}

impl Embedder for TokenHashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<UnitVector> {
        let normalized = normalize_text(text);
        let all: Vec<&str> = normalized.split_whitespace().collect();
        if all.is_empty() {
            return Err(Error::EmptyQuery);
        }
        let mut tokens: Vec<&str> = all.clone();
        if self.drop_stopwords {
            tokens.retain(|t| !is_stopword(t));
            if tokens.is_empty() {
                tokens = all;
            }
        }
        let mut acc = vec![0.0; self.dim];
        for token in &tokens {
            for (a, v) in acc.iter_mut().zip(token_direction(token, self.dim)) {
                *a += v;
            }
        }
        let n = tokens.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        UnitVector::normalize(&acc)
    }
}
