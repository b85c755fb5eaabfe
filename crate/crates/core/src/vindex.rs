//! Exact flat-scan vector index over cached query vectors (stage 1).

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{dot, UnitVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntryId(pub u64);

impl fmt::Display for EntryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub entry_id: EntryId,
    pub stage1_similarity: f64,
}

/// Descending similarity, then ascending id.
pub fn candidate_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.stage1_similarity
        .total_cmp(&a.stage1_similarity)
        .then(a.entry_id.cmp(&b.entry_id))
}

/// Vectors live in one contiguous buffer; removal swaps the last slot in.
#[derive(Clone, Debug)]
pub struct FlatIndex {
    dim: usize,
    ids: Vec<EntryId>,
    data: Vec<f64>,
    slots: HashMap<EntryId, usize>,
}

impl FlatIndex {
    pub fn new(dim: usize) -> Self {
        FlatIndex { dim, ids: Vec::new(), data: Vec::new(), slots: HashMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: EntryId) -> bool {
        self.slots.contains_key(&id)
    }

    pub fn insert(&mut self, id: EntryId, v: &UnitVector) -> Result<()> {
        if v.dim() != self.dim {
            return Err(Error::Dimension { expected: self.dim, actual: v.dim() });
        }
        if self.slots.contains_key(&id) {
            return Err(Error::DuplicateId(id.0));
        }
        self.slots.insert(id, self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(v);
        Ok(())
    }

    pub fn remove(&mut self, id: EntryId) -> Result<()> {
        let slot = self.slots.remove(&id).ok_or(Error::NotFound(id.0))?;
        let last = self.ids.len() - 1;
        if slot != last {
            let moved = self.ids[last];
            self.ids[slot] = moved;
            self.slots.insert(moved, slot);
            let (head, tail) = self.data.split_at_mut(last * self.dim);
            head[slot * self.dim..(slot + 1) * self.dim].copy_from_slice(&tail[..self.dim]);
        }
        self.ids.pop();
        self.data.truncate(last * self.dim);
        Ok(())
    }

    pub fn vector(&self, id: EntryId) -> Option<&[f64]> {
        self.slots.get(&id).map(|&s| &self.data[s * self.dim..(s + 1) * self.dim])
    }

    /// Every entry with `cos(v, v_c) > theta1`, best first, at most `k1_cap`.
    pub fn query_threshold(&self, v: &UnitVector, theta1: f64, k1_cap: usize) -> Result<Vec<Candidate>> {
        if v.dim() != self.dim {
            return Err(Error::Dimension { expected: self.dim, actual: v.dim() });
        }
        let mut out: Vec<Candidate> = self
            .data
            .chunks_exact(self.dim)
            .zip(&self.ids)
            .filter_map(|(row, &entry_id)| {
                let sim = dot(v, row).clamp(-1.0, 1.0);
                (sim > theta1).then_some(Candidate { entry_id, stage1_similarity: sim })
            })
            .collect();
        out.sort_unstable_by(candidate_order);
        out.truncate(k1_cap);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::normalize;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uv(v: &[f64]) -> UnitVector {
        normalize(v).unwrap()
    }

    fn random_unit(rng: &mut impl Rng, d: usize) -> UnitVector {
        loop {
            let raw: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            if let Ok(v) = normalize(&raw) {
                return v;
            }
        }
    }

    /// Exhaustive reference: every stored vector scored independently.
    fn scan_oracle(entries: &[(EntryId, UnitVector)], q: &UnitVector, theta: f64, cap: usize) -> Vec<(EntryId, f64)> {
        let mut all: Vec<(EntryId, f64)> = entries
            .iter()
            .map(|(id, v)| (*id, v.iter().zip(q.iter()).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0)))
            .filter(|(_, s)| *s > theta)
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        all.truncate(cap);
        all
    }

    #[test]
    fn basic_examples() {
        let mut idx = FlatIndex::new(2);
        assert!(idx.query_threshold(&uv(&[1.0, 0.0]), 0.7, 16).unwrap().is_empty());
        idx.insert(EntryId(1), &uv(&[1.0, 0.0])).unwrap();
        idx.insert(EntryId(2), &uv(&[0.0, 1.0])).unwrap();
        let got = idx.query_threshold(&uv(&[1.0, 0.0]), 0.7, 16).unwrap();
        assert_eq!(got, vec![Candidate { entry_id: EntryId(1), stage1_similarity: 1.0 }]);
        assert!(matches!(idx.insert(EntryId(1), &uv(&[1.0, 1.0])), Err(Error::DuplicateId(1))));
        let mut wide = FlatIndex::new(8);
        assert!(matches!(wide.insert(EntryId(1), &uv(&[1.0, 0.0, 0.0, 0.0])), Err(Error::Dimension { .. })));
    }

    #[test]
    fn remove_examples() {
        let mut idx = FlatIndex::new(2);
        idx.insert(EntryId(1), &uv(&[1.0, 0.0])).unwrap();
        idx.remove(EntryId(1)).unwrap();
        assert!(idx.query_threshold(&uv(&[1.0, 0.0]), 0.0, 16).unwrap().is_empty());
        assert!(matches!(idx.remove(EntryId(9)), Err(Error::NotFound(9))));

        idx.insert(EntryId(1), &uv(&[1.0, 0.1])).unwrap();
        idx.insert(EntryId(2), &uv(&[1.0, -0.1])).unwrap();
        idx.remove(EntryId(1)).unwrap();
        let got = idx.query_threshold(&uv(&[1.0, 0.1]), 0.0, 16).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].entry_id, EntryId(2));
    }

    #[test]
    fn threshold_is_strict() {
        let mut idx = FlatIndex::new(2);
        idx.insert(EntryId(1), &uv(&[1.0, 0.0])).unwrap();
        idx.insert(EntryId(2), &uv(&[0.0, 1.0])).unwrap();
        // cos = 0 exactly for the orthogonal entry
        let got = idx.query_threshold(&uv(&[1.0, 0.0]), 0.0, 16).unwrap();
        assert_eq!(got.len(), 1);
        let got = idx.query_threshold(&uv(&[1.0, 0.0]), 1.0, 16).unwrap();
        assert!(got.is_empty());
    }

    #[test]
    fn ties_break_on_smaller_id() {
        let mut idx = FlatIndex::new(2);
        for id in [5, 3, 9] {
            idx.insert(EntryId(id), &uv(&[1.0, 1.0])).unwrap();
        }
        let got: Vec<u64> = idx.query_threshold(&uv(&[1.0, 1.0]), 0.5, 2).unwrap().iter().map(|c| c.entry_id.0).collect();
        assert_eq!(got, vec![3, 5]);
    }

    #[test]
    fn hundred_vectors_match_full_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut idx = FlatIndex::new(8);
        let entries: Vec<(EntryId, UnitVector)> = (0..100).map(|i| (EntryId(i), random_unit(&mut rng, 8))).collect();
        for (id, v) in &entries {
            idx.insert(*id, v).unwrap();
        }
        for _ in 0..20 {
            let q = random_unit(&mut rng, 8);
            let got: Vec<(EntryId, f64)> = idx
                .query_threshold(&q, 0.0, 100)
                .unwrap()
                .into_iter()
                .map(|c| (c.entry_id, c.stage1_similarity))
                .collect();
            assert_eq!(got, scan_oracle(&entries, &q, 0.0, 100));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn equals_exhaustive_scan(
            seed in any::<u64>(),
            n in 0usize..10_000,
            removals in 0usize..200,
            theta in -0.5f64..0.9,
            cap in 1usize..64,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = FlatIndex::new(8);
            let mut entries: Vec<(EntryId, UnitVector)> = Vec::with_capacity(n);
            for i in 0..n as u64 {
                let v = random_unit(&mut rng, 8);
                idx.insert(EntryId(i), &v).unwrap();
                entries.push((EntryId(i), v));
            }
            for _ in 0..removals.min(entries.len()) {
                let k = rng.random_range(0..entries.len());
                let (id, _) = entries.swap_remove(k);
                idx.remove(id).unwrap();
            }
            let q = random_unit(&mut rng, 8);
            let got: Vec<(EntryId, f64)> = idx
                .query_threshold(&q, theta, cap)
                .unwrap()
                .into_iter()
                .map(|c| (c.entry_id, c.stage1_similarity))
                .collect();
            prop_assert_eq!(got, scan_oracle(&entries, &q, theta, cap));
        }

        #[test]
        fn raising_theta_never_adds(seed in any::<u64>(), lo in -1.0f64..1.0, delta in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = FlatIndex::new(4);
            for i in 0..200 {
                idx.insert(EntryId(i), &random_unit(&mut rng, 4)).unwrap();
            }
            let q = random_unit(&mut rng, 4);
            let low = idx.query_threshold(&q, lo, usize::MAX).unwrap();
            let high = idx.query_threshold(&q, lo + delta, usize::MAX).unwrap();
            prop_assert!(high.len() <= low.len());
            prop_assert!(high.iter().all(|c| low.contains(c)));
        }
    }
}
