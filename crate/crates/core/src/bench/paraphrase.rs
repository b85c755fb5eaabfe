//! Seeded rule-based paraphraser: synonym substitution, phrase swaps,
//! clause reordering and filler insertion.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::error::{Error, Result};

pub const BUNDLED_SYNONYMS: &str = include_str!("../../data/synonyms.txt");

const FILLERS: &[&str] = &["please", "briefly", "actually", "quickly"];
const PREPOSITIONS: &[&str] = &["in", "to", "for", "with", "on"];

#[derive(Clone, Debug)]
pub struct Paraphraser {
    /// Lowercase word sequences replaced at the start of a query.
    phrases: Vec<(Vec<String>, Vec<String>)>,
    words: Vec<(String, Vec<String>)>,
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

impl Paraphraser {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_SYNONYMS).expect("bundled synonym table parses")
    }

    pub fn parse(table: &str) -> Result<Self> {
        let mut phrases = Vec::new();
        let mut word_rules = Vec::new();
        for (n, line) in table.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (lhs, rhs) = line
                .split_once(':')
                .ok_or_else(|| Error::BenchInput(format!("synonyms line {}: missing ':'", n + 1)))?;
            let alts: Vec<String> = rhs.split(',').map(|a| a.trim().to_lowercase()).filter(|a| !a.is_empty()).collect();
            if alts.is_empty() {
                return Err(Error::BenchInput(format!("synonyms line {}: no alternatives", n + 1)));
            }
            match lhs.trim().strip_prefix('^') {
                Some(p) => phrases.push((words(&p.to_lowercase()), alts)),
                None => word_rules.push((lhs.trim().to_lowercase(), alts)),
            }
        }
        // longest phrase first so "can you explain" wins over shorter prefixes
        phrases.sort_by_key(|p| std::cmp::Reverse(p.0.len()));
        Ok(Paraphraser { phrases, words: word_rules })
    }

    /// Returns a variant of `text` that differs from it.
    pub fn paraphrase(&self, text: &str, rng: &mut impl Rng) -> String {
        let trimmed = text.trim();
        let question = trimmed.ends_with('?');
        let body = trimmed.trim_end_matches(['?', '.', '!']);
        let mut toks = words(body);
        let original = toks.clone();
        let lower = |t: &[String]| t.iter().map(|w| w.to_lowercase()).collect::<Vec<_>>();

        if rng.random_bool(0.5) {
            let low = lower(&toks);
            if let Some((lhs, alts)) = self.phrases.iter().find(|(lhs, _)| low.starts_with(lhs)) {
                let alt = alts.choose(rng).unwrap();
                toks.splice(..lhs.len(), words(alt));
            }
        }
        if rng.random_bool(0.7) {
            let low = lower(&toks);
            let options: Vec<(usize, &Vec<String>)> = low
                .iter()
                .enumerate()
                .filter_map(|(i, w)| self.words.iter().find(|(k, _)| k == w).map(|(_, alts)| (i, alts)))
                .collect();
            if let Some((i, alts)) = options.choose(rng) {
                let alt = alts.choose(rng).unwrap();
                toks.splice(*i..*i + 1, words(alt));
            }
        }
        if rng.random_bool(0.3) {
            reorder(&mut toks);
        }
        if rng.random_bool(0.3) || lower(&toks) == lower(&original) {
            let filler = FILLERS.choose(rng).unwrap().to_string();
            let at = if rng.random_bool(0.5) { 0 } else { toks.len() };
            toks.insert(at, filler);
        }
        render(toks, question)
    }
}

/// Moves a short trailing prepositional phrase to the front:
/// "how is it used in practice" becomes "in practice, how is it used".
fn reorder(toks: &mut Vec<String>) {
    let n = toks.len();
    for len in 2..=3 {
        if n > len + 1 && PREPOSITIONS.contains(&toks[n - len].to_lowercase().as_str()) {
            let mut tail: Vec<String> = toks.drain(n - len..).collect();
            if let Some(last) = tail.last_mut() {
                last.push(',');
            }
            if let Some(first) = toks.first_mut() {
                *first = first.to_lowercase();
            }
            tail.append(toks);
            *toks = tail;
            return;
        }
    }
}

fn render(toks: Vec<String>, question: bool) -> String {
    let mut s = toks.join(" ");
    if let Some(c) = s.get_mut(0..1) {
        c.make_ascii_uppercase();
    }
    if question {
        s.push('?');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::normalize_text;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn always_changes_the_text() {
        let p = Paraphraser::bundled();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for q in ["What are its key features?", "How does it work?", "What is a hash table?", "zzz"] {
            for _ in 0..50 {
                let out = p.paraphrase(q, &mut rng);
                assert_ne!(normalize_text(&out), normalize_text(q), "{q} -> {out}");
            }
        }
    }

    #[test]
    fn reorders_trailing_phrase() {
        let mut t = words("How is it used in practice");
        reorder(&mut t);
        assert_eq!(render(t, true), "In practice, how is it used?");
    }

    #[test]
    fn deterministic_for_seed() {
        let p = Paraphraser::bundled();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| p.paraphrase("Can you explain a bloom filter?", &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn rejects_malformed_table() {
        assert!(Paraphraser::parse("no colon here").is_err());
        assert!(Paraphraser::parse("word: ,").is_err());
    }
}
