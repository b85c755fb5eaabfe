//! Replayable workloads with ground-truth lineage.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dialogue;
use super::paraphrase::Paraphraser;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warm,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadRecord {
    pub record_id: String,
    pub session_id: String,
    pub turn_index: u64,
    pub query: String,
    pub reference_response: String,
    /// Warm record this one rephrases; absent for records that should miss.
    pub paraphrase_of: Option<String>,
    pub phase: Phase,
}

fn record(session: &str, turn_index: usize, query: String, response: &str, of: Option<String>, phase: Phase) -> WorkloadRecord {
    WorkloadRecord {
        record_id: format!("{session}#{turn_index}"),
        session_id: session.to_owned(),
        turn_index: turn_index as u64,
        query,
        reference_response: response.to_owned(),
        paraphrase_of: of,
        phase,
    }
}

pub fn generate_workload(dialogues: &[Dialogue], seed: u64, warm_fraction: f64) -> Result<Vec<WorkloadRecord>> {
    generate_workload_with(dialogues, seed, warm_fraction, &Paraphraser::bundled())
}

/// Warm phase: `warm_fraction` of the dialogues, verbatim. Test phase: one
/// paraphrased session per warm dialogue, and one distractor session per
/// warm dialogue with a follow-up, which replays an unseen dialogue's
/// opening and then asks the warm follow-up verbatim.
pub fn generate_workload_with(
    dialogues: &[Dialogue],
    seed: u64,
    warm_fraction: f64,
    paraphraser: &Paraphraser,
) -> Result<Vec<WorkloadRecord>> {
    if dialogues.is_empty() {
        return Err(Error::BenchInput("dataset has no dialogues".into()));
    }
    if !(warm_fraction > 0.0 && warm_fraction < 1.0) {
        return Err(Error::BenchInput(format!("warm_fraction must be in (0,1), got {warm_fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<&Dialogue> = dialogues.iter().collect();
    order.shuffle(&mut rng);
    let n_warm = ((dialogues.len() as f64 * warm_fraction).round() as usize).clamp(1, dialogues.len());
    let (warm, rest) = order.split_at(n_warm);

    let mut out = Vec::new();
    for d in warm {
        let session = format!("warm/{}", d.id);
        for (i, (q, r)) in d.exchanges().enumerate() {
            out.push(record(&session, i, q.text.clone(), &r.text, None, Phase::Warm));
        }
    }

    let mut sessions: Vec<Vec<WorkloadRecord>> = Vec::new();
    let mut donors = rest.iter().cycle();
    for d in warm {
        let warm_session = format!("warm/{}", d.id);
        let session = format!("para/{}", d.id);
        sessions.push(
            d.exchanges()
                .enumerate()
                .map(|(i, (q, r))| {
                    let text = paraphraser.paraphrase(&q.text, &mut rng);
                    record(&session, i, text, &r.text, Some(format!("{warm_session}#{i}")), Phase::Test)
                })
                .collect(),
        );
        let Some((follow_up, _)) = d.exchanges().nth(1) else { continue };
        let Some(donor) = donors.next() else { continue };
        let session = format!("dist/{}/{}", d.id, donor.id);
        let mut ex = donor.exchanges();
        let (opening, opening_answer) = ex.next().expect("dialogues have an exchange");
        let answer = ex.next().map_or(opening_answer, |(_, r)| r);
        sessions.push(vec![
            record(&session, 0, opening.text.clone(), &opening_answer.text, None, Phase::Test),
            record(&session, 1, follow_up.text.clone(), &answer.text, None, Phase::Test),
        ]);
    }
    sessions.shuffle(&mut rng);
    out.extend(sessions.into_iter().flatten());
    Ok(out)
}

/// Checks that every paraphrase points at a warm record with the same turn
/// index whose earlier turns are, one for one, the targets of this session's
/// earlier turns.
pub fn validate_lineage(records: &[WorkloadRecord]) -> Result<()> {
    let by_id: HashMap<&str, &WorkloadRecord> = records.iter().map(|r| (r.record_id.as_str(), r)).collect();
    if by_id.len() != records.len() {
        return Err(Error::BenchInput("duplicate record_id".into()));
    }
    let mut by_session: HashMap<&str, Vec<&WorkloadRecord>> = HashMap::new();
    for r in records {
        by_session.entry(r.session_id.as_str()).or_default().push(r);
    }
    for (session, recs) in &by_session {
        for (i, r) in recs.iter().enumerate() {
            if r.turn_index != i as u64 {
                return Err(Error::BenchInput(format!("session {session}: turn indices not contiguous")));
            }
        }
    }
    for r in records {
        let Some(of) = &r.paraphrase_of else { continue };
        let bad = |msg: &str| Error::BenchInput(format!("{}: {msg}", r.record_id));
        let target = by_id.get(of.as_str()).ok_or_else(|| bad("paraphrase_of names an unknown record"))?;
        if target.phase != Phase::Warm || r.phase != Phase::Test {
            return Err(bad("paraphrase must be a test record pointing at a warm record"));
        }
        if target.turn_index != r.turn_index {
            return Err(bad("turn index differs from its target"));
        }
        let mine = &by_session[r.session_id.as_str()];
        let theirs = &by_session[target.session_id.as_str()];
        for k in 0..r.turn_index as usize {
            if mine[k].paraphrase_of.as_deref() != Some(theirs[k].record_id.as_str()) {
                return Err(bad("earlier turns do not follow the target's lineage"));
            }
        }
    }
    Ok(())
}

pub fn write_workload(mut w: impl Write, records: &[WorkloadRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::BenchInput(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_workload(reader: impl BufRead) -> Result<Vec<WorkloadRecord>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::BenchInput(format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}
