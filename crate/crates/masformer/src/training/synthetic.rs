//! Synthetic key-value retrieval task.
//!
//! A sequence of filler holds key-value pairs written as adjacent tokens.
//! The tail asks for one key back: `... K V ... QUERY K ?` and the position
//! after the repeated key must be its value. The gap between the value and
//! the query marker controls how far the answer sits from the question, so
//! the task probes whether information can cross attention span boundaries.

use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::RngState;
use crate::training::data::{Corpus, Document};

pub const FILLER_TOKEN: u16 = 0;
pub const QUERY_TOKEN: u16 = 1;
/// Key and value ids start after the two structural tokens.
pub const FIRST_KEY: u16 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetrievalTaskSpec {
    pub seq_len: usize,
    pub num_keys: usize,
    pub num_values: usize,
    /// Bounds on the number of positions between a queried value token and
    /// the query marker. min == max pins the distance exactly.
    pub min_gap: usize,
    pub max_gap: usize,
    /// Key-value pairs planted per sequence; the first is the queried one.
    pub pairs: usize,
}

impl RetrievalTaskSpec {
    /// Vocabulary the task needs: filler, query marker, keys, values.
    pub fn vocab(&self) -> usize {
        2 + self.num_keys + self.num_values
    }

    pub fn first_value(&self) -> u16 {
        FIRST_KEY + self.num_keys as u16
    }

    pub fn validate(&self) -> Result<()> {
        if self.seq_len < 5 {
            return Err(Error::InfeasibleTask(
                "seq_len must be at least 5 (one pair plus the query tail)".to_string(),
            ));
        }
        if self.pairs == 0 {
            return Err(Error::InfeasibleTask("at least one pair is required".to_string()));
        }
        if self.num_keys < self.pairs {
            return Err(Error::InfeasibleTask(format!(
                "{} pairs need at least that many distinct keys, have {}",
                self.pairs, self.num_keys
            )));
        }
        if self.num_values < 2 {
            return Err(Error::InfeasibleTask(
                "fewer than 2 values makes the answer a constant".to_string(),
            ));
        }
        if self.min_gap > self.max_gap {
            return Err(Error::InfeasibleTask(format!(
                "min_gap {} exceeds max_gap {}",
                self.min_gap, self.max_gap
            )));
        }
        // The queried value sits at seq_len - 4 - gap and its key one before.
        if self.max_gap > self.seq_len - 5 {
            return Err(Error::InfeasibleTask(format!(
                "max_gap {} pushes the pair before position 0 (limit {})",
                self.max_gap,
                self.seq_len - 5
            )));
        }
        if self.vocab() > u16::MAX as usize {
            return Err(Error::InfeasibleTask("vocabulary exceeds u16".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrievalSample {
    pub tokens: Vec<u16>,
    /// Position of the answer token; the model predicts it from the prefix.
    pub answer_pos: usize,
}

/// Generate `count` sequences. The draw sequence is fixed, so one seed gives
/// one corpus.
pub fn gen_retrieval(
    spec: &RetrievalTaskSpec,
    count: usize,
    rng: &mut RngState,
) -> Result<Vec<RetrievalSample>> {
    spec.validate()?;
    let n = spec.seq_len;
    let query_pos = n - 3;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let mut tokens = vec![FILLER_TOKEN; n];
        let mut occupied = vec![false; n];
        occupied[query_pos] = true;
        occupied[query_pos + 1] = true;
        occupied[query_pos + 2] = true;

        // Distinct keys per sequence, first one queried.
        let mut keys: Vec<u16> = Vec::with_capacity(spec.pairs);
        while keys.len() < spec.pairs {
            let k = FIRST_KEY + rng.below(spec.num_keys as u64) as u16;
            if !keys.contains(&k) {
                keys.push(k);
            }
        }

        let mut answer = 0u16;
        for (p, &key) in keys.iter().enumerate() {
            let value = spec.first_value() + rng.below(spec.num_values as u64) as u16;
            let gap_span = (spec.max_gap - spec.min_gap + 1) as u64;
            let mut placed = false;
            for _attempt in 0..10_000 {
                let gap = if p == 0 {
                    spec.min_gap + rng.below(gap_span) as usize
                } else {
                    // Distractors go anywhere a pair fits.
                    rng.below((n - 4) as u64) as usize
                };
                let vpos = query_pos - 1 - gap;
                let kpos = vpos - 1;
                if occupied[kpos] || occupied[vpos] {
                    continue;
                }
                occupied[kpos] = true;
                occupied[vpos] = true;
                tokens[kpos] = key;
                tokens[vpos] = value;
                placed = true;
                break;
            }
            if !placed {
                return Err(Error::InfeasibleTask(format!(
                    "could not place pair {p} without collisions"
                )));
            }
            if p == 0 {
                answer = value;
            }
        }
        tokens[query_pos] = QUERY_TOKEN;
        tokens[query_pos + 1] = keys[0];
        tokens[query_pos + 2] = answer;
        samples.push(RetrievalSample { tokens, answer_pos: n - 1 });
    }
    Ok(samples)
}

/// Wrap samples as a corpus for the language-model training loop.
pub fn retrieval_corpus(samples: &[RetrievalSample]) -> Corpus {
    Corpus { docs: samples.iter().map(|s| Document { tokens: s.tokens.clone() }).collect() }
}

/// Fraction of samples where the argmax prediction at the position before
/// the answer equals the answer token.
pub fn retrieval_accuracy(model: &Model, samples: &[RetrievalSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut hits = 0usize;
    for s in samples {
        let (logits, _) = model.forward(&s.tokens)?;
        let row = logits.row(s.answer_pos - 1);
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        if best as u16 == s.tokens[s.answer_pos] {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}
