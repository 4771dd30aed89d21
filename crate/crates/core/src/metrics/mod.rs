//! Corpus-level multi-reference caption metrics on a 0–100 scale.

mod bleu;
mod cider;
mod meteor;
mod rouge;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bleu::bleu;
pub use cider::cider;
pub use meteor::{meteor_lite, meteor_pair};
pub use rouge::{lcs_len, rouge, Rouge, ROUGE_L_BETA};

/// One generated question and its reference questions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

impl EvalPair {
    pub fn new(candidate: Vec<String>, references: Vec<Vec<String>>) -> Result<Self> {
        if references.is_empty() {
            return Err(Error::invalid("an evaluation pair needs at least one reference"));
        }
        Ok(Self { candidate, references })
    }

    /// Builds a pair from whitespace-separated strings.
    pub fn from_words(candidate: &str, references: &[&str]) -> Result<Self> {
        let split = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
        Self::new(split(candidate), references.iter().map(|r| split(r)).collect())
    }
}

fn check_pairs(pairs: &[EvalPair]) -> Result<()> {
    if let Some(i) = pairs.iter().position(|p| p.references.is_empty()) {
        return Err(Error::invalid(format!("pair {i} has no references")));
    }
    Ok(())
}

/// n-gram counts of one sentence.
pub(crate) fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// Metric name to score, plus the number of pairs scored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreReport {
    pub corpus_size: usize,
    pub scores: BTreeMap<String, f64>,
}

impl ScoreReport {
    /// Every metric: BLEU-1..4, ROUGE-1, ROUGE-2, ROUGE-L, METEOR and CIDEr.
    /// `ROUGE` repeats ROUGE-L. CIDEr needs at least two pairs and is left
    /// out of smaller corpora.
    pub fn compute(pairs: &[EvalPair]) -> Result<Self> {
        check_pairs(pairs)?;
        let mut scores = BTreeMap::new();
        for (n, s) in bleu(pairs, 4)?.into_iter().enumerate() {
            scores.insert(format!("BLEU-{}", n + 1), s);
        }
        scores.insert("ROUGE-1".into(), rouge(pairs, Rouge::N(1))?);
        scores.insert("ROUGE-2".into(), rouge(pairs, Rouge::N(2))?);
        let l = rouge(pairs, Rouge::L)?;
        scores.insert("ROUGE-L".into(), l);
        scores.insert("ROUGE".into(), l);
        scores.insert("METEOR".into(), meteor_lite(pairs)?);
        if pairs.len() >= 2 {
            scores.insert("CIDEr".into(), cider(pairs)?);
        }
        Ok(Self {
            corpus_size: pairs.len(),
            scores,
        })
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        self.scores.get(metric).copied()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
