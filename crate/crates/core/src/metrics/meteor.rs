use std::collections::HashMap;

use super::{check_pairs, EvalPair};
use crate::error::Result;

/// Exact-match alignment search. Every word type is matched
/// `min(candidate count, reference count)` times; among those alignments
/// the search maximises adjacent links (i→j followed by i+1→j+1), which
/// is the same as minimising chunks.
struct Aligner<'a> {
    cand: &'a [String],
    reference: &'a [String],
    /// Matches still required per word type after position i.
    need: HashMap<&'a str, usize>,
    /// Candidate occurrences of a word at positions ≥ i.
    rest: Vec<usize>,
    /// Reference positions whose word still occurs in `cand[i..]`; the
    /// rest of the used set cannot affect the future and is masked out of
    /// the memo key.
    live: Vec<Vec<u64>>,
    memo: HashMap<(usize, Vec<u64>, usize), usize>,
}

const NONE: usize = usize::MAX;

impl<'a> Aligner<'a> {
    fn new(cand: &'a [String], reference: &'a [String]) -> Self {
        let mut cc: HashMap<&str, usize> = HashMap::new();
        let mut rc: HashMap<&str, usize> = HashMap::new();
        cand.iter().for_each(|w| *cc.entry(w).or_insert(0) += 1);
        reference.iter().for_each(|w| *rc.entry(w).or_insert(0) += 1);
        let need = cc
            .iter()
            .map(|(w, &c)| (*w, c.min(rc.get(w).copied().unwrap_or(0))))
            .collect();
        let rest = (0..cand.len())
            .map(|i| cand[i..].iter().filter(|w| **w == cand[i]).count())
            .collect();
        let words = reference.len().div_ceil(64).max(1);
        let live = (0..cand.len())
            .map(|i| {
                let mut m = vec![0u64; words];
                for (j, w) in reference.iter().enumerate() {
                    if cand[i..].contains(w) {
                        m[j / 64] |= 1 << (j % 64);
                    }
                }
                m
            })
            .collect();
        Self {
            cand,
            reference,
            need,
            rest,
            live,
            memo: HashMap::new(),
        }
    }

    fn matches(&self) -> usize {
        self.need.values().sum()
    }

    fn used_count(&self, used: &[u64], word: &str) -> usize {
        self.reference
            .iter()
            .enumerate()
            .filter(|(j, w)| *w == word && used[j / 64] >> (j % 64) & 1 == 1)
            .count()
    }

    /// Most adjacent links reachable from position `i`, given the used
    /// reference positions and the reference position linked at `i - 1`.
    fn best(&mut self, i: usize, used: Vec<u64>, prev: usize) -> usize {
        if i == self.cand.len() {
            return 0;
        }
        let used: Vec<u64> = used.iter().zip(&self.live[i]).map(|(u, l)| u & l).collect();
        let key = (i, used, prev);
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        let (_, used, _) = &key;
        let word = self.cand[i].as_str();
        let need = self.need[word];
        let got = self.used_count(used, word);
        let mut best = None;
        // Skipping is allowed while later occurrences can still cover the need.
        if self.rest[i] > need - got {
            best = Some(self.best(i + 1, used.clone(), NONE));
        }
        if got < need {
            for j in 0..self.reference.len() {
                if self.reference[j] != word || used[j / 64] >> (j % 64) & 1 == 1 {
                    continue;
                }
                let mut next = used.clone();
                next[j / 64] |= 1 << (j % 64);
                let link = usize::from(prev != NONE && prev + 1 == j);
                let v = link + self.best(i + 1, next, j);
                best = Some(best.map_or(v, |b: usize| b.max(v)));
            }
        }
        let v = best.expect("need is reachable by construction");
        self.memo.insert(key, v);
        v
    }
}

/// METEOR with exact matching only for one candidate and one reference,
/// on 0–1.
pub fn meteor_pair(cand: &[String], reference: &[String]) -> f64 {
    let mut a = Aligner::new(cand, reference);
    let m = a.matches();
    if m == 0 {
        return 0.0;
    }
    let words = reference.len().div_ceil(64).max(1);
    let chunks = m - a.best(0, vec![0; words], NONE);
    let p = m as f64 / cand.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f = 10.0 * p * r / (r + 9.0 * p);
    let frag = chunks as f64 / m as f64;
    f * (1.0 - 0.5 * frag.powi(3))
}

/// Corpus mean of the best-reference METEOR-lite score, on 0–100.
pub fn meteor_lite(pairs: &[EvalPair]) -> Result<f64> {
    check_pairs(pairs)?;
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pairs
        .iter()
        .map(|p| {
            p.references
                .iter()
                .map(|r| meteor_pair(&p.candidate, r))
                .fold(0.0, f64::max)
        })
        .sum();
    Ok(100.0 * sum / pairs.len() as f64)
}
