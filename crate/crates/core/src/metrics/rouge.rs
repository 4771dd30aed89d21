use super::{check_pairs, ngram_counts, EvalPair};
use crate::error::{Error, Result};

/// Recall weight of the ROUGE-L F-score.
pub const ROUGE_L_BETA: f64 = 1.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rouge {
    N(usize),
    L,
}

/// Length of the longest common subsequence.
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

fn recall_n(cand: &[String], reference: &[String], n: usize) -> f64 {
    let r = ngram_counts(reference, n);
    let total: usize = r.values().sum();
    if total == 0 {
        return 0.0;
    }
    let c = ngram_counts(cand, n);
    let hit: usize = r.iter().map(|(g, k)| (*k).min(c.get(g).copied().unwrap_or(0))).sum();
    hit as f64 / total as f64
}

fn f_lcs(cand: &[String], reference: &[String]) -> f64 {
    let l = lcs_len(cand, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / cand.len() as f64;
    let r = l as f64 / reference.len() as f64;
    let b2 = ROUGE_L_BETA * ROUGE_L_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// ROUGE-n recall or ROUGE-L F-score: best reference per pair, averaged
/// over the corpus, on 0–100.
pub fn rouge(pairs: &[EvalPair], kind: Rouge) -> Result<f64> {
    if kind == Rouge::N(0) {
        return Err(Error::invalid("rouge-n needs n >= 1"));
    }
    check_pairs(pairs)?;
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pairs
        .iter()
        .map(|p| {
            p.references
                .iter()
                .map(|r| match kind {
                    Rouge::N(n) => recall_n(&p.candidate, r, n),
                    Rouge::L => f_lcs(&p.candidate, r),
                })
                .fold(0.0, f64::max)
        })
        .sum();
    Ok(100.0 * sum / pairs.len() as f64)
}
