use std::collections::HashMap;

use super::{check_pairs, ngram_counts, EvalPair};
use crate::error::{Error, Result};

/// Corpus BLEU-1..BLEU-`max_n`, each on 0–100.
///
/// Clipped n-gram counts are summed over the corpus before dividing; the
/// brevity penalty uses, per pair, the reference length closest to the
/// candidate (the shorter one on ties).
pub fn bleu(pairs: &[EvalPair], max_n: usize) -> Result<Vec<f64>> {
    if max_n < 1 {
        return Err(Error::invalid("bleu needs max_n >= 1"));
    }
    check_pairs(pairs)?;
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut c, mut r) = (0usize, 0usize);
    for p in pairs {
        let len = p.candidate.len();
        c += len;
        r += p
            .references
            .iter()
            .map(Vec::len)
            .min_by_key(|&l| (l.abs_diff(len), l))
            .expect("checked non-empty");
        for n in 1..=max_n {
            let cand = ngram_counts(&p.candidate, n);
            let mut best: HashMap<&[String], usize> = HashMap::new();
            for refs in &p.references {
                for (g, k) in ngram_counts(refs, n) {
                    let e = best.entry(g).or_insert(0);
                    *e = (*e).max(k);
                }
            }
            for (g, k) in &cand {
                matched[n - 1] += (*k).min(best.get(g).copied().unwrap_or(0));
                total[n - 1] += k;
            }
        }
    }
    let bp = if c == 0 {
        0.0
    } else if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    let mut out = Vec::with_capacity(max_n);
    let mut log_sum = 0.0;
    let mut zero = false;
    for n in 0..max_n {
        if matched[n] == 0 {
            zero = true;
        } else {
            log_sum += (matched[n] as f64 / total[n] as f64).ln();
        }
        out.push(if zero {
            0.0
        } else {
            100.0 * bp * (log_sum / (n + 1) as f64).exp()
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        let p = EvalPair::from_words("the cat sat", &["the cat sat on the mat"]).unwrap();
        let b = bleu(&[p], 4).unwrap();
        assert!((b[0] - 100.0 * (1.0f64 - 2.0).exp()).abs() < 1e-12);
        assert!((b[0] - 36.79).abs() < 0.005);

        let same = EvalPair::from_words("what is on the table", &["what is on the table"]).unwrap();
        for s in bleu(&[same], 4).unwrap() {
            assert!((s - 100.0).abs() < 1e-12);
        }
        let disjoint = EvalPair::from_words("a b c", &["x y z"]).unwrap();
        assert_eq!(bleu(&[disjoint], 4).unwrap(), vec![0.0; 4]);
        assert!(bleu(&[], 0).is_err());
    }

    #[test]
    fn clipping_and_closest_reference() {
        // "the the the" against "the cat": clipped to 1 of 3.
        let p = EvalPair::from_words("the the the", &["the cat", "a dog sat here"]).unwrap();
        let b = bleu(&[p], 1).unwrap();
        // closest reference length to 3 is 2 (tie with 4 goes to the shorter).
        assert!((b[0] - 100.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_candidate_counts_toward_length() {
        let a = EvalPair::from_words("a b", &["a b"]).unwrap();
        let e = EvalPair::from_words("", &["a b"]).unwrap();
        let b = bleu(&[a, e], 1).unwrap();
        assert!((b[0] - 100.0 * (1.0f64 - 2.0).exp()).abs() < 1e-12);
    }
}
