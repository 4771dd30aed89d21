use std::collections::{BTreeMap, HashMap, HashSet};

use super::{check_pairs, ngram_counts, EvalPair};
use crate::error::{Error, Result};

const MAX_N: usize = 4;

/// Ordered so that the float sums below run in a fixed order.
fn tfidf<'a>(tokens: &'a [String], n: usize, idf: &dyn Fn(&[String]) -> f64) -> BTreeMap<&'a [String], f64> {
    let counts = ngram_counts(tokens, n);
    let total: usize = counts.values().sum();
    counts
        .into_iter()
        .map(|(g, k)| (g, k as f64 / total as f64 * idf(g)))
        .collect()
}

fn cosine(a: &BTreeMap<&[String], f64>, b: &BTreeMap<&[String], f64>) -> f64 {
    let dot: f64 = a.iter().map(|(g, x)| x * b.get(g).copied().unwrap_or(0.0)).sum();
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Plain CIDEr (no length penalty, no count clipping) over n = 1..4, on
/// 0–100. Document frequency counts the pairs whose references contain
/// an n-gram; idf is `ln(N / max(1, df))`.
pub fn cider(pairs: &[EvalPair]) -> Result<f64> {
    check_pairs(pairs)?;
    if pairs.len() < 2 {
        return Err(Error::invalid(format!(
            "cider needs a corpus of at least 2 pairs, got {}",
            pairs.len()
        )));
    }
    let big_n = pairs.len() as f64;
    let mut df: HashMap<&[String], usize> = HashMap::new();
    for p in pairs {
        let mut seen: HashSet<&[String]> = HashSet::new();
        for r in &p.references {
            for n in 1..=MAX_N {
                seen.extend(ngram_counts(r, n).into_keys());
            }
        }
        for g in seen {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let idf = |g: &[String]| (big_n / df.get(g).copied().unwrap_or(0).max(1) as f64).ln();
    let mut sum = 0.0;
    for p in pairs {
        let mut per_n = 0.0;
        for n in 1..=MAX_N {
            let c = tfidf(&p.candidate, n, &idf);
            let s: f64 = p.references.iter().map(|r| cosine(&c, &tfidf(r, n, &idf))).sum();
            per_n += s / p.references.len() as f64;
        }
        sum += per_n / MAX_N as f64;
    }
    Ok(100.0 * sum / big_n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_short_and_disjoint() {
        let a = EvalPair::from_words("what color is the bus", &["what color is the bus"]).unwrap();
        let b = EvalPair::from_words("how many dogs are there", &["how many dogs are there"]).unwrap();
        assert!((cider(&[a.clone(), b.clone()]).unwrap() - 100.0).abs() < 1e-9);

        let short = EvalPair::from_words("what color", &["what color is the bus"]).unwrap();
        assert!(cider(&[short, b.clone()]).unwrap() <= 75.0 + 1e-9);

        let d = EvalPair::from_words("zebra zebra", &["what color is the bus"]).unwrap();
        let s = cider(&[d, b.clone()]).unwrap();
        assert!((s - 50.0).abs() < 1e-9, "{s}");
        assert!(cider(&[a]).is_err());
    }
}
