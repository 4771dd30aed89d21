//! Brute-force metric oracles for tiny corpora: every n-gram, subsequence
//! and alignment is enumerated outright.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Check;
use crate::error::Result;
use crate::metrics::{bleu, cider, meteor_lite, rouge, EvalPair, Rouge};

type Sent = Vec<String>;

fn grams(s: &[String], n: usize) -> Vec<Sent> {
    let mut out = Vec::new();
    let mut i = 0;
    while i + n <= s.len() {
        out.push(s[i..i + n].to_vec());
        i += 1;
    }
    out
}

fn count(list: &[Sent], g: &Sent) -> usize {
    list.iter().filter(|x| *x == g).count()
}

fn distinct(list: &[Sent]) -> Vec<Sent> {
    let mut out: Vec<Sent> = Vec::new();
    for g in list {
        if !out.contains(g) {
            out.push(g.clone());
        }
    }
    out
}

pub fn bleu_oracle(pairs: &[EvalPair], max_n: usize) -> Vec<f64> {
    let mut c = 0;
    let mut r = 0;
    for p in pairs {
        c += p.candidate.len();
        let mut best = p.references[0].len();
        for rf in &p.references {
            let (d, bd) = (rf.len().abs_diff(p.candidate.len()), best.abs_diff(p.candidate.len()));
            if d < bd || (d == bd && rf.len() < best) {
                best = rf.len();
            }
        }
        r += best;
    }
    let bp = if c == 0 {
        0.0
    } else if c >= r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    let mut out = Vec::new();
    let mut product = 1.0;
    for n in 1..=max_n {
        let (mut hit, mut tot) = (0usize, 0usize);
        for p in pairs {
            let cg = grams(&p.candidate, n);
            tot += cg.len();
            for g in distinct(&cg) {
                let most = p.references.iter().map(|rf| count(&grams(rf, n), &g)).max().unwrap_or(0);
                hit += count(&cg, &g).min(most);
            }
        }
        product *= if tot == 0 { 0.0 } else { hit as f64 / tot as f64 };
        out.push(100.0 * bp * product.powf(1.0 / n as f64));
    }
    out
}

fn is_subsequence(sub: &[String], s: &[String]) -> bool {
    let mut it = s.iter();
    sub.iter().all(|x| it.any(|y| y == x))
}

/// Longest common subsequence by trying every subset of `a`.
pub fn lcs_oracle(a: &[String], b: &[String]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Sent = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i].clone()).collect();
        if sub.len() > best && is_subsequence(&sub, b) {
            best = sub.len();
        }
    }
    best
}

pub fn rouge_oracle(pairs: &[EvalPair], kind: Rouge) -> f64 {
    let mut sum = 0.0;
    for p in pairs {
        let mut best: f64 = 0.0;
        for rf in &p.references {
            let v = match kind {
                Rouge::N(n) => {
                    let rg = grams(rf, n);
                    let cg = grams(&p.candidate, n);
                    let hit: usize = distinct(&rg).iter().map(|g| count(&rg, g).min(count(&cg, g))).sum();
                    if rg.is_empty() {
                        0.0
                    } else {
                        hit as f64 / rg.len() as f64
                    }
                }
                Rouge::L => {
                    let l = lcs_oracle(&p.candidate, rf) as f64;
                    if l == 0.0 {
                        0.0
                    } else {
                        let (pr, rc) = (l / p.candidate.len() as f64, l / rf.len() as f64);
                        2.44 * pr * rc / (rc + 1.44 * pr)
                    }
                }
            };
            best = best.max(v);
        }
        sum += best;
    }
    if pairs.is_empty() {
        0.0
    } else {
        100.0 * sum / pairs.len() as f64
    }
}

/// Every partial alignment of candidate positions to equal reference
/// words, as lists of `(candidate, reference)` position pairs.
fn alignments(c: &[String], r: &[String]) -> Vec<Vec<(usize, usize)>> {
    fn go(i: usize, c: &[String], r: &[String], cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        if i == c.len() {
            out.push(cur.clone());
            return;
        }
        go(i + 1, c, r, cur, out);
        for j in 0..r.len() {
            if r[j] == c[i] && !cur.iter().any(|&(_, k)| k == j) {
                cur.push((i, j));
                go(i + 1, c, r, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(0, c, r, &mut Vec::new(), &mut out);
    out
}

pub fn meteor_pair_oracle(c: &[String], r: &[String]) -> f64 {
    let all = alignments(c, r);
    let m = all.iter().map(Vec::len).max().unwrap_or(0);
    if m == 0 {
        return 0.0;
    }
    let chunks = all
        .iter()
        .filter(|a| a.len() == m)
        .map(|a| 1 + a.windows(2).filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1)).count())
        .min()
        .unwrap();
    let (p, rc) = (m as f64 / c.len() as f64, m as f64 / r.len() as f64);
    let f = 10.0 * p * rc / (rc + 9.0 * p);
    f * (1.0 - 0.5 * (chunks as f64 / m as f64).powi(3))
}

pub fn meteor_oracle(pairs: &[EvalPair]) -> f64 {
    let mut sum = 0.0;
    for p in pairs {
        sum += p.references.iter().map(|r| meteor_pair_oracle(&p.candidate, r)).fold(0.0, f64::max);
    }
    100.0 * sum / pairs.len().max(1) as f64
}

pub fn cider_oracle(pairs: &[EvalPair]) -> f64 {
    let big_n = pairs.len() as f64;
    let df = |g: &Sent, n: usize| {
        pairs
            .iter()
            .filter(|p| p.references.iter().any(|r| grams(r, n).contains(g)))
            .count()
    };
    let vector = |s: &Sent, n: usize| -> Vec<(Sent, f64)> {
        let gs = grams(s, n);
        distinct(&gs)
            .into_iter()
            .map(|g| {
                let tf = count(&gs, &g) as f64 / gs.len() as f64;
                let idf = (big_n / df(&g, n).max(1) as f64).ln();
                (g, tf * idf)
            })
            .collect()
    };
    let mut total = 0.0;
    for p in pairs {
        let mut per_pair = 0.0;
        for n in 1..=4 {
            let c = vector(&p.candidate, n);
            let mut s = 0.0;
            for r in &p.references {
                let rv = vector(r, n);
                let dot: f64 = c
                    .iter()
                    .map(|(g, x)| x * rv.iter().find(|(h, _)| h == g).map_or(0.0, |(_, y)| *y))
                    .sum();
                let nc = c.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
                let nr = rv.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
                s += if nc > 0.0 && nr > 0.0 { dot / (nc * nr) } else { 0.0 };
            }
            per_pair += s / p.references.len() as f64;
        }
        total += per_pair / 4.0;
    }
    100.0 * total / big_n
}

/// `pairs` random pairs over a five-word vocabulary, every sentence at
/// most five tokens; candidates may be empty.
pub fn toy_corpus(seed: u64, pairs: usize) -> Vec<EvalPair> {
    const WORDS: [&str; 5] = ["what", "is", "the", "dog", "red"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sent = |rng: &mut ChaCha8Rng, min: usize| -> Sent {
        let n = rng.random_range(min..=5);
        (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())].to_string()).collect()
    };
    (0..pairs)
        .map(|_| {
            let candidate = sent(&mut rng, 0);
            let refs = rng.random_range(1..=3);
            let references = (0..refs).map(|_| sent(&mut rng, 1)).collect();
            EvalPair { candidate, references }
        })
        .collect()
}

/// Library metrics against the oracles on a toy corpus.
pub fn metric_oracle_suite(seed: u64, pairs: usize, tol: f64) -> Result<Vec<Check>> {
    let corpus = toy_corpus(seed, pairs);
    let mut out = Vec::new();
    let fast = bleu(&corpus, 4)?;
    let slow = bleu_oracle(&corpus, 4);
    for n in 0..4 {
        out.push(Check::below(format!("BLEU-{} vs oracle", n + 1), (fast[n] - slow[n]).abs(), tol));
    }
    for (name, kind) in [("ROUGE-1", Rouge::N(1)), ("ROUGE-2", Rouge::N(2)), ("ROUGE-L", Rouge::L)] {
        let d = (rouge(&corpus, kind)? - rouge_oracle(&corpus, kind)).abs();
        out.push(Check::below(format!("{name} vs oracle"), d, tol));
    }
    let d = (meteor_lite(&corpus)? - meteor_oracle(&corpus)).abs();
    out.push(Check::below("METEOR vs oracle", d, tol));
    let d = (cider(&corpus)? - cider_oracle(&corpus)).abs();
    out.push(Check::below("CIDEr vs oracle", d, tol));
    Ok(out)
}
