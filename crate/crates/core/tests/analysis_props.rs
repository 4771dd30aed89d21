use std::collections::BTreeSet;

use proptest::prelude::*;
use vqglab::analysis::{friedman_mean_ranks, nemenyi_cd, sunburst_stats, CdReport, ScoresFile, SunburstTree};

/// Rank 1 is best: one plus the systems strictly ahead plus half the ties.
fn rank_oracle(scores: &[Vec<f64>]) -> Vec<f64> {
    let (k, n) = (scores.len(), scores[0].len());
    (0..k)
        .map(|s| {
            (0..n)
                .map(|c| {
                    let v = scores[s][c];
                    let ahead = (0..k).filter(|&o| scores[o][c] > v).count();
                    let tied = (0..k).filter(|&o| o != s && scores[o][c] == v).count();
                    1.0 + ahead as f64 + tied as f64 / 2.0
                })
                .sum::<f64>()
                / n as f64
        })
        .collect()
}

fn score_matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..8, 2usize..12).prop_flat_map(|(k, n)| {
        // Coarse values so ties happen.
        prop::collection::vec(prop::collection::vec((0u8..6).prop_map(f64::from), n), k)
    })
}

fn scores_file(scores: Vec<Vec<f64>>) -> ScoresFile {
    ScoresFile {
        version: 1,
        systems: (0..scores.len()).map(|i| format!("sys{i}")).collect(),
        conditions: (0..scores[0].len()).map(|i| format!("c{i}")).collect(),
        scores,
    }
}

fn nsd_pairs(svg: &str) -> BTreeSet<(String, String)> {
    svg.split("<line class=\"nsd\"")
        .skip(1)
        .map(|rest| {
            let attr = |key: &str| {
                let start = rest.find(&format!("{key}=\"")).unwrap() + key.len() + 2;
                rest[start..start + rest[start..].find('"').unwrap()].to_string()
            };
            (attr("data-a"), attr("data-b"))
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ranks_match_oracle_and_sum(scores in score_matrix()) {
        let k = scores.len() as f64;
        let ranks = friedman_mean_ranks(&scores).unwrap();
        for (a, b) in ranks.iter().zip(rank_oracle(&scores)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert!((ranks.iter().sum::<f64>() - k * (k + 1.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn ranks_ignore_monotone_rescaling(scores in score_matrix(), a in 0.1..10.0f64, b in -5.0..5.0f64) {
        let scaled: Vec<Vec<f64>> = scores.iter().map(|r| r.iter().map(|v| a * v + b).collect()).collect();
        prop_assert_eq!(friedman_mean_ranks(&scores).unwrap(), friedman_mean_ranks(&scaled).unwrap());
    }

    #[test]
    fn svg_bars_are_the_pairs_within_cd(scores in score_matrix(), alpha in prop_oneof![Just(0.05), Just(0.10)]) {
        let file = scores_file(scores.clone());
        let report = CdReport::compute(&file, alpha).unwrap();
        let ranks = rank_oracle(&scores);
        let cd = nemenyi_cd(scores.len(), scores[0].len(), alpha).unwrap();
        let mut want = BTreeSet::new();
        for i in 0..ranks.len() {
            for j in 0..ranks.len() {
                if i != j && (ranks[i] - ranks[j]).abs() < cd {
                    want.insert((format!("sys{i}"), format!("sys{j}")));
                }
            }
        }
        let drawn: BTreeSet<(String, String)> = nsd_pairs(&report.to_svg())
            .into_iter()
            .flat_map(|(a, b)| [(a.clone(), b.clone()), (b, a)])
            .collect();
        prop_assert_eq!(drawn, want);
        let svg = report.to_svg();
        prop_assert_eq!(svg.matches("class=\"system\"").count(), scores.len());
        prop_assert_eq!(&svg, &CdReport::compute(&file, alpha).unwrap().to_svg());
        prop_assert_eq!(CdReport::from_json(&report.to_json().unwrap()).unwrap(), report);
    }

    #[test]
    fn sunburst_levels_are_consistent(
        qs in prop::collection::vec(prop::collection::vec((0usize..6).prop_map(|i| format!("w{i}")), 0..8), 1..60),
        depth in 1usize..6,
    ) {
        let tree = sunburst_stats(&qs, depth).unwrap();
        prop_assert!(tree.is_consistent());
        prop_assert_eq!(tree.count, qs.len());
        for level in 1..=depth {
            prop_assert_eq!(tree.level_total(level), qs.iter().filter(|q| q.len() >= level).count());
        }
        prop_assert_eq!(SunburstTree::from_json(&tree.to_json().unwrap()).unwrap(), tree);
    }
}

#[test]
fn cd_is_monotone() {
    for k in 2..10 {
        for n in 2..40 {
            let cd = nemenyi_cd(k, n, 0.05).unwrap();
            assert!(nemenyi_cd(k, n + 1, 0.05).unwrap() < cd, "k={k} n={n}");
            assert!(nemenyi_cd(k + 1, n, 0.05).unwrap() > cd, "k={k} n={n}");
            assert!(nemenyi_cd(k, n, 0.10).unwrap() < cd, "k={k} n={n}");
        }
    }
    assert!(nemenyi_cd(3, 4, 0.01).is_err());
    assert!(nemenyi_cd(1, 4, 0.05).is_err());
}

#[test]
fn sunburst_on_a_thousand_questions() {
    let heads = ["what", "how", "is", "where", "who"];
    let mids = ["is", "many", "the", "color", "are"];
    let tails = ["man", "dog", "there", "this", "it", "on"];
    let qs: Vec<Vec<String>> = (0..1000)
        .map(|i| {
            let len = 1 + i % 7;
            (0..len)
                .map(|p| match p {
                    0 => heads[(i * 7 + 3) % heads.len()],
                    1 => mids[(i / 3) % mids.len()],
                    _ => tails[(i * p + i / 11) % tails.len()],
                })
                .map(String::from)
                .collect()
        })
        .collect();
    let tree = sunburst_stats(&qs, 5).unwrap();
    assert!(tree.is_consistent());
    assert_eq!(tree.count, 1000);
    assert_eq!(tree.level_total(1), 1000);
    for level in 1..=5 {
        assert_eq!(tree.level_total(level), qs.iter().filter(|q| q.len() >= level).count());
    }
    assert!(tree.depth() <= 5);
    let svg = tree.to_svg();
    assert_eq!(svg, sunburst_stats(&qs, 5).unwrap().to_svg());
    let segments = svg.matches("class=\"seg\"").count();
    assert!(segments > heads.len());
}
