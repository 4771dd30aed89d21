use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Critical values of the Studentized range divided by √2, for k = 2..10.
const Q_05: [f64; 9] = [1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164];
const Q_10: [f64; 9] = [1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920];

/// Two-tailed Nemenyi critical value for `k` systems.
pub fn q_alpha(k: usize, alpha: f64) -> Result<f64> {
    if !(2..=10).contains(&k) {
        return Err(Error::invalid(format!("nemenyi table covers 2..=10 systems, got {k}")));
    }
    let table = if alpha == 0.05 {
        &Q_05
    } else if alpha == 0.10 {
        &Q_10
    } else {
        return Err(Error::invalid(format!("alpha must be 0.05 or 0.10, got {alpha}")));
    };
    Ok(table[k - 2])
}

/// `CD = q_α(k)·√(k(k+1) / 6N)`.
pub fn nemenyi_cd(k: usize, n: usize, alpha: f64) -> Result<f64> {
    if n < 1 {
        return Err(Error::invalid("nemenyi needs at least one condition"));
    }
    let q = q_alpha(k, alpha)?;
    Ok(q * ((k * (k + 1)) as f64 / (6.0 * n as f64)).sqrt())
}

/// Mean rank per system over conditions. `scores[s][c]` is system `s`
/// under condition `c`, higher is better; rank 1 is best and ties share
/// the average of their ranks.
pub fn friedman_mean_ranks(scores: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = scores.len();
    if k < 2 {
        return Err(Error::invalid(format!("ranking needs at least 2 systems, got {k}")));
    }
    let n = scores[0].len();
    if n < 2 {
        return Err(Error::invalid(format!("ranking needs at least 2 conditions, got {n}")));
    }
    if let Some(s) = scores.iter().position(|row| row.len() != n) {
        return Err(Error::invalid(format!(
            "system {s} has {} scores, expected {n}",
            scores[s].len()
        )));
    }
    if scores.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    let mut sums = vec![0.0; k];
    for c in 0..n {
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| scores[b][c].total_cmp(&scores[a][c]));
        let mut i = 0;
        while i < k {
            let mut j = i;
            while j + 1 < k && scores[order[j + 1]][c] == scores[order[i]][c] {
                j += 1;
            }
            // positions i..=j share ranks i+1..=j+1
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &s in &order[i..=j] {
                sums[s] += avg;
            }
            i = j + 1;
        }
    }
    Ok(sums.into_iter().map(|s| s / n as f64).collect())
}

/// Input of the `cd-test` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoresFile {
    pub version: u32,
    pub systems: Vec<String>,
    pub conditions: Vec<String>,
    /// One row per system, one column per condition.
    pub scores: Vec<Vec<f64>>,
}

impl ScoresFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let f: Self = serde_json::from_str(text)?;
        if f.version != 1 {
            return Err(Error::invalid(format!("unsupported scores file version {}", f.version)));
        }
        if f.scores.len() != f.systems.len() {
            return Err(Error::invalid(format!(
                "{} systems named but {} score rows given",
                f.systems.len(),
                f.scores.len()
            )));
        }
        if let Some(row) = f.scores.iter().position(|r| r.len() != f.conditions.len()) {
            return Err(Error::invalid(format!(
                "row for `{}` has {} scores but {} conditions are named",
                f.systems[row],
                f.scores[row].len(),
                f.conditions.len()
            )));
        }
        Ok(f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedSystem {
    pub name: String,
    pub mean_rank: f64,
}

/// Mean ranks, the critical difference and every pair of systems whose
/// rank gap is below it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CdReport {
    pub alpha: f64,
    pub conditions: usize,
    pub cd: f64,
    /// Sorted by mean rank, best first; ties keep input order.
    pub systems: Vec<RankedSystem>,
    /// Name pairs, in `systems` order.
    pub not_significant: Vec<[String; 2]>,
}

impl CdReport {
    pub fn compute(file: &ScoresFile, alpha: f64) -> Result<Self> {
        let ranks = friedman_mean_ranks(&file.scores)?;
        let cd = nemenyi_cd(file.systems.len(), file.conditions.len(), alpha)?;
        let mut systems: Vec<RankedSystem> = file
            .systems
            .iter()
            .zip(&ranks)
            .map(|(name, &mean_rank)| RankedSystem {
                name: name.clone(),
                mean_rank,
            })
            .collect();
        systems.sort_by(|a, b| a.mean_rank.total_cmp(&b.mean_rank));
        let mut not_significant = Vec::new();
        for i in 0..systems.len() {
            for j in i + 1..systems.len() {
                if (systems[i].mean_rank - systems[j].mean_rank).abs() < cd {
                    not_significant.push([systems[i].name.clone(), systems[j].name.clone()]);
                }
            }
        }
        Ok(Self {
            alpha,
            conditions: file.conditions.len(),
            cd,
            systems,
            not_significant,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_svg(&self) -> String {
        super::svg::cd_diagram(self)
    }
}
