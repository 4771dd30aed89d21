//! Numeric self-checks shared by the CLI and the test suites.

mod gradients;
pub mod oracles;

pub use gradients::{condition, gradient_suite, GradSuite};
pub use oracles::{metric_oracle_suite, toy_corpus};

use crate::analysis::{friedman_mean_ranks, nemenyi_cd};
use crate::error::Result;
use crate::model::lr_decay;

/// One named check with its measured value.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
}

impl Check {
    pub fn below(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
        }
    }

    pub fn passed(&self) -> bool {
        self.value < self.threshold
    }
}

/// Critical differences against their published values, the rank-sum
/// identity and the decay identity `factor^(a·b) = 0.1`.
pub fn analysis_checks() -> Result<Vec<Check>> {
    let mut out = vec![
        Check::below("CD(k=2, N=8)", (nemenyi_cd(2, 8, 0.05)? - 0.693).abs(), 1e-3),
        Check::below("CD(k=3, N=4)", (nemenyi_cd(3, 4, 0.05)? - 1.657).abs(), 1e-3),
    ];
    let scores = vec![vec![0.3, 0.9, 0.5, 0.5], vec![0.4, 0.2, 0.5, 0.1], vec![0.1, 0.9, 0.7, 0.6]];
    let sum: f64 = friedman_mean_ranks(&scores)?.iter().sum();
    out.push(Check::below("mean ranks sum to k(k+1)/2", (sum - 6.0).abs(), 1e-12));
    let f = lr_decay(10.0, 10.0)?;
    out.push(Check::below("decay over a·b epochs", (f.powi(100) - 0.1).abs() / 0.1, 1e-6));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_match_oracles() {
        for seed in 0..5 {
            for c in metric_oracle_suite(seed, 20, 1e-9).unwrap() {
                assert!(c.passed(), "seed {seed}: {} off by {:e}", c.name, c.value);
            }
        }
    }

    #[test]
    fn small_gradient_suite_passes() {
        let s = GradSuite {
            hidden: 8,
            vocab: 12,
            d_img: 6,
            grid_cells: 3,
            tag_filters: 3,
            per_param: None,
            seed: 3,
        };
        for c in gradient_suite(&s).unwrap() {
            assert!(c.passed(), "{} at {:e}", c.name, c.value);
        }
    }
}
