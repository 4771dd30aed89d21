//! Significance testing over system rankings and question-word statistics.

mod rank;
mod sunburst;
mod svg;

use std::path::Path;

use crate::error::{Error, Result};

pub use rank::{friedman_mean_ranks, nemenyi_cd, q_alpha, CdReport, RankedSystem, ScoresFile};
pub use sunburst::{sunburst_stats, SunburstTree};

/// Writes a rendered report, mapping failures to [`Error::Io`].
pub fn write_report(path: impl AsRef<Path>, contents: &str) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}
