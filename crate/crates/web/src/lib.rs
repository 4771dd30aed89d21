//! wasm-bindgen exports for the static demo page in `www/`.
//!
//! The plain functions return `Result<String, String>` so native tests can
//! call them; the `js_*` wrappers turn errors into JS exceptions.

use vqglab::analysis::{sunburst_stats, CdReport, ScoresFile};
use vqglab::dataio::tokenize;
use vqglab::metrics::{EvalPair, ScoreReport};
use wasm_bindgen::prelude::*;

fn lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines().map(str::trim).filter(|l| !l.is_empty())
}

/// Scores one candidate per line against the matching reference line,
/// whose alternatives are separated by `|`. Returns the report as JSON.
pub fn score(candidates: &str, references: &str) -> Result<String, String> {
    let cands: Vec<&str> = lines(candidates).collect();
    let refs: Vec<&str> = lines(references).collect();
    if cands.len() != refs.len() {
        return Err(format!("{} candidates but {} reference lines", cands.len(), refs.len()));
    }
    let pairs = cands
        .iter()
        .zip(&refs)
        .map(|(c, r)| {
            let refs = r.split('|').map(tokenize).filter(|t| !t.is_empty()).collect();
            EvalPair::new(tokenize(c), refs)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    ScoreReport::compute(&pairs)
        .and_then(|r| r.to_json())
        .map_err(|e| e.to_string())
}

/// Critical-difference diagram for a scores file (`systems`, `conditions`,
/// one score row per system).
pub fn cd_diagram(scores_json: &str, alpha: f64) -> Result<String, String> {
    let file = ScoresFile::from_json(scores_json).map_err(|e| e.to_string())?;
    let report = CdReport::compute(&file, alpha).map_err(|e| e.to_string())?;
    Ok(report.to_svg())
}

/// Sunburst of question prefixes, one question per line.
pub fn sunburst(questions: &str, depth: usize) -> Result<String, String> {
    let qs: Vec<Vec<String>> = lines(questions).map(tokenize).collect();
    sunburst_stats(&qs, depth)
        .map(|t| t.to_svg())
        .map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = score)]
pub fn js_score(candidates: &str, references: &str) -> Result<String, JsError> {
    score(candidates, references).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = cdDiagram)]
pub fn js_cd_diagram(scores_json: &str, alpha: f64) -> Result<String, JsError> {
    cd_diagram(scores_json, alpha).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = sunburst)]
pub fn js_sunburst(questions: &str, depth: usize) -> Result<String, JsError> {
    sunburst(questions, depth).map_err(|e| JsError::new(&e))
}
