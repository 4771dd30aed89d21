//! Samples, datasets and their JSON-Lines file format, plus the
//! tokenizer, vocabulary, part-of-speech lexicon and synthetic generator.

mod lexicon;
mod synth;
mod tokenize;
mod vocab;

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use lexicon::{pos_tags, Lexicon, PosClass, TagBundle, TAG_SLOTS, WH_WORDS};
pub use synth::{synth_cluster, synth_dataset, synth_dataset_with, SynthOptions};
pub use tokenize::tokenize;
pub use vocab::{Vocabulary, PAD, START, STOP, UNK};

use crate::error::{Error, Result};

/// Default image feature length (an FC7-sized vector).
pub const DEFAULT_D_IMG: usize = 4096;
pub const DEFAULT_GRID_CELLS: usize = 196;
pub const DEFAULT_GRID_DIM: usize = 512;
pub const PLACE_DIM: usize = 365;

/// One image: feature channels plus its captions and questions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub id: String,
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_features: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub place_features: Option<Vec<f64>>,
    pub captions: Vec<String>,
    pub questions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<TagBundle>,
}

impl Sample {
    pub fn caption_tokens(&self) -> Vec<String> {
        self.captions.first().map(|c| tokenize(c)).unwrap_or_default()
    }

    pub fn question_tokens(&self) -> Vec<Vec<String>> {
        self.questions.iter().map(|q| tokenize(q)).collect()
    }

    /// Row-major copy of the grid channel.
    pub fn grid_flat(&self) -> Option<Vec<f64>> {
        self.grid_features
            .as_ref()
            .map(|g| g.iter().flatten().copied().collect())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub split: Split,
}

/// Expected channel sizes when reading a dataset file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SchemaConfig {
    /// `None` takes the length of the first sample.
    pub d_img: Option<usize>,
    pub grid_cells: usize,
    pub grid_dim: usize,
    pub place_dim: usize,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        Self {
            d_img: Some(DEFAULT_D_IMG),
            grid_cells: DEFAULT_GRID_CELLS,
            grid_dim: DEFAULT_GRID_DIM,
            place_dim: PLACE_DIM,
        }
    }
}

impl SchemaConfig {
    pub fn inferred() -> Self {
        Self {
            d_img: None,
            ..Self::default()
        }
    }
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, split: Split) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Sample {
                    id: s.id.clone(),
                    msg: "duplicate id".into(),
                });
            }
        }
        Ok(Self { samples, split })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn d_img(&self) -> Option<usize> {
        self.samples.first().map(|s| s.features.len())
    }

    /// Checks every sample against `schema`.
    pub fn validate(&self, schema: &SchemaConfig) -> Result<()> {
        let d_img = schema.d_img.or(self.d_img());
        for s in &self.samples {
            validate_sample(s, d_img, schema)?;
        }
        Ok(())
    }

    /// Splits off the last `n` samples into a second dataset.
    pub fn split_tail(mut self, n: usize, tail_split: Split) -> (Dataset, Dataset) {
        let at = self.samples.len().saturating_sub(n);
        let tail = self.samples.split_off(at);
        (
            self,
            Dataset {
                samples: tail,
                split: tail_split,
            },
        )
    }
}

fn validate_sample(s: &Sample, d_img: Option<usize>, schema: &SchemaConfig) -> Result<()> {
    let fail = |msg: String| Error::Sample {
        id: s.id.clone(),
        msg,
    };
    if let Some(d) = d_img {
        if s.features.len() != d {
            return Err(fail(format!(
                "features has length {}, expected {d}",
                s.features.len()
            )));
        }
    }
    if s.features.is_empty() {
        return Err(fail("features is empty".into()));
    }
    if let Some(grid) = &s.grid_features {
        if grid.len() != schema.grid_cells || grid.iter().any(|r| r.len() != schema.grid_dim) {
            return Err(fail(format!(
                "grid_features must be {}x{}",
                schema.grid_cells, schema.grid_dim
            )));
        }
    }
    if let Some(place) = &s.place_features {
        if place.len() != schema.place_dim {
            return Err(fail(format!(
                "place_features has length {}, expected {}",
                place.len(),
                schema.place_dim
            )));
        }
    }
    if s.captions.is_empty() {
        return Err(fail("needs at least one caption".into()));
    }
    if s.questions.is_empty() {
        return Err(fail("needs at least one question".into()));
    }
    if s.questions.iter().any(|q| tokenize(q).is_empty()) {
        return Err(fail("question is empty after tokenization".into()));
    }
    Ok(())
}

/// Reads a JSON-Lines dataset file. Blank lines are skipped.
pub fn load_dataset(path: impl AsRef<Path>, schema: &SchemaConfig) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut samples = Vec::new();
    let mut d_img = schema.d_img;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let d = *d_img.get_or_insert(sample.features.len());
        validate_sample(&sample, Some(d), schema)?;
        samples.push(sample);
    }
    Dataset::new(samples, Split::default())
}

pub fn save_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in &dataset.samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, d: usize) -> Sample {
        Sample {
            id: id.into(),
            features: vec![0.5; d],
            grid_features: None,
            place_features: None,
            captions: vec!["a dog on a bench".into()],
            questions: vec!["what is the dog doing?".into()],
            tags: None,
        }
    }

    fn write(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn loads_two_valid_lines() {
        let lines: Vec<String> = ["a", "b"]
            .iter()
            .map(|id| serde_json::to_string(&sample(id, 4)).unwrap())
            .collect();
        let f = write(&lines);
        let schema = SchemaConfig {
            d_img: Some(4),
            ..Default::default()
        };
        let ds = load_dataset(f.path(), &schema).unwrap();
        assert_eq!(ds.len(), 2);
    }

    #[test]
    fn missing_questions_cites_line() {
        let f = write(&[r#"{"id":"x","features":[1.0],"captions":["a cat"]}"#.to_string()]);
        let err = load_dataset(f.path(), &SchemaConfig::inferred()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        assert!(err.to_string().contains("questions"));
    }

    #[test]
    fn wrong_feature_length_names_sample() {
        let f = write(&[serde_json::to_string(&sample("img-7", 7)).unwrap()]);
        let err = load_dataset(f.path(), &SchemaConfig::default()).unwrap_err();
        match err {
            Error::Sample { id, .. } => assert_eq!(id, "img-7"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn rejects_bad_grid_and_empty_question() {
        let mut s = sample("g", 2);
        s.grid_features = Some(vec![vec![0.0; 512]; 195]);
        assert!(validate_sample(&s, Some(2), &SchemaConfig::default()).is_err());
        let mut s = sample("q", 2);
        s.questions = vec!["   ".into()];
        assert!(validate_sample(&s, Some(2), &SchemaConfig::default()).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(Dataset::new(vec![sample("a", 1), sample("a", 1)], Split::Train).is_err());
    }

    #[test]
    fn save_then_load_is_identity() {
        let ds = synth_dataset(3, 12, 3, 16).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_dataset(f.path(), &ds).unwrap();
        let back = load_dataset(f.path(), &SchemaConfig::inferred()).unwrap();
        assert_eq!(back, ds);
    }
}
