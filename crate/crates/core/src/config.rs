//! Run configuration shared by training, generation and the CLI.
//!
//! Every field has a default; a config file only needs the keys it
//! changes. Unknown keys are rejected.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

pub const DEFAULT_ALPHA: f64 = 0.2;
pub const DEFAULT_GAMMA: f64 = 1.0;
pub const DEFAULT_MAX_LEN: usize = 20;
pub const DEFAULT_LR: f64 = 0.0004;
pub const DEFAULT_RHO: f64 = 0.99;
pub const DEFAULT_EPS: f64 = 1e-8;
pub const DEFAULT_BATCH: usize = 200;
pub const DEFAULT_DECAY_A: f64 = 1500.0;
pub const DEFAULT_DECAY_B: f64 = 1250.0;
pub const DEFAULT_HIDDEN: usize = 512;
pub const DEFAULT_EMBED: usize = 512;
pub const DEFAULT_TAG_FILTERS: usize = 128;
pub const DEFAULT_EPOCHS: usize = 30;
pub const DEFAULT_SEED: u64 = 7;

macro_rules! string_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(Error::invalid(format!(
                        concat!("unknown ", stringify!($name), " `{}` (expected one of: {})"),
                        s,
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }
    };
}

string_enum! {
    /// Which context the caption channel carries.
    Variant {
        Mdn => "mdn",
        DiffImage => "diff-image",
        Tag => "tag",
        Place => "place",
    }
}

string_enum! {
    /// Image/caption fusion method.
    Mixture {
        Joint => "joint",
        Hadamard => "hadamard",
        Addition => "addition",
        Attention => "attention",
    }
}

string_enum! {
    TagCombine {
        Concat => "concat",
        Add => "add",
        Mul => "mul",
        Conv1d => "conv1d",
    }
}

string_enum! {
    ExemplarMode {
        Knn => "knn",
        Random => "random",
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExemplarConfig {
    pub k: usize,
    pub mode: ExemplarMode,
    pub clusters: usize,
}

impl Default for ExemplarConfig {
    fn default() -> Self {
        Self {
            k: crate::exemplar::DEFAULT_K,
            mode: ExemplarMode::Knn,
            clusters: crate::exemplar::DEFAULT_CLUSTERS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Triplet margin.
    pub alpha: f64,
    /// Weight of the triplet term in the total loss.
    pub gamma: f64,
    /// Longest question (words plus STOP) the decoder handles.
    pub max_len: usize,
    /// Run the supporting/contrasting towers at all.
    pub triplet_towers: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            gamma: DEFAULT_GAMMA,
            max_len: DEFAULT_MAX_LEN,
            triplet_towers: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    pub batch: usize,
    pub decay_a: f64,
    pub decay_b: f64,
    /// Apply the decay factor after every batch instead of every epoch.
    pub decay_per_iteration: bool,
    /// Separate learning rate for encoder and mixture parameters.
    pub triplet_lr: Option<f64>,
    pub triplet_rho: Option<f64>,
    /// Elementwise gradient clipping bound.
    pub clip: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LR,
            rho: DEFAULT_RHO,
            eps: DEFAULT_EPS,
            batch: DEFAULT_BATCH,
            decay_a: DEFAULT_DECAY_A,
            decay_b: DEFAULT_DECAY_B,
            decay_per_iteration: false,
            triplet_lr: None,
            triplet_rho: None,
            clip: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Dims {
    pub d_img: usize,
    /// Width of embeddings, context vectors and both LSTMs.
    pub hidden: usize,
    /// Word embedding width of the encoder side.
    pub embed: usize,
    pub tag_filters: usize,
    pub grid_cells: usize,
    pub grid_dim: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            d_img: crate::dataio::DEFAULT_D_IMG,
            hidden: DEFAULT_HIDDEN,
            embed: DEFAULT_EMBED,
            tag_filters: DEFAULT_TAG_FILTERS,
            grid_cells: crate::dataio::DEFAULT_GRID_CELLS,
            grid_dim: crate::dataio::DEFAULT_GRID_DIM,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TagConfig {
    pub combine: TagCombine,
    /// Derive tags from captions with the bundled lexicon when a sample
    /// carries none.
    pub lexicon: bool,
}

impl Default for TagConfig {
    fn default() -> Self {
        Self {
            combine: TagCombine::Concat,
            lexicon: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: Option<String>,
    pub index: Option<String>,
    pub checkpoint: Option<String>,
    pub log: Option<String>,
    pub generated: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub variant: Variant,
    pub mixture: Mixture,
    pub exemplar: ExemplarConfig,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub dims: Dims,
    pub tags: TagConfig,
    pub seed: u64,
    pub epochs: usize,
    pub min_count: usize,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            variant: Variant::Mdn,
            mixture: Mixture::Joint,
            exemplar: ExemplarConfig::default(),
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            dims: Dims::default(),
            tags: TagConfig::default(),
            seed: DEFAULT_SEED,
            epochs: DEFAULT_EPOCHS,
            min_count: 1,
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("config: {m}")));
        if self.version != CONFIG_VERSION {
            return bad(&format!("unsupported version {}", self.version));
        }
        if !(self.loss.alpha > 0.0) {
            return bad("loss.alpha must be > 0");
        }
        if !(self.loss.gamma >= 0.0) {
            return bad("loss.gamma must be >= 0");
        }
        if self.loss.max_len == 0 {
            return bad("loss.max_len must be >= 1");
        }
        if self.exemplar.k == 0 {
            return bad("exemplar.k must be >= 1");
        }
        if self.exemplar.clusters == 0 {
            return bad("exemplar.clusters must be >= 1");
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0) || !(0.0..1.0).contains(&o.rho) || !(o.eps > 0.0) || o.batch == 0 {
            return bad("optimizer needs lr > 0, 0 <= rho < 1, eps > 0, batch >= 1");
        }
        if !(o.decay_a * o.decay_b > 0.0) {
            return bad("optimizer.decay_a * optimizer.decay_b must be > 0");
        }
        if o.clip.is_some_and(|c| !(c > 0.0)) {
            return bad("optimizer.clip must be > 0");
        }
        let d = &self.dims;
        if [d.d_img, d.hidden, d.embed, d.tag_filters, d.grid_cells, d.grid_dim].contains(&0) {
            return bad("all dims must be positive");
        }
        if self.mixture == Mixture::Attention && d.grid_dim != d.hidden {
            return bad("attention fusion adds the attended grid cell to the caption embedding, so dims.grid_dim must equal dims.hidden");
        }
        if self.min_count == 0 {
            return bad("min_count must be >= 1");
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
