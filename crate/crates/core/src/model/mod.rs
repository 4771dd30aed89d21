//! Question decoder, losses, optimizer, and the train/infer loops.

mod decoder;
mod infer;
mod loss;
mod optim;
mod train;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use decoder::{
    decode_teacher_forced, generate, generate_argmax, generate_sample, init_decoder_params, Decoding,
    TeacherForced,
};
pub use infer::{detokenize, infer, infer_one, infer_with_threads, thread_count, THREADS_ENV};
pub use loss::{total_loss, total_value, triplet_loss, triplet_value};
pub use optim::{lr_decay, Optimizer, RmsProp};
pub use train::{train, train_with, EpochLog, TrainOutcome};

use crate::config::{Mixture, RunConfig, Variant, CONFIG_VERSION};
use crate::dataio::{pos_tags, tokenize, Dataset, Lexicon, Sample, Vocabulary};
use crate::encoders::{encode_tower, init_encoder_params, EncoderShape, TowerInput};
use crate::error::{Error, Result};
use crate::mixture::{fuse, init_mixture_params};
use crate::params::{Bound, ParamSet};
use crate::tensor::{Tape, Tensor, Var};

/// A run configuration, its vocabulary, and the trained weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Model {
    pub version: u32,
    pub config: RunConfig,
    pub vocab: Vocabulary,
    pub params: ParamSet,
}

/// Vocabulary over every question, caption and explicit tag word.
pub fn build_vocab(dataset: &Dataset, min_count: usize) -> Result<Vocabulary> {
    let mut corpus: Vec<Vec<String>> = Vec::new();
    for s in &dataset.samples {
        corpus.extend(s.question_tokens());
        corpus.extend(s.captions.iter().map(|c| tokenize(c)));
        if let Some(t) = &s.tags {
            corpus.push(t.noun.iter().chain(&t.verb).chain(&t.wh).cloned().collect());
        }
    }
    Vocabulary::build(&corpus, min_count)
}

/// Fresh parameters for `config` drawn from its seed.
pub fn init_params(config: &RunConfig, vocab_len: usize) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let shape = encoder_shape(config, vocab_len);
    let mut params = ParamSet::new();
    init_encoder_params(&mut params, &mut rng, &shape);
    init_mixture_params(&mut params, &mut rng, config.mixture, config.dims.hidden, config.dims.grid_dim);
    init_decoder_params(&mut params, &mut rng, vocab_len, config.dims.hidden);
    params
}

fn encoder_shape(config: &RunConfig, vocab_len: usize) -> EncoderShape {
    EncoderShape {
        variant: config.variant,
        mixture: config.mixture,
        combine: config.tags.combine,
        vocab: vocab_len,
        d_img: config.dims.d_img,
        hidden: config.dims.hidden,
        embed: config.dims.embed,
        tag_filters: config.dims.tag_filters,
    }
}

impl Model {
    pub fn new(config: RunConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config, vocab.len());
        Ok(Self {
            version: CONFIG_VERSION,
            config,
            vocab,
            params,
        })
    }

    pub fn encoder_shape(&self) -> EncoderShape {
        encoder_shape(&self.config, self.vocab.len())
    }

    /// Converts a sample into model-ready tensors and ids.
    pub fn prepare(&self, sample: &Sample) -> Result<TowerInput> {
        let fail = |msg: String| Error::Sample {
            id: sample.id.clone(),
            msg,
        };
        let c = &self.config;
        if sample.features.len() != c.dims.d_img {
            return Err(fail(format!(
                "features have length {}, but dims.d_img is {}",
                sample.features.len(),
                c.dims.d_img
            )));
        }
        let caption = sample.caption_tokens();
        if c.variant == Variant::Mdn && caption.is_empty() {
            return Err(fail("the mdn variant needs a non-empty caption".into()));
        }
        let tags = match (&sample.tags, c.variant) {
            (Some(t), _) => t.encode(&self.vocab),
            (None, Variant::Tag) if c.tags.lexicon => {
                pos_tags(&caption, Lexicon::bundled()).encode(&self.vocab)
            }
            (None, Variant::Tag) => {
                return Err(fail("the tag variant needs tags (or tags.lexicon = true)".into()))
            }
            (None, _) => Default::default(),
        };
        let place = match &sample.place_features {
            Some(p) => Some(Tensor::vector(p.clone())),
            None if c.variant == Variant::Place => {
                return Err(fail("the place variant cannot run without place_features".into()))
            }
            None => None,
        };
        let grid = match &sample.grid_features {
            Some(g) => {
                let (cells, dim) = (g.len(), g.first().map_or(0, Vec::len));
                if c.mixture == Mixture::Attention && (cells, dim) != (c.dims.grid_cells, c.dims.grid_dim) {
                    return Err(fail(format!(
                        "grid_features are {cells}x{dim}, expected {}x{}",
                        c.dims.grid_cells, c.dims.grid_dim
                    )));
                }
                Some(Tensor::matrix(cells, dim, sample.grid_flat().unwrap_or_default())?)
            }
            None if c.mixture == Mixture::Attention => {
                return Err(fail("attention fusion needs grid_features; supply them or pick another mixture".into()))
            }
            None => None,
        };
        Ok(TowerInput {
            features: Tensor::vector(sample.features.clone()),
            caption: self.vocab.encode(&caption),
            tags,
            place,
            grid,
        })
    }

    /// Encodes and fuses one input into its context vector.
    pub fn context(&self, tape: &mut Tape, p: &Bound, input: &TowerInput) -> Result<Var> {
        let shape = self.encoder_shape();
        let tower = encode_tower(tape, p, input, &shape)?;
        fuse(tape, p, self.config.mixture, &tower)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Model = serde_json::from_str(text)?;
        if model.version != CONFIG_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint version {}",
                model.version
            )));
        }
        model.config.validate()?;
        let template = init_params(&model.config, model.vocab.len());
        for (name, t) in template.iter() {
            let got = model.params.get(name)?;
            if got.shape() != t.shape() {
                return Err(Error::invalid(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        if model.params.len() != template.len() {
            return Err(Error::invalid("checkpoint has unexpected parameters"));
        }
        Ok(model)
    }

    /// Writes the checkpoint JSON.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
