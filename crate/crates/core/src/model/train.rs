use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::decoder::decode_teacher_forced;
use super::loss::{total_loss, triplet_loss};
use super::optim::{lr_decay, Optimizer};
use super::{build_vocab, Model};
use crate::config::{ExemplarMode, RunConfig};
use crate::dataio::Dataset;
use crate::encoders::TowerInput;
use crate::error::{Error, Result};
use crate::exemplar::ExemplarIndex;
use crate::params::Bound;
use crate::tensor::{Tape, Var};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean total loss over the epoch's training instances.
    pub loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
}

/// Supporting and contrasting dataset positions per sample.
type ExemplarTable = Vec<(Vec<usize>, Vec<usize>)>;

fn exemplar_table(dataset: &Dataset, index: &ExemplarIndex, config: &RunConfig) -> Result<ExemplarTable> {
    let by_id: HashMap<&str, usize> = dataset
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();
    let to_dataset = |pos: usize| -> Result<usize> {
        let id = &index.ids()[pos];
        by_id.get(id.as_str()).copied().ok_or_else(|| {
            Error::invalid(format!(
                "exemplar index holds `{id}`, which is not in the training dataset; rebuild the index over the same samples"
            ))
        })
    };
    let k = config.exemplar.k;
    let mut table = Vec::with_capacity(dataset.len());
    for (i, s) in dataset.samples.iter().enumerate() {
        let ex = match config.exemplar.mode {
            ExemplarMode::Knn => index.find_exemplar_positions(&s.id, k),
            ExemplarMode::Random => {
                index.random_exemplar_positions(&s.id, k, config.seed.wrapping_add(i as u64))
            }
        }
        .map_err(|e| match e {
            Error::UnknownId(id) => Error::invalid(format!(
                "sample `{id}` is missing from the exemplar index; rebuild the index over the training dataset"
            )),
            other => other,
        })?;
        let sup = ex.supporting.into_iter().map(to_dataset).collect::<Result<_>>()?;
        let con = ex.contrasting.into_iter().map(to_dataset).collect::<Result<_>>()?;
        table.push((sup, con));
    }
    Ok(table)
}

/// Trains a model on `dataset`. The index supplies exemplars and is
/// required unless the triplet towers are disabled or γ is 0.
pub fn train(dataset: &Dataset, index: Option<&ExemplarIndex>, config: &RunConfig) -> Result<TrainOutcome> {
    train_with(dataset, index, config, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    dataset: &Dataset,
    index: Option<&ExemplarIndex>,
    config: &RunConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    let vocab = build_vocab(dataset, config.min_count)?;
    let mut model = Model::new(config.clone(), vocab)?;
    let inputs: Vec<TowerInput> = dataset
        .samples
        .iter()
        .map(|s| model.prepare(s))
        .collect::<Result<_>>()?;

    let mut instances = Vec::new();
    let mut questions = Vec::with_capacity(dataset.len());
    for (i, s) in dataset.samples.iter().enumerate() {
        let mut qs = Vec::with_capacity(s.questions.len());
        for (j, tokens) in s.question_tokens().into_iter().enumerate() {
            if tokens.len() > config.loss.max_len {
                return Err(Error::Sample {
                    id: s.id.clone(),
                    msg: format!(
                        "question {j} has {} tokens, more than loss.max_len = {}",
                        tokens.len(),
                        config.loss.max_len
                    ),
                });
            }
            qs.push(model.vocab.encode_question(&tokens));
            instances.push((i, j));
        }
        questions.push(qs);
    }

    let use_triplet = config.loss.triplet_towers && config.loss.gamma > 0.0;
    let exemplars = if use_triplet {
        let index = index.ok_or_else(|| {
            Error::invalid("training with triplet towers needs an exemplar index (or loss.triplet_towers = false)")
        })?;
        Some(exemplar_table(dataset, index, config)?)
    } else {
        None
    };

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut opt = Optimizer::from_config(&config.optimizer);
    let factor = lr_decay(config.optimizer.decay_a, config.optimizer.decay_b)?;
    let (alpha, gamma, max_len) = (config.loss.alpha, config.loss.gamma, config.loss.max_len);
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let lr = opt.lr();
        instances.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in instances.chunks(config.optimizer.batch) {
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape);
            // Towers share weights, so each sample is encoded once per batch.
            let mut contexts: HashMap<usize, Var> = HashMap::new();
            let mut context = |tape: &mut Tape, b: &Bound, i: usize| -> Result<Var> {
                if let Some(&v) = contexts.get(&i) {
                    return Ok(v);
                }
                let v = model.context(tape, b, &inputs[i])?;
                contexts.insert(i, v);
                Ok(v)
            };
            let mut terms = Vec::with_capacity(batch.len());
            for &(i, j) in batch {
                let s = context(&mut tape, &bound, i)?;
                let cross = decode_teacher_forced(&mut tape, &bound, s, &questions[i][j], max_len)?.loss;
                let trip = match &exemplars {
                    Some(table) => {
                        let (sup, con) = &table[i];
                        let mut ts = Vec::with_capacity(sup.len());
                        for (&a, &b) in sup.iter().zip(con) {
                            let sp = context(&mut tape, &bound, a)?;
                            let sn = context(&mut tape, &bound, b)?;
                            ts.push(triplet_loss(&mut tape, s, sp, sn, alpha)?);
                        }
                        let sum = tape.add_n(&ts)?;
                        Some(tape.scale(sum, 1.0 / ts.len() as f64))
                    }
                    None => None,
                };
                terms.push((cross, trip));
            }
            let loss = total_loss(&mut tape, &terms, gamma)?;
            let value = tape.value(loss).item().expect("scalar loss");
            if !value.is_finite() {
                return Err(Error::invalid(format!(
                    "loss diverged at epoch {epoch}; lower optimizer.lr or set optimizer.clip"
                )));
            }
            total += value * batch.len() as f64;
            let grads = bound.collect(tape.backward(loss)?);
            opt.step(&mut model.params, &grads)?;
            if config.optimizer.decay_per_iteration {
                opt.decay(factor);
            }
        }
        if !config.optimizer.decay_per_iteration {
            opt.decay(factor);
        }
        let entry = EpochLog {
            epoch,
            loss: total / instances.len() as f64,
            lr,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome { model, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synth_dataset;

    fn config() -> RunConfig {
        let mut c = RunConfig::default();
        c.dims.d_img = 8;
        c.dims.hidden = 8;
        c.dims.embed = 6;
        c.exemplar.k = 2;
        c.exemplar.clusters = 2;
        c.optimizer.batch = 4;
        c.optimizer.lr = 0.01;
        c.epochs = 3;
        c
    }

    #[test]
    fn deterministic_and_gamma_zero_matches_disabled_towers() {
        let ds = synth_dataset(2, 8, 2, 8).unwrap();
        let idx = ExemplarIndex::from_dataset(&ds, 2, 2).unwrap();
        let a = train(&ds, Some(&idx), &config()).unwrap();
        let b = train(&ds, Some(&idx), &config()).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.model, b.model);

        let mut zero = config();
        zero.loss.gamma = 0.0;
        let mut off = config();
        off.loss.triplet_towers = false;
        let z = train(&ds, Some(&idx), &zero).unwrap();
        let o = train(&ds, None, &off).unwrap();
        for (x, y) in z.log.iter().zip(&o.log) {
            assert!((x.loss - y.loss).abs() < 1e-12);
        }
        assert!(train(&ds, None, &config()).is_err());
    }

    #[test]
    fn index_must_cover_dataset() {
        let ds = synth_dataset(2, 8, 2, 8).unwrap();
        let other = synth_dataset(3, 10, 2, 8).unwrap();
        let mut renamed = other.clone();
        for s in &mut renamed.samples {
            s.id = format!("x-{}", s.id);
        }
        let idx = ExemplarIndex::from_dataset(&renamed, 2, 2).unwrap();
        let err = train(&ds, Some(&idx), &config()).unwrap_err();
        assert!(err.to_string().contains("exemplar index"), "{err}");
    }

    #[test]
    fn long_questions_rejected() {
        let ds = synth_dataset(2, 8, 2, 8).unwrap();
        let mut c = config();
        c.loss.triplet_towers = false;
        c.loss.max_len = 3;
        assert!(train(&ds, None, &c).is_err());
    }

    #[test]
    fn lr_decays_each_epoch() {
        let ds = synth_dataset(2, 8, 2, 8).unwrap();
        let mut c = config();
        c.loss.triplet_towers = false;
        c.optimizer.decay_a = 1.0;
        c.optimizer.decay_b = 1.0;
        let out = train(&ds, None, &c).unwrap();
        assert!((out.log[1].lr / out.log[0].lr - 0.1).abs() < 1e-12);
    }
}
