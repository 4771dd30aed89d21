use std::thread;

use super::decoder::{generate, Decoding};
use super::Model;
use crate::dataio::{Dataset, Sample};
use crate::error::Result;
use crate::tensor::Tape;

/// Environment variable capping the number of inference threads.
pub const THREADS_ENV: &str = "VQG_LAB_THREADS";

/// Threads to use: `VQG_LAB_THREADS` if set to a positive integer,
/// otherwise the available parallelism.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Joins tokens into a question string; clitics such as `'s` attach to
/// the previous word so the string tokenizes back to the same tokens.
pub fn detokenize(tokens: &[String]) -> String {
    let mut out = String::new();
    for t in tokens {
        let clitic = t.len() > 1 && t.starts_with('\'');
        if !out.is_empty() && !clitic {
            out.push(' ');
        }
        out.push_str(t);
    }
    out
}

/// Generates the question for one sample. Only the target tower and the
/// mixture run; exemplars play no part.
pub fn infer_one(model: &Model, sample: &Sample, decoding: Decoding) -> Result<Vec<String>> {
    let mut tape = Tape::new();
    let bound = model.params.bind_const(&mut tape);
    let input = model.prepare(sample)?;
    let s = model.context(&mut tape, &bound, &input)?;
    let ids = generate(&mut tape, &bound, s, model.config.loss.max_len, decoding)?;
    Ok(model.vocab.decode(&ids))
}

fn decoding_for(decoding: Decoding, position: usize) -> Decoding {
    match decoding {
        Decoding::Argmax => Decoding::Argmax,
        Decoding::Sample { seed } => Decoding::Sample {
            seed: seed.wrapping_add(position as u64),
        },
    }
}

/// Generated questions in dataset order, using [`thread_count`] threads.
pub fn infer(model: &Model, dataset: &Dataset, decoding: Decoding) -> Result<Vec<(String, Vec<String>)>> {
    infer_with_threads(model, dataset, decoding, thread_count())
}

/// As [`infer`] with an explicit thread count. Output does not depend on it.
pub fn infer_with_threads(
    model: &Model,
    dataset: &Dataset,
    decoding: Decoding,
    threads: usize,
) -> Result<Vec<(String, Vec<String>)>> {
    let n = dataset.len();
    let threads = threads.clamp(1, n.max(1));
    let chunk = n.div_ceil(threads).max(1);
    let run = |start: usize, samples: &[Sample]| -> Result<Vec<(String, Vec<String>)>> {
        samples
            .iter()
            .enumerate()
            .map(|(k, s)| Ok((s.id.clone(), infer_one(model, s, decoding_for(decoding, start + k))?)))
            .collect()
    };
    if threads == 1 {
        return run(0, &dataset.samples);
    }
    let parts: Vec<Result<Vec<_>>> = thread::scope(|scope| {
        let handles: Vec<_> = dataset
            .samples
            .chunks(chunk)
            .enumerate()
            .map(|(c, samples)| scope.spawn(move || run(c * chunk, samples)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("inference thread panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(n);
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}
