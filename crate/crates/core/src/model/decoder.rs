use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::{PAD, START, STOP};
use crate::encoders::{embed_token, init_linear, init_lstm, lstm_step, INIT_SCALE};
use crate::error::{Error, Result};
use crate::params::{uniform, Bound, ParamSet};
use crate::tensor::{Tape, Tensor, Var};

pub fn init_decoder_params<R: Rng>(params: &mut ParamSet, rng: &mut R, vocab: usize, hidden: usize) {
    params.insert("dec.emb", uniform(rng, &[vocab, hidden], INIT_SCALE));
    init_lstm(params, rng, "dec.lstm", hidden, hidden);
    init_linear(params, rng, "dec.out", vocab, hidden);
}

#[derive(Clone, Copy)]
struct DecoderVars {
    emb: Var,
    w: Var,
    b: Var,
    out_w: Var,
    out_b: Var,
}

impl DecoderVars {
    fn new(p: &Bound) -> Result<Self> {
        Ok(Self {
            emb: p.get("dec.emb")?,
            w: p.get("dec.lstm.w")?,
            b: p.get("dec.lstm.b")?,
            out_w: p.get("dec.out.w")?,
            out_b: p.get("dec.out.b")?,
        })
    }

    /// Feeds the context vector as step −1 and returns the initial state.
    fn prime(&self, tape: &mut Tape, s: Var) -> Result<(Var, Var)> {
        let hidden = tape.shape(self.b)[0] / 4;
        if tape.shape(s) != [hidden] {
            return Err(Error::Shape {
                op: "decoder",
                lhs: tape.shape(s).to_vec(),
                rhs: vec![hidden],
            });
        }
        let zero = tape.constant(Tensor::zeros(&[hidden]));
        lstm_step(tape, self.w, self.b, s, zero, zero)
    }

    fn step(&self, tape: &mut Tape, token: usize, h: Var, c: Var) -> Result<(Var, Var, Var)> {
        let x = embed_token(tape, self.emb, token)?;
        let (h, c) = lstm_step(tape, self.w, self.b, x, h, c)?;
        let o = tape.matmul(self.out_w, h)?;
        let logits = tape.add(o, self.out_b)?;
        Ok((h, c, logits))
    }
}

/// Teacher-forced pass over one question.
pub struct TeacherForced {
    /// Mean negative log-likelihood over the predicted tokens.
    pub loss: Var,
    /// Output logits, one per predicted token.
    pub logits: Vec<Var>,
}

impl TeacherForced {
    /// Per-step output distributions.
    pub fn distributions(&self, tape: &Tape) -> Vec<Vec<f64>> {
        self.logits
            .iter()
            .map(|&l| crate::tensor::softmax(tape.value(l).data()))
            .collect()
    }
}

/// `question` is `[START, w1 .. wn, STOP]`; the decoder predicts every
/// token after START from the ones before it.
pub fn decode_teacher_forced(tape: &mut Tape, p: &Bound, s: Var, question: &[usize], max_len: usize) -> Result<TeacherForced> {
    if question.len() < 2 || question[0] != START || question[question.len() - 1] != STOP {
        return Err(Error::invalid("question must be encoded as START .. STOP"));
    }
    if question.len() - 2 > max_len {
        return Err(Error::invalid(format!(
            "question has {} tokens, longer than max_len {max_len}",
            question.len() - 2
        )));
    }
    let d = DecoderVars::new(p)?;
    let (mut h, mut c) = d.prime(tape, s)?;
    let mut logits = Vec::with_capacity(question.len() - 1);
    let mut losses = Vec::with_capacity(question.len() - 1);
    for pair in question.windows(2) {
        let (h2, c2, l) = d.step(tape, pair[0], h, c)?;
        (h, c) = (h2, c2);
        losses.push(tape.softmax_xent(l, pair[1])?);
        logits.push(l);
    }
    let total = tape.add_n(&losses)?;
    let loss = tape.scale(total, 1.0 / losses.len() as f64);
    Ok(TeacherForced { loss, logits })
}

/// How the next token is chosen at inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decoding {
    Argmax,
    Sample { seed: u64 },
}

/// Index of the largest logit, never PAD or START; ties go to the lower id.
fn pick_argmax(logits: &[f64]) -> usize {
    let mut best = STOP;
    for (i, &v) in logits.iter().enumerate() {
        if i == PAD || i == START {
            continue;
        }
        if v > logits[best] {
            best = i;
        }
    }
    best
}

fn pick_sample(logits: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let mut masked = logits.to_vec();
    masked[PAD] = f64::NEG_INFINITY;
    masked[START] = f64::NEG_INFINITY;
    let probs = crate::tensor::softmax(&masked);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = STOP;
    for (i, &q) in probs.iter().enumerate() {
        if q > 0.0 {
            acc += q;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Decodes up to `max_len` word ids (STOP excluded) from context `s`.
/// Nodes recorded on `tape` are dropped before returning.
pub fn generate(tape: &mut Tape, p: &Bound, s: Var, max_len: usize, decoding: Decoding) -> Result<Vec<usize>> {
    let mark = tape.len();
    let d = DecoderVars::new(p)?;
    let mut rng = match decoding {
        Decoding::Sample { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Decoding::Argmax => None,
    };
    let (mut h, mut c) = d.prime(tape, s)?;
    let mut token = START;
    let mut out = Vec::new();
    while out.len() < max_len {
        let (h2, c2, l) = d.step(tape, token, h, c)?;
        (h, c) = (h2, c2);
        let logits = tape.value(l).data();
        token = match rng.as_mut() {
            Some(r) => pick_sample(logits, r),
            None => pick_argmax(logits),
        };
        if token == STOP {
            break;
        }
        out.push(token);
    }
    tape.truncate(mark);
    Ok(out)
}

pub fn generate_argmax(tape: &mut Tape, p: &Bound, s: Var, max_len: usize) -> Result<Vec<usize>> {
    generate(tape, p, s, max_len, Decoding::Argmax)
}

pub fn generate_sample(tape: &mut Tape, p: &Bound, s: Var, max_len: usize, seed: u64) -> Result<Vec<usize>> {
    generate(tape, p, s, max_len, Decoding::Sample { seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use crate::selfcheck::condition;

    const V: usize = 9;
    const H: usize = 4;

    fn params(seed: u64) -> ParamSet {
        let mut p = ParamSet::new();
        init_decoder_params(&mut p, &mut ChaCha8Rng::seed_from_u64(seed), V, H);
        // Wider weights keep gradients well above finite-difference noise.
        for (_, t) in p.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= 6.0);
        }
        p
    }

    fn context() -> Tensor {
        Tensor::vector(vec![0.4, -0.3, 0.2, 0.9])
    }

    #[test]
    fn zero_output_layer_gives_log_v() {
        let mut p = params(1);
        *p.get_mut("dec.out.w").unwrap() = Tensor::zeros(&[V, H]);
        let mut tape = Tape::new();
        let b = p.bind_const(&mut tape);
        let s = tape.constant(context());
        let tf = decode_teacher_forced(&mut tape, &b, s, &[START, 5, 6, STOP], 20).unwrap();
        assert!((tape.value(tf.loss).item().unwrap() - (V as f64).ln()).abs() < 1e-12);
        for d in tf.distributions(&tape) {
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_sequences() {
        let p = params(1);
        let mut tape = Tape::new();
        let b = p.bind_const(&mut tape);
        let s = tape.constant(context());
        assert!(decode_teacher_forced(&mut tape, &b, s, &[5, 6, STOP], 20).is_err());
        assert!(decode_teacher_forced(&mut tape, &b, s, &[START, 5, 6], 20).is_err());
        assert!(decode_teacher_forced(&mut tape, &b, s, &[START, 5, 6, 7, STOP], 2).is_err());
        let bad = tape.constant(Tensor::zeros(&[H + 1]));
        assert!(decode_teacher_forced(&mut tape, &b, bad, &[START, 5, STOP], 20).is_err());
    }

    #[test]
    fn grad_check_whole_decoder() {
        let mut p = params(2);
        condition(&mut p, &mut ChaCha8Rng::seed_from_u64(5), 2.0);
        let names: Vec<String> = p.names().map(String::from).collect();
        let mut all = p.tensors();
        all.push(context());
        let report = grad_check(
            |tape: &mut Tape, vars: &[Var]| {
                let n = names.len();
                let b = Bound::from_parts(names.iter().map(String::as_str), &vars[..n])?;
                Ok(decode_teacher_forced(tape, &b, vars[n], &[START, 4, 7, 5, STOP], 20)?.loss)
            },
            &all,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{}", report.max_rel_error);
    }

    #[test]
    fn grad_check_output_weights() {
        let p = params(3);
        let report = grad_check(
            |tape: &mut Tape, vars: &[Var]| {
                let mut q = p.clone();
                q.insert("dec.out.w", Tensor::zeros(&[V, H]));
                let b = q.bind_const(tape);
                let names: Vec<&str> = p.names().collect();
                let mut handles: Vec<Var> = names.iter().map(|n| b.get(n)).collect::<Result<_>>()?;
                let slot = names.iter().position(|n| *n == "dec.out.w").unwrap();
                handles[slot] = vars[0];
                let b = Bound::from_parts(names, &handles)?;
                let s = tape.constant(context());
                Ok(decode_teacher_forced(tape, &b, s, &[START, 4, 7, 5, STOP], 20)?.loss)
            },
            &[p.get("dec.out.w").unwrap().clone()],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{}", report.max_rel_error);
    }

    fn spiked(token: usize) -> ParamSet {
        let mut p = params(3);
        *p.get_mut("dec.out.w").unwrap() = Tensor::zeros(&[V, H]);
        let mut b = vec![0.0; V];
        b[token] = 50.0;
        *p.get_mut("dec.out.b").unwrap() = Tensor::vector(b);
        p
    }

    #[test]
    fn argmax_is_deterministic_and_bounded() {
        let p = params(4);
        let mut tape = Tape::new();
        let b = p.bind_const(&mut tape);
        let s = tape.constant(context());
        let before = tape.len();
        let a = generate_argmax(&mut tape, &b, s, 6).unwrap();
        assert_eq!(tape.len(), before);
        assert_eq!(a, generate_argmax(&mut tape, &b, s, 6).unwrap());
        assert!(a.len() <= 6);
        assert!(a.iter().all(|&t| t != PAD && t != START && t != STOP));

        let p = spiked(7);
        let b = p.bind_const(&mut tape);
        assert_eq!(generate_argmax(&mut tape, &b, s, 3).unwrap(), vec![7, 7, 7]);
        let p = spiked(STOP);
        let b = p.bind_const(&mut tape);
        assert!(generate_argmax(&mut tape, &b, s, 3).unwrap().is_empty());
        // START is never produced even when it dominates.
        let p = spiked(START);
        let b = p.bind_const(&mut tape);
        assert!(!generate_argmax(&mut tape, &b, s, 3).unwrap().contains(&START));
    }

    #[test]
    fn sampling_is_seeded_and_follows_spikes() {
        let p = params(5);
        let mut tape = Tape::new();
        let b = p.bind_const(&mut tape);
        let s = tape.constant(context());
        let a = generate_sample(&mut tape, &b, s, 10, 11).unwrap();
        assert_eq!(a, generate_sample(&mut tape, &b, s, 10, 11).unwrap());
        let p = spiked(6);
        let b = p.bind_const(&mut tape);
        for seed in 0..20 {
            assert_eq!(
                generate_sample(&mut tape, &b, s, 4, seed).unwrap(),
                generate_argmax(&mut tape, &b, s, 4).unwrap()
            );
        }
    }
}
