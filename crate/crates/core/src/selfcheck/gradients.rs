use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Check;
use crate::config::{Mixture, TagCombine, Variant};
use crate::dataio::{PLACE_DIM, STOP, START, TAG_SLOTS};
use crate::encoders::{encode_caption, encode_image, encode_place, encode_tags, init_encoder_params, EncoderShape};
use crate::error::Result;
use crate::mixture::{fuse_addition, fuse_attention, fuse_hadamard, fuse_joint, init_mixture_params};
use crate::model::{decode_teacher_forced, init_decoder_params, triplet_loss};
use crate::params::{uniform, Bound, ParamSet};
use crate::tensor::{grad_check, grad_check_sampled, GradCheck, Tape, Tensor, Var};

pub const STEP: f64 = 1e-5;
pub const THRESHOLD: f64 = 1e-4;

/// Sizes and sampling for [`gradient_suite`].
#[derive(Clone, Copy, Debug)]
pub struct GradSuite {
    pub hidden: usize,
    pub vocab: usize,
    pub d_img: usize,
    pub grid_cells: usize,
    pub tag_filters: usize,
    /// Entries checked per parameter tensor; `None` checks all of them.
    pub per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradSuite {
    fn default() -> Self {
        Self {
            hidden: 64,
            vocab: 40,
            d_img: 32,
            grid_cells: 6,
            tag_filters: 16,
            per_param: Some(64),
            seed: 11,
        }
    }
}

/// Redraws every parameter at a well-conditioned point: matrices in
/// `±gain/√fan_in`, embedding tables in `±1`, vectors in `±0.1`.
///
/// At the small training init many gradient entries sit near 1e-8, where
/// f64 roundoff in the loss swamps a central difference of step 1e-5.
pub fn condition<R: Rng>(params: &mut ParamSet, rng: &mut R, gain: f64) {
    for (name, t) in params.iter_mut() {
        let shape = t.shape().to_vec();
        let scale = if name.ends_with("emb") {
            1.0
        } else if shape.len() == 2 {
            let right = name.contains(".conv") || name.contains(".comb") || name == "mix.w_i";
            gain / (if right { shape[0] } else { shape[1] } as f64).sqrt()
        } else {
            0.1
        };
        *t = uniform(rng, &shape, scale);
    }
}

fn run<F>(s: &GradSuite, f: F, params: &[Tensor]) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    match s.per_param {
        Some(n) => grad_check_sampled(f, params, STEP, n, s.seed),
        None => grad_check(f, params, STEP),
    }
}

/// Checks `‖out(params, inputs) − target‖²`, with the named parameters
/// followed by the extra input tensors as leaves. The target sits at
/// `out + 0.01·offset`: a small loss value keeps its roundoff small.
/// Parameters listed in `frozen` enter as constants.
fn check_readout<F>(
    s: &GradSuite,
    name: &str,
    params: &ParamSet,
    frozen: &[&str],
    inputs: Vec<Tensor>,
    offset: &Tensor,
    out: F,
) -> Result<Check>
where
    F: Fn(&mut Tape, &Bound, &[Var]) -> Result<Var>,
{
    let (mut names, mut fixed) = (Vec::new(), Vec::new());
    let mut all = Vec::new();
    for (n, t) in params.iter() {
        if frozen.contains(&n) {
            fixed.push((n.to_string(), t.clone()));
        } else {
            names.push(n.to_string());
            all.push(t.clone());
        }
    }
    all.extend(inputs);
    let bind = |tape: &mut Tape, vars: &[Var]| -> Result<Bound> {
        let mut keys: Vec<&str> = names.iter().map(String::as_str).collect();
        let mut bound = vars[..names.len()].to_vec();
        for (n, t) in &fixed {
            keys.push(n);
            bound.push(tape.constant(t.clone()));
        }
        Bound::from_parts(keys, &bound)
    };
    let target = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = all.iter().map(|t| tape.constant(t.clone())).collect();
        let b = bind(&mut tape, &vars)?;
        let y = out(&mut tape, &b, &vars[names.len()..])?;
        let data = tape.value(y).data().iter().zip(offset.data()).map(|(a, o)| a + 0.01 * o).collect();
        Tensor::vector(data)
    };
    let report = run(
        s,
        |tape: &mut Tape, vars: &[Var]| {
            let b = bind(tape, vars)?;
            let y = out(tape, &b, &vars[names.len()..])?;
            let t = tape.constant(target.clone());
            tape.sq_dist(y, t)
        },
        &all,
    )?;
    Ok(Check::below(name, report.max_rel_error, THRESHOLD))
}

/// `|∂(Σ context)/∂b_p|`, which must vanish.
fn shift_invariant_bias(p: &ParamSet, grid: &Tensor, f: &Tensor) -> Result<Check> {
    let mut tape = Tape::new();
    let b = p.bind(&mut tape);
    let g = tape.constant(grid.clone());
    let f = tape.constant(f.clone());
    let y = fuse_attention(&mut tape, &b, g, f)?.context;
    let y = tape.sum(y);
    let grads = tape.backward(y)?;
    let bias = grads.get(b.get("mix.b_p")?).data()[0].abs();
    Ok(Check::below("fusion: attention bias gradient", bias, 1e-12))
}

fn tokens(rng: &mut ChaCha8Rng, vocab: usize, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(4..vocab)).collect()
}

/// Gradient checks through every encoder path, every fusion method, the
/// decoder loss and the triplet loss. Each stage is checked on its own
/// with its inputs as leaves; the chain rule composes them.
pub fn gradient_suite(s: &GradSuite) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let h = s.hidden;
    let mut out = Vec::new();
    let offset = uniform(&mut rng, &[h], 1.0);

    let shape = |variant, mixture, combine| EncoderShape {
        variant,
        mixture,
        combine,
        vocab: s.vocab,
        d_img: s.d_img,
        hidden: h,
        embed: h,
        tag_filters: s.tag_filters,
    };
    let encoder = |rng: &mut ChaCha8Rng, sh: &EncoderShape, keep: &str| {
        let mut p = ParamSet::new();
        init_encoder_params(&mut p, rng, sh);
        condition(&mut p, rng, 2.0);
        let mut only = ParamSet::new();
        for (n, t) in p.iter() {
            if n.starts_with(keep) || (keep == "enc.lstm" || keep == "enc.tag") && n == "enc.emb" {
                only.insert(n, t.clone());
            }
        }
        only
    };

    let p = encoder(&mut rng, &shape(Variant::DiffImage, Mixture::Joint, TagCombine::Concat), "enc.img");
    let x = uniform(&mut rng, &[s.d_img], 1.0);
    out.push(check_readout(s, "encoder: image", &p, &[], vec![x], &offset, |t, b, v| encode_image(t, b, v[0]))?);

    let p = encoder(&mut rng, &shape(Variant::Mdn, Mixture::Joint, TagCombine::Concat), "enc.lstm");
    let caption = tokens(&mut rng, s.vocab, 7);
    out.push(check_readout(s, "encoder: caption", &p, &[], vec![], &offset, |t, b, _| {
        encode_caption(t, b, &caption)
    })?);

    for combine in TagCombine::ALL.iter().copied() {
        let p = encoder(&mut rng, &shape(Variant::Tag, Mixture::Joint, combine), "enc.tag");
        // Full slots: under `mul` a padded category pools to its bias and
        // shrinks the other two categories' gradients toward roundoff.
        let tags = [(); 3].map(|_| tokens(&mut rng, s.vocab, TAG_SLOTS));
        out.push(check_readout(s, &format!("encoder: tags ({combine})"), &p, &[], vec![], &offset, |t, b, _| {
            encode_tags(t, b, &tags, combine)
        })?);
    }

    let p = encoder(&mut rng, &shape(Variant::Place, Mixture::Joint, TagCombine::Concat), "enc.place");
    let place = uniform(&mut rng, &[PLACE_DIM], 1.0);
    out.push(check_readout(s, "encoder: place", &p, &[], vec![place], &offset, |t, b, v| encode_place(t, b, v[0]))?);

    for mixture in Mixture::ALL.iter().copied() {
        let mut p = ParamSet::new();
        init_mixture_params(&mut p, &mut rng, mixture, h, h);
        condition(&mut p, &mut rng, 2.0);
        let first = if mixture == Mixture::Attention {
            uniform(&mut rng, &[s.grid_cells, h], 1.0)
        } else {
            uniform(&mut rng, &[h], 1.0)
        };
        let f = uniform(&mut rng, &[h], 1.0);
        // The attention bias shifts every logit equally, so softmax makes its
        // gradient exactly zero; a relative error on it measures only noise.
        let frozen: &[&str] = if mixture == Mixture::Attention {
            out.push(shift_invariant_bias(&p, &first, &f)?);
            &["mix.b_p"]
        } else {
            &[]
        };
        out.push(check_readout(s, &format!("fusion: {mixture}"), &p, frozen, vec![first, f], &offset, |t, b, v| {
            match mixture {
                Mixture::Joint => fuse_joint(t, b, v[0], v[1]),
                Mixture::Hadamard => fuse_hadamard(t, b, v[0], v[1]),
                Mixture::Addition => fuse_addition(t, b, v[0], v[1]),
                Mixture::Attention => Ok(fuse_attention(t, b, v[0], v[1])?.context),
            }
        })?);
    }

    let mut p = ParamSet::new();
    init_decoder_params(&mut p, &mut rng, s.vocab, h);
    condition(&mut p, &mut rng, 2.0);
    let mut question = vec![START];
    question.extend(tokens(&mut rng, s.vocab, 6));
    question.push(STOP);
    let names: Vec<String> = p.names().map(String::from).collect();
    let mut all = p.tensors();
    all.push(uniform(&mut rng, &[h], 1.0));
    let report = run(
        s,
        |tape: &mut Tape, vars: &[Var]| {
            let n = names.len();
            let b = Bound::from_parts(names.iter().map(String::as_str), &vars[..n])?;
            Ok(decode_teacher_forced(tape, &b, vars[n], &question, 20)?.loss)
        },
        &all,
    )?;
    out.push(Check::below("decoder loss", report.max_rel_error, THRESHOLD));

    // Contrasting point close to the target keeps the hinge active.
    let anchor = uniform(&mut rng, &[h], 1.0);
    let pos = uniform(&mut rng, &[h], 1.0);
    let jitter = uniform(&mut rng, &[h], 0.05);
    let neg = Tensor::vector(anchor.data().iter().zip(jitter.data()).map(|(a, j)| a + j).collect());
    let report = run(
        s,
        |tape: &mut Tape, v: &[Var]| triplet_loss(tape, v[0], v[1], v[2], 0.2),
        &[anchor, pos, neg],
    )?;
    out.push(Check::below("triplet loss", report.max_rel_error, THRESHOLD));
    Ok(out)
}
