//! Representation towers: image, caption, tag and place embeddings.
//!
//! All functions record onto a caller-owned tape and read parameters from
//! a [`Bound`] map, so the target, supporting and contrasting towers share
//! weights simply by using the same map.

use rand::Rng;

use crate::config::{Mixture, TagCombine, Variant};
use crate::dataio::{PAD, PLACE_DIM, TAG_SLOTS};
use crate::error::{Error, Result};
use crate::params::{uniform, Bound, ParamSet};
use crate::tensor::{Tape, Tensor, Var};

/// Initial weight range for every matrix and embedding table.
pub const INIT_SCALE: f64 = 0.08;
pub const FORGET_BIAS: f64 = 1.0;
pub const CONV_WIDTHS: [usize; 3] = [1, 2, 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderShape {
    pub variant: Variant,
    pub mixture: Mixture,
    pub combine: TagCombine,
    pub vocab: usize,
    pub d_img: usize,
    pub hidden: usize,
    pub embed: usize,
    pub tag_filters: usize,
}

/// LSTM weights `[4H, in + H]` with gate blocks ordered i, f, g, o.
pub fn init_lstm<R: Rng>(params: &mut ParamSet, rng: &mut R, prefix: &str, input: usize, hidden: usize) {
    params.insert(
        format!("{prefix}.w"),
        uniform(rng, &[4 * hidden, input + hidden], INIT_SCALE),
    );
    let mut b = vec![0.0; 4 * hidden];
    b[hidden..2 * hidden].fill(FORGET_BIAS);
    params.insert(format!("{prefix}.b"), Tensor::vector(b));
}

pub fn init_linear<R: Rng>(params: &mut ParamSet, rng: &mut R, prefix: &str, out: usize, input: usize) {
    params.insert(format!("{prefix}.w"), uniform(rng, &[out, input], INIT_SCALE));
    params.insert(format!("{prefix}.b"), Tensor::zeros(&[out]));
}

pub fn init_encoder_params<R: Rng>(params: &mut ParamSet, rng: &mut R, s: &EncoderShape) {
    let h = s.hidden;
    if s.mixture != Mixture::Attention {
        init_linear(params, rng, "enc.img", h, s.d_img);
    }
    match s.variant {
        Variant::Mdn => {
            params.insert("enc.emb", uniform(rng, &[s.vocab, s.embed], INIT_SCALE));
            init_lstm(params, rng, "enc.lstm", s.embed, h);
        }
        Variant::Tag => {
            params.insert("enc.emb", uniform(rng, &[s.vocab, s.embed], INIT_SCALE));
            let f = s.tag_filters;
            for w in CONV_WIDTHS {
                params.insert(format!("enc.tag.conv{w}.w"), uniform(rng, &[w * s.embed, f], INIT_SCALE));
                params.insert(format!("enc.tag.conv{w}.b"), Tensor::zeros(&[f]));
            }
            let per_category = CONV_WIDTHS.len() * f;
            let proj_in = match s.combine {
                TagCombine::Concat => 3 * per_category,
                TagCombine::Add | TagCombine::Mul => per_category,
                TagCombine::Conv1d => {
                    params.insert(
                        "enc.tag.comb.w",
                        uniform(rng, &[2 * per_category, per_category], INIT_SCALE),
                    );
                    params.insert("enc.tag.comb.b", Tensor::zeros(&[per_category]));
                    per_category
                }
            };
            init_linear(params, rng, "enc.tag.proj", h, proj_in);
        }
        Variant::Place => init_linear(params, rng, "enc.place", h, PLACE_DIM),
        Variant::DiffImage => {}
    }
}

fn linear(tape: &mut Tape, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let w = p.get(&format!("{prefix}.w"))?;
    let b = p.get(&format!("{prefix}.b"))?;
    let wx = tape.matmul(w, x)?;
    tape.add(wx, b)
}

/// `g = tanh(W·x + b)` over an image feature vector.
pub fn encode_image(tape: &mut Tape, p: &Bound, features: Var) -> Result<Var> {
    let z = linear(tape, p, "enc.img", features)?;
    Ok(tape.tanh(z))
}

/// `tanh(W·p + b)` over a 365-way place distribution.
pub fn encode_place(tape: &mut Tape, p: &Bound, place: Var) -> Result<Var> {
    let len = tape.shape(place).iter().product::<usize>();
    if len != PLACE_DIM {
        return Err(Error::invalid(format!(
            "place features have length {len}, expected {PLACE_DIM}"
        )));
    }
    let z = linear(tape, p, "enc.place", place)?;
    Ok(tape.tanh(z))
}

/// One LSTM step. `w` is `[4H, in + H]`, gates ordered i, f, g, o.
pub fn lstm_step(tape: &mut Tape, w: Var, b: Var, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let hidden = tape.shape(h)[0];
    let xh = tape.concat(&[x, h], 0)?;
    let wz = tape.matmul(w, xh)?;
    let z = tape.add(wz, b)?;
    let zi = tape.slice(z, 0, hidden)?;
    let zf = tape.slice(z, hidden, hidden)?;
    let zg = tape.slice(z, 2 * hidden, hidden)?;
    let zo = tape.slice(z, 3 * hidden, hidden)?;
    let i = tape.sigmoid(zi);
    let f = tape.sigmoid(zf);
    let g = tape.tanh(zg);
    let o = tape.sigmoid(zo);
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c2 = tape.add(fc, ig)?;
    let tc = tape.tanh(c2);
    let h2 = tape.mul(o, tc)?;
    Ok((h2, c2))
}

/// Embedding row `id` of a `[V, E]` table as a rank-1 vector.
pub fn embed_token(tape: &mut Tape, table: Var, id: usize) -> Result<Var> {
    let e = tape.shape(table)[1];
    let row = tape.embedding(table, &[id], None)?;
    tape.reshape(row, &[e])
}

/// Final hidden state of an LSTM run over the caption tokens from a zero
/// state.
pub fn encode_caption(tape: &mut Tape, p: &Bound, ids: &[usize]) -> Result<Var> {
    if ids.is_empty() {
        return Err(Error::invalid("caption has no tokens"));
    }
    let table = p.get("enc.emb")?;
    let w = p.get("enc.lstm.w")?;
    let b = p.get("enc.lstm.b")?;
    let hidden = tape.shape(b)[0] / 4;
    let mut h = tape.constant(Tensor::zeros(&[hidden]));
    let mut c = tape.constant(Tensor::zeros(&[hidden]));
    for &id in ids {
        let x = embed_token(tape, table, id)?;
        (h, c) = lstm_step(tape, w, b, x, h, c)?;
    }
    Ok(h)
}

/// Width-1/2/3 convolutions with max-pooling over one tag category.
fn tag_category(tape: &mut Tape, p: &Bound, ids: &[usize]) -> Result<Var> {
    if ids.len() != TAG_SLOTS {
        return Err(Error::invalid(format!(
            "tag category has {} slots, expected {TAG_SLOTS}",
            ids.len()
        )));
    }
    let table = p.get("enc.emb")?;
    let emb = tape.embedding(table, ids, Some(PAD))?;
    let mut pooled = Vec::with_capacity(CONV_WIDTHS.len());
    for w in CONV_WIDTHS {
        let windows = tape.unfold(emb, w)?;
        let kernel = p.get(&format!("enc.tag.conv{w}.w"))?;
        let bias = p.get(&format!("enc.tag.conv{w}.b"))?;
        let maps = tape.matmul(windows, kernel)?;
        let rows = tape.shape(maps)[0];
        let bias = tape.replicate(bias, rows)?;
        let maps = tape.add(maps, bias)?;
        pooled.push(tape.max_rows(maps)?);
    }
    tape.concat(&pooled, 0)
}

/// Tag embedding from padded noun/verb/wh id lists.
pub fn encode_tags(tape: &mut Tape, p: &Bound, tags: &[Vec<usize>; 3], combine: TagCombine) -> Result<Var> {
    let mut cats = Vec::with_capacity(3);
    for ids in tags {
        cats.push(tag_category(tape, p, ids)?);
    }
    let combined = match combine {
        TagCombine::Concat => tape.concat(&cats, 0)?,
        TagCombine::Add => tape.add_n(&cats)?,
        TagCombine::Mul => {
            let nv = tape.mul(cats[0], cats[1])?;
            tape.mul(nv, cats[2])?
        }
        TagCombine::Conv1d => {
            let n = tape.shape(cats[0])[0];
            let mut rows = Vec::with_capacity(3);
            for c in &cats {
                rows.push(tape.reshape(*c, &[1, n])?);
            }
            let seq = tape.concat(&rows, 0)?;
            let windows = tape.unfold(seq, 2)?;
            let w = p.get("enc.tag.comb.w")?;
            let b = p.get("enc.tag.comb.b")?;
            let maps = tape.matmul(windows, w)?;
            let b = tape.replicate(b, 2)?;
            let maps = tape.add(maps, b)?;
            tape.max_rows(maps)?
        }
    };
    let z = linear(tape, p, "enc.tag.proj", combined)?;
    Ok(tape.tanh(z))
}

/// Model-ready inputs of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct TowerInput {
    pub features: Tensor,
    pub caption: Vec<usize>,
    pub tags: [Vec<usize>; 3],
    pub place: Option<Tensor>,
    pub grid: Option<Tensor>,
}

/// Embeddings one tower hands to the mixture module.
#[derive(Clone, Copy, Debug)]
pub struct TowerOut {
    /// Image embedding; absent under attention fusion, which reads the grid.
    pub image: Option<Var>,
    /// Caption, tag or place embedding; zeros for the image-only variant.
    pub context: Var,
    pub grid: Option<Var>,
}

pub fn encode_tower(tape: &mut Tape, p: &Bound, input: &TowerInput, shape: &EncoderShape) -> Result<TowerOut> {
    let (image, grid) = if shape.mixture == Mixture::Attention {
        let grid = input
            .grid
            .as_ref()
            .ok_or_else(|| Error::invalid("attention fusion needs grid_features on every sample"))?;
        (None, Some(tape.constant(grid.clone())))
    } else {
        let x = tape.constant(input.features.clone());
        (Some(encode_image(tape, p, x)?), None)
    };
    let context = match shape.variant {
        Variant::Mdn => encode_caption(tape, p, &input.caption)?,
        Variant::DiffImage => tape.constant(Tensor::zeros(&[shape.hidden])),
        Variant::Tag => encode_tags(tape, p, &input.tags, shape.combine)?,
        Variant::Place => {
            let place = input.place.as_ref().ok_or_else(|| {
                Error::invalid("the place variant cannot run without place_features on every sample")
            })?;
            let x = tape.constant(place.clone());
            encode_place(tape, p, x)?
        }
    };
    Ok(TowerOut { image, context, grid })
}

/// Runs the shared tower over target, supporting and contrasting inputs.
pub fn triplet_encode(
    tape: &mut Tape,
    p: &Bound,
    target: &TowerInput,
    supporting: &TowerInput,
    contrasting: &TowerInput,
    shape: &EncoderShape,
) -> Result<[TowerOut; 3]> {
    Ok([
        encode_tower(tape, p, target, shape)?,
        encode_tower(tape, p, supporting, shape)?,
        encode_tower(tape, p, contrasting, shape)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape(variant: Variant, combine: TagCombine) -> EncoderShape {
        EncoderShape {
            variant,
            mixture: Mixture::Joint,
            combine,
            vocab: 12,
            d_img: 6,
            hidden: 4,
            embed: 3,
            tag_filters: 2,
        }
    }

    fn params(s: &EncoderShape, seed: u64) -> ParamSet {
        let mut p = ParamSet::new();
        init_encoder_params(&mut p, &mut ChaCha8Rng::seed_from_u64(seed), s);
        // Wider weights and non-zero biases so the checks exercise them.
        for (_, t) in p.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= 6.0);
            if t.rank() == 1 {
                for (i, v) in t.data_mut().iter_mut().enumerate() {
                    *v += 0.01 * (i as f64 + 1.0);
                }
            }
        }
        p
    }

    fn input() -> TowerInput {
        TowerInput {
            features: Tensor::vector(vec![0.3, -0.2, 0.9, 0.1, -0.7, 0.4]),
            caption: vec![4, 5, 6, 7],
            tags: [vec![4, 5, 0, 0, 0], vec![6, 0, 0, 0, 0], vec![7, 0, 0, 0, 0]],
            place: Some(Tensor::vector((0..PLACE_DIM).map(|i| (i % 7) as f64 / 50.0).collect())),
            grid: None,
        }
    }

    fn check_tower(s: EncoderShape) {
        let p = params(&s, 3);
        let names: Vec<String> = p.names().map(String::from).collect();
        let inp = input();
        let report = grad_check(
            |tape: &mut Tape, vars: &[Var]| {
                let b = Bound::from_parts(names.iter().map(String::as_str), vars)?;
                let out = encode_tower(tape, &b, &inp, &s)?;
                let mut parts = vec![out.context];
                parts.extend(out.image);
                let all = tape.concat(&parts, 0)?;
                let sq = tape.mul(all, all)?;
                let w = tape.constant(Tensor::vector((0..tape.shape(sq)[0]).map(|i| 1.0 + i as f64).collect()));
                let weighted = tape.mul(sq, w)?;
                Ok(tape.sum(weighted))
            },
            &p.tensors(),
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{s:?}: {}", report.max_rel_error);
    }

    #[test]
    fn grad_check_image_projection() {
        let w = uniform(&mut ChaCha8Rng::seed_from_u64(8), &[4, 6], 0.5);
        let b = Tensor::vector(vec![0.1, -0.2, 0.05, 0.3]);
        let x = input().features;
        let report = grad_check(
            |tape: &mut Tape, v: &[Var]| {
                let bound = Bound::from_parts(["enc.img.w", "enc.img.b"], &v[..2])?;
                let g = encode_image(tape, &bound, v[2])?;
                Ok(tape.sum(g))
            },
            &[w, b, x],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{}", report.max_rel_error);
    }

    #[test]
    fn grad_checks_every_path() {
        check_tower(shape(Variant::Mdn, TagCombine::Concat));
        check_tower(shape(Variant::DiffImage, TagCombine::Concat));
        check_tower(shape(Variant::Place, TagCombine::Concat));
        for c in TagCombine::ALL {
            check_tower(shape(Variant::Tag, *c));
        }
    }

    #[test]
    fn zero_image_weights_give_zero_embedding() {
        let mut p = ParamSet::new();
        p.insert("enc.img.w", Tensor::zeros(&[4, 3]));
        p.insert("enc.img.b", Tensor::zeros(&[4]));
        let mut tape = Tape::new();
        let b = p.bind_const(&mut tape);
        let x = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let g = encode_image(&mut tape, &b, x).unwrap();
        assert_eq!(tape.value(g).data(), &[0.0; 4]);
    }

    #[test]
    fn zero_lstm_gives_zero_state() {
        let mut p = ParamSet::new();
        p.insert("enc.emb", uniform(&mut ChaCha8Rng::seed_from_u64(1), &[5, 3], 1.0));
        p.insert("enc.lstm.w", Tensor::zeros(&[16, 7]));
        p.insert("enc.lstm.b", Tensor::zeros(&[16]));
        let mut tape = Tape::new();
        let b = p.bind_const(&mut tape);
        let h = encode_caption(&mut tape, &b, &[1, 2, 3]).unwrap();
        assert_eq!(tape.value(h).data(), &[0.0; 4]);
        assert!(encode_caption(&mut tape, &b, &[]).is_err());
    }

    #[test]
    fn forget_bias_is_one() {
        let mut p = ParamSet::new();
        init_lstm(&mut p, &mut ChaCha8Rng::seed_from_u64(1), "x", 3, 2);
        assert_eq!(p.get("x.b").unwrap().data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn all_pad_tags_yield_bias_only_output() {
        let s = shape(Variant::Tag, TagCombine::Concat);
        let p = params(&s, 1);
        let q = params(&s, 2);
        let pad = [vec![PAD; 5], vec![PAD; 5], vec![PAD; 5]];
        let run = |p: &ParamSet| {
            let mut p = p.clone();
            // Same biases and projection, different embeddings and kernels.
            for w in CONV_WIDTHS {
                let k = p.get(&format!("enc.tag.conv{w}.w")).unwrap().clone();
                *p.get_mut(&format!("enc.tag.conv{w}.w")).unwrap() = Tensor::full(k.shape(), 0.5);
            }
            let mut tape = Tape::new();
            let b = p.bind_const(&mut tape);
            let v = encode_tags(&mut tape, &b, &pad, TagCombine::Concat).unwrap();
            tape.value(v).clone()
        };
        let mut q2 = q.clone();
        for name in ["enc.tag.proj.w", "enc.tag.proj.b", "enc.tag.conv1.b", "enc.tag.conv2.b", "enc.tag.conv3.b"] {
            *q2.get_mut(name).unwrap() = p.get(name).unwrap().clone();
        }
        assert_eq!(run(&p), run(&q2));
    }

    #[test]
    fn shared_parameters_give_identical_towers() {
        let s = shape(Variant::Mdn, TagCombine::Concat);
        let p = params(&s, 4);
        let mut tape = Tape::new();
        let b = p.bind_const(&mut tape);
        let a = input();
        let mut other = input();
        other.caption = vec![8, 9];
        let [t, sup, con] = triplet_encode(&mut tape, &b, &a, &a, &other, &s).unwrap();
        assert_eq!(tape.value(t.context), tape.value(sup.context));
        assert_eq!(tape.value(t.image.unwrap()), tape.value(sup.image.unwrap()));
        assert_ne!(tape.value(t.context), tape.value(con.context));
        let [_, s2, c2] = triplet_encode(&mut tape, &b, &a, &other, &a, &s).unwrap();
        assert_eq!(tape.value(s2.context), tape.value(con.context));
        assert_eq!(tape.value(c2.context), tape.value(sup.context));
    }

    #[test]
    fn place_checks() {
        let s = shape(Variant::Place, TagCombine::Concat);
        let p = params(&s, 4);
        let mut tape = Tape::new();
        let b = p.bind_const(&mut tape);
        let mut inp = input();
        inp.place = None;
        let err = encode_tower(&mut tape, &b, &inp, &s).unwrap_err();
        assert!(err.to_string().contains("place"));
        let short = tape.constant(Tensor::vector(vec![0.0; 10]));
        assert!(encode_place(&mut tape, &b, short).is_err());
        let mut z = ParamSet::new();
        z.insert("enc.place.w", Tensor::zeros(&[4, PLACE_DIM]));
        z.insert("enc.place.b", Tensor::zeros(&[4]));
        let bz = z.bind_const(&mut tape);
        let x = tape.constant(Tensor::zeros(&[PLACE_DIM]));
        let out = encode_place(&mut tape, &bz, x).unwrap();
        assert_eq!(tape.value(out).data(), &[0.0; 4]);
    }
}
