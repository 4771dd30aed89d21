//! Fusion of image and context embeddings into one context vector.

use rand::Rng;

use crate::config::Mixture;
use crate::encoders::{init_linear, TowerOut, INIT_SCALE};
use crate::error::{Error, Result};
use crate::params::{uniform, Bound, ParamSet};
use crate::tensor::{Tape, Tensor, Var};

pub fn init_mixture_params<R: Rng>(params: &mut ParamSet, rng: &mut R, mixture: Mixture, hidden: usize, grid_dim: usize) {
    let h = hidden;
    match mixture {
        Mixture::Joint => {
            params.insert("mix.w_ij", uniform(rng, &[h, h], INIT_SCALE));
            params.insert("mix.w_cj", uniform(rng, &[h, h], INIT_SCALE));
            params.insert("mix.b_j", Tensor::zeros(&[h]));
            params.insert("mix.w_j", uniform(rng, &[h, 2 * h], INIT_SCALE));
        }
        Mixture::Hadamard | Mixture::Addition => {
            params.insert("mix.w_ij", uniform(rng, &[h, h], INIT_SCALE));
            params.insert("mix.w_cj", uniform(rng, &[h, h], INIT_SCALE));
            params.insert("mix.b_j", Tensor::zeros(&[h]));
            init_linear(params, rng, "mix.a", h, h);
        }
        Mixture::Attention => {
            // Stored as [grid_dim, H] so the whole grid projects in one product.
            params.insert("mix.w_i", uniform(rng, &[grid_dim, h], INIT_SCALE));
            params.insert("mix.w_c", uniform(rng, &[h, h], INIT_SCALE));
            params.insert("mix.b_c", Tensor::zeros(&[h]));
            params.insert("mix.w_p", uniform(rng, &[h], INIT_SCALE));
            params.insert("mix.b_p", Tensor::zeros(&[1]));
            init_linear(params, rng, "mix.a", h, h);
        }
    }
}

fn check_pair(tape: &Tape, g: Var, f: Var) -> Result<()> {
    if tape.shape(g) != tape.shape(f) || tape.shape(g).len() != 1 {
        return Err(Error::Shape {
            op: "fuse",
            lhs: tape.shape(g).to_vec(),
            rhs: tape.shape(f).to_vec(),
        });
    }
    Ok(())
}

/// `(W_ij·g, W_cj·f + b_j)`.
fn project_pair(tape: &mut Tape, p: &Bound, g: Var, f: Var) -> Result<(Var, Var)> {
    check_pair(tape, g, f)?;
    let wg = tape.matmul(p.get("mix.w_ij")?, g)?;
    let wf = tape.matmul(p.get("mix.w_cj")?, f)?;
    let wf = tape.add(wf, p.get("mix.b_j")?)?;
    Ok((wg, wf))
}

fn output_layer(tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
    let z = tape.matmul(p.get("mix.a.w")?, x)?;
    let z = tape.add(z, p.get("mix.a.b")?)?;
    Ok(tape.tanh(z))
}

/// `tanh(W_j · tanh([W_ij·g ; W_cj·f + b_j]))`.
pub fn fuse_joint(tape: &mut Tape, p: &Bound, g: Var, f: Var) -> Result<Var> {
    let (wg, wf) = project_pair(tape, p, g, f)?;
    let joint = tape.concat(&[wg, wf], 0)?;
    let joint = tape.tanh(joint);
    let s = tape.matmul(p.get("mix.w_j")?, joint)?;
    Ok(tape.tanh(s))
}

/// `tanh(W_A · tanh(W_ij·g ⊙ (W_cj·f + b_j)) + b_A)`.
pub fn fuse_hadamard(tape: &mut Tape, p: &Bound, g: Var, f: Var) -> Result<Var> {
    let (wg, wf) = project_pair(tape, p, g, f)?;
    let a = tape.mul(wg, wf)?;
    let a = tape.tanh(a);
    output_layer(tape, p, a)
}

/// `tanh(W_A · tanh(W_ij·g + W_cj·f + b_j) + b_A)`.
pub fn fuse_addition(tape: &mut Tape, p: &Bound, g: Var, f: Var) -> Result<Var> {
    let (wg, wf) = project_pair(tape, p, g, f)?;
    let a = tape.add(wg, wf)?;
    let a = tape.tanh(a);
    output_layer(tape, p, a)
}

#[derive(Clone, Copy, Debug)]
pub struct Attended {
    pub context: Var,
    /// Softmax weights over the grid cells.
    pub weights: Var,
    /// Weighted sum of the raw grid cells.
    pub attended: Var,
}

/// Soft attention over a `[cells, dim]` grid guided by `f`.
pub fn fuse_attention(tape: &mut Tape, p: &Bound, grid: Var, f: Var) -> Result<Attended> {
    let gs = tape.shape(grid).to_vec();
    let fs = tape.shape(f).to_vec();
    if gs.len() != 2 || fs.len() != 1 || gs[1] != fs[0] {
        return Err(Error::Shape {
            op: "fuse-attention",
            lhs: gs,
            rhs: fs,
        });
    }
    let cells = gs[0];
    let proj_g = tape.matmul(grid, p.get("mix.w_i")?)?;
    let proj_f = tape.matmul(p.get("mix.w_c")?, f)?;
    let proj_f = tape.add(proj_f, p.get("mix.b_c")?)?;
    let proj_f = tape.replicate(proj_f, cells)?;
    let h = tape.add(proj_g, proj_f)?;
    let h = tape.tanh(h);
    let logits = tape.matmul(h, p.get("mix.w_p")?)?;
    let bias = tape.replicate(p.get("mix.b_p")?, cells)?;
    let bias = tape.reshape(bias, &[cells])?;
    let logits = tape.add(logits, bias)?;
    let weights = tape.softmax(logits, 0)?;
    let attended = tape.matmul(weights, grid)?;
    let a = tape.add(attended, f)?;
    let context = output_layer(tape, p, a)?;
    Ok(Attended {
        context,
        weights,
        attended,
    })
}

/// Fuses one tower's output with the configured method.
pub fn fuse(tape: &mut Tape, p: &Bound, mixture: Mixture, tower: &TowerOut) -> Result<Var> {
    let image = || {
        tower
            .image
            .ok_or_else(|| Error::invalid(format!("{mixture} fusion needs an image embedding")))
    };
    match mixture {
        Mixture::Joint => fuse_joint(tape, p, image()?, tower.context),
        Mixture::Hadamard => fuse_hadamard(tape, p, image()?, tower.context),
        Mixture::Addition => fuse_addition(tape, p, image()?, tower.context),
        Mixture::Attention => {
            let grid = tower
                .grid
                .ok_or_else(|| Error::invalid("attention fusion needs grid_features"))?;
            Ok(fuse_attention(tape, p, grid, tower.context)?.context)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const H: usize = 4;

    fn params(m: Mixture, seed: u64) -> ParamSet {
        let mut p = ParamSet::new();
        init_mixture_params(&mut p, &mut ChaCha8Rng::seed_from_u64(seed), m, H, H);
        for (_, t) in p.iter_mut() {
            for v in t.data_mut() {
                *v *= 8.0;
            }
            if t.rank() == 1 {
                for (i, v) in t.data_mut().iter_mut().enumerate() {
                    *v += 0.05 * (i as f64 + 1.0);
                }
            }
        }
        p
    }

    fn vec_of(seed: u64, n: usize) -> Tensor {
        uniform(&mut ChaCha8Rng::seed_from_u64(seed), &[n], 1.0)
    }

    fn eval(p: &ParamSet, f: impl FnOnce(&mut Tape, &Bound) -> Var) -> Vec<f64> {
        let mut tape = Tape::new();
        let b = p.bind_const(&mut tape);
        let v = f(&mut tape, &b);
        tape.value(v).data().to_vec()
    }

    #[test]
    fn grad_checks() {
        for m in Mixture::ALL {
            let p = params(*m, 9);
            let names: Vec<String> = p.names().map(String::from).collect();
            let mut all = p.tensors();
            all.push(vec_of(1, H));
            all.push(vec_of(2, H));
            all.push(uniform(&mut ChaCha8Rng::seed_from_u64(3), &[5, H], 1.0));
            let report = grad_check(
                |tape: &mut Tape, vars: &[Var]| {
                    let n = names.len();
                    let b = Bound::from_parts(names.iter().map(String::as_str), &vars[..n])?;
                    let (g, f, grid) = (vars[n], vars[n + 1], vars[n + 2]);
                    let s = match m {
                        Mixture::Joint => fuse_joint(tape, &b, g, f)?,
                        Mixture::Hadamard => fuse_hadamard(tape, &b, g, f)?,
                        Mixture::Addition => fuse_addition(tape, &b, g, f)?,
                        Mixture::Attention => fuse_attention(tape, &b, grid, f)?.context,
                    };
                    let w = tape.constant(Tensor::vector(vec![1.0, -2.0, 0.5, 3.0]));
                    let sw = tape.mul(s, w)?;
                    Ok(tape.sum(sw))
                },
                &all,
                1e-5,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-6, "{m}: {}", report.max_rel_error);
        }
    }

    #[test]
    fn joint_zero_inputs_give_zero() {
        let mut p = params(Mixture::Joint, 1);
        *p.get_mut("mix.b_j").unwrap() = Tensor::zeros(&[H]);
        let out = eval(&p, |t, b| {
            let z = t.constant(Tensor::zeros(&[H]));
            fuse_joint(t, b, z, z).unwrap()
        });
        assert_eq!(out, vec![0.0; H]);
    }

    #[test]
    fn hadamard_identity_weights() {
        let mut p = ParamSet::new();
        let eye = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        p.insert("mix.w_ij", eye.clone());
        p.insert("mix.w_cj", eye.clone());
        p.insert("mix.b_j", Tensor::zeros(&[2]));
        p.insert("mix.a.w", eye);
        p.insert("mix.a.b", Tensor::zeros(&[2]));
        let out = eval(&p, |t, b| {
            let v = t.constant(Tensor::vector(vec![0.5, 0.5]));
            fuse_hadamard(t, b, v, v).unwrap()
        });
        let want = 0.25f64.tanh().tanh();
        assert_eq!(out, vec![want, want]);
    }

    #[test]
    fn hadamard_zero_caption_projection_gives_bias() {
        let mut p = params(Mixture::Hadamard, 2);
        *p.get_mut("mix.w_cj").unwrap() = Tensor::zeros(&[H, H]);
        *p.get_mut("mix.b_j").unwrap() = Tensor::zeros(&[H]);
        let b_a = p.get("mix.a.b").unwrap().data().to_vec();
        let out = eval(&p, |t, b| {
            let g = t.constant(vec_of(4, H));
            let f = t.constant(vec_of(5, H));
            fuse_hadamard(t, b, g, f).unwrap()
        });
        let want: Vec<f64> = b_a.iter().map(|v| v.tanh()).collect();
        assert_eq!(out, want);
    }

    #[test]
    fn addition_without_image_is_caption_only() {
        let mut p = params(Mixture::Addition, 3);
        *p.get_mut("mix.w_ij").unwrap() = Tensor::zeros(&[H, H]);
        let f = vec_of(6, H);
        let a = eval(&p, |t, b| {
            let g = t.constant(vec_of(7, H));
            let f = t.constant(f.clone());
            fuse_addition(t, b, g, f).unwrap()
        });
        let c = eval(&p, |t, b| {
            let g = t.constant(vec_of(8, H));
            let f = t.constant(f.clone());
            fuse_addition(t, b, g, f).unwrap()
        });
        assert_eq!(a, c);
    }

    #[test]
    fn hadamard_swap_symmetry() {
        let p = params(Mixture::Hadamard, 4);
        let mut q = p.clone();
        *q.get_mut("mix.w_ij").unwrap() = p.get("mix.w_cj").unwrap().clone();
        *q.get_mut("mix.w_cj").unwrap() = p.get("mix.w_ij").unwrap().clone();
        *q.get_mut("mix.b_j").unwrap() = Tensor::zeros(&[H]);
        let mut p = p;
        *p.get_mut("mix.b_j").unwrap() = Tensor::zeros(&[H]);
        let (g, f) = (vec_of(10, H), vec_of(11, H));
        let a = eval(&p, |t, b| {
            let (g, f) = (t.constant(g.clone()), t.constant(f.clone()));
            fuse_hadamard(t, b, g, f).unwrap()
        });
        let c = eval(&q, |t, b| {
            let (g, f) = (t.constant(g.clone()), t.constant(f.clone()));
            fuse_hadamard(t, b, f, g).unwrap()
        });
        for (x, y) in a.iter().zip(&c) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    fn attend(p: &ParamSet, grid: Tensor, f: Tensor) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new();
        let b = p.bind_const(&mut tape);
        let grid = tape.constant(grid);
        let f = tape.constant(f);
        let a = fuse_attention(&mut tape, &b, grid, f).unwrap();
        (
            tape.value(a.context).data().to_vec(),
            tape.value(a.weights).data().to_vec(),
            tape.value(a.attended).data().to_vec(),
        )
    }

    #[test]
    fn attention_weights_and_convexity() {
        let p = params(Mixture::Attention, 5);
        let grid = uniform(&mut ChaCha8Rng::seed_from_u64(12), &[7, H], 1.0);
        let (s, w, _) = attend(&p, grid, vec_of(13, H));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(s.iter().all(|v| v.abs() < 1.0));

        let v = vec_of(14, H);
        let same: Vec<f64> = (0..7).flat_map(|_| v.data().to_vec()).collect();
        let (_, _, att) = attend(&p, Tensor::matrix(7, H, same).unwrap(), vec_of(15, H));
        for (a, b) in att.iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_spike_selects_cell() {
        // Only grid dim 0 reaches the logits, and only cell 3 has it set,
        // so cell 3 scores 50 and every other cell 0.
        let mut p = params(Mixture::Attention, 6);
        let mut w_i = vec![0.0; H * H];
        w_i[0] = 100.0;
        *p.get_mut("mix.w_i").unwrap() = Tensor::matrix(H, H, w_i).unwrap();
        *p.get_mut("mix.w_c").unwrap() = Tensor::zeros(&[H, H]);
        *p.get_mut("mix.b_c").unwrap() = Tensor::zeros(&[H]);
        *p.get_mut("mix.w_p").unwrap() = Tensor::vector(vec![50.0, 0.0, 0.0, 0.0]);
        let mut grid = vec![0.0; 7 * H];
        for (r, row) in grid.chunks_mut(H).enumerate() {
            row[1] = r as f64;
            row[2] = -(r as f64);
        }
        grid[3 * H] = 1.0;
        let (_, w, att) = attend(&p, Tensor::matrix(7, H, grid.clone()).unwrap(), vec_of(1, H));
        assert!(w[3] > 1.0 - 1e-15);
        for (a, b) in att.iter().zip(&grid[3 * H..4 * H]) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn shape_errors() {
        let p = params(Mixture::Joint, 1);
        let mut tape = Tape::new();
        let b = p.bind_const(&mut tape);
        let g = tape.constant(Tensor::zeros(&[H]));
        let f = tape.constant(Tensor::zeros(&[H + 1]));
        assert!(fuse_joint(&mut tape, &b, g, f).is_err());
        let p = params(Mixture::Attention, 1);
        let b = p.bind_const(&mut tape);
        let grid = tape.constant(Tensor::zeros(&[3, H + 2]));
        assert!(fuse_attention(&mut tape, &b, grid, g).is_err());
    }
}
