use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing tape gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(parameter index, entry index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub entries: usize,
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.value(out)
        .item()
        .ok_or_else(|| Error::invalid(format!("grad_check: function output has shape {:?}, expected a scalar", tape.shape(out))))
}

/// Tape gradients of `f` at `params`.
pub fn analytic_gradients<F>(f: &F, params: &[Tensor]) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::invalid(format!(
            "grad_check: function output has shape {:?}, expected a scalar",
            tape.shape(out)
        )));
    }
    let grads = tape.backward(out)?;
    Ok(vars.iter().map(|&v| grads.get(v)).collect())
}

/// Central differences `(f(x + h) − f(x − h)) / 2h` for every entry.
pub fn numeric_gradients<F>(f: &F, params: &[Tensor], step: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let all: Vec<Vec<usize>> = params.iter().map(|p| (0..p.len()).collect()).collect();
    numeric_gradients_at(f, params, step, &all)
}

/// Central differences at the listed entries of each parameter; every
/// other entry of the result is zero.
pub fn numeric_gradients_at<F>(f: &F, params: &[Tensor], step: f64, entries: &[Vec<usize>]) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::invalid("grad_check: step must be positive"));
    }
    if entries.len() != params.len() {
        return Err(Error::invalid("grad_check: one entry list per parameter"));
    }
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut g = Tensor::zeros(params[p].shape());
        for &j in &entries[p] {
            if j >= params[p].len() {
                return Err(Error::invalid(format!("grad_check: entry {j} out of range")));
            }
            let orig = work[p].data()[j];
            work[p].data_mut()[j] = orig + step;
            let plus = evaluate(f, &work)?;
            work[p].data_mut()[j] = orig - step;
            let minus = evaluate(f, &work)?;
            work[p].data_mut()[j] = orig;
            g.data_mut()[j] = (plus - minus) / (2.0 * step);
        }
        out.push(g);
    }
    Ok(out)
}

/// Max over entries of `|a − n| / max(1e-8, |a| + |n|)`.
pub fn compare_gradients(analytic: &[Tensor], numeric: &[Tensor]) -> GradCheck {
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        entries: 0,
    };
    for (p, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        for (j, (&x, &y)) in a.data().iter().zip(n.data()).enumerate() {
            let rel = (x - y).abs() / (x.abs() + y.abs()).max(1e-8);
            report.entries += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = Some((p, j));
            }
        }
    }
    report
}

/// Checks the tape's gradients of a scalar program against central
/// differences over every parameter entry.
pub fn grad_check<F>(f: F, params: &[Tensor], step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let analytic = analytic_gradients(&f, params)?;
    let numeric = numeric_gradients(&f, params, step)?;
    Ok(compare_gradients(&analytic, &numeric))
}

/// [`grad_check`] over at most `per_param` entries of each parameter,
/// chosen by a seeded draw; smaller parameters are checked in full.
pub fn grad_check_sampled<F>(f: F, params: &[Tensor], step: f64, per_param: usize, seed: u64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries: Vec<Vec<usize>> = params
        .iter()
        .map(|p| {
            if p.len() <= per_param {
                (0..p.len()).collect()
            } else {
                let mut picked = rand::seq::index::sample(&mut rng, p.len(), per_param).into_vec();
                picked.sort_unstable();
                picked
            }
        })
        .collect();
    let analytic = analytic_gradients(&f, params)?;
    let numeric = numeric_gradients_at(&f, params, step, &entries)?;
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        entries: 0,
    };
    for (p, list) in entries.iter().enumerate() {
        for &j in list {
            let (x, y) = (analytic[p].data()[j], numeric[p].data()[j]);
            let rel = (x - y).abs() / (x.abs() + y.abs()).max(1e-8);
            report.entries += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = Some((p, j));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_vector_output() {
        let err = grad_check(|t, v| Ok(t.tanh(v[0])), &[Tensor::vector(vec![0.1, 0.2])], 1e-5);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_non_positive_step() {
        let r = grad_check(|t, v| Ok(t.sum(v[0])), &[Tensor::vector(vec![0.1])], 0.0);
        assert!(r.is_err());
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let f = |t: &mut Tape, v: &[Var]| {
            let y = t.matmul(v[0], v[1])?;
            let y = t.tanh(y);
            Ok(t.sum(y))
        };
        let params = [
            Tensor::matrix(2, 3, vec![0.1, -0.4, 0.3, 0.7, -0.2, 0.5]).unwrap(),
            Tensor::vector(vec![0.9, -0.6, 0.2]),
        ];
        let mut analytic = analytic_gradients(&f, &params).unwrap();
        let numeric = numeric_gradients(&f, &params, 1e-5).unwrap();
        assert!(compare_gradients(&analytic, &numeric).max_rel_error < 1e-6);
        analytic[0].data_mut()[4] *= 2.0;
        assert!(compare_gradients(&analytic, &numeric).max_rel_error > 1e-2);
    }

    #[test]
    fn sampled_check_matches_full_on_small_params() {
        let f = |t: &mut Tape, v: &[Var]| {
            let y = t.matmul(v[0], v[1])?;
            let y = t.tanh(y);
            Ok(t.sum(y))
        };
        let a = Tensor::matrix(2, 3, vec![0.1, -0.4, 0.3, 0.7, 0.2, -0.5]).unwrap();
        let x = Tensor::vector(vec![0.3, -0.2, 0.9]);
        let full = grad_check(f, &[a.clone(), x.clone()], 1e-5).unwrap();
        let part = grad_check_sampled(f, &[a, x], 1e-5, 4, 1).unwrap();
        assert_eq!(part.entries, 4 + 3);
        assert!(part.max_rel_error <= full.max_rel_error);
        assert!(full.max_rel_error < 1e-8);
    }
}
