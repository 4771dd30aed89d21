use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// `max(0, D⁺ + α − D⁻)` with squared Euclidean distances.
pub fn triplet_loss(tape: &mut Tape, s: Var, pos: Var, neg: Var, alpha: f64) -> Result<Var> {
    let dp = tape.sq_dist(s, pos)?;
    let dn = tape.sq_dist(s, neg)?;
    let diff = tape.sub(dp, dn)?;
    let m = tape.add_scalar(diff, alpha);
    Ok(tape.relu(m))
}

/// Plain-value form of [`triplet_loss`].
pub fn triplet_value(s: &[f64], pos: &[f64], neg: &[f64], alpha: f64) -> Result<f64> {
    if s.len() != pos.len() || s.len() != neg.len() {
        return Err(Error::Shape {
            op: "triplet",
            lhs: vec![s.len()],
            rhs: vec![pos.len(), neg.len()],
        });
    }
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    Ok((d(s, pos) + alpha - d(s, neg)).max(0.0))
}

/// Mean over the batch of `cross + γ·triplet`; a missing triplet term
/// counts as zero.
pub fn total_loss(tape: &mut Tape, terms: &[(Var, Option<Var>)], gamma: f64) -> Result<Var> {
    if terms.is_empty() {
        return Err(Error::invalid("total loss over an empty batch"));
    }
    let mut per = Vec::with_capacity(terms.len());
    for &(cross, trip) in terms {
        per.push(match trip {
            Some(t) => {
                let t = tape.scale(t, gamma);
                tape.add(cross, t)?
            }
            None => cross,
        });
    }
    let sum = tape.add_n(&per)?;
    Ok(tape.scale(sum, 1.0 / terms.len() as f64))
}

/// Plain-value form of [`total_loss`] over `(cross, triplet)` pairs.
pub fn total_value(terms: &[(f64, f64)], gamma: f64) -> Result<f64> {
    if terms.is_empty() {
        return Err(Error::invalid("total loss over an empty batch"));
    }
    Ok(terms.iter().map(|(c, t)| c + gamma * t).sum::<f64>() / terms.len() as f64)
}
