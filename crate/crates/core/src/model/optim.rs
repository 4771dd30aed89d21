use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::OptimizerConfig;
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Per-epoch multiplicative decay `exp(ln 0.1 / (a·b))`: after `a·b`
/// applications the rate has dropped tenfold.
pub fn lr_decay(a: f64, b: f64) -> Result<f64> {
    let ab = a * b;
    if !(ab > 0.0) || !ab.is_finite() {
        return Err(Error::invalid(format!("decay needs a·b > 0, got {ab}")));
    }
    Ok((0.1f64.ln() / ab).exp())
}

/// RMSProp hyperparameters and running squared-gradient cache.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsProp {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    cache: BTreeMap<String, Vec<f64>>,
}

impl RmsProp {
    pub fn new(lr: f64, rho: f64, eps: f64) -> Self {
        Self {
            lr,
            rho,
            eps,
            cache: BTreeMap::new(),
        }
    }

    pub fn cache(&self, name: &str) -> Option<&[f64]> {
        self.cache.get(name).map(Vec::as_slice)
    }

    /// `cache ← ρ·cache + (1−ρ)·g²; p ← p − lr·g / (√cache + ε)`.
    pub fn update(&mut self, name: &str, param: &mut Tensor, grad: &Tensor) -> Result<()> {
        if param.shape() != grad.shape() {
            return Err(Error::Shape {
                op: "rmsprop",
                lhs: param.shape().to_vec(),
                rhs: grad.shape().to_vec(),
            });
        }
        let cache = self
            .cache
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; grad.len()]);
        let (rho, lr, eps) = (self.rho, self.lr, self.eps);
        for ((p, &g), c) in param.data_mut().iter_mut().zip(grad.data()).zip(cache.iter_mut()) {
            *c = rho * *c + (1.0 - rho) * g * g;
            *p -= lr * g / (c.sqrt() + eps);
        }
        Ok(())
    }
}

/// The main RMSProp instance plus an optional second one for the
/// encoder and mixture parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub main: RmsProp,
    pub triplet: Option<RmsProp>,
    pub clip: Option<f64>,
}

impl Optimizer {
    pub fn from_config(c: &OptimizerConfig) -> Self {
        let triplet = (c.triplet_lr.is_some() || c.triplet_rho.is_some()).then(|| {
            RmsProp::new(c.triplet_lr.unwrap_or(c.lr), c.triplet_rho.unwrap_or(c.rho), c.eps)
        });
        Self {
            main: RmsProp::new(c.lr, c.rho, c.eps),
            triplet,
            clip: c.clip,
        }
    }

    pub fn lr(&self) -> f64 {
        self.main.lr
    }

    /// Multiplies every learning rate by `factor`.
    pub fn decay(&mut self, factor: f64) {
        self.main.lr *= factor;
        if let Some(t) = &mut self.triplet {
            t.lr *= factor;
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, grad) in grads {
            let param = params.get_mut(name)?;
            let clipped;
            let grad = match self.clip {
                Some(c) => {
                    let mut g = grad.clone();
                    g.data_mut().iter_mut().for_each(|v| *v = v.clamp(-c, c));
                    clipped = g;
                    &clipped
                }
                None => grad,
            };
            let opt = match &mut self.triplet {
                Some(t) if name.starts_with("enc.") || name.starts_with("mix.") => t,
                _ => &mut self.main,
            };
            opt.update(name, param, grad)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_values() {
        let f = lr_decay(1500.0, 1250.0).unwrap();
        let x = 10f64.ln() / 1_875_000.0;
        assert!((f - (1.0 - x + x * x / 2.0)).abs() < 1e-15, "{f}");
        assert!((f - 0.99999877).abs() < 1e-8);
        let f = lr_decay(10.0, 10.0).unwrap();
        assert!((f.powi(100) - 0.1).abs() < 1e-12);
        assert!(lr_decay(0.0, 5.0).is_err());
        assert!(lr_decay(-1.0, 5.0).is_err());
        for (a, b) in [(0.5, 0.5), (1.0, 1.0), (3.0, 1e6)] {
            let f = lr_decay(a, b).unwrap();
            assert!(f > 0.0 && f < 1.0);
        }
    }

    #[test]
    fn first_step() {
        let mut opt = RmsProp::new(0.0004, 0.99, 1e-8);
        let mut p = Tensor::vector(vec![1.0]);
        opt.update("x", &mut p, &Tensor::vector(vec![1.0])).unwrap();
        let want = 1.0 - 0.0004 / (0.01f64.sqrt() + 1e-8);
        assert!((p.data()[0] - want).abs() < 1e-15);
        assert!((p.data()[0] - (1.0 - 0.004)).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_keeps_params_and_decays_cache() {
        let mut opt = RmsProp::new(0.01, 0.9, 1e-8);
        let mut p = Tensor::vector(vec![2.0, -1.0]);
        opt.update("x", &mut p, &Tensor::vector(vec![1.0, 1.0])).unwrap();
        let after = p.clone();
        let c0 = opt.cache("x").unwrap().to_vec();
        opt.update("x", &mut p, &Tensor::vector(vec![0.0, 0.0])).unwrap();
        assert_eq!(p, after);
        let c1 = opt.cache("x").unwrap();
        assert!(c1.iter().zip(&c0).all(|(a, b)| a < b && *a >= 0.0));
        assert!(opt.update("x", &mut p, &Tensor::vector(vec![0.0])).is_err());
    }

    #[test]
    fn quadratic_descends_monotonically() {
        let mut opt = RmsProp::new(0.01, 0.99, 1e-8);
        let mut x = Tensor::vector(vec![3.0]);
        let mut last = f64::INFINITY;
        for step in 0..200 {
            let v = x.data()[0];
            let loss = v * v;
            if step > 5 {
                assert!(loss <= last, "step {step}: {loss} > {last}");
            }
            last = loss;
            opt.update("x", &mut x, &Tensor::vector(vec![2.0 * v])).unwrap();
        }
    }

    #[test]
    fn groups_and_clip() {
        let cfg = OptimizerConfig {
            lr: 0.1,
            triplet_lr: Some(0.2),
            clip: Some(0.5),
            ..Default::default()
        };
        let mut opt = Optimizer::from_config(&cfg);
        let mut params = ParamSet::new();
        params.insert("enc.a", Tensor::vector(vec![0.0]));
        params.insert("dec.a", Tensor::vector(vec![0.0]));
        let mut grads = BTreeMap::new();
        grads.insert("enc.a".to_string(), Tensor::vector(vec![10.0]));
        grads.insert("dec.a".to_string(), Tensor::vector(vec![10.0]));
        opt.step(&mut params, &grads).unwrap();
        let e = params.get("enc.a").unwrap().data()[0];
        let d = params.get("dec.a").unwrap().data()[0];
        assert!((e / d - 2.0).abs() < 1e-9);
        assert_eq!(opt.main.cache("dec.a").unwrap()[0], (1.0 - 0.99) * 0.25);
        opt.decay(0.5);
        assert_eq!(opt.lr(), 0.05);
        assert_eq!(opt.triplet.as_ref().unwrap().lr, 0.1);
    }
}
