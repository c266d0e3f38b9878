use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Module;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay: each step multiplies weights by `1 − lr·weight_decay`.
    pub weight_decay: f64,
    /// Learning-rate factor applied after every epoch.
    pub lr_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-5, lr_decay: 0.94 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.lr * self.weight_decay < 1.0
            && self.lr_decay > 0.0
            && self.lr_decay <= 1.0;
        if !ok {
            return Err(Error::config(format!("invalid optimiser settings {self:?}")));
        }
        Ok(())
    }
}

/// Adam with decoupled weight decay and per-epoch exponential lr decay.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    lr: f64,
    t: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Result<Adam> {
        cfg.validate()?;
        Ok(Adam { lr: cfg.lr, cfg, t: 0, moments: HashMap::new() })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn end_epoch(&mut self) {
        self.lr *= self.cfg.lr_decay;
    }

    /// Update every parameter from its stored gradient, then clear it. A
    /// parameter without a gradient is a training error.
    pub fn step<M: Module + ?Sized>(&mut self, model: &mut M) -> Result<()> {
        let mut missing = None;
        model.visit_params(&mut |p| {
            if missing.is_none() && p.value().grad().is_none() {
                missing = Some(p.name().to_string());
            }
        });
        if let Some(name) = missing {
            return Err(Error::Training(format!("parameter {name} received no gradient")));
        }
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let lr = self.lr;
        let shrink = 1.0 - lr * self.cfg.weight_decay;
        let eps = self.cfg.eps;
        let moments = &mut self.moments;
        let mut result = Ok(());
        model.visit_params_mut(&mut |p| {
            let g = p.value().grad().expect("checked above");
            let (m, v) = moments
                .entry(p.name().to_string())
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            let data: Vec<f64> = p
                .value()
                .data()
                .iter()
                .enumerate()
                .map(|(i, &w)| {
                    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                    let mh = m[i] / c1;
                    let vh = v[i] / c2;
                    w * shrink - lr * mh / (vh.sqrt() + eps)
                })
                .collect();
            if result.is_ok() {
                result = p.set_data(data);
            }
        });
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Param;
    use crate::tensor::{mul, sub, sum, Tensor};

    struct Weights(Vec<Param>);

    impl Module for Weights {
        fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
            self.0.iter().for_each(f);
        }
        fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
            self.0.iter_mut().for_each(f);
        }
    }

    fn set_zero_grad(w: &Weights) {
        for p in &w.0 {
            let z = Tensor::zeros(p.shape());
            sum(&mul(p.value(), &z).unwrap()).backward().unwrap();
        }
    }

    #[test]
    fn minimises_quadratic() {
        let mut w = Weights(vec![Param::new("w", vec![0.0], &[1]).unwrap()]);
        let mut opt = Adam::new(AdamConfig { lr: 1e-2, lr_decay: 1.0, ..AdamConfig::default() }).unwrap();
        let target = Tensor::full(&[1], 3.0);
        let mut reached = None;
        for step in 0..2000 {
            let d = sub(w.0[0].value(), &target).unwrap();
            sum(&mul(&d, &d).unwrap()).backward().unwrap();
            opt.step(&mut w).unwrap();
            if (w.0[0].value().data()[0] - 3.0).abs() < 1e-2 {
                reached = Some(step);
                break;
            }
        }
        assert!(reached.is_some());
    }

    #[test]
    fn first_step_moves_by_lr() {
        let lr = 1e-3;
        let init = vec![0.5, -1.0, 2.0, 0.0];
        let mut w = Weights(vec![Param::new("w", init.clone(), &[4]).unwrap()]);
        let coef = Tensor::new(vec![3.0, -0.2, 1e-2, 50.0], &[4]).unwrap();
        sum(&mul(w.0[0].value(), &coef).unwrap()).backward().unwrap();
        let mut opt = Adam::new(AdamConfig { lr, ..AdamConfig::default() }).unwrap();
        opt.step(&mut w).unwrap();
        for (a, b) in w.0[0].value().data().iter().zip(&init) {
            let moved = (a - b).abs();
            assert!((moved - lr).abs() <= 0.1 * lr, "moved {moved}");
        }
    }

    #[test]
    fn zero_gradient_decay_shrinks() {
        let (lr, wd) = (1e-2, 0.5);
        let mut w = Weights(vec![Param::new("w", vec![1.0, -2.0], &[2]).unwrap()]);
        let mut opt = Adam::new(AdamConfig { lr, weight_decay: wd, ..AdamConfig::default() }).unwrap();
        for k in 1..=5 {
            set_zero_grad(&w);
            opt.step(&mut w).unwrap();
            let f = (1.0 - lr * wd).powi(k);
            let d = w.0[0].value().data();
            assert!((d[0] - f).abs() < 1e-12 && (d[1] + 2.0 * f).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_gradient_is_training_error() {
        let mut w = Weights(vec![
            Param::new("used", vec![1.0], &[1]).unwrap(),
            Param::new("unused", vec![1.0], &[1]).unwrap(),
        ]);
        sum(w.0[0].value()).backward().unwrap();
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        match opt.step(&mut w) {
            Err(Error::Training(m)) => assert!(m.contains("unused")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lr_decays_per_epoch() {
        let mut opt = Adam::new(AdamConfig { lr: 1.0, ..AdamConfig::default() }).unwrap();
        opt.end_epoch();
        opt.end_epoch();
        assert!((opt.lr() - 0.94 * 0.94).abs() < 1e-15);
    }
}
