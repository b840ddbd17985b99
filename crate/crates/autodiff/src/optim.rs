//! Optimisers and learning-rate schedules.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::params::{GradStore, ParamStore};
use crate::Matrix;

/// Linear warmup followed by linear decay to zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSchedule {
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LinearSchedule {
    pub fn new(warmup_steps: usize, total_steps: usize) -> Self {
        Self { warmup_steps, total_steps: total_steps.max(1) }
    }

    pub fn from_ratio(warmup_ratio: f64, total_steps: usize) -> Self {
        let warmup = (warmup_ratio * total_steps as f64).round() as usize;
        Self::new(warmup, total_steps)
    }

    /// Multiplier applied to the base learning rate at `step` (0-based).
    pub fn factor(&self, step: usize) -> f64 {
        let s = step as f64 + 1.0;
        if step < self.warmup_steps {
            s / self.warmup_steps as f64
        } else {
            let remaining = self.total_steps.saturating_sub(step) as f64;
            let span = self.total_steps.saturating_sub(self.warmup_steps).max(1) as f64;
            (remaining / span).clamp(0.0, 1.0)
        }
    }
}

/// Per-parameter learning rate: the first matching prefix wins, otherwise
/// `default`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub default: f64,
    pub by_prefix: Vec<(String, f64)>,
}

impl LearningRates {
    pub fn uniform(lr: f64) -> Self {
        Self { default: lr, by_prefix: Vec::new() }
    }

    pub fn with_prefix(mut self, prefix: impl Into<String>, lr: f64) -> Self {
        self.by_prefix.push((prefix.into(), lr));
        self
    }

    pub fn for_param(&self, name: &str) -> f64 {
        self.by_prefix
            .iter()
            .find(|(p, _)| name.starts_with(p.as_str()))
            .map(|(_, lr)| *lr)
            .unwrap_or(self.default)
    }
}

pub trait Optimizer {
    /// Applies one update scaled by `lr_factor` (from the schedule).
    fn step(&mut self, params: &mut ParamStore, grads: &GradStore, lr_factor: f64);
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: LearningRates,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: BTreeMap<String, Matrix>,
    v: BTreeMap<String, Matrix>,
}

impl Adam {
    pub fn new(lr: LearningRates) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut ParamStore, grads: &GradStore, lr_factor: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, g) in grads.iter() {
            let Some(p) = params.get_mut(name) else { continue };
            let lr = self.lr.for_param(name) * lr_factor;
            let m = self.m.entry(name.clone()).or_insert_with(|| Array2::zeros(g.raw_dim()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Array2::zeros(g.raw_dim()));
            let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
            ndarray::Zip::from(&mut *p)
                .and(&mut *m)
                .and(&mut *v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let update = (*m / bc1) / ((*v / bc2).sqrt() + eps);
                    *p -= lr * (update + wd * *p);
                });
        }
    }
}

/// Adafactor with factored second moments for matrices, no first moment,
/// update clipping and a fixed (externally scheduled) step size.
#[derive(Clone, Debug)]
pub struct Adafactor {
    pub lr: LearningRates,
    pub eps1: f64,
    pub clip_threshold: f64,
    pub decay_rate: f64,
    t: u64,
    row: BTreeMap<String, Array1<f64>>,
    col: BTreeMap<String, Array1<f64>>,
    full: BTreeMap<String, Matrix>,
}

impl Adafactor {
    pub fn new(lr: LearningRates) -> Self {
        Self {
            lr,
            eps1: 1e-30,
            clip_threshold: 1.0,
            decay_rate: -0.8,
            t: 0,
            row: BTreeMap::new(),
            col: BTreeMap::new(),
            full: BTreeMap::new(),
        }
    }
}

impl Optimizer for Adafactor {
    fn step(&mut self, params: &mut ParamStore, grads: &GradStore, lr_factor: f64) {
        self.t += 1;
        let beta2 = 1.0 - (self.t as f64).powf(self.decay_rate);
        for (name, g) in grads.iter() {
            let Some(p) = params.get_mut(name) else { continue };
            let lr = self.lr.for_param(name) * lr_factor;
            let g2 = g.mapv(|x| x * x + self.eps1);
            let factored = g.nrows() > 1 && g.ncols() > 1;
            let mut update = if factored {
                let r = self
                    .row
                    .entry(name.clone())
                    .or_insert_with(|| Array1::zeros(g.nrows()));
                let c = self
                    .col
                    .entry(name.clone())
                    .or_insert_with(|| Array1::zeros(g.ncols()));
                let rm = g2.mean_axis(Axis(1)).expect("rows");
                let cm = g2.mean_axis(Axis(0)).expect("cols");
                r.zip_mut_with(&rm, |a, &b| *a = beta2 * *a + (1.0 - beta2) * b);
                c.zip_mut_with(&cm, |a, &b| *a = beta2 * *a + (1.0 - beta2) * b);
                let r_mean = r.mean().unwrap_or(1.0).max(self.eps1);
                Array2::from_shape_fn(g.raw_dim(), |(i, j)| {
                    let v = r[i] * c[j] / r_mean;
                    g[[i, j]] / v.sqrt().max(1e-30)
                })
            } else {
                let v = self
                    .full
                    .entry(name.clone())
                    .or_insert_with(|| Array2::zeros(g.raw_dim()));
                v.zip_mut_with(&g2, |a, &b| *a = beta2 * *a + (1.0 - beta2) * b);
                Array2::from_shape_fn(g.raw_dim(), |(i, j)| g[[i, j]] / v[[i, j]].sqrt().max(1e-30))
            };
            let rms = (update.iter().map(|x| x * x).sum::<f64>() / update.len() as f64).sqrt();
            let denom = (rms / self.clip_threshold).max(1.0);
            update.mapv_inplace(|u| u / denom);
            p.zip_mut_with(&update, |p, &u| *p -= lr * u);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_then_decays() {
        let s = LinearSchedule::new(4, 10);
        assert!((s.factor(0) - 0.25).abs() < 1e-12);
        assert!((s.factor(3) - 1.0).abs() < 1e-12);
        assert!(s.factor(9) < s.factor(5));
        assert_eq!(s.factor(10), 0.0);
    }

    #[test]
    fn prefix_rates() {
        let lr = LearningRates::uniform(1e-4).with_prefix("encoder.", 2e-5);
        assert_eq!(lr.for_param("encoder.layer.0.w"), 2e-5);
        assert_eq!(lr.for_param("head.w"), 1e-4);
    }

    fn quadratic_descent(opt: &mut dyn Optimizer) -> f64 {
        let mut params = ParamStore::new();
        params.insert("w", Array2::from_shape_vec((2, 2), vec![3.0, -2.0, 1.5, 4.0]).unwrap());
        for _ in 0..500 {
            let w = params.get("w").unwrap().clone();
            let mut g = GradStore::new();
            g.accumulate("w", &w.mapv(|x| 2.0 * x));
            opt.step(&mut params, &g, 1.0);
        }
        params.get("w").unwrap().iter().map(|x| x * x).sum()
    }

    #[test]
    fn adam_minimises_quadratic() {
        let mut adam = Adam::new(LearningRates::uniform(0.05));
        assert!(quadratic_descent(&mut adam) < 1e-3);
    }

    #[test]
    fn adafactor_minimises_quadratic() {
        let mut af = Adafactor::new(LearningRates::uniform(0.05));
        assert!(quadratic_descent(&mut af) < 1e-2);
    }
}
