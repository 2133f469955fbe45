//! SGD with Nesterov momentum and weight decay, linear warmup and step decay.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::param::ParamStore;
use crate::{Error, Real, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: Real,
    pub momentum: Real,
    pub weight_decay: Real,
    pub nesterov: bool,
    pub warmup_steps: usize,
    pub milestones: Vec<usize>,
    pub gamma: Real,
    /// Learning-rate multiplier per dotted name prefix; the longest matching
    /// prefix wins (`"cycle"` covers `"cycle.pos"` unless it has its own entry).
    #[serde(default)]
    pub lr_mult: BTreeMap<String, Real>,
    /// Rescale the gradient so its global L2 norm is at most this value.
    #[serde(default)]
    pub clip_grad_norm: Option<Real>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-7,
            nesterov: true,
            warmup_steps: 200,
            milestones: alloc::vec![1800, 2400],
            gamma: 0.1,
            lr_mult: BTreeMap::new(),
            clip_grad_norm: None,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self, max_steps: usize) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return err(alloc::format!("learning rate {} must be finite and non-negative", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return err(alloc::format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return err(alloc::format!("weight decay {} is negative", self.weight_decay));
        }
        if !(self.gamma > 0.0) {
            return err(alloc::format!("decay factor {} must be positive", self.gamma));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return err(alloc::format!("milestones {:?} are not strictly increasing", self.milestones));
        }
        if let Some(&last) = self.milestones.last() {
            if last >= max_steps {
                return err(alloc::format!("milestone {} is not below max_steps {}", last, max_steps));
            }
        }
        if self.lr_mult.values().any(|m| !(*m >= 0.0)) {
            return err(String::from("learning-rate multipliers must be non-negative"));
        }
        if self.clip_grad_norm.is_some_and(|c| !(c > 0.0)) {
            return err(String::from("gradient clipping norm must be positive"));
        }
        Ok(())
    }

    /// Multiplier for parameter `name`.
    pub fn multiplier(&self, name: &str) -> Real {
        let mut prefix = name;
        loop {
            if let Some(&m) = self.lr_mult.get(prefix) {
                return m;
            }
            match prefix.rfind('.') {
                Some(i) => prefix = &prefix[..i],
                None => return 1.0,
            }
        }
    }

    /// Learning rate used at 0-based `step`.
    pub fn lr_at(&self, step: usize) -> Real {
        if step < self.warmup_steps {
            return self.lr * step as Real / self.warmup_steps as Real;
        }
        let passed = self.milestones.iter().filter(|&&m| step >= m).count();
        let mut lr = self.lr;
        for _ in 0..passed {
            lr *= self.gamma;
        }
        lr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub config: OptimConfig,
    velocity: Vec<Vec<Real>>,
    step: usize,
}

impl Sgd {
    pub fn new(config: OptimConfig) -> Self {
        Self {
            config,
            velocity: Vec::new(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Apply the accumulated gradients in `store`, then clear them.
    ///
    /// Returns the base learning rate used for this step.
    pub fn step(&mut self, store: &mut ParamStore) -> Real {
        let lr = self.config.lr_at(self.step);
        if self.velocity.len() != store.len() {
            self.velocity = store.iter().map(|(_, p)| alloc::vec![0.0; p.value.len()]).collect();
        }
        let cfg = &self.config;
        let clip = match cfg.clip_grad_norm {
            Some(max) => {
                let norm = store.iter().map(|(_, p)| p.grad.data().iter().map(|g| g * g).sum::<Real>()).sum::<Real>().sqrt();
                if norm > max { max / norm } else { 1.0 }
            }
            None => 1.0,
        };
        for (p, vel) in store.iter_mut().zip(&mut self.velocity) {
            let plr = lr * cfg.multiplier(&p.name);
            if plr == 0.0 {
                continue;
            }
            let grad = p.grad.data();
            for ((w, &g), v) in p.value.data_mut().iter_mut().zip(grad).zip(vel.iter_mut()) {
                let g = clip * g + cfg.weight_decay * *w;
                *v = cfg.momentum * *v + g;
                let update = if cfg.nesterov { g + cfg.momentum * *v } else { *v };
                *w -= plr * update;
            }
        }
        store.zero_grad();
        self.step += 1;
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Rng, Tensor};
    use alloc::vec;

    fn cfg() -> OptimConfig {
        OptimConfig {
            lr: 0.1,
            warmup_steps: 4,
            milestones: vec![6, 8],
            ..OptimConfig::default()
        }
    }

    #[test]
    fn warmup_and_decay_schedule() {
        let c = cfg();
        for s in 0..4 {
            assert_eq!(c.lr_at(s), 0.1 * s as Real / 4.0);
        }
        assert_eq!(c.lr_at(4), 0.1);
        assert_eq!(c.lr_at(6), 0.1 * 0.1);
        assert_eq!(c.lr_at(9), 0.1 * 0.1 * 0.1);
    }

    #[test]
    fn milestone_validation() {
        let mut c = cfg();
        assert!(c.validate(10).is_ok());
        assert!(c.validate(8).is_err());
        c.milestones = vec![5, 5];
        assert!(c.validate(10).is_err());
    }

    #[test]
    fn zero_lr_is_frozen() {
        let mut store = ParamStore::new();
        let id = store.add_uniform("w", &[3], 3, &mut Rng::new(1)).unwrap();
        let before = store.value(id).clone();
        let mut opt = Sgd::new(OptimConfig { lr: 0.0, ..cfg() });
        for _ in 0..5 {
            store.get_mut(id).grad = Tensor::full(&[3], 1.0);
            opt.step(&mut store);
        }
        assert_eq!(store.value(id), &before);
    }

    #[test]
    fn nesterov_matches_hand_update() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(vec![1.0])).unwrap();
        let mut opt = Sgd::new(OptimConfig {
            lr: 0.5,
            warmup_steps: 0,
            milestones: vec![],
            weight_decay: 0.0,
            ..OptimConfig::default()
        });
        store.get_mut(id).grad = Tensor::vector(vec![2.0]);
        opt.step(&mut store);
        // v = 2, update = 2 + 0.9 * 2
        assert!((store.value(id).data()[0] - (1.0 - 0.5 * 3.8)).abs() < 1e-15);
        store.get_mut(id).grad = Tensor::vector(vec![1.0]);
        opt.step(&mut store);
        // v = 0.9 * 2 + 1 = 2.8, update = 1 + 0.9 * 2.8
        assert!((store.value(id).data()[0] - (1.0 - 0.5 * 3.8 - 0.5 * 3.52)).abs() < 1e-12);
        assert!(store.get(id).grad.data().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn module_multiplier_freezes_a_module() {
        let mut store = ParamStore::new();
        let a = store.add("reduce.weight", Tensor::vector(vec![1.0])).unwrap();
        let b = store.add("classifier.weight", Tensor::vector(vec![1.0])).unwrap();
        let mut c = OptimConfig {
            warmup_steps: 0,
            milestones: vec![],
            ..OptimConfig::default()
        };
        c.lr_mult.insert(String::from("reduce"), 0.0);
        let mut opt = Sgd::new(c);
        store.get_mut(a).grad = Tensor::vector(vec![1.0]);
        store.get_mut(b).grad = Tensor::vector(vec![1.0]);
        opt.step(&mut store);
        assert_eq!(store.value(a).data()[0], 1.0);
        assert!(store.value(b).data()[0] < 1.0);
    }

    #[test]
    fn longest_prefix_multiplier_wins() {
        let mut c = OptimConfig::default();
        c.lr_mult.insert(String::from("cycle"), 2.0);
        c.lr_mult.insert(String::from("cycle.pos"), 10.0);
        assert_eq!(c.multiplier("cycle.pos"), 10.0);
        assert_eq!(c.multiplier("cycle.local_c2a.0.w_q"), 2.0);
        assert_eq!(c.multiplier("cycle.position"), 2.0);
        assert_eq!(c.multiplier("classifier.weight"), 1.0);
    }

    #[test]
    fn gradient_clipping_rescales_to_the_norm() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::vector(vec![0.0])).unwrap();
        let b = store.add("b", Tensor::vector(vec![0.0])).unwrap();
        let mut opt = Sgd::new(OptimConfig {
            lr: 1.0,
            momentum: 0.0,
            nesterov: false,
            weight_decay: 0.0,
            warmup_steps: 0,
            milestones: vec![],
            clip_grad_norm: Some(1.0),
            ..OptimConfig::default()
        });
        // norm 5 -> scaled by 1/5
        store.get_mut(a).grad = Tensor::vector(vec![3.0]);
        store.get_mut(b).grad = Tensor::vector(vec![4.0]);
        opt.step(&mut store);
        assert!((store.value(a).data()[0] + 0.6).abs() < 1e-15);
        assert!((store.value(b).data()[0] + 0.8).abs() < 1e-15);
        // under the bound: untouched
        store.get_mut(a).grad = Tensor::vector(vec![0.5]);
        opt.step(&mut store);
        assert!((store.value(a).data()[0] + 1.1).abs() < 1e-15);
        assert!(OptimConfig { clip_grad_norm: Some(0.0), ..OptimConfig::default() }.validate(3000).is_err());
    }
}
