use serde::{Deserialize, Serialize};

use cycleacr_core::model::ModelConfig;
use cycleacr_core::optim::OptimConfig;
use cycleacr_core::Real;

use crate::{HarnessError, Result};

/// How a dataset is divided into training and validation clips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_fraction: Real,
    /// Keep every clip of a video on one side.
    pub by_video: bool,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            by_video: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Validation every this many steps; 0 disables.
    #[serde(default)]
    pub eval_every: usize,
    pub seed: u64,
    /// Drop detections below this confidence at inference.
    #[serde(default)]
    pub confidence_threshold: Option<Real>,
    #[serde(default)]
    pub split: SplitConfig,
}

/// Desk-scale defaults: gradient clipping keeps SGD stable on the default
/// synthetic data, and the position embedding gets a larger step because it
/// starts two orders of magnitude below the features.
impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            optim: OptimConfig {
                milestones: vec![3000, 4000],
                clip_grad_norm: Some(5.0),
                lr_mult: [(String::from("cycle.pos"), 10.0)].into_iter().collect(),
                ..OptimConfig::default()
            },
            batch_size: 8,
            max_steps: 5000,
            eval_every: 0,
            seed: 0,
            confidence_threshold: None,
            split: SplitConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optim.validate(self.max_steps)?;
        if self.batch_size == 0 {
            return Err(HarnessError::Config("batch size must be at least 1".into()));
        }
        if let Some(t) = self.confidence_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(HarnessError::Config(format!("confidence threshold {t} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_validates_and_roundtrips() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&s).unwrap(), c);
    }

    #[test]
    fn rejects_late_milestone() {
        let mut c = RunConfig::default();
        c.max_steps = 2000;
        assert!(c.validate().is_err());
        c.optim.milestones = vec![1000, 1500];
        c.validate().unwrap();
        c.batch_size = 0;
        assert!(c.validate().is_err());
    }
}
