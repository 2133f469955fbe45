//! Pooled clips ready for the head, built once per dataset.

use cycleacr_core::frontend::{FeatureMap, PooledClip};
use cycleacr_core::synth::{self, Category, SceneSample, SceneSpec};
use cycleacr_core::{Real, Tensor};

use crate::config::SplitConfig;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub video_id: String,
    pub clip_time_s: u32,
    pub pooled: PooledClip,
    /// `[N, K]` multi-hot.
    pub labels: Tensor,
}

impl Clip {
    pub fn from_map(video_id: &str, clip_time_s: u32, map: &FeatureMap, boxes: &[cycleacr_core::frontend::ActorBox], labels: Tensor, roi_hw: (usize, usize)) -> Result<Self> {
        Ok(Self {
            video_id: video_id.to_owned(),
            clip_time_s,
            pooled: PooledClip::from_map(map, boxes, roi_hw)?,
            labels,
        })
    }

    pub fn num_actors(&self) -> usize {
        self.pooled.num_actors()
    }

    /// The clip restricted to the actors at `keep`.
    pub fn select(&self, keep: &[usize]) -> PooledClip {
        PooledClip {
            actor_local: keep.iter().map(|&i| self.pooled.actor_local[i].clone()).collect(),
            context: self.pooled.context.clone(),
            context_map: self.pooled.context_map.clone(),
            boxes: keep.iter().map(|&i| self.pooled.boxes[i]).collect(),
        }
    }
}

/// A set of clips sharing class count and class categories.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub clips: Vec<Clip>,
    pub num_classes: usize,
    pub categories: Vec<Option<Category>>,
}

impl Dataset {
    pub fn from_samples(spec: &SceneSpec, samples: &[SceneSample], roi_hw: (usize, usize)) -> Result<Self> {
        let clips = samples
            .iter()
            .map(|s| Clip::from_map(&s.video_id, s.clip_time_s, &s.map, &s.boxes, s.labels.clone(), roi_hw))
            .collect::<Result<_>>()?;
        Ok(Self {
            clips,
            num_classes: spec.num_classes,
            categories: spec.class_categories(),
        })
    }

    /// Generate `count` clips and pool them, without keeping the raw maps.
    pub fn generate(spec: &SceneSpec, count: usize, roi_hw: (usize, usize)) -> Result<Self> {
        let samples = synth::generate(spec, count)?;
        Self::from_samples(spec, &samples, roi_hw)
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            clips: idx.iter().map(|&i| self.clips[i].clone()).collect(),
            num_classes: self.num_classes,
            categories: self.categories.clone(),
        }
    }

    pub fn split(&self, cfg: &SplitConfig) -> Result<(Self, Self)> {
        let fractions = (cfg.train_fraction, 1.0 - cfg.train_fraction);
        let (train, val) = if cfg.by_video {
            let mut videos: Vec<&str> = self.clips.iter().map(|c| c.video_id.as_str()).collect();
            videos.sort_unstable();
            videos.dedup();
            let (tv, _) = synth::split(videos.len(), fractions, cfg.seed)?;
            let keep: std::collections::BTreeSet<&str> = tv.iter().map(|&i| videos[i]).collect();
            (0..self.len()).partition(|&i| keep.contains(self.clips[i].video_id.as_str()))
        } else {
            synth::split(self.len(), fractions, cfg.seed)?
        };
        Ok((self.subset(&train), self.subset(&val)))
    }

    pub fn num_actors(&self) -> usize {
        self.clips.iter().map(Clip::num_actors).sum()
    }

    /// Fraction of positive labels per class.
    pub fn positive_rate(&self) -> Vec<Real> {
        let mut pos = vec![0.0; self.num_classes];
        for c in &self.clips {
            for (k, p) in pos.iter_mut().enumerate() {
                *p += (0..c.num_actors()).map(|i| c.labels.at2(i, k)).sum::<Real>();
            }
        }
        let n = self.num_actors().max(1) as Real;
        pos.iter().map(|p| p / n).collect()
    }
}
