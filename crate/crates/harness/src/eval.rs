//! Per-class AP, mAP and the per-category breakdown.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use cycleacr_core::head::{fuse_scores, ActionScores, MemoryBank};
use cycleacr_core::metrics::{mean_defined, ClassAp};
use cycleacr_core::model::Model;
use cycleacr_core::synth::Category;
use cycleacr_core::{Real, Tensor};

use crate::data::{Clip, Dataset};
use crate::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `None` for classes without positives (left out of the mean).
    pub per_class_ap: Vec<Option<Real>>,
    pub map: Real,
    pub excluded_classes: Vec<usize>,
    pub per_category: BTreeMap<String, Real>,
    pub num_actors: usize,
}

/// Scores for one clip; detections under `threshold` get zero scores.
fn score_clip(model: &Model, clip: &Clip, bank: Option<&Tensor>, threshold: Option<Real>) -> Result<(ActionScores, Tensor)> {
    let n = clip.num_actors();
    let k = model.config.num_classes;
    let keep: Vec<usize> = (0..n)
        .filter(|&i| threshold.is_none_or(|t| clip.pooled.boxes[i].confidence >= t))
        .collect();
    let pooled = if keep.len() == n { clip.pooled.clone() } else { clip.select(&keep) };
    let (probs, enhanced) = model.predict(&pooled, bank)?;
    let mut full = Tensor::zeros(&[n, k]);
    for (row, &i) in keep.iter().enumerate() {
        full.data_mut()[i * k..(i + 1) * k].copy_from_slice(probs.row(row));
    }
    let conf: Vec<Real> = clip.pooled.boxes.iter().map(|b| b.confidence).collect();
    Ok((fuse_scores(&full, &clip.pooled.actor_ids(), &conf)?, enhanced))
}

/// Eval-mode scores for every clip. With the bank enabled, a first pass
/// fills a fresh bank from `data`, and the second pass reads it.
pub fn predict_dataset(model: &Model, data: &Dataset, threshold: Option<Real>) -> Result<Vec<ActionScores>> {
    let bank = if model.config.use_bank {
        let mut bank = MemoryBank::new(model.channels());
        for clip in &data.clips {
            let (_, enhanced) = score_clip(model, clip, None, threshold)?;
            let ids: Vec<u32> = clip
                .pooled
                .boxes
                .iter()
                .filter(|b| threshold.is_none_or(|t| b.confidence >= t))
                .map(|b| b.id)
                .collect();
            bank.update(&clip.video_id, clip.clip_time_s, &enhanced, &ids)?;
        }
        Some(bank)
    } else {
        None
    };
    data.clips
        .iter()
        .map(|clip| {
            let neighbours = bank.as_ref().map(|b| b.query_tensor(&clip.video_id, clip.clip_time_s));
            Ok(score_clip(model, clip, neighbours.as_ref(), threshold)?.0)
        })
        .collect()
}

/// AP of fused scores against labels, pooled over every actor of every clip.
pub fn report(scores: &[ActionScores], data: &Dataset) -> Result<EvalReport> {
    let k = data.num_classes;
    let mut s_rows = Vec::new();
    let mut l_rows = Vec::new();
    for (sc, clip) in scores.iter().zip(&data.clips) {
        for i in 0..clip.num_actors() {
            s_rows.push(sc.fused.row(i).to_vec());
            l_rows.push((0..k).map(|c| clip.labels.at2(i, c) > 0.5).collect());
        }
    }
    let ap = ClassAp::compute(&s_rows, &l_rows, k)?;
    let map = ap
        .mean()
        .ok_or_else(|| HarnessError::Data("no class has a positive example".into()))?;
    let mut per_category = BTreeMap::new();
    for cat in Category::ALL {
        let vals: Vec<Option<Real>> = (0..k)
            .filter(|&c| data.categories.get(c).copied().flatten() == Some(cat))
            .map(|c| ap.per_class[c])
            .collect();
        if let Some(m) = mean_defined(&vals) {
            per_category.insert(cat.as_str().to_owned(), m);
        }
    }
    Ok(EvalReport {
        excluded_classes: ap.excluded(),
        per_class_ap: ap.per_class,
        map,
        per_category,
        num_actors: s_rows.len(),
    })
}

pub fn evaluate(model: &Model, data: &Dataset, threshold: Option<Real>) -> Result<EvalReport> {
    let scores = predict_dataset(model, data, threshold)?;
    let r = report(&scores, data)?;
    if !r.excluded_classes.is_empty() {
        log::warn!("classes without positives left out of mAP: {:?}", r.excluded_classes);
    }
    Ok(r)
}
