//! Average precision over ranked scores and its per-class mean.

use alloc::vec::Vec;

use crate::error::dim_err;
use crate::{Real, Result};

/// Non-interpolated AP: the mean of precision at the rank of every positive,
/// after a stable descending sort by score (ties keep input order).
///
/// `None` when there are no positives.
pub fn average_precision(scores: &[Real], labels: &[bool]) -> Result<Option<Real>> {
    if scores.len() != labels.len() {
        return Err(dim_err!("{} scores for {} labels", scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(dim_err!("average precision of an empty ranking"));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as Real / (rank + 1) as Real;
        }
    }
    Ok(Some(sum / positives as Real))
}

/// Per-class AP of an `[n, K]` score matrix against `[n, K]` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassAp {
    /// `None` for classes without positives.
    pub per_class: Vec<Option<Real>>,
}

impl ClassAp {
    pub fn compute(scores: &[Vec<Real>], labels: &[Vec<bool>], num_classes: usize) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(dim_err!("{} score rows for {} label rows", scores.len(), labels.len()));
        }
        if scores.iter().any(|r| r.len() != num_classes) || labels.iter().any(|r| r.len() != num_classes) {
            return Err(dim_err!("every row must have {} classes", num_classes));
        }
        let mut per_class = Vec::with_capacity(num_classes);
        for k in 0..num_classes {
            if scores.is_empty() {
                per_class.push(None);
                continue;
            }
            let s: Vec<Real> = scores.iter().map(|r| r[k]).collect();
            let l: Vec<bool> = labels.iter().map(|r| r[k]).collect();
            per_class.push(average_precision(&s, &l)?);
        }
        Ok(Self { per_class })
    }

    /// Mean over classes that have at least one positive.
    pub fn mean(&self) -> Option<Real> {
        mean_defined(&self.per_class)
    }

    /// Classes left out of the mean.
    pub fn excluded(&self) -> Vec<usize> {
        self.per_class
            .iter()
            .enumerate()
            .filter_map(|(k, ap)| ap.is_none().then_some(k))
            .collect()
    }
}

pub fn mean_defined(values: &[Option<Real>]) -> Option<Real> {
    let defined: Vec<Real> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<Real>() / defined.len() as Real)
    }
}

/// Cosine similarity; zero vectors compare as 0.
pub fn cosine(a: &[Real], b: &[Real]) -> Real {
    let dot: Real = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: Real = a.iter().map(|x| x * x).sum();
    let nb: Real = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / num_traits::Float::sqrt(na * nb)
}
