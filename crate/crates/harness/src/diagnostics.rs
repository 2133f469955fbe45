//! Pairwise cosine similarity across layers, and attention weight export.

use std::io::Write;

use serde::{Deserialize, Serialize};

use cycleacr_core::frontend::PooledClip;
use cycleacr_core::layers::{AttentionTraces, Session};
use cycleacr_core::metrics::cosine;
use cycleacr_core::model::Model;
use cycleacr_core::tape::Var;
use cycleacr_core::Real;

use crate::{HarnessError, Result};

/// One pair of actors at one stage. Stage 0 is the input (before the first
/// layer); stage `l` is the output of layer `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRow {
    /// `actor` for actor features through context-to-actor layers,
    /// `context` for per-actor contexts through actor-to-context layers.
    pub branch: String,
    pub stage: usize,
    pub actor_i: u32,
    pub actor_j: u32,
    pub cosine: Real,
}

fn pairwise(s: &Session<'_>, branch: &str, history: &[Vec<Var>], ids: &[u32], out: &mut Vec<SimilarityRow>) {
    for (stage, feats) in history.iter().enumerate() {
        for i in 0..feats.len() {
            for j in i + 1..feats.len() {
                out.push(SimilarityRow {
                    branch: branch.to_owned(),
                    stage,
                    actor_i: ids[i],
                    actor_j: ids[j],
                    cosine: cosine(s.tape.value(feats[i]).data(), s.tape.value(feats[j]).data()),
                });
            }
        }
    }
}

/// Eval-mode similarity trace for one clip with at least two actors.
pub fn similarity_diagnostic(model: &Model, clip: &PooledClip) -> Result<Vec<SimilarityRow>> {
    let n = clip.num_actors();
    if n < 2 {
        return Err(cycleacr_core::Error::Diagnostic(format!("similarity needs at least 2 actors, scene has {n}")).into());
    }
    let mut s = model.eval_session();
    let (_, out) = model.relate(&mut s, clip)?;
    let ids = clip.actor_ids();
    let mut rows = Vec::new();
    pairwise(&s, "actor", &out.actor_history, &ids, &mut rows);
    pairwise(&s, "context", &out.context_history, &ids, &mut rows);
    Ok(rows)
}

/// Mean cosine over all pairs of `branch` at `stage`.
pub fn mean_similarity(rows: &[SimilarityRow], branch: &str, stage: usize) -> Option<Real> {
    let vals: Vec<Real> = rows
        .iter()
        .filter(|r| r.branch == branch && r.stage == stage)
        .map(|r| r.cosine)
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<Real>() / vals.len() as Real)
}

pub fn write_similarity<W: Write>(rows: &[SimilarityRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    flush(out, "similarity trace")
}

/// Every attention map of one eval-mode forward pass, including instance
/// interaction (the bank step is skipped, as no bank is given).
pub fn attention_traces(model: &Model, clip: &PooledClip) -> Result<AttentionTraces> {
    let mut s = model.eval_session().record_traces();
    model.forward(&mut s, clip, None)?;
    Ok(s.take_traces().unwrap_or_default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AttentionCsvRow {
    layer: usize,
    branch: &'static str,
    actor_id: u32,
    query_index: usize,
    key_index: usize,
    weight: Real,
}

pub fn write_attention<W: Write>(traces: &AttentionTraces, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in traces.rows() {
        out.serialize(AttentionCsvRow {
            layer: r.layer,
            branch: r.branch.as_str(),
            actor_id: r.actor_id,
            query_index: r.query_index,
            key_index: r.key_index,
            weight: r.weight,
        })?;
    }
    flush(out, "attention trace")
}

fn flush<W: Write>(mut out: csv::Writer<W>, what: &str) -> Result<()> {
    out.flush().map_err(|e| HarnessError::Io {
        path: what.into(),
        source: e,
    })
}
