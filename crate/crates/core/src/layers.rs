//! Forward session, linear maps and the residual attention block shared by
//! every relation step of the head.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::param::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::{Error, Real, Result, Rng};

/// One forward pass: the tape, read-only parameters and the dropout stream.
pub struct Session<'a> {
    pub tape: Tape,
    pub store: &'a ParamStore,
    pub rng: Rng,
    pub training: bool,
    pub p_drop: Real,
    pub eps: Real,
    traces: Option<AttentionTraces>,
}

impl<'a> Session<'a> {
    pub fn new(store: &'a ParamStore, rng: Rng, training: bool, p_drop: Real, eps: Real) -> Self {
        Self {
            tape: Tape::new(),
            store,
            rng,
            training,
            p_drop,
            eps,
            traces: None,
        }
    }

    /// Eval-mode session (dropout off).
    pub fn eval(store: &'a ParamStore, eps: Real) -> Self {
        Self::new(store, Rng::new(0), false, 0.0, eps)
    }

    /// Record every softmax weight matrix produced from here on.
    pub fn record_traces(mut self) -> Self {
        self.traces = Some(AttentionTraces::default());
        self
    }

    pub fn traces(&self) -> Option<&AttentionTraces> {
        self.traces.as_ref()
    }

    pub fn take_traces(&mut self) -> Option<AttentionTraces> {
        self.traces.take()
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.tape.param(self.store, id)
    }

    /// Residual scaled dot-product attention:
    ///
    /// `out = query + dropout(W_out(relu(norm(softmax(q k^T / sqrt(d)) v))))`
    /// with `q = query W_q`, `k = memory W_k`, `v = memory W_v`.
    ///
    /// Rows of `query` are independent of each other. `memory` must have at
    /// least one row.
    pub fn attention_block(&mut self, p: &AttentionParams, query: Var, memory: Var, tag: TraceTag) -> Result<Var> {
        let (q_rows, qc) = self.tape.value(query).dims2()?;
        let (m_rows, mc) = self.tape.value(memory).dims2()?;
        if m_rows == 0 {
            return Err(Error::Contract(alloc::format!(
                "attention over an empty memory ({:?} layer {})",
                tag.branch,
                tag.layer
            )));
        }
        if qc != p.channels || mc != p.channels {
            return Err(Error::Dimension(alloc::format!(
                "attention expects {} channels, got query {} memory {}",
                p.channels,
                qc,
                mc
            )));
        }
        let (wq, wk, wv, wout) = (self.param(p.wq), self.param(p.wk), self.param(p.wv), self.param(p.wout));
        let q = self.tape.matmul(query, wq)?;
        let k = self.tape.matmul(memory, wk)?;
        let v = self.tape.matmul(memory, wv)?;
        let kt = self.tape.transpose(k)?;
        let scores = self.tape.matmul(q, kt)?;
        let scores = self.tape.scale(scores, 1.0 / (p.dim as Real).sqrt())?;
        let attn = self.tape.softmax_rows(scores)?;
        if let Some(traces) = &mut self.traces {
            traces.records.push(AttentionRecord {
                tag,
                queries: q_rows,
                keys: m_rows,
                weights: self.tape.value(attn).data().to_vec(),
            });
        }
        let o = self.tape.matmul(attn, v)?;
        let o = self.tape.layer_norm(o, self.eps)?;
        let o = self.tape.relu(o)?;
        let o = self.tape.matmul(o, wout)?;
        let o = self.tape.dropout(o, self.p_drop, &mut self.rng, self.training)?;
        self.tape.add(query, o)
    }
}

/// `x W (+ b)` applied to every row of `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, bias: bool, rng: &mut Rng) -> Result<Self> {
        let weight = store.add_uniform(&alloc::format!("{name}.weight"), &[in_dim, out_dim], in_dim, rng)?;
        let bias = if bias {
            Some(store.add_uniform(&alloc::format!("{name}.bias"), &[out_dim], in_dim, rng)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let y = s.tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = s.param(b);
                s.tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Projections of one attention block: `W_q, W_k, W_v` are `c x d`, `W_out` is `d x c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wout: ParamId,
    pub channels: usize,
    pub dim: usize,
}

impl AttentionParams {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize, dim: usize, rng: &mut Rng) -> Result<Self> {
        let mut w = |n: &str, shape: [usize; 2]| store.add_uniform(&alloc::format!("{prefix}.{n}"), &shape, shape[0], rng);
        Ok(Self {
            wq: w("w_q", [channels, dim])?,
            wk: w("w_k", [channels, dim])?,
            wv: w("w_v", [channels, dim])?,
            wout: w("w_out", [dim, channels])?,
            channels,
            dim,
        })
    }
}

/// Which relation step produced an attention matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Branch {
    /// Per-frame context attending to an actor's memory.
    LocalA2c,
    /// Actor attending to its position-embedded reorganized frames.
    LocalC2a,
    /// Pooled context attending to an actor's memory.
    GlobalA2c,
    /// Actor attending to the pooled feature map (context-to-actor only mode).
    ContextC2a,
    /// Actors of the clip attending to each other.
    ClipInteraction,
    /// Actors attending to memory bank entries.
    BankInteraction,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::LocalA2c => "local_a2c",
            Branch::LocalC2a => "local_c2a",
            Branch::GlobalA2c => "global_a2c",
            Branch::ContextC2a => "context_c2a",
            Branch::ClipInteraction => "clip_interaction",
            Branch::BankInteraction => "bank_interaction",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Branch::LocalA2c,
            Branch::LocalC2a,
            Branch::GlobalA2c,
            Branch::ContextC2a,
            Branch::ClipInteraction,
            Branch::BankInteraction,
        ]
        .into_iter()
        .find(|b| b.as_str() == s)
    }
}

/// Where an attention call sits. `actors` holds one id if every query row
/// belongs to the same actor, otherwise one id per query row.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTag {
    pub layer: usize,
    pub branch: Branch,
    pub actors: Vec<u32>,
}

impl TraceTag {
    pub fn new(layer: usize, branch: Branch, actors: Vec<u32>) -> Self {
        Self { layer, branch, actors }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub tag: TraceTag,
    pub queries: usize,
    pub keys: usize,
    /// Row-major `queries x keys` softmax weights.
    pub weights: Vec<Real>,
}

/// Flattened trace row: `(layer, branch, actor_id, query_index, key_index, weight)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub layer: usize,
    pub branch: Branch,
    pub actor_id: u32,
    pub query_index: usize,
    pub key_index: usize,
    pub weight: Real,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttentionTraces {
    pub records: Vec<AttentionRecord>,
}

impl AttentionTraces {
    pub fn rows(&self) -> impl Iterator<Item = TraceRow> + '_ {
        self.records.iter().flat_map(|r| {
            (0..r.queries).flat_map(move |q| {
                let (actor_id, query_index) = if r.tag.actors.len() == r.queries && r.queries > 1 {
                    (r.tag.actors[q], q)
                } else {
                    (r.tag.actors.first().copied().unwrap_or(0), q)
                };
                (0..r.keys).map(move |k| TraceRow {
                    layer: r.tag.layer,
                    branch: r.tag.branch,
                    actor_id,
                    query_index,
                    key_index: k,
                    weight: r.weights[q * r.keys + k],
                })
            })
        })
    }

    pub fn by_branch(&self, branch: Branch) -> impl Iterator<Item = &AttentionRecord> + '_ {
        self.records.iter().filter(move |r| r.tag.branch == branch)
    }
}
