//! Actor-context cycle: actor-to-context reorganization (A2C-R) followed by
//! context-to-actor enhancement (C2A-E), in a local (per-frame) and a global
//! (temporally pooled) branch, fused into one feature per actor.
//!
//! Stacking follows the reference loop literally:
//!
//! ```text
//! local:  ctx = g;          repeat L: ctx = A2C-R(ctx, m_i)
//!         ctx = ctx + pos;  out = a_i;  repeat L: out = C2A-E(out, ctx)
//! global: ctx = mean_t(g);  repeat L: ctx = A2C-R(ctx, m_i)
//! fused:  concat[out, ctx] W_fuse
//! ```
//!
//! No step couples actors: every actor runs against its own memory.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::dim_err;
use crate::frontend::{ActorFeatures, TemporalContext};
use crate::layers::{AttentionParams, Branch, Session, TraceTag};
use crate::param::{ParamId, ParamStore};
use crate::tape::Var;
use crate::{Error, Real, Result, Rng, Tensor};

/// Standard deviation of the temporal position embedding at init.
pub const POS_INIT_STD: Real = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleConfig {
    /// Stack depth of every A2C-R / C2A-E block (not the actor count).
    pub layers: usize,
    /// Channel width `c` after reduction.
    pub channels: usize,
    /// Attention width `d`.
    pub attn_dim: usize,
    pub p_drop: Real,
    pub use_local: bool,
    pub use_global: bool,
}

impl Default for CycleConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            channels: 32,
            attn_dim: 32,
            p_drop: 0.2,
            use_local: true,
            use_global: true,
        }
    }
}

impl CycleConfig {
    /// Full-size widths (`c = d = 1024`).
    pub fn full_size() -> Self {
        Self {
            channels: 1024,
            attn_dim: 1024,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.use_local && !self.use_global {
            return Err(Error::Config(String::from("at least one of the local and global branches must be enabled")));
        }
        if self.layers == 0 {
            return Err(Error::Config(String::from("cycle depth must be at least 1")));
        }
        if self.channels == 0 {
            return Err(Error::Config(String::from("channel width must be positive")));
        }
        // layer norm runs over the attention width
        if self.attn_dim < 2 {
            return Err(Error::Config(alloc::format!("attention width {} is below 2", self.attn_dim)));
        }
        if !(0.0..1.0).contains(&self.p_drop) {
            return Err(Error::Config(alloc::format!("dropout rate {} outside [0, 1)", self.p_drop)));
        }
        Ok(())
    }

    pub fn num_branches(&self) -> usize {
        usize::from(self.use_local) + usize::from(self.use_global)
    }
}

/// Parameters of the cycle for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleParams {
    pub local_a2c: Vec<AttentionParams>,
    pub local_c2a: Vec<AttentionParams>,
    pub global_a2c: Vec<AttentionParams>,
    /// `[T, c]` temporal position embedding (local branch only).
    pub pos: Option<ParamId>,
    /// `[branches * c, c]` fusion map, no bias.
    pub fusion: ParamId,
    pub frames: usize,
}

impl CycleParams {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &CycleConfig, frames: usize, rng: &mut Rng) -> Result<Self> {
        Self::build(store, prefix, cfg, frames, true, rng)
    }

    /// Same as [`CycleParams::new`] but without the C2A-E stack and position
    /// embedding; used by the actor-to-context-only interaction mode.
    pub fn without_enhancement(store: &mut ParamStore, prefix: &str, cfg: &CycleConfig, frames: usize, rng: &mut Rng) -> Result<Self> {
        Self::build(store, prefix, cfg, frames, false, rng)
    }

    fn build(store: &mut ParamStore, prefix: &str, cfg: &CycleConfig, frames: usize, enhance: bool, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let (c, d) = (cfg.channels, cfg.attn_dim);
        let mut stack = |store: &mut ParamStore, name: &str, on: bool| -> Result<Vec<AttentionParams>> {
            if !on {
                return Ok(Vec::new());
            }
            (0..cfg.layers)
                .map(|l| AttentionParams::new(store, &alloc::format!("{prefix}.{name}.{l}"), c, d, rng))
                .collect()
        };
        let local_a2c = stack(store, "local_a2c", cfg.use_local)?;
        let local_c2a = stack(store, "local_c2a", cfg.use_local && enhance)?;
        let global_a2c = stack(store, "global_a2c", cfg.use_global)?;
        let pos = if cfg.use_local && enhance {
            Some(store.add_normal(&alloc::format!("{prefix}.pos"), &[frames, c], POS_INIT_STD, rng)?)
        } else {
            None
        };
        let fan_in = cfg.num_branches() * c;
        let fusion = store.add_uniform(&alloc::format!("{prefix}.fusion"), &[fan_in, c], fan_in, rng)?;
        Ok(Self {
            local_a2c,
            local_c2a,
            global_a2c,
            pos,
            fusion,
            frames,
        })
    }
}

/// Per actor, `m_i = concat[a_i; l_i]` as `[h*w + 1, c]` (row 0 is `a_i`).
pub fn actor_memories(s: &mut Session<'_>, actors: &ActorFeatures) -> Result<Vec<Var>> {
    actors
        .roi
        .iter()
        .zip(&actors.local)
        .map(|(&a, &l)| s.tape.concat(&[a, l], 0))
        .collect()
}

/// One A2C-R layer of the local branch: for each actor, every frame of its
/// context (`[T, c]`) attends to that actor's memory independently.
pub fn a2c_r_local(s: &mut Session<'_>, contexts: &[Var], memories: &[Var], p: &AttentionParams, layer: usize, ids: &[u32]) -> Result<Vec<Var>> {
    if contexts.len() != memories.len() {
        return Err(dim_err!("{} contexts for {} actor memories", contexts.len(), memories.len()));
    }
    contexts
        .iter()
        .zip(memories)
        .zip(ids)
        .map(|((&g, &m), &id)| s.attention_block(p, g, m, TraceTag::new(layer, Branch::LocalA2c, vec![id])))
        .collect()
}

/// `g_hat_i + pos` for every actor.
pub fn add_position(s: &mut Session<'_>, contexts: &[Var], pos: ParamId) -> Result<Vec<Var>> {
    let p = s.param(pos);
    contexts
        .iter()
        .map(|&g| {
            if s.tape.shape(g) != s.tape.shape(p) {
                return Err(dim_err!(
                    "context {:?} does not match position embedding {:?}",
                    s.tape.shape(g),
                    s.tape.shape(p)
                ));
            }
            s.tape.add(g, p)
        })
        .collect()
}

/// One C2A-E layer: each actor query (`[1, c]`) attends to its own
/// (already position-embedded) frame contexts.
pub fn enhance_layer(s: &mut Session<'_>, actors: &[Var], contexts: &[Var], p: &AttentionParams, layer: usize, ids: &[u32]) -> Result<Vec<Var>> {
    if actors.len() != contexts.len() {
        return Err(dim_err!("{} actors for {} contexts", actors.len(), contexts.len()));
    }
    actors
        .iter()
        .zip(contexts)
        .zip(ids)
        .map(|((&a, &g), &id)| s.attention_block(p, a, g, TraceTag::new(layer, Branch::LocalC2a, vec![id])))
        .collect()
}

/// Single C2A-E step including the position embedding.
pub fn c2a_e(s: &mut Session<'_>, actors: &[Var], contexts: &[Var], pos: ParamId, p: &AttentionParams, ids: &[u32]) -> Result<Vec<Var>> {
    let with_pos = add_position(s, contexts, pos)?;
    enhance_layer(s, actors, &with_pos, p, 0, ids)
}

/// One A2C-R layer of the global branch. `queries[i]` is actor `i`'s current
/// global context (`[1, c]`); before the first layer all equal the pooled context.
pub fn a2c_r_global(s: &mut Session<'_>, queries: &[Var], memories: &[Var], p: &AttentionParams, layer: usize, ids: &[u32]) -> Result<Vec<Var>> {
    if queries.len() != memories.len() {
        return Err(dim_err!("{} queries for {} actor memories", queries.len(), memories.len()));
    }
    queries
        .iter()
        .zip(memories)
        .zip(ids)
        .map(|((&q, &m), &id)| s.attention_block(p, q, m, TraceTag::new(layer, Branch::GlobalA2c, vec![id])))
        .collect()
}

/// Everything a cycle forward pass produces.
#[derive(Debug, Clone, Default)]
pub struct CycleOutput {
    /// `[N, c]` fused actor features.
    pub enhanced: Option<Var>,
    /// Per actor `[T, c]` reorganized frame contexts (before position embedding).
    pub local_contexts: Vec<Var>,
    /// Per actor `[1, c]` reorganized global context.
    pub global_contexts: Vec<Var>,
    /// `[layer][actor]` actor features, entry 0 is `a_i`, then after each C2A-E layer.
    pub actor_history: Vec<Vec<Var>>,
    /// `[layer][actor]` global contexts, entry 0 is the shared pooled context,
    /// then after each A2C-R layer.
    pub context_history: Vec<Vec<Var>>,
}

impl CycleOutput {
    /// `[N, c]` values; zero rows when there are no actors.
    pub fn enhanced_tensor(&self, s: &Session<'_>, channels: usize) -> Tensor {
        match self.enhanced {
            Some(v) => s.tape.value(v).clone(),
            None => Tensor::zeros(&[0, channels]),
        }
    }
}

fn stack_rows(s: &mut Session<'_>, rows: &[Var]) -> Result<Var> {
    s.tape.concat(rows, 0)
}

/// Full cycle over all actors of one clip. `ids` label attention traces.
pub fn cycle_forward(
    s: &mut Session<'_>,
    actors: &ActorFeatures,
    ctx: &TemporalContext,
    cfg: &CycleConfig,
    params: &CycleParams,
    ids: &[u32],
) -> Result<CycleOutput> {
    cfg.validate()?;
    let n = actors.len();
    if ids.len() != n {
        return Err(dim_err!("{} trace ids for {} actors", ids.len(), n));
    }
    if n == 0 {
        return Ok(CycleOutput::default());
    }
    let memories = actor_memories(s, actors)?;
    let mut out = CycleOutput::default();
    let mut fused_parts = Vec::with_capacity(2);

    if cfg.use_local {
        let pos = params.pos.ok_or_else(|| Error::Config(String::from("local branch needs a position embedding")))?;
        let mut contexts = vec![ctx.local; n];
        for (l, p) in params.local_a2c.iter().enumerate() {
            contexts = a2c_r_local(s, &contexts, &memories, p, l, ids)?;
        }
        out.local_contexts = contexts.clone();
        let with_pos = add_position(s, &contexts, pos)?;
        let mut feats = actors.roi.clone();
        out.actor_history.push(feats.clone());
        for (l, p) in params.local_c2a.iter().enumerate() {
            feats = enhance_layer(s, &feats, &with_pos, p, l, ids)?;
            out.actor_history.push(feats.clone());
        }
        fused_parts.push(stack_rows(s, &feats)?);
    }

    if cfg.use_global {
        let mut queries = vec![ctx.global; n];
        out.context_history.push(queries.clone());
        for (l, p) in params.global_a2c.iter().enumerate() {
            queries = a2c_r_global(s, &queries, &memories, p, l, ids)?;
            out.context_history.push(queries.clone());
        }
        out.global_contexts = queries.clone();
        fused_parts.push(stack_rows(s, &queries)?);
    }

    let cat = if fused_parts.len() == 1 {
        fused_parts[0]
    } else {
        s.tape.concat(&fused_parts, 1)?
    };
    let w = s.param(params.fusion);
    out.enhanced = Some(s.tape.matmul(cat, w)?);
    Ok(out)
}
