//! The assembled head: channel reduction, relation module, instance
//! interaction and classifier, with all weights in one named store.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cycle::{cycle_forward, CycleConfig, CycleOutput, CycleParams};
use crate::error::dim_err;
use crate::frontend::{extract_actor_features, preprocess_context, PooledClip};
use crate::head::{instance_interact, InteractionParams};
use crate::layers::{AttentionParams, Branch, Linear, Session, TraceTag};
use crate::param::{ParamId, ParamStore};
use crate::tape::Var;
use crate::{Error, Real, Result, Rng, Tensor};

/// How actors and context exchange information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InteractionMode {
    /// Actor queries attend to the temporally averaged context map.
    C2a,
    /// Context queries attend to actor memories; no enhancement step.
    A2c,
    /// Reorganization followed by enhancement.
    Cycle,
}

impl InteractionMode {
    pub const ALL: [InteractionMode; 3] = [InteractionMode::C2a, InteractionMode::A2c, InteractionMode::Cycle];

    pub fn as_str(self) -> &'static str {
        match self {
            InteractionMode::C2a => "c2a",
            InteractionMode::A2c => "a2c",
            InteractionMode::Cycle => "cycle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Channels `C` of the incoming feature map.
    pub in_channels: usize,
    pub frames: usize,
    /// RoIAlign output size `(h, w)`.
    pub roi_hw: (usize, usize),
    pub cycle: CycleConfig,
    pub mode: InteractionMode,
    /// Number of clip/bank alternation steps.
    pub interaction_depth: usize,
    pub use_bank: bool,
    pub num_classes: usize,
    pub layer_norm_eps: Real,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 12,
            frames: 8,
            roi_hw: (3, 3),
            cycle: CycleConfig::default(),
            mode: InteractionMode::Cycle,
            interaction_depth: 2,
            use_bank: false,
            num_classes: 8,
            layer_norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.cycle.validate()?;
        let cfg = |m: &str| Err(Error::Config(String::from(m)));
        if self.in_channels == 0 {
            return cfg("input channels must be positive");
        }
        if self.frames == 0 {
            return cfg("frame count must be positive");
        }
        if self.roi_hw.0 == 0 || self.roi_hw.1 == 0 {
            return cfg("RoI output size must be positive");
        }
        if self.interaction_depth == 0 {
            return cfg("interaction depth must be at least 1");
        }
        if self.num_classes == 0 {
            return cfg("at least one action class is required");
        }
        if !(self.layer_norm_eps > 0.0) {
            return cfg("layer norm epsilon must be positive");
        }
        Ok(())
    }
}

/// Relation module parameters for the chosen mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Relation {
    Cycle(CycleParams),
    A2c(CycleParams),
    C2a { layers: Vec<AttentionParams>, fusion: ParamId },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub reduce: Linear,
    pub relation: Relation,
    pub interaction: InteractionParams,
    pub classifier: Linear,
}

/// Result of one forward pass on a clip.
#[derive(Debug, Clone, Default)]
pub struct ForwardOutput {
    /// `[N, c]` relation output, the feature written to the bank.
    pub enhanced: Option<Var>,
    /// `[N, c]` after instance interaction.
    pub interacted: Option<Var>,
    /// `[N, K]`
    pub logits: Option<Var>,
    /// `[N, K]`
    pub probs: Option<Var>,
    /// Intermediate actor and context states of the relation module.
    pub cycle: CycleOutput,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        let c = config.cycle.channels;
        let d = config.cycle.attn_dim;
        let reduce = Linear::new(&mut store, "reduce", config.in_channels, c, true, &mut rng)?;
        let relation = match config.mode {
            InteractionMode::Cycle => Relation::Cycle(CycleParams::new(&mut store, "cycle", &config.cycle, config.frames, &mut rng)?),
            InteractionMode::A2c => {
                Relation::A2c(CycleParams::without_enhancement(&mut store, "a2c", &config.cycle, config.frames, &mut rng)?)
            }
            InteractionMode::C2a => {
                let layers = (0..config.cycle.layers)
                    .map(|l| AttentionParams::new(&mut store, &alloc::format!("c2a.{l}"), c, d, &mut rng))
                    .collect::<Result<Vec<_>>>()?;
                let fusion = store.add_uniform("c2a.fusion", &[c, c], c, &mut rng)?;
                Relation::C2a { layers, fusion }
            }
        };
        let interaction = InteractionParams::new(&mut store, "interact", c, d, config.interaction_depth, &mut rng)?;
        let classifier = Linear::new(&mut store, "classifier", c, config.num_classes, true, &mut rng)?;
        Ok(Self {
            config,
            store,
            reduce,
            relation,
            interaction,
            classifier,
        })
    }

    pub fn channels(&self) -> usize {
        self.config.cycle.channels
    }

    /// Training-mode session over this model's weights.
    pub fn session(&self, rng: Rng, training: bool) -> Session<'_> {
        Session::new(&self.store, rng, training, self.config.cycle.p_drop, self.config.layer_norm_eps)
    }

    pub fn eval_session(&self) -> Session<'_> {
        Session::eval(&self.store, self.config.layer_norm_eps)
    }

    fn check_clip(&self, clip: &PooledClip) -> Result<()> {
        let c_in = self.config.in_channels;
        let (t, c) = clip.context.dims2()?;
        if c != c_in {
            return Err(dim_err!("clip has {} channels, model expects {}", c, c_in));
        }
        if t != self.config.frames {
            return Err(dim_err!("clip has {} frames, model expects {}", t, self.config.frames));
        }
        let hw = self.config.roi_hw.0 * self.config.roi_hw.1;
        for l in &clip.actor_local {
            if l.shape() != [hw, c_in] {
                return Err(dim_err!("actor crop {:?}, expected [{}, {}]", l.shape(), hw, c_in));
            }
        }
        if clip.actor_local.len() != clip.boxes.len() {
            return Err(dim_err!("{} crops for {} boxes", clip.actor_local.len(), clip.boxes.len()));
        }
        Ok(())
    }

    /// Relation output (`[N, c]`) before instance interaction.
    pub fn relate(&self, s: &mut Session<'_>, clip: &PooledClip) -> Result<(Option<Var>, CycleOutput)> {
        self.check_clip(clip)?;
        let ids = clip.actor_ids();
        let actors = extract_actor_features(s, &self.reduce, clip)?;
        if actors.is_empty() {
            return Ok((None, CycleOutput::default()));
        }
        match &self.relation {
            Relation::Cycle(p) => {
                let ctx = preprocess_context(s, &self.reduce, clip)?;
                let out = cycle_forward(s, &actors, &ctx, &self.config.cycle, p, &ids)?;
                Ok((out.enhanced, out))
            }
            Relation::A2c(p) => {
                let ctx = preprocess_context(s, &self.reduce, clip)?;
                let out = a2c_only(s, &actors, ctx, &self.config.cycle, p, &ids)?;
                Ok((out.enhanced, out))
            }
            Relation::C2a { layers, fusion } => {
                let raw = s.tape.constant(clip.context_map.clone())?;
                let map = self.reduce.forward(s, raw)?;
                let mut hist = CycleOutput::default();
                hist.actor_history.push(actors.roi.clone());
                let mut x = s.tape.concat(&actors.roi, 0)?;
                for (l, p) in layers.iter().enumerate() {
                    x = s.attention_block(p, x, map, TraceTag::new(l, Branch::ContextC2a, ids.clone()))?;
                    let rows = s.tape.split(x, 0, &alloc::vec![1; ids.len()])?;
                    hist.actor_history.push(rows);
                }
                let w = s.param(*fusion);
                let out = s.tape.matmul(x, w)?;
                Ok((Some(out), hist))
            }
        }
    }

    /// Full forward pass. `bank` holds neighbouring-clip features (`[M, c]`)
    /// and is ignored when the bank is disabled.
    pub fn forward(&self, s: &mut Session<'_>, clip: &PooledClip, bank: Option<&Tensor>) -> Result<ForwardOutput> {
        let (enhanced, cycle) = self.relate(s, clip)?;
        let bank = if self.config.use_bank { bank } else { None };
        if let Some(b) = bank {
            if !b.is_empty() && b.dims2()?.1 != self.channels() {
                return Err(dim_err!("bank features have {} channels, model uses {}", b.dims2()?.1, self.channels()));
            }
        }
        let ids = clip.actor_ids();
        let interacted = instance_interact(s, enhanced, bank, &self.interaction, &ids)?;
        let (logits, probs) = match interacted {
            Some(x) => {
                let z = self.classifier.forward(s, x)?;
                let p = s.tape.sigmoid(z)?;
                (Some(z), Some(p))
            }
            None => (None, None),
        };
        Ok(ForwardOutput {
            enhanced,
            interacted,
            logits,
            probs,
            cycle,
        })
    }

    /// Mean over classes of the per-class binary cross-entropy, summed over
    /// actors. `targets` is `[N, K]` multi-hot.
    pub fn loss(&self, s: &mut Session<'_>, out: &ForwardOutput, targets: &Tensor) -> Result<Option<Var>> {
        let Some(z) = out.logits else {
            return Ok(None);
        };
        if s.tape.shape(z) != targets.shape() {
            return Err(dim_err!("targets {:?} for logits {:?}", targets.shape(), s.tape.shape(z)));
        }
        let e = s.tape.bce_with_logits(z, targets.data())?;
        let total = s.tape.sum(e)?;
        Ok(Some(s.tape.scale(total, 1.0 / self.config.num_classes as Real)?))
    }

    /// Eval-mode class probabilities (`[N, K]`) and relation output (`[N, c]`).
    pub fn predict(&self, clip: &PooledClip, bank: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let mut s = self.eval_session();
        let out = self.forward(&mut s, clip, bank)?;
        let k = self.config.num_classes;
        let c = self.channels();
        let probs = out.probs.map_or_else(|| Tensor::zeros(&[0, k]), |p| s.tape.value(p).clone());
        let enhanced = out.enhanced.map_or_else(|| Tensor::zeros(&[0, c]), |p| s.tape.value(p).clone());
        Ok((probs, enhanced))
    }

    /// Top-level module of a parameter name (`"cycle.pos"` is in `"cycle"`).
    pub fn module_of(name: &str) -> &str {
        name.split('.').next().unwrap_or(name)
    }
}

/// Both reorganization stacks without enhancement; the local contexts are
/// averaged over time before fusion.
fn a2c_only(
    s: &mut Session<'_>,
    actors: &crate::frontend::ActorFeatures,
    ctx: crate::frontend::TemporalContext,
    cfg: &CycleConfig,
    p: &CycleParams,
    ids: &[u32],
) -> Result<CycleOutput> {
    use crate::cycle::{a2c_r_global, a2c_r_local, actor_memories};
    let n = actors.len();
    let memories = actor_memories(s, actors)?;
    let mut out = CycleOutput::default();
    let mut parts = Vec::with_capacity(2);
    if cfg.use_local {
        let mut contexts = alloc::vec![ctx.local; n];
        for (l, lp) in p.local_a2c.iter().enumerate() {
            contexts = a2c_r_local(s, &contexts, &memories, lp, l, ids)?;
        }
        out.local_contexts = contexts.clone();
        let pooled = contexts.iter().map(|&g| s.tape.mean_axis(g, 0)).collect::<Result<Vec<_>>>()?;
        parts.push(s.tape.concat(&pooled, 0)?);
    }
    if cfg.use_global {
        let mut queries = alloc::vec![ctx.global; n];
        out.context_history.push(queries.clone());
        for (l, gp) in p.global_a2c.iter().enumerate() {
            queries = a2c_r_global(s, &queries, &memories, gp, l, ids)?;
            out.context_history.push(queries.clone());
        }
        out.global_contexts = queries.clone();
        parts.push(s.tape.concat(&queries, 0)?);
    }
    let cat = if parts.len() == 1 { parts[0] } else { s.tape.concat(&parts, 1)? };
    let w = s.param(p.fusion);
    out.enhanced = Some(s.tape.matmul(cat, w)?);
    Ok(out)
}
