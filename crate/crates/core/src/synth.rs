//! Synthetic scenes whose action labels depend on context outside the boxes.
//!
//! Channel layout of a generated feature map:
//!
//! | channels                      | content                                  |
//! |-------------------------------|------------------------------------------|
//! | `0 .. P`                      | actor pattern `p`, 1.0 inside the box    |
//! | `P .. P + K_tok`              | context token `j`, amplitude on 2x2 cells |
//! | `P + K_tok .. P + K_tok + Z`  | clutter, i.i.d. normal                   |
//!
//! plus i.i.d. sensor noise everywhere. Tokens never touch a box (one free
//! cell in between), so the only route from a token to a label is through
//! context. A token is visible in the early half of the frames, the late
//! half, or all of them.
//!
//! A rule fires for an actor when all of its conditions hold; an actor's
//! label set is the union over fired rules.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::frontend::{ActorBox, FeatureMap};
use crate::{Error, Real, Result, Rng, Tensor};

/// When a token is visible inside a clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Early,
    Late,
    Always,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Early, Phase::Late, Phase::Always];

    pub fn visible(self, frame: usize, frames: usize) -> bool {
        let early = 2 * frame < frames;
        match self {
            Phase::Early => early,
            Phase::Late => !early,
            Phase::Always => true,
        }
    }
}

/// Phase requirement of a token condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseCond {
    /// Visible at all.
    Any,
    /// Visible with exactly this phase.
    Exactly(Phase),
}

impl PhaseCond {
    fn accepts(self, p: Phase) -> bool {
        match self {
            PhaseCond::Any => true,
            PhaseCond::Exactly(q) => p == q,
        }
    }
}

/// Coarse rule family, used for the per-category AP breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    /// Depends only on the actor's own appearance.
    Pose,
    /// Depends on a context token.
    Object,
    /// Depends on another actor.
    Person,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Pose, Category::Object, Category::Person];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Pose => "pose",
            Category::Object => "object",
            Category::Person => "person",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub class: usize,
    pub category: Category,
    #[serde(default)]
    pub actor_pattern: Option<usize>,
    /// `(token, phase)` that must appear in the same clip.
    #[serde(default)]
    pub token: Option<(usize, PhaseCond)>,
    /// Pattern that some other actor in the clip must carry.
    #[serde(default)]
    pub partner_pattern: Option<usize>,
    /// Token that must appear somewhere in the same video.
    #[serde(default)]
    pub video_token: Option<usize>,
}

impl Rule {
    fn needs_context(&self) -> bool {
        self.token.is_some() || self.partner_pattern.is_some() || self.video_token.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// `(H, W, T)`
    pub grid: (usize, usize, usize),
    /// Inclusive range of actors per clip.
    pub n_actors: (usize, usize),
    pub n_patterns: usize,
    pub n_context_tokens: usize,
    pub num_classes: usize,
    pub rules: Vec<Rule>,
    /// Inclusive range of box side lengths in cells.
    pub box_size: (usize, usize),
    /// Chance that a clip-level token is placed in a clip.
    pub token_prob: Real,
    /// Chance that a video carries each video-level token.
    pub video_token_prob: Real,
    /// Value painted on token cells.
    #[serde(default = "default_token_amplitude")]
    pub token_amplitude: Real,
    pub clutter_channels: usize,
    pub clutter_std: Real,
    pub noise_std: Real,
    pub clips_per_video: usize,
    pub clip_stride_s: u32,
    /// Lower bound of uniformly jittered detector confidence; `None` gives 1.0.
    #[serde(default)]
    pub confidence_jitter: Option<Real>,
    pub seed: u64,
}

fn default_token_amplitude() -> Real {
    8.0
}

impl Default for SceneSpec {
    fn default() -> Self {
        use Category::*;
        let r = |class, category, actor_pattern, token, partner_pattern| Rule {
            class,
            category,
            actor_pattern,
            token,
            partner_pattern,
            video_token: None,
        };
        let early = PhaseCond::Exactly(Phase::Early);
        let late = PhaseCond::Exactly(Phase::Late);
        Self {
            grid: (16, 16, 8),
            n_actors: (1, 3),
            n_patterns: 4,
            n_context_tokens: 4,
            num_classes: 8,
            rules: vec![
                r(0, Pose, Some(0), None, None),
                r(1, Pose, Some(1), None, None),
                r(2, Object, Some(2), Some((0, PhaseCond::Any)), None),
                r(3, Object, None, Some((1, early)), None),
                r(4, Object, Some(3), Some((1, late)), None),
                r(5, Object, Some(0), Some((3, early)), None),
                r(6, Person, Some(1), None, Some(2)),
                r(7, Person, None, None, Some(3)),
            ],
            box_size: (3, 5),
            token_prob: 0.6,
            video_token_prob: 0.5,
            token_amplitude: default_token_amplitude(),
            clutter_channels: 4,
            clutter_std: 0.5,
            noise_std: 0.1,
            clips_per_video: 4,
            clip_stride_s: 10,
            confidence_jitter: None,
            seed: 0,
        }
    }
}

impl SceneSpec {
    /// Variant where class 7 marks every actor of a video in which token 2
    /// shows up, in one clip only.
    pub fn bank_variant() -> Self {
        let mut s = Self::default();
        s.rules[7] = Rule {
            class: 7,
            category: Category::Object,
            actor_pattern: None,
            token: None,
            partner_pattern: None,
            video_token: Some(2),
        };
        s
    }

    pub fn channels(&self) -> usize {
        self.n_patterns + self.n_context_tokens + self.clutter_channels
    }

    pub fn token_channel(&self, token: usize) -> usize {
        self.n_patterns + token
    }

    /// Tokens only ever placed as video-level tokens.
    pub fn video_tokens(&self) -> BTreeSet<usize> {
        self.rules.iter().filter_map(|r| r.video_token).collect()
    }

    pub fn class_categories(&self) -> Vec<Option<Category>> {
        let mut out = vec![None; self.num_classes];
        for r in &self.rules {
            if r.class < self.num_classes && out[r.class].is_none() {
                out[r.class] = Some(r.category);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let gen = |m: String| Err(Error::Generation(m));
        let (h, w, t) = self.grid;
        if h < 4 || w < 4 || t < 2 {
            return gen(alloc::format!("grid {:?} is too small", self.grid));
        }
        if !(self.token_amplitude > 0.0 && self.token_amplitude.is_finite()) {
            return gen(alloc::format!("token amplitude {} must be positive", self.token_amplitude));
        }
        if self.n_actors.0 > self.n_actors.1 {
            return gen(alloc::format!("actor range {:?} is reversed", self.n_actors));
        }
        if self.box_size.0 < 1 || self.box_size.0 > self.box_size.1 || self.box_size.1 > h.min(w) {
            return gen(alloc::format!("box size range {:?} does not fit the grid", self.box_size));
        }
        if self.n_patterns == 0 || self.num_classes == 0 || self.clips_per_video == 0 {
            return gen(String::from("patterns, classes and clips per video must be positive"));
        }
        for r in &self.rules {
            if r.class >= self.num_classes {
                return gen(alloc::format!("rule label {} is not below K = {}", r.class, self.num_classes));
            }
            let bad_pattern = [r.actor_pattern, r.partner_pattern].into_iter().flatten().any(|p| p >= self.n_patterns);
            let bad_token = r.token.map(|(j, _)| j).into_iter().chain(r.video_token).any(|j| j >= self.n_context_tokens);
            if bad_pattern || bad_token {
                return gen(alloc::format!("rule for class {} refers to an unknown pattern or token", r.class));
            }
        }
        if !self.rules.iter().any(Rule::needs_context) {
            return gen(String::from("no rule depends on context outside the actor boxes"));
        }
        let vt = self.video_tokens();
        if self.rules.iter().any(|r| r.token.is_some_and(|(j, _)| vt.contains(&j))) {
            return gen(String::from("a token cannot be both clip-level and video-level"));
        }
        for p in [self.token_prob, self.video_token_prob] {
            if !(0.0..=1.0).contains(&p) {
                return gen(alloc::format!("probability {p} outside [0, 1]"));
            }
        }
        if let Some(lo) = self.confidence_jitter {
            if !(0.0..=1.0).contains(&lo) {
                return gen(alloc::format!("confidence lower bound {lo} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Box in integer cells: columns `x .. x + w`, rows `y .. y + h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl CellRect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }

    /// True when the rects overlap or touch (share an edge or corner).
    fn near(&self, o: &CellRect) -> bool {
        self.x <= o.x + o.w && o.x <= self.x + self.w && self.y <= o.y + o.h && o.y <= self.y + self.h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorLayout {
    pub id: u32,
    pub rect: CellRect,
    pub pattern: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLayout {
    pub token: usize,
    pub rect: CellRect,
    pub phase: Phase,
}

/// What was painted into one clip.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Layout {
    pub actors: Vec<ActorLayout>,
    pub tokens: Vec<TokenLayout>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub video_id: String,
    pub clip_time_s: u32,
    pub map: FeatureMap,
    pub boxes: Vec<ActorBox>,
    /// `[N, K]` multi-hot.
    pub labels: Tensor,
    pub layout: Layout,
}

/// Labels of every actor in `layout`; `video_tokens` are the video-level
/// tokens present anywhere in the clip's video.
pub fn apply_rules(layout: &Layout, rules: &[Rule], num_classes: usize, video_tokens: &BTreeSet<usize>) -> Vec<Vec<bool>> {
    layout
        .actors
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut row = vec![false; num_classes];
            for r in rules {
                let own = r.actor_pattern.is_none_or(|p| p == a.pattern);
                let tok = r
                    .token
                    .is_none_or(|(j, cond)| layout.tokens.iter().any(|t| t.token == j && cond.accepts(t.phase)));
                let partner = r
                    .partner_pattern
                    .is_none_or(|p| layout.actors.iter().enumerate().any(|(k, o)| k != i && o.pattern == p));
                let video = r.video_token.is_none_or(|j| video_tokens.contains(&j));
                if own && tok && partner && video {
                    row[r.class] = true;
                }
            }
            row
        })
        .collect()
}

/// Labels an oracle would give from box contents alone (no token, partner
/// or video information: those conditions are taken as false).
pub fn actor_only_labels(layout: &Layout, rules: &[Rule], num_classes: usize) -> Vec<Vec<bool>> {
    layout
        .actors
        .iter()
        .map(|a| {
            let mut row = vec![false; num_classes];
            for r in rules {
                if !r.needs_context() && r.actor_pattern.is_none_or(|p| p == a.pattern) {
                    row[r.class] = true;
                }
            }
            row
        })
        .collect()
}

fn labels_tensor(rows: &[Vec<bool>], k: usize) -> Tensor {
    let data = rows.iter().flatten().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    Tensor::new(vec![rows.len(), k], data).expect("rows have K entries")
}

fn place(rng: &mut Rng, h: usize, w: usize, size: (usize, usize), avoid: &[CellRect]) -> Option<CellRect> {
    for _ in 0..200 {
        let rw = size.0 + rng.below(size.1 - size.0 + 1);
        let rh = size.0 + rng.below(size.1 - size.0 + 1);
        let r = CellRect {
            x: rng.below(w - rw + 1),
            y: rng.below(h - rh + 1),
            w: rw,
            h: rh,
        };
        if !avoid.iter().any(|o| o.near(&r)) {
            return Some(r);
        }
    }
    None
}

fn layout_clip(spec: &SceneSpec, rng: &mut Rng, video_tokens: &[usize], reveal: bool) -> Result<Layout> {
    let (h, w, _) = spec.grid;
    let n = spec.n_actors.0 + rng.below(spec.n_actors.1 - spec.n_actors.0 + 1);
    let mut rects = Vec::with_capacity(n);
    let mut layout = Layout::default();
    for i in 0..n {
        let rect = place(rng, h, w, spec.box_size, &rects)
            .ok_or_else(|| Error::Generation(alloc::format!("cannot fit {} non-touching boxes in a {}x{} grid", n, h, w)))?;
        rects.push(rect);
        layout.actors.push(ActorLayout {
            id: i as u32,
            rect,
            pattern: rng.below(spec.n_patterns),
        });
    }
    let vt = spec.video_tokens();
    let mut occupied = rects.clone();
    let mut put = |layout: &mut Layout, rng: &mut Rng, token: usize, phase: Phase| -> Result<()> {
        let rect = place(rng, h, w, (2, 2), &occupied)
            .ok_or_else(|| Error::Generation(String::from("no free cells left for a context token")))?;
        occupied.push(rect);
        layout.tokens.push(TokenLayout { token, rect, phase });
        Ok(())
    };
    for j in 0..spec.n_context_tokens {
        if vt.contains(&j) {
            continue;
        }
        if rng.bernoulli(spec.token_prob) {
            let phase = Phase::ALL[rng.below(3)];
            put(&mut layout, rng, j, phase)?;
        }
    }
    if reveal {
        for &j in video_tokens {
            put(&mut layout, rng, j, Phase::Always)?;
        }
    }
    Ok(layout)
}

fn paint(spec: &SceneSpec, layout: &Layout, rng: &mut Rng) -> Result<FeatureMap> {
    let (h, w, t) = spec.grid;
    let c = spec.channels();
    let plane = h * w;
    let mut data = vec![0.0; c * t * plane];
    let at = |ch: usize, f: usize, y: usize, x: usize| ((ch * t + f) * h + y) * w + x;
    for a in &layout.actors {
        for f in 0..t {
            for y in a.rect.y..a.rect.y + a.rect.h {
                for x in a.rect.x..a.rect.x + a.rect.w {
                    data[at(a.pattern, f, y, x)] = 1.0;
                }
            }
        }
    }
    for tok in &layout.tokens {
        let ch = spec.token_channel(tok.token);
        for f in (0..t).filter(|&f| tok.phase.visible(f, t)) {
            for y in tok.rect.y..tok.rect.y + tok.rect.h {
                for x in tok.rect.x..tok.rect.x + tok.rect.w {
                    data[at(ch, f, y, x)] = spec.token_amplitude;
                }
            }
        }
    }
    let clutter0 = spec.n_patterns + spec.n_context_tokens;
    for v in &mut data[clutter0 * t * plane..] {
        *v = rng.normal(0.0, spec.clutter_std);
    }
    if spec.noise_std > 0.0 {
        for v in &mut data {
            *v += rng.normal(0.0, spec.noise_std);
        }
    }
    FeatureMap::new(Tensor::new(vec![c, t, h, w], data)?)
}

fn boxes_of(spec: &SceneSpec, layout: &Layout, rng: &mut Rng) -> Result<Vec<ActorBox>> {
    let (h, w, _) = spec.grid;
    layout
        .actors
        .iter()
        .map(|a| {
            let conf = match spec.confidence_jitter {
                Some(lo) => rng.uniform_in(lo, 1.0),
                None => 1.0,
            };
            ActorBox::new(
                a.id,
                a.rect.x as Real / w as Real,
                a.rect.y as Real / h as Real,
                (a.rect.x + a.rect.w) as Real / w as Real,
                (a.rect.y + a.rect.h) as Real / h as Real,
                conf,
            )
        })
        .collect()
}

pub fn video_id(index: usize) -> String {
    alloc::format!("vid{index:05}")
}

/// `count` clips, grouped into videos of `clips_per_video` consecutive clips.
/// Each video draws from its own stream, so the first clips of a larger
/// dataset equal a smaller one with the same seed.
pub fn generate(spec: &SceneSpec, count: usize) -> Result<Vec<SceneSample>> {
    spec.validate()?;
    let root = Rng::new(spec.seed);
    let vt: Vec<usize> = spec.video_tokens().into_iter().collect();
    let mut out = Vec::with_capacity(count);
    let mut v = 0;
    while out.len() < count {
        let mut rng = root.fork(v as u64);
        let present: Vec<usize> = vt.iter().copied().filter(|_| rng.bernoulli(spec.video_token_prob)).collect();
        let reveal = rng.below(spec.clips_per_video);
        let present_set: BTreeSet<usize> = present.iter().copied().collect();
        for k in 0..spec.clips_per_video.min(count - out.len()) {
            let layout = layout_clip(spec, &mut rng, &present, k == reveal)?;
            let map = paint(spec, &layout, &mut rng)?;
            let boxes = boxes_of(spec, &layout, &mut rng)?;
            let labels = apply_rules(&layout, &spec.rules, spec.num_classes, &present_set);
            out.push(SceneSample {
                video_id: video_id(v),
                clip_time_s: k as u32 * spec.clip_stride_s,
                map,
                boxes,
                labels: labels_tensor(&labels, spec.num_classes),
                layout,
            });
        }
        v += 1;
    }
    Ok(out)
}

/// What can be read back from a painted clip.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedClip {
    pub patterns: Vec<usize>,
    /// `(token, phase)` of every token seen.
    pub tokens: Vec<(usize, Phase)>,
}

/// Read actor patterns and token phases back out of a feature map, using only
/// the boxes and the channel layout.
pub fn decode(spec: &SceneSpec, map: &FeatureMap, boxes: &[ActorBox]) -> DecodedClip {
    let (h, w, t) = (map.height(), map.width(), map.frames());
    let patterns = boxes
        .iter()
        .map(|b| {
            let x0 = (b.x1 * w as Real).round() as usize;
            let x1 = (b.x2 * w as Real).round() as usize;
            let y0 = (b.y1 * h as Real).round() as usize;
            let y1 = (b.y2 * h as Real).round() as usize;
            let mean = |ch: usize| {
                let mut s = 0.0;
                for f in 0..t {
                    for y in y0..y1 {
                        for x in x0..x1 {
                            s += map.at(ch, f, y, x);
                        }
                    }
                }
                s / ((y1 - y0) * (x1 - x0) * t) as Real
            };
            (0..spec.n_patterns)
                .map(|p| (p, mean(p)))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map_or(0, |(p, _)| p)
        })
        .collect();
    let mut tokens = Vec::new();
    for j in 0..spec.n_context_tokens {
        let ch = spec.token_channel(j);
        let seen: Vec<bool> = (0..t)
            .map(|f| {
                (0..h - 1).any(|y| {
                    (0..w - 1).any(|x| {
                        let m = map.at(ch, f, y, x) + map.at(ch, f, y, x + 1) + map.at(ch, f, y + 1, x) + map.at(ch, f, y + 1, x + 1);
                        m / 4.0 > 0.5 * spec.token_amplitude
                    })
                })
            })
            .collect();
        let early = (0..t).filter(|&f| 2 * f < t).any(|f| seen[f]);
        let late = (0..t).filter(|&f| 2 * f >= t).any(|f| seen[f]);
        let phase = match (early, late) {
            (true, true) => Some(Phase::Always),
            (true, false) => Some(Phase::Early),
            (false, true) => Some(Phase::Late),
            (false, false) => None,
        };
        if let Some(p) = phase {
            tokens.push((j, p));
        }
    }
    DecodedClip { patterns, tokens }
}

/// Labels re-derived from painted maps alone, with video-level tokens pooled
/// over all clips of a video.
pub fn audit_labels(spec: &SceneSpec, samples: &[SceneSample]) -> Vec<Vec<Vec<bool>>> {
    let decoded: Vec<DecodedClip> = samples.iter().map(|s| decode(spec, &s.map, &s.boxes)).collect();
    let vt = spec.video_tokens();
    let mut per_video: alloc::collections::BTreeMap<&str, BTreeSet<usize>> = alloc::collections::BTreeMap::new();
    for (s, d) in samples.iter().zip(&decoded) {
        let e = per_video.entry(s.video_id.as_str()).or_default();
        e.extend(d.tokens.iter().map(|(j, _)| *j).filter(|j| vt.contains(j)));
    }
    samples
        .iter()
        .zip(&decoded)
        .map(|(s, d)| {
            let layout = Layout {
                actors: d
                    .patterns
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| ActorLayout {
                        id: i as u32,
                        rect: CellRect { x: 0, y: 0, w: 0, h: 0 },
                        pattern: p,
                    })
                    .collect(),
                tokens: d
                    .tokens
                    .iter()
                    .map(|&(token, phase)| TokenLayout {
                        token,
                        rect: CellRect { x: 0, y: 0, w: 0, h: 0 },
                        phase,
                    })
                    .collect(),
            };
            apply_rules(&layout, &spec.rules, spec.num_classes, &per_video[s.video_id.as_str()])
        })
        .collect()
}

/// Fraction of `(actor, class)` entries of `pred` that match `truth`.
pub fn label_accuracy(pred: &[Vec<Vec<bool>>], truth: &[Tensor]) -> Real {
    let mut hit = 0usize;
    let mut total = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        for (row, i) in p.iter().zip(0..) {
            for (k, &b) in row.iter().enumerate() {
                total += 1;
                hit += usize::from(b == (t.at2(i, k) > 0.5));
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        hit as Real / total as Real
    }
}

fn check_fractions(fractions: (Real, Real)) -> Result<()> {
    let (a, b) = fractions;
    if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || (a + b - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(alloc::format!("split fractions {a} and {b} must be in [0, 1] and sum to 1")));
    }
    Ok(())
}

/// Shuffled disjoint `(train, val)` index sets over `n` samples.
pub fn split(n: usize, fractions: (Real, Real), seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    check_fractions(fractions)?;
    let mut idx: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut idx);
    let n_train = (fractions.0 * n as Real).round() as usize;
    let val = idx.split_off(n_train.min(n));
    idx.sort_unstable();
    let mut val = val;
    val.sort_unstable();
    Ok((idx, val))
}

/// Like [`split`] but keeps every clip of a video on the same side.
pub fn split_grouped(samples: &[SceneSample], fractions: (Real, Real), seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut videos: Vec<&str> = samples.iter().map(|s| s.video_id.as_str()).collect();
    videos.sort_unstable();
    videos.dedup();
    let (tv, _) = split(videos.len(), fractions, seed)?;
    let train_videos: BTreeSet<&str> = tv.iter().map(|&i| videos[i]).collect();
    let (train, val): (Vec<usize>, Vec<usize>) = (0..samples.len()).partition(|&i| train_videos.contains(samples[i].video_id.as_str()));
    Ok((train, val))
}
