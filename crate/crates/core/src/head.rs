//! Long-term memory bank, alternating clip/bank instance interaction,
//! multi-label classification and confidence-weighted scores.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::dim_err;
use crate::layers::{AttentionParams, Branch, Linear, Session, TraceTag};
use crate::param::ParamStore;
use crate::tape::{sigmoid, Var};
use crate::{Error, Real, Result, Rng, Tensor};

/// Default bank window around a clip, in seconds.
pub const DEFAULT_WINDOW_S: u32 = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankEntry {
    pub video_id: String,
    pub clip_time_s: u32,
    pub actor_id: u32,
    /// Enhanced actor feature, length `c`.
    pub feature: Vec<Real>,
}

/// Per-(video, second) store of enhanced actor features.
///
/// Reads may see entries from an earlier pass; that staleness is intended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryBank {
    channels: usize,
    window_s: u32,
    entries: BTreeMap<(String, u32), Vec<BankEntry>>,
}

impl MemoryBank {
    pub fn new(channels: usize) -> Self {
        Self::with_window(channels, DEFAULT_WINDOW_S)
    }

    pub fn with_window(channels: usize, window_s: u32) -> Self {
        Self {
            channels,
            window_s,
            entries: BTreeMap::new(),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn window_s(&self) -> u32 {
        self.window_s
    }

    /// Number of stored actor features.
    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Replace everything stored under `(video_id, clip_time_s)` with the rows
    /// of `enhanced` (`[N, c]`).
    pub fn update(&mut self, video_id: &str, clip_time_s: u32, enhanced: &Tensor, actor_ids: &[u32]) -> Result<()> {
        let (n, c) = match enhanced.shape() {
            [n, c] => (*n, *c),
            [0] => (0, self.channels),
            s => return Err(dim_err!("bank update expects [N, c], got {:?}", s)),
        };
        if c != self.channels {
            return Err(dim_err!("bank holds {}-dim features, got {}", self.channels, c));
        }
        if n != actor_ids.len() {
            return Err(dim_err!("{} features for {} actor ids", n, actor_ids.len()));
        }
        let rows = (0..n)
            .map(|i| BankEntry {
                video_id: String::from(video_id),
                clip_time_s,
                actor_id: actor_ids[i],
                feature: enhanced.row(i).to_vec(),
            })
            .collect();
        self.entries.insert((String::from(video_id), clip_time_s), rows);
        Ok(())
    }

    /// Insert one already-built entry (used when loading from disk).
    pub fn insert(&mut self, entry: BankEntry) -> Result<()> {
        if entry.feature.len() != self.channels {
            return Err(dim_err!("bank holds {}-dim features, got {}", self.channels, entry.feature.len()));
        }
        self.entries
            .entry((entry.video_id.clone(), entry.clip_time_s))
            .or_default()
            .push(entry);
        Ok(())
    }

    /// Entries of `video_id` with `|t' - t| <= window/2` and `t' != t`, in
    /// increasing time then stored order.
    pub fn query(&self, video_id: &str, clip_time_s: u32) -> Vec<&BankEntry> {
        let half = self.window_s / 2;
        let lo = clip_time_s.saturating_sub(half);
        let hi = clip_time_s.saturating_add(half);
        self.entries
            .range((String::from(video_id), lo)..=(String::from(video_id), hi))
            .filter(|((_, t), _)| *t != clip_time_s)
            .flat_map(|(_, v)| v.iter())
            .collect()
    }

    /// [`MemoryBank::query`] stacked into `[M, c]`.
    pub fn query_tensor(&self, video_id: &str, clip_time_s: u32) -> Tensor {
        let hits = self.query(video_id, clip_time_s);
        let mut data = Vec::with_capacity(hits.len() * self.channels);
        for e in &hits {
            data.extend_from_slice(&e.feature);
        }
        Tensor::new(alloc::vec![hits.len(), self.channels], data).expect("entries are validated on insert")
    }

    pub fn videos(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.entries.keys().map(|(v, _)| v.as_str()).collect();
        out.dedup();
        out
    }

    /// All entries of one video ordered by time.
    pub fn video_entries(&self, video_id: &str) -> Vec<&BankEntry> {
        self.entries
            .range((String::from(video_id), 0)..=(String::from(video_id), u32::MAX))
            .flat_map(|(_, v)| v.iter())
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &BankEntry> {
        self.entries.values().flat_map(|v| v.iter())
    }
}

/// One clip step and one bank step per depth level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionParams {
    pub clip: Vec<AttentionParams>,
    pub bank: Vec<AttentionParams>,
}

impl InteractionParams {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize, dim: usize, depth: usize, rng: &mut Rng) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Config(String::from("interaction depth must be at least 1")));
        }
        let mut clip = Vec::with_capacity(depth);
        let mut bank = Vec::with_capacity(depth);
        for l in 0..depth {
            clip.push(AttentionParams::new(store, &alloc::format!("{prefix}.clip.{l}"), channels, dim, rng)?);
            bank.push(AttentionParams::new(store, &alloc::format!("{prefix}.bank.{l}"), channels, dim, rng)?);
        }
        Ok(Self { clip, bank })
    }

    pub fn depth(&self) -> usize {
        self.clip.len()
    }
}

/// Alternate actor-actor attention within the clip and actor-bank attention.
///
/// `actors` is `[N, c]`; `bank` (`[M, c]`) enters the tape as a constant so
/// no gradient reaches stored features. `None` or `M = 0` skips bank steps.
pub fn instance_interact(s: &mut Session<'_>, actors: Option<Var>, bank: Option<&Tensor>, params: &InteractionParams, ids: &[u32]) -> Result<Option<Var>> {
    let Some(mut x) = actors else {
        return Ok(None);
    };
    let bank = match bank {
        Some(b) if !b.is_empty() => Some(s.tape.constant(b.clone())?),
        _ => None,
    };
    for (l, (clip_p, bank_p)) in params.clip.iter().zip(&params.bank).enumerate() {
        x = s.attention_block(clip_p, x, x, TraceTag::new(l, Branch::ClipInteraction, ids.to_vec()))?;
        if let Some(m) = bank {
            x = s.attention_block(bank_p, x, m, TraceTag::new(l, Branch::BankInteraction, ids.to_vec()))?;
        }
    }
    Ok(Some(x))
}

/// Per-class logits (`[N, K]`) from actor features.
pub fn classify_logits(s: &mut Session<'_>, actors: Var, classifier: &Linear) -> Result<Var> {
    classifier.forward(s, actors)
}

/// Independent per-class probabilities.
pub fn classify(s: &mut Session<'_>, actors: Var, classifier: &Linear) -> Result<Var> {
    let z = classify_logits(s, actors, classifier)?;
    s.tape.sigmoid(z)
}

/// Per-actor class probabilities and their confidence-weighted scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionScores {
    pub actor_ids: Vec<u32>,
    pub confidence: Vec<Real>,
    /// `[N, K]`
    pub probs: Tensor,
    /// `[N, K]`, `confidence[i] * probs[i, k]`.
    pub fused: Tensor,
}

impl ActionScores {
    pub fn num_actors(&self) -> usize {
        self.actor_ids.len()
    }
}

/// `fused[i, k] = confidence[i] * probs[i, k]`.
pub fn fuse_scores(probs: &Tensor, actor_ids: &[u32], confidence: &[Real]) -> Result<ActionScores> {
    let (n, k) = match probs.shape() {
        [n, k] => (*n, *k),
        s => return Err(dim_err!("scores expect [N, K], got {:?}", s)),
    };
    if n != confidence.len() || n != actor_ids.len() {
        return Err(dim_err!("{} score rows for {} boxes", n, confidence.len()));
    }
    let mut fused = probs.clone();
    for (i, &c) in confidence.iter().enumerate() {
        for v in &mut fused.data_mut()[i * k..(i + 1) * k] {
            *v *= c;
        }
    }
    Ok(ActionScores {
        actor_ids: actor_ids.to_vec(),
        confidence: confidence.to_vec(),
        probs: probs.clone(),
        fused,
    })
}

/// Probabilities from raw logits outside a tape.
pub fn probabilities(logits: &Tensor) -> Tensor {
    logits.map(sigmoid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor {
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = rng.normal(0.0, 1.0);
        }
        t
    }

    #[test]
    fn window_arithmetic() {
        let mut bank = MemoryBank::new(2);
        for t in [0, 30, 90] {
            bank.update("v", t, &Tensor::full(&[1, 2], t as Real), &[0]).unwrap();
        }
        bank.update("w", 0, &Tensor::full(&[1, 2], 5.0), &[0]).unwrap();
        let hits = bank.query("v", 30);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].clip_time_s, 0);
        assert_eq!(bank.query_tensor("v", 30).shape(), &[1, 2]);
        // t=60 sees 30 and 90 but not itself
        let times: Vec<u32> = bank.query("v", 60).iter().map(|e| e.clip_time_s).collect();
        assert_eq!(times, vec![30, 90]);
    }

    #[test]
    fn update_replaces_and_excludes_self() {
        let mut bank = MemoryBank::new(3);
        bank.update("v", 10, &Tensor::zeros(&[3, 3]), &[0, 1, 2]).unwrap();
        assert!(bank.query("v", 10).is_empty());
        bank.update("v", 10, &Tensor::zeros(&[1, 3]), &[7]).unwrap();
        assert_eq!(bank.len(), 1);
        assert_eq!(bank.query("v", 20)[0].actor_id, 7);
    }

    #[test]
    fn stored_payload_is_one_vector_per_actor() {
        let mut bank = MemoryBank::new(16);
        bank.update("v", 1, &Tensor::zeros(&[2, 16]), &[0, 1]).unwrap();
        assert!(bank.iter().all(|e| e.feature.len() == 16));
        assert!(matches!(
            bank.update("v", 2, &Tensor::zeros(&[2, 8]), &[0, 1]),
            Err(Error::Dimension(_))
        ));
    }

    fn interaction(depth: usize, seed: u64) -> (ParamStore, InteractionParams) {
        let mut store = ParamStore::new();
        let p = InteractionParams::new(&mut store, "ii", 4, 4, depth, &mut Rng::new(seed)).unwrap();
        (store, p)
    }

    #[test]
    fn dead_residual_without_bank() {
        let (mut store, p) = interaction(2, 1);
        for a in p.clip.iter().chain(&p.bank) {
            *store.value_mut(a.wout) = Tensor::zeros(&[4, 4]);
        }
        let x = random(&[3, 4], &mut Rng::new(2));
        let mut s = Session::new(&store, Rng::new(3), true, 0.2, 1e-5);
        let v = s.tape.constant(x.clone()).unwrap();
        let out = instance_interact(&mut s, Some(v), None, &p, &[0, 1, 2]).unwrap().unwrap();
        assert_eq!(s.tape.value(out), &x);
    }

    #[test]
    fn single_actor_attends_to_itself() {
        let (store, p) = interaction(1, 4);
        let mut s = Session::eval(&store, 1e-5).record_traces();
        let v = s.tape.constant(random(&[1, 4], &mut Rng::new(5))).unwrap();
        instance_interact(&mut s, Some(v), Some(&Tensor::zeros(&[0, 4])), &p, &[0]).unwrap();
        let recs = &s.traces().unwrap().records;
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].weights, vec![1.0]);
    }

    #[test]
    fn composition_matches_straight_line() {
        let (store, p) = interaction(2, 6);
        let mut rng = Rng::new(7);
        let x = random(&[2, 4], &mut rng);
        let m = random(&[2, 4], &mut rng);
        let mut s = Session::eval(&store, 1e-5).record_traces();
        let v = s.tape.constant(x.clone()).unwrap();
        let got = instance_interact(&mut s, Some(v), Some(&m), &p, &[0, 1]).unwrap().unwrap();
        let order: Vec<Branch> = s.traces().unwrap().records.iter().map(|r| r.tag.branch).collect();
        assert_eq!(
            order,
            vec![Branch::ClipInteraction, Branch::BankInteraction, Branch::ClipInteraction, Branch::BankInteraction]
        );
        let got = s.tape.value(got).clone();

        let mut s = Session::eval(&store, 1e-5);
        let tag = || TraceTag::new(0, Branch::ClipInteraction, vec![]);
        let mut h = s.tape.constant(x).unwrap();
        let mv = s.tape.constant(m).unwrap();
        h = s.attention_block(&p.clip[0], h, h, tag()).unwrap();
        h = s.attention_block(&p.bank[0], h, mv, tag()).unwrap();
        h = s.attention_block(&p.clip[1], h, h, tag()).unwrap();
        h = s.attention_block(&p.bank[1], h, mv, tag()).unwrap();
        assert_eq!(s.tape.value(h), &got);
    }

    #[test]
    fn no_actors_gives_nothing() {
        let (store, p) = interaction(1, 8);
        let mut s = Session::eval(&store, 1e-5);
        assert!(instance_interact(&mut s, None, None, &p, &[]).unwrap().is_none());
    }

    #[test]
    fn classify_oracles() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(9);
        let lin = Linear::new(&mut store, "cls", 4, 3, true, &mut rng).unwrap();
        let x = random(&[2, 4], &mut rng);

        let mut zeroed = store.clone();
        *zeroed.value_mut(lin.weight) = Tensor::zeros(&[4, 3]);
        *zeroed.value_mut(lin.bias.unwrap()) = Tensor::zeros(&[3]);
        let mut s = Session::eval(&zeroed, 1e-5);
        let v = s.tape.constant(x.clone()).unwrap();
        let p = classify(&mut s, v, &lin).unwrap();
        assert!(s.tape.value(p).data().iter().all(|&v| v == 0.5));

        let mut s = Session::eval(&store, 1e-5);
        let v = s.tape.constant(x.clone()).unwrap();
        let p = classify(&mut s, v, &lin).unwrap();
        let w = store.value(lin.weight);
        let b = store.value(lin.bias.unwrap());
        for i in 0..2 {
            for k in 0..3 {
                let z: Real = (0..4).map(|j| x.at2(i, j) * w.at2(j, k)).sum::<Real>() + b.data()[k];
                let want = 1.0 / (1.0 + (-z).exp());
                assert!((s.tape.value(p).at2(i, k) - want).abs() <= 1e3 * Real::EPSILON);
            }
        }

        let mut big = store.clone();
        *big.value_mut(lin.bias.unwrap()) = Tensor::full(&[3], 60.0);
        let mut s = Session::eval(&big, 1e-5);
        let v = s.tape.constant(x).unwrap();
        let p = classify(&mut s, v, &lin).unwrap();
        assert!(s.tape.value(p).data().iter().all(|&v| (1.0 - v) <= 1e-6));
    }

    #[test]
    fn fuse_scores_examples() {
        let probs = Tensor::from_rows(&[vec![0.5, 0.2], vec![0.9, 0.1], vec![0.3, 0.7]]).unwrap();
        let s = fuse_scores(&probs, &[0, 1, 2], &[1.0, 0.0, 0.8]).unwrap();
        assert_eq!(s.fused.row(0), probs.row(0));
        assert_eq!(s.fused.row(1), &[0.0, 0.0]);
        assert!((s.fused.at2(2, 0) - 0.24).abs() < 1e3 * Real::EPSILON);
        assert!(matches!(fuse_scores(&probs, &[0, 1], &[1.0, 1.0]), Err(Error::Dimension(_))));
    }
}
