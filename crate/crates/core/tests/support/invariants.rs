//! Structural invariants of the cycle, measured on random scenes.

use cycleacr_core::cycle::{cycle_forward, CycleConfig, CycleParams};
use cycleacr_core::frontend::{ActorFeatures, TemporalContext};
use cycleacr_core::layers::{AttentionParams, Branch, Session, TraceTag};
use cycleacr_core::metrics::cosine;
use cycleacr_core::param::ParamStore;
use cycleacr_core::{Real, Rng, Tensor};

pub fn random(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap()
}

pub struct Scene {
    pub store: ParamStore,
    pub params: CycleParams,
    pub cfg: CycleConfig,
    pub local: Vec<Tensor>,
    pub g: Tensor,
}

pub fn scene(n: usize, frames: usize, c: usize, layers: usize, seed: u64) -> Scene {
    let cfg = CycleConfig {
        layers,
        channels: c,
        attn_dim: c,
        p_drop: 0.2,
        use_local: true,
        use_global: true,
    };
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    let params = CycleParams::new(&mut store, "cycle", &cfg, frames, &mut rng).unwrap();
    let local = (0..n).map(|_| random(&[4, c], &mut rng)).collect();
    Scene {
        store,
        params,
        cfg,
        local,
        g: random(&[frames, c], &mut rng),
    }
}

pub fn load(s: &mut Session<'_>, local: &[Tensor], g: &Tensor) -> (ActorFeatures, TemporalContext) {
    let mut actors = ActorFeatures::default();
    for l in local {
        let v = s.tape.constant(l.clone()).unwrap();
        actors.roi.push(s.tape.max_axis(v, 0).unwrap());
        actors.local.push(v);
    }
    let gl = s.tape.constant(g.clone()).unwrap();
    let gg = s.tape.mean_axis(gl, 0).unwrap();
    (actors, TemporalContext { local: gl, global: gg })
}

fn ids(n: usize) -> Vec<u32> {
    (0..n as u32).collect()
}

/// Training-mode cycle: whether every attention weight lies in [0, 1], and
/// the largest deviation of a row sum from 1.
pub fn attention_normalization(seed: u64, n: usize, frames: usize, layers: usize) -> (bool, Real) {
    let sc = scene(n, frames, 6, layers, seed);
    let mut s = Session::new(&sc.store, Rng::new(seed), true, 0.2, 1e-5).record_traces();
    let (actors, ctx) = load(&mut s, &sc.local, &sc.g);
    cycle_forward(&mut s, &actors, &ctx, &sc.cfg, &sc.params, &ids(n)).unwrap();
    let traces = s.traces().unwrap();
    let in_range = traces.rows().all(|r| (0.0..=1.0).contains(&r.weight));
    let worst = traces
        .records
        .iter()
        .flat_map(|rec| rec.weights.chunks(rec.keys).map(|r| (r.iter().sum::<Real>() - 1.0).abs()))
        .fold(0.0, Real::max);
    (in_range, worst)
}

/// Whether permuting the three actors permutes the output rows bit-exactly.
pub fn permutation_equivariant(seed: u64, perm_seed: u64) -> bool {
    let n = 3;
    let sc = scene(n, 3, 6, 2, seed);
    let mut perm: Vec<usize> = (0..n).collect();
    Rng::new(perm_seed).shuffle(&mut perm);
    let permuted: Vec<Tensor> = perm.iter().map(|&i| sc.local[i].clone()).collect();

    let mut s = Session::eval(&sc.store, 1e-5);
    let (a, ctx) = load(&mut s, &sc.local, &sc.g);
    let out = cycle_forward(&mut s, &a, &ctx, &sc.cfg, &sc.params, &ids(n)).unwrap();
    let (b, ctx_b) = load(&mut s, &permuted, &sc.g);
    let out_b = cycle_forward(&mut s, &b, &ctx_b, &sc.cfg, &sc.params, &ids(n)).unwrap();
    let x = s.tape.value(out.enhanced.unwrap());
    let y = s.tape.value(out_b.enhanced.unwrap());
    perm.iter().enumerate().all(|(dst, &src)| y.row(dst) == x.row(src))
}

/// Whether a block with `W_out = 0` returns its query bit-exactly (training mode).
pub fn dead_projection_is_identity(seed: u64, q: usize, m: usize) -> bool {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    let p = AttentionParams::new(&mut store, "blk", 5, 4, &mut rng).unwrap();
    *store.value_mut(p.wout) = Tensor::zeros(&[4, 5]);
    let query = random(&[q, 5], &mut rng);
    let memory = random(&[m, 5], &mut rng);
    let mut s = Session::new(&store, Rng::new(seed), true, 0.5, 1e-5);
    let qv = s.tape.constant(query.clone()).unwrap();
    let mv = s.tape.constant(memory).unwrap();
    let out = s.attention_block(&p, qv, mv, TraceTag::new(0, Branch::LocalA2c, vec![])).unwrap();
    s.tape.value(out) == &query
}

/// Whether two eval-mode passes give bit-identical outputs.
pub fn eval_is_deterministic(seed: u64) -> bool {
    let sc = scene(2, 4, 6, 2, seed);
    let run = || {
        let mut s = Session::eval(&sc.store, 1e-5);
        let (a, ctx) = load(&mut s, &sc.local, &sc.g);
        let out = cycle_forward(&mut s, &a, &ctx, &sc.cfg, &sc.params, &ids(2)).unwrap();
        s.tape.value(out.enhanced.unwrap()).clone()
    };
    run() == run()
}

/// Pairwise cosine of the per-actor global contexts of three actors, per
/// stage (input, then after each actor-to-context layer). With `twins`,
/// actors 0 and 1 share the same crop.
pub fn context_similarity(seed: u64, twins: bool) -> Vec<Vec<Real>> {
    let mut sc = scene(3, 4, 6, 2, seed);
    if twins {
        sc.local[1] = sc.local[0].clone();
    }
    let mut s = Session::eval(&sc.store, 1e-5);
    let (a, ctx) = load(&mut s, &sc.local, &sc.g);
    let out = cycle_forward(&mut s, &a, &ctx, &sc.cfg, &sc.params, &ids(3)).unwrap();
    out.context_history
        .iter()
        .map(|stage| {
            let v = |i: usize| s.tape.value(stage[i]).data().to_vec();
            [(0, 1), (0, 2), (1, 2)].iter().map(|&(i, j)| cosine(&v(i), &v(j))).collect()
        })
        .collect()
}

/// Area under the precision-recall staircase, walking every cut-off of the
/// stable ranking.
pub fn brute_force_ap(scores: &[Real], labels: &[bool]) -> Option<Real> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return None;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for k in 1..=idx.len() {
        let tp = idx[..k].iter().filter(|&&i| labels[i]).count();
        let recall = tp as Real / pos as Real;
        let precision = tp as Real / k as Real;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Some(ap)
}
