//! Finite-difference checks of every differentiable op and of the full head.

use cycleacr_core::cycle::CycleConfig;
use cycleacr_core::frontend::{ActorBox, FeatureMap, PooledClip};
use cycleacr_core::gradcheck::{check, GradCheckReport};
use cycleacr_core::model::{InteractionMode, Model, ModelConfig};
use cycleacr_core::param::{ParamId, ParamStore};
use cycleacr_core::tape::{Tape, Var};
use cycleacr_core::{Real, Result, Rng, Tensor};

pub const H: Real = 1e-5;
pub const TOL: Real = 1e-4;
pub const SEEDS: u64 = 5;

fn random(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap()
}

/// `sum(out * r)` with a fixed random `r`, so every output element matters.
fn project(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let r = random(tape.shape(out), &mut Rng::new(seed ^ 0xabcd));
    let rv = tape.constant(r)?;
    let p = tape.mul(out, rv)?;
    tape.sum(p)
}

type OpFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

/// Every differentiable op with the input shapes it is checked at.
pub fn ops() -> Vec<(&'static str, Vec<Vec<usize>>, OpFn)> {
    let targets: Vec<Real> = (0..12).map(|i| (i % 3 == 0) as u8 as Real).collect();
    let t2 = targets.clone();
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], Box::new(|t: &mut Tape, v: &[Var]| t.matmul(v[0], v[1])) as OpFn),
        ("transpose", vec![vec![3, 4]], Box::new(|t: &mut Tape, v: &[Var]| t.transpose(v[0]))),
        ("add", vec![vec![3, 4], vec![3, 4]], Box::new(|t: &mut Tape, v: &[Var]| t.add(v[0], v[1]))),
        ("mul", vec![vec![3, 4], vec![3, 4]], Box::new(|t: &mut Tape, v: &[Var]| t.mul(v[0], v[1]))),
        ("add_row", vec![vec![3, 4], vec![4]], Box::new(|t: &mut Tape, v: &[Var]| t.add_row(v[0], v[1]))),
        ("scale", vec![vec![3, 4]], Box::new(|t: &mut Tape, v: &[Var]| t.scale(v[0], -1.7))),
        ("relu", vec![vec![3, 4]], Box::new(|t: &mut Tape, v: &[Var]| t.relu(v[0]))),
        ("sigmoid", vec![vec![3, 4]], Box::new(|t: &mut Tape, v: &[Var]| t.sigmoid(v[0]))),
        ("softmax_rows", vec![vec![3, 5]], Box::new(|t: &mut Tape, v: &[Var]| t.softmax_rows(v[0]))),
        ("layer_norm", vec![vec![3, 6]], Box::new(|t: &mut Tape, v: &[Var]| t.layer_norm(v[0], 1e-5))),
        ("dropout", vec![vec![4, 6]], Box::new(|t: &mut Tape, v: &[Var]| t.dropout(v[0], 0.3, &mut Rng::new(77), true))),
        ("concat0", vec![vec![2, 3], vec![1, 3]], Box::new(|t: &mut Tape, v: &[Var]| t.concat(&[v[0], v[1]], 0))),
        ("concat1", vec![vec![2, 3], vec![2, 2]], Box::new(|t: &mut Tape, v: &[Var]| t.concat(&[v[0], v[1]], 1))),
        ("slice", vec![vec![4, 3]], Box::new(|t: &mut Tape, v: &[Var]| t.slice(v[0], 0, 1, 2))),
        (
            "split",
            vec![vec![2, 5]],
            Box::new(|t: &mut Tape, v: &[Var]| {
                let parts = t.split(v[0], 1, &[2, 3])?;
                let a = t.sum(parts[0])?;
                let b = t.scale(parts[1], 2.0)?;
                let b = t.sum(b)?;
                t.add(a, b)
            }),
        ),
        ("reshape", vec![vec![2, 6]], Box::new(|t: &mut Tape, v: &[Var]| t.reshape(v[0], &[3, 4]))),
        ("mean_axis0", vec![vec![4, 3]], Box::new(|t: &mut Tape, v: &[Var]| t.mean_axis(v[0], 0))),
        ("mean_axis1", vec![vec![4, 3]], Box::new(|t: &mut Tape, v: &[Var]| t.mean_axis(v[0], 1))),
        ("max_axis0", vec![vec![4, 3]], Box::new(|t: &mut Tape, v: &[Var]| t.max_axis(v[0], 0))),
        ("max_axis1", vec![vec![4, 3]], Box::new(|t: &mut Tape, v: &[Var]| t.max_axis(v[0], 1))),
        ("sum", vec![vec![4, 3]], Box::new(|t: &mut Tape, v: &[Var]| t.sum(v[0]))),
        ("mean", vec![vec![4, 3]], Box::new(|t: &mut Tape, v: &[Var]| t.mean(v[0]))),
        ("bce_with_logits", vec![vec![4, 3]], Box::new(move |t: &mut Tape, v: &[Var]| t.bce_with_logits(v[0], &targets))),
        (
            "binary_cross_entropy",
            vec![vec![4, 3]],
            Box::new(move |t: &mut Tape, v: &[Var]| {
                let p = t.sigmoid(v[0])?;
                t.binary_cross_entropy(p, &t2)
            }),
        ),
    ]
}

/// Check `f` over inputs of `shapes` registered as parameters.
pub fn op_report(shapes: &[Vec<usize>], seed: u64, f: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>) -> GradCheckReport {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| store.add(&format!("x{i}"), random(s, &mut rng)).unwrap())
        .collect();
    check(&store, H, |s, tape| {
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(s, id)).collect();
        let out = f(tape, &vars)?;
        project(tape, out, seed)
    })
    .unwrap()
}

fn tiny_clip(n: usize, frames: usize, seed: u64) -> PooledClip {
    let mut rng = Rng::new(seed);
    let map = FeatureMap::new(random(&[5, frames, 6, 6], &mut rng)).unwrap();
    let boxes: Vec<ActorBox> = (0..n)
        .map(|i| {
            let x = rng.uniform_in(0.0, 0.5);
            let y = rng.uniform_in(0.0, 0.5);
            ActorBox::new(i as u32, x, y, x + 0.4, y + 0.45, 0.9).unwrap()
        })
        .collect();
    PooledClip::from_map(&map, &boxes, (2, 2)).unwrap()
}

pub fn pipeline_report(mode: InteractionMode, seed: u64) -> GradCheckReport {
    let frames = 1 + (seed as usize % 4);
    let n = 1 + (seed as usize % 3);
    let cfg = ModelConfig {
        in_channels: 5,
        frames,
        roi_hw: (2, 2),
        cycle: CycleConfig {
            layers: 2,
            channels: 6,
            attn_dim: 6,
            p_drop: 0.2,
            use_local: true,
            use_global: true,
        },
        mode,
        interaction_depth: 2,
        use_bank: true,
        num_classes: 3,
        layer_norm_eps: 1e-5,
    };
    let model = Model::new(cfg, seed).unwrap();
    let clip = tiny_clip(n, frames, seed + 100);
    let bank = random(&[2, 6], &mut Rng::new(seed + 200));
    let targets = Tensor::new(vec![n, 3], (0..3 * n).map(|i| ((i + seed as usize) % 2) as Real).collect()).unwrap();
    check(&model.store, H, |store, tape| {
        let mut m = model.clone();
        m.store = store.clone();
        let mut s = m.session(Rng::new(seed + 300), true);
        std::mem::swap(&mut s.tape, tape);
        let out = m.forward(&mut s, &clip, Some(&bank))?;
        let loss = m.loss(&mut s, &out, &targets)?.expect("clip has actors");
        std::mem::swap(&mut s.tape, tape);
        Ok(loss)
    })
    .unwrap()
}

