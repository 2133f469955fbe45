//! Plain nested-Vec transcription of the cycle loop, used as an oracle.

use cycleacr_core::cycle::{cycle_forward, CycleConfig, CycleParams};
use cycleacr_core::frontend::{ActorFeatures, TemporalContext};
use cycleacr_core::layers::Session;
use cycleacr_core::param::ParamStore;
use cycleacr_core::{Rng, Tensor};

type M = Vec<Vec<f64>>;

fn mat(t: &Tensor) -> M {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

fn mm(a: &M, b: &M) -> M {
    let n = b[0].len();
    a.iter()
        .map(|row| (0..n).map(|j| row.iter().zip(b).map(|(x, brow)| x * brow[j]).sum()).collect())
        .collect()
}

fn t(a: &M) -> M {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

fn add(a: &M, b: &M) -> M {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

fn softmax(a: &M) -> M {
    a.iter()
        .map(|r| {
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|v| v / s).collect()
        })
        .collect()
}

fn norm(a: &M) -> M {
    a.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mu = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            r.iter().map(|v| (v - mu) / (var + 1e-5).sqrt()).collect()
        })
        .collect()
}

fn relu(a: &M) -> M {
    a.iter().map(|r| r.iter().map(|v| v.max(0.0)).collect()).collect()
}

struct W {
    q: M,
    k: M,
    v: M,
    out: M,
}

fn block(q: &M, m: &M, w: &W) -> M {
    let d = w.q[0].len() as f64;
    let (q_, k, v) = (mm(q, &w.q), mm(m, &w.k), mm(m, &w.v));
    let scores: M = mm(&q_, &t(&k)).iter().map(|r| r.iter().map(|x| x / d.sqrt()).collect()).collect();
    let out = mm(&softmax(&scores), &v);
    add(q, &mm(&relu(&norm(&out)), &w.out))
}

fn weights(store: &ParamStore, prefix: &str) -> W {
    let g = |n: &str| mat(store.value(store.id(&format!("{prefix}.{n}")).unwrap()));
    W {
        q: g("w_q"),
        k: g("w_k"),
        v: g("w_v"),
        out: g("w_out"),
    }
}

fn random(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap()
}

/// Largest absolute difference between `cycle_forward` and the transcription
/// over `seeds` (N=2, T=3, c=d=8, two layers).
pub fn max_deviation(seeds: std::ops::Range<u64>) -> f64 {
    let (n, frames, c, layers, hw) = (2, 3, 8, 2, 4);
    let cfg = CycleConfig {
        layers,
        channels: c,
        attn_dim: c,
        p_drop: 0.2,
        use_local: true,
        use_global: true,
    };
    let mut worst: f64 = 0.0;
    for seed in seeds {
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        let params = CycleParams::new(&mut store, "cycle", &cfg, frames, &mut rng).unwrap();
        // make the position embedding matter at this scale
        let pos_id = params.pos.unwrap();
        *store.value_mut(pos_id) = random(&[frames, c], &mut rng);
        let local: Vec<Tensor> = (0..n).map(|_| random(&[hw, c], &mut rng)).collect();
        let g = random(&[frames, c], &mut rng);

        let mut s = Session::eval(&store, 1e-5);
        let mut actors = ActorFeatures::default();
        for l in &local {
            let lv = s.tape.constant(l.clone()).unwrap();
            let a = s.tape.max_axis(lv, 0).unwrap();
            actors.local.push(lv);
            actors.roi.push(a);
        }
        let gl = s.tape.constant(g.clone()).unwrap();
        let gg = s.tape.mean_axis(gl, 0).unwrap();
        let ctx = TemporalContext { local: gl, global: gg };
        let out = cycle_forward(&mut s, &actors, &ctx, &cfg, &params, &[0, 1]).unwrap();
        let got = mat(s.tape.value(out.enhanced.unwrap()));

        let pos = mat(store.value(pos_id));
        let fuse = mat(store.value(params.fusion));
        let g = mat(&g);
        for i in 0..n {
            let a_local = mat(&local[i]);
            let a: Vec<f64> = (0..c).map(|j| a_local.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max)).collect();
            let mut memory = vec![a.clone()];
            memory.extend(a_local.iter().cloned());
            let c_global: Vec<f64> = (0..c).map(|j| g.iter().map(|r| r[j]).sum::<f64>() / frames as f64).collect();

            let mut c_local = g.clone();
            for l in 0..layers {
                c_local = block(&c_local, &memory, &weights(&store, &format!("cycle.local_a2c.{l}")));
            }
            let mut out_local = vec![a];
            let c_local = add(&c_local, &pos);
            for l in 0..layers {
                out_local = block(&out_local, &c_local, &weights(&store, &format!("cycle.local_c2a.{l}")));
            }
            let mut c_global = vec![c_global];
            for l in 0..layers {
                c_global = block(&c_global, &memory, &weights(&store, &format!("cycle.global_a2c.{l}")));
            }
            let mut cat = out_local[0].clone();
            cat.extend(c_global[0].iter());
            let want = mm(&vec![cat], &fuse);
            for (x, y) in want[0].iter().zip(&got[i]) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    worst
}
