//! From a video feature map and keyframe boxes to actor and context features.
//!
//! The fixed part (RoIAlign, temporal averaging, spatial max pooling) runs
//! once per clip and yields a [`PooledClip`]. The learned channel reduction
//! is applied per forward pass by [`extract_actor_features`] and
//! [`preprocess_context`].
//!
//! Layouts are token-major: a context sequence is `[T, c]`, an actor's local
//! features are `[h*w, c]`.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::dim_err;
use crate::layers::{Linear, Session};
use crate::tape::Var;
use crate::{Error, Real, Result, Rng, Tensor};

/// Dense video features `[C, T, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    values: Tensor,
}

impl FeatureMap {
    pub fn new(values: Tensor) -> Result<Self> {
        let [_, t, h, w] = values.shape() else {
            return Err(dim_err!("feature map must be [C, T, H, W], got {:?}", values.shape()));
        };
        if *t < 1 || *h < 2 || *w < 2 {
            return Err(dim_err!("feature map needs T >= 1 and H, W >= 2, got {:?}", values.shape()));
        }
        if !values.is_finite() {
            return Err(Error::NonFinite("feature map"));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_values(self) -> Tensor {
        self.values
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[3]
    }

    /// The `H x W` plane of channel `c` at frame `t`.
    pub fn plane(&self, c: usize, t: usize) -> &[Real] {
        let hw = self.height() * self.width();
        let start = (c * self.frames() + t) * hw;
        &self.values.data()[start..start + hw]
    }

    pub fn at(&self, c: usize, t: usize, y: usize, x: usize) -> Real {
        self.plane(c, t)[y * self.width() + x]
    }
}

/// A keyframe detection in normalized `[0, 1]` coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActorBox {
    pub id: u32,
    pub x1: Real,
    pub y1: Real,
    pub x2: Real,
    pub y2: Real,
    pub confidence: Real,
}

impl ActorBox {
    pub fn new(id: u32, x1: Real, y1: Real, x2: Real, y2: Real, confidence: Real) -> Result<Self> {
        let b = Self {
            id,
            x1,
            y1,
            x2,
            y2,
            confidence,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x1 < self.x2 && self.y1 < self.y2) {
            return Err(Error::Geometry(alloc::format!(
                "box {} has no area: ({}, {}, {}, {})",
                self.id,
                self.x1,
                self.y1,
                self.x2,
                self.y2
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::Geometry(alloc::format!(
                "box {} confidence {} outside [0, 1]",
                self.id,
                self.confidence
            )));
        }
        Ok(())
    }

    /// Box clamped to the unit square, in feature-map cell units.
    fn to_cells(self, height: usize, width: usize) -> Result<(Real, Real, Real, Real)> {
        self.validate()?;
        let clamp = |v: Real| v.max(0.0).min(1.0);
        let (x1, x2) = (clamp(self.x1) * width as Real, clamp(self.x2) * width as Real);
        let (y1, y2) = (clamp(self.y1) * height as Real, clamp(self.y2) * height as Real);
        if x2 <= x1 || y2 <= y1 {
            return Err(Error::Geometry(alloc::format!("box {} is empty after clamping", self.id)));
        }
        Ok((x1, y1, x2, y2))
    }
}

/// Bilinear sample of an `h x w` plane at continuous index coordinates.
/// Points more than one cell outside the plane read as zero.
fn bilinear(plane: &[Real], h: usize, w: usize, y: Real, x: Real) -> Real {
    if y < -1.0 || y > h as Real || x < -1.0 || x > w as Real {
        return 0.0;
    }
    let (mut y, mut x) = (y.max(0.0), x.max(0.0));
    let mut y0 = y.floor() as usize;
    let mut x0 = x.floor() as usize;
    let y1 = if y0 >= h - 1 {
        y0 = h - 1;
        y = y0 as Real;
        y0
    } else {
        y0 + 1
    };
    let x1 = if x0 >= w - 1 {
        x0 = w - 1;
        x = x0 as Real;
        x0
    } else {
        x0 + 1
    };
    let (ly, lx) = (y - y0 as Real, x - x0 as Real);
    let (hy, hx) = (1.0 - ly, 1.0 - lx);
    hy * hx * plane[y0 * w + x0] + hy * lx * plane[y0 * w + x1] + ly * hx * plane[y1 * w + x0] + ly * lx * plane[y1 * w + x1]
}

/// Default samples per output-cell side (2 x 2 = 4 points per cell).
pub const SAMPLING_RATIO: usize = 2;

/// Per-frame RoIAlign of one box, duplicated across all `T` frames.
/// Output is `[C, T, h, w]`.
pub fn roi_align_3d(map: &FeatureMap, b: &ActorBox, out_hw: (usize, usize)) -> Result<Tensor> {
    roi_align_3d_with(map, b, out_hw, SAMPLING_RATIO)
}

/// RoIAlign with `sampling_ratio^2` bilinear samples per output cell,
/// averaged. Sample points use half-pixel (aligned) coordinates, so a cell
/// center at index `i` sits at continuous position `i + 0.5`.
pub fn roi_align_3d_with(map: &FeatureMap, b: &ActorBox, out_hw: (usize, usize), sampling_ratio: usize) -> Result<Tensor> {
    let (oh, ow) = out_hw;
    if oh == 0 || ow == 0 || sampling_ratio == 0 {
        return Err(dim_err!("RoIAlign output {:?} and sampling ratio {} must be positive", out_hw, sampling_ratio));
    }
    let (h, w) = (map.height(), map.width());
    let (x1, y1, x2, y2) = b.to_cells(h, w)?;
    let bin_h = (y2 - y1) / oh as Real;
    let bin_w = (x2 - x1) / ow as Real;
    let r = sampling_ratio as Real;
    let (c_n, t_n) = (map.channels(), map.frames());
    let mut out = Vec::with_capacity(c_n * t_n * oh * ow);
    // sample coordinates are shared by every channel and frame
    let ys: Vec<Vec<Real>> = (0..oh)
        .map(|py| (0..sampling_ratio).map(|iy| y1 + py as Real * bin_h + (iy as Real + 0.5) * bin_h / r - 0.5).collect())
        .collect();
    let xs: Vec<Vec<Real>> = (0..ow)
        .map(|px| (0..sampling_ratio).map(|ix| x1 + px as Real * bin_w + (ix as Real + 0.5) * bin_w / r - 0.5).collect())
        .collect();
    let norm = 1.0 / (r * r);
    for c in 0..c_n {
        for t in 0..t_n {
            let plane = map.plane(c, t);
            for ys_bin in &ys {
                for xs_bin in &xs {
                    let mut acc = 0.0;
                    for &y in ys_bin {
                        for &x in xs_bin {
                            acc += bilinear(plane, h, w, y, x);
                        }
                    }
                    out.push(acc * norm);
                }
            }
        }
    }
    Tensor::new(vec![c_n, t_n, oh, ow], out)
}

/// Actor crop after RoIAlign and temporal averaging, token-major `[h*w, C]`.
pub fn pool_actor_local(map: &FeatureMap, b: &ActorBox, out_hw: (usize, usize)) -> Result<Tensor> {
    let roi = roi_align_3d(map, b, out_hw)?;
    let (c_n, t_n, hw) = (map.channels(), map.frames(), out_hw.0 * out_hw.1);
    let mut out = vec![0.0; hw * c_n];
    for c in 0..c_n {
        for t in 0..t_n {
            let base = (c * t_n + t) * hw;
            for p in 0..hw {
                out[p * c_n + c] += roi.data()[base + p];
            }
        }
    }
    for v in &mut out {
        *v /= t_n as Real;
    }
    Tensor::new(vec![hw, c_n], out)
}

/// Per-frame channel-wise spatial max, `[T, C]`.
pub fn pool_context(map: &FeatureMap) -> Tensor {
    let (c_n, t_n) = (map.channels(), map.frames());
    let mut out = vec![0.0; t_n * c_n];
    for c in 0..c_n {
        for t in 0..t_n {
            out[t * c_n + c] = map.plane(c, t).iter().copied().fold(Real::neg_infinity(), Real::max);
        }
    }
    Tensor::new(vec![t_n, c_n], out).expect("shape matches by construction")
}

/// Temporally averaged feature map as `[H*W, C]` positions.
pub fn pool_context_map(map: &FeatureMap) -> Tensor {
    let (c_n, t_n, hw) = (map.channels(), map.frames(), map.height() * map.width());
    let mut out = vec![0.0; hw * c_n];
    for c in 0..c_n {
        for t in 0..t_n {
            for (p, v) in map.plane(c, t).iter().enumerate() {
                out[p * c_n + c] += v;
            }
        }
    }
    for v in &mut out {
        *v /= t_n as Real;
    }
    Tensor::new(vec![hw, c_n], out).expect("shape matches by construction")
}

/// Everything the head needs from one clip before any learned layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledClip {
    /// Per actor, `[h*w, C]`.
    pub actor_local: Vec<Tensor>,
    /// `[T, C]`.
    pub context: Tensor,
    /// `[H*W, C]`, only used by the context-to-actor-only mode.
    pub context_map: Tensor,
    pub boxes: Vec<ActorBox>,
}

impl PooledClip {
    pub fn from_map(map: &FeatureMap, boxes: &[ActorBox], out_hw: (usize, usize)) -> Result<Self> {
        let actor_local = boxes
            .iter()
            .map(|b| pool_actor_local(map, b, out_hw))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            actor_local,
            context: pool_context(map),
            context_map: pool_context_map(map),
            boxes: boxes.to_vec(),
        })
    }

    pub fn num_actors(&self) -> usize {
        self.boxes.len()
    }

    pub fn actor_ids(&self) -> Vec<u32> {
        self.boxes.iter().map(|b| b.id).collect()
    }

    pub fn frames(&self) -> usize {
        self.context.shape()[0]
    }
}

/// Reduced actor features on a tape: `local[i]` is `l_i` (`[h*w, c]`),
/// `roi[i]` is `a_i` (`[1, c]`).
#[derive(Debug, Clone, Default)]
pub struct ActorFeatures {
    pub local: Vec<Var>,
    pub roi: Vec<Var>,
}

impl ActorFeatures {
    pub fn len(&self) -> usize {
        self.roi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roi.is_empty()
    }

    /// `[N, h*w, c]` and `[N, c]` snapshots of the current values.
    pub fn to_tensors(&self, s: &Session<'_>, hw: usize, c: usize) -> Result<(Tensor, Tensor)> {
        let local: Vec<Tensor> = self.local.iter().map(|v| s.tape.value(*v).clone()).collect();
        let roi: Vec<Tensor> = self
            .roi
            .iter()
            .map(|v| s.tape.value(*v).clone().reshape(&[c]))
            .collect::<Result<_>>()?;
        Ok((Tensor::stack(&local, &[hw, c])?, Tensor::stack(&roi, &[c])?))
    }
}

/// Context on a tape: `local` is `g` (`[T, c]`), `global` is its temporal mean (`[1, c]`).
#[derive(Debug, Clone, Copy)]
pub struct TemporalContext {
    pub local: Var,
    pub global: Var,
}

/// Channel reduction of each actor crop, then spatial max for the RoI feature.
pub fn extract_actor_features(s: &mut Session<'_>, reduce: &Linear, clip: &PooledClip) -> Result<ActorFeatures> {
    let mut out = ActorFeatures::default();
    for raw in &clip.actor_local {
        let x = s.tape.constant(raw.clone())?;
        let l = reduce.forward(s, x)?;
        let a = s.tape.max_axis(l, 0)?;
        out.local.push(l);
        out.roi.push(a);
    }
    Ok(out)
}

/// Channel reduction of the per-frame spatial max, then the temporal mean.
pub fn preprocess_context(s: &mut Session<'_>, reduce: &Linear, clip: &PooledClip) -> Result<TemporalContext> {
    let g = s.tape.constant(clip.context.clone())?;
    let local = reduce.forward(s, g)?;
    let global = s.tape.mean_axis(local, 0)?;
    Ok(TemporalContext { local, global })
}

/// Fixed random two-layer 3x3 convolutional encoder, applied frame by frame.
/// Stands in for a video backbone on raw synthetic videos.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    w1: Tensor,
    w2: Tensor,
}

impl ToyEncoder {
    pub fn new(in_channels: usize, hidden: usize, out_channels: usize, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let mut init = |o: usize, i: usize| {
            let bound = 1.0 / ((i * 9) as Real).sqrt();
            let mut t = Tensor::zeros(&[o, i, 3, 3]);
            for v in t.data_mut() {
                *v = rng.uniform_in(-bound, bound);
            }
            t
        };
        let w1 = init(hidden, in_channels);
        let w2 = init(out_channels, hidden);
        Self { w1, w2 }
    }

    fn conv_relu(input: &Tensor, w: &Tensor) -> Tensor {
        let [ci_n, t_n, h, wd] = *input.shape() else { unreachable!() };
        let co_n = w.shape()[0];
        let mut out = vec![0.0; co_n * t_n * h * wd];
        for co in 0..co_n {
            for t in 0..t_n {
                for y in 0..h {
                    for x in 0..wd {
                        let mut acc = 0.0;
                        for ci in 0..ci_n {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let (yy, xx) = (y as isize + ky as isize - 1, x as isize + kx as isize - 1);
                                    if yy < 0 || xx < 0 || yy >= h as isize || xx >= wd as isize {
                                        continue;
                                    }
                                    let iv = input.data()[((ci * t_n + t) * h + yy as usize) * wd + xx as usize];
                                    acc += iv * w.data()[((co * ci_n + ci) * 3 + ky) * 3 + kx];
                                }
                            }
                        }
                        out[((co * t_n + t) * h + y) * wd + x] = acc.max(0.0);
                    }
                }
            }
        }
        Tensor::new(vec![co_n, t_n, h, wd], out).expect("shape matches by construction")
    }

    /// Encode a raw `[C_in, T, H, W]` video.
    pub fn encode(&self, video: &Tensor) -> Result<FeatureMap> {
        if video.rank() != 4 || video.shape()[0] != self.w1.shape()[1] {
            return Err(dim_err!("encoder expects [{}, T, H, W], got {:?}", self.w1.shape()[1], video.shape()));
        }
        let hidden = Self::conv_relu(video, &self.w1);
        FeatureMap::new(Self::conv_relu(&hidden, &self.w2))
    }
}
