//! Backward warping (gather), forward splatting (scatter), linear flow
//! scaling and the visibility-weighted blend of two splatted frames.
//!
//! Forward warping defaults to average splatting: every source pixel spreads
//! its value over the four integer neighbours of its displaced position with
//! bilinear weights, and each target pixel is the weight-normalized sum of
//! what landed on it. Target pixels that receive less than the weight epsilon
//! are holes. Softmax splatting is available when an importance map is
//! supplied from outside.

use rayon::prelude::*;

use crate::error::{check_dims, Error, Result};
use crate::types::{FlowField, Frame, Mask, TimeStep, VisibilityMap};

pub const DEFAULT_WEIGHT_EPSILON: f64 = 1e-6;

/// Total splat mass per target pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl WeightMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::DimensionMismatch {
                what: "weight map",
                expected: format!("{} values", height * width),
                actual: format!("{} values", data.len()),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::OutOfRange {
                what: "weight map",
                index,
                value: data[index],
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplatResult {
    pub image: Frame,
    pub weight: WeightMap,
    /// Set where `weight < weight epsilon`.
    pub holes: Mask,
}

/// How source pixels are weighted when splatted.
#[derive(Debug, Clone, Copy, Default)]
pub enum SplatScheme<'a> {
    /// Plain bilinear weights.
    #[default]
    Average,
    /// Bilinear weights scaled by `exp(z)` of a per-source importance `z`
    /// (row-major, one value per pixel).
    Softmax(&'a [f64]),
}

/// `t · flow`: the flow from the source frame to time `t` under linear motion.
pub fn scale_flow(flow: &FlowField, t: TimeStep) -> FlowField {
    let t = t.value();
    flow.map(|v| t * v)
        .expect("scaling finite flow by t in (0,1) stays finite")
}

#[inline]
fn bilinear_sample(image: &Frame, x: f64, y: f64, out: &mut [f64]) {
    let (h, w) = image.dims();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let (p00, p01, p10, p11) = (
        image.pixel(y0, x0),
        image.pixel(y0, x1),
        image.pixel(y1, x0),
        image.pixel(y1, x1),
    );
    for c in 0..out.len() {
        let top = p00[c] * (1.0 - fx) + p01[c] * fx;
        let bottom = p10[c] * (1.0 - fx) + p11[c] * fx;
        out[c] = (top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0);
    }
}

/// `out(p) = image(p + flow(p))`, bilinear, clamp-to-edge outside the image.
pub fn backward_warp(image: &Frame, flow: &FlowField) -> Result<Frame> {
    check_dims("backward_warp", image.dims(), flow.dims())?;
    let (h, w, ch) = (image.height(), image.width(), image.channels());
    let mut data = vec![0.0; h * w * ch];
    data.par_chunks_mut(w * ch).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let (u, v) = flow.get(y, x);
            bilinear_sample(image, x as f64 + u, y as f64 + v, &mut row[x * ch..(x + 1) * ch]);
        }
    });
    Ok(Frame::from_raw_unchecked(h, w, ch, data))
}

struct Accumulator {
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl Accumulator {
    fn new(h: usize, w: usize, ch: usize) -> Self {
        Self {
            values: vec![0.0; h * w * ch],
            weights: vec![0.0; h * w],
        }
    }

    fn splat_row(&mut self, image: &Frame, flow: &FlowField, scheme: SplatScheme, zmax: f64, y: usize) {
        let (h, w, ch) = (image.height(), image.width(), image.channels());
        for x in 0..w {
            let (u, v) = flow.get(y, x);
            let tx = x as f64 + u;
            let ty = y as f64 + v;
            let x0 = tx.floor();
            let y0 = ty.floor();
            let fx = tx - x0;
            let fy = ty - y0;
            let scale = match scheme {
                SplatScheme::Average => 1.0,
                SplatScheme::Softmax(z) => (z[y * w + x] - zmax).exp(),
            };
            let src = image.pixel(y, x);
            let taps = [
                (x0, y0, (1.0 - fx) * (1.0 - fy)),
                (x0 + 1.0, y0, fx * (1.0 - fy)),
                (x0, y0 + 1.0, (1.0 - fx) * fy),
                (x0 + 1.0, y0 + 1.0, fx * fy),
            ];
            for (qx, qy, bw) in taps {
                let wgt = bw * scale;
                if wgt <= 0.0 || qx < 0.0 || qy < 0.0 || qx >= w as f64 || qy >= h as f64 {
                    continue;
                }
                let t = qy as usize * w + qx as usize;
                self.weights[t] += wgt;
                for (acc, &v) in self.values[t * ch..(t + 1) * ch].iter_mut().zip(src) {
                    *acc += wgt * v;
                }
            }
        }
    }

    fn merge(mut self, other: Accumulator) -> Self {
        self.values.iter_mut().zip(&other.values).for_each(|(a, b)| *a += b);
        self.weights.iter_mut().zip(&other.weights).for_each(|(a, b)| *a += b);
        self
    }

    fn finish(self, h: usize, w: usize, ch: usize, eps: f64) -> Result<SplatResult> {
        let Accumulator { mut values, weights } = self;
        let mut holes = vec![false; h * w];
        for (i, &wt) in weights.iter().enumerate() {
            let px = &mut values[i * ch..(i + 1) * ch];
            if wt < eps {
                holes[i] = true;
                px.fill(0.0);
            } else {
                px.iter_mut().for_each(|v| *v = (*v / wt).clamp(0.0, 1.0));
            }
        }
        Ok(SplatResult {
            image: Frame::from_raw_unchecked(h, w, ch, values),
            weight: WeightMap::new(h, w, weights)?,
            holes: Mask::new(h, w, holes)?,
        })
    }
}

fn splat_prelude(image: &Frame, flow: &FlowField, scheme: SplatScheme) -> Result<f64> {
    check_dims("forward_warp", image.dims(), flow.dims())?;
    match scheme {
        SplatScheme::Average => Ok(0.0),
        SplatScheme::Softmax(z) => {
            let n = image.height() * image.width();
            if z.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "softmax importance",
                    expected: format!("{n} values"),
                    actual: format!("{} values", z.len()),
                });
            }
            if let Some(index) = z.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "softmax importance",
                    index,
                });
            }
            Ok(z.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        }
    }
}

/// Average splatting with the default hole epsilon. Sequential reference path.
pub fn forward_warp(image: &Frame, flow: &FlowField) -> Result<SplatResult> {
    forward_warp_with(image, flow, SplatScheme::Average, DEFAULT_WEIGHT_EPSILON)
}

pub fn forward_warp_with(
    image: &Frame,
    flow: &FlowField,
    scheme: SplatScheme,
    eps: f64,
) -> Result<SplatResult> {
    let zmax = splat_prelude(image, flow, scheme)?;
    let (h, w, ch) = (image.height(), image.width(), image.channels());
    let mut acc = Accumulator::new(h, w, ch);
    for y in 0..h {
        acc.splat_row(image, flow, scheme, zmax, y);
    }
    acc.finish(h, w, ch, eps)
}

/// Multi-threaded splatting. Agrees with [`forward_warp_with`] up to the
/// reordering of floating-point sums.
pub fn forward_warp_parallel(
    image: &Frame,
    flow: &FlowField,
    scheme: SplatScheme,
    eps: f64,
) -> Result<SplatResult> {
    let zmax = splat_prelude(image, flow, scheme)?;
    let (h, w, ch) = (image.height(), image.width(), image.channels());
    let rows_per_job = h.div_ceil(rayon::current_num_threads().max(1)).max(1);
    let starts: Vec<usize> = (0..h).step_by(rows_per_job).collect();
    let acc = starts
        .into_par_iter()
        .map(|start| {
            let mut acc = Accumulator::new(h, w, ch);
            for y in start..(start + rows_per_job).min(h) {
                acc.splat_row(image, flow, scheme, zmax, y);
            }
            acc
        })
        .reduce(|| Accumulator::new(h, w, ch), Accumulator::merge);
    acc.finish(h, w, ch, eps)
}

/// `V = w0 / (w0 + w1)`, or 0.5 where the combined mass is below `eps`.
pub fn default_visibility(w0: &WeightMap, w1: &WeightMap, eps: f64) -> Result<VisibilityMap> {
    check_dims("default_visibility", w0.dims(), w1.dims())?;
    let data = w0
        .data
        .iter()
        .zip(&w1.data)
        .map(|(&a, &b)| {
            let s = a + b;
            if s >= eps {
                (a / s).clamp(0.0, 1.0)
            } else {
                0.5
            }
        })
        .collect();
    VisibilityMap::new(w0.height, w0.width, data)
}

/// Blend of the two splats plus everything needed to inspect it.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub frame: Frame,
    pub splat0: SplatResult,
    pub splat1: SplatResult,
    /// Pixels where both splats were holes and the backward-warp fallback was used.
    pub fallback: Mask,
}

/// `V ⊙ g(I0, f0t) + (1 − V) ⊙ g(I1, f1t)` with explicit hole handling.
pub fn synthesize(
    i0: &Frame,
    i1: &Frame,
    f0t: &FlowField,
    f1t: &FlowField,
    v: &VisibilityMap,
) -> Result<Frame> {
    let s0 = forward_warp(i0, f0t)?;
    let s1 = forward_warp(i1, f1t)?;
    Ok(blend_splats(i0, f0t, s0, s1, v)?.frame)
}

/// Synthesis with visibility taken from the splat weights.
pub fn synthesize_default(i0: &Frame, i1: &Frame, f0t: &FlowField, f1t: &FlowField) -> Result<Synthesis> {
    let s0 = forward_warp(i0, f0t)?;
    let s1 = forward_warp(i1, f1t)?;
    let v = default_visibility(&s0.weight, &s1.weight, DEFAULT_WEIGHT_EPSILON)?;
    blend_splats(i0, f0t, s0, s1, &v)
}

/// Blends precomputed splats of `I0` (by `f0t`) and `I1`.
///
/// Where exactly one side is a hole the other side is taken as is; where both
/// are holes the pixel is filled by backward warping `I0` with `-f0t`.
pub fn blend_splats(
    i0: &Frame,
    f0t: &FlowField,
    splat0: SplatResult,
    splat1: SplatResult,
    v: &VisibilityMap,
) -> Result<Synthesis> {
    let dims = i0.dims();
    check_dims("synthesize: flow 0->t", dims, f0t.dims())?;
    check_dims("synthesize: splat 0", dims, splat0.image.dims())?;
    check_dims("synthesize: splat 1", dims, splat1.image.dims())?;
    check_dims("synthesize: visibility", dims, v.dims())?;
    if splat0.image.channels() != splat1.image.channels() || splat0.image.channels() != i0.channels() {
        return Err(Error::DimensionMismatch {
            what: "synthesize: channels",
            expected: i0.channels().to_string(),
            actual: splat1.image.channels().to_string(),
        });
    }
    let (h, w, ch) = (i0.height(), i0.width(), i0.channels());
    let a = splat0.image.data();
    let b = splat1.image.data();
    let mut data = Vec::with_capacity(h * w * ch);
    let mut fallback = vec![false; h * w];
    let mut needs_fallback = false;
    for (i, flag) in fallback.iter_mut().enumerate() {
        let (hole0, hole1) = (splat0.holes.data()[i], splat1.holes.data()[i]);
        let px = i * ch..(i + 1) * ch;
        match (hole0, hole1) {
            (false, false) => {
                let vis = v.data()[i];
                data.extend(
                    a[px.clone()]
                        .iter()
                        .zip(&b[px])
                        .map(|(&x, &y)| (vis * x + (1.0 - vis) * y).clamp(0.0, 1.0)),
                );
            }
            (false, true) => data.extend_from_slice(&a[px]),
            (true, false) => data.extend_from_slice(&b[px]),
            (true, true) => {
                *flag = true;
                needs_fallback = true;
                data.extend(std::iter::repeat_n(0.0, ch));
            }
        }
    }
    if needs_fallback {
        let back = backward_warp(i0, &f0t.negated())?;
        for (i, _) in fallback.iter().enumerate().filter(|(_, &f)| f) {
            data[i * ch..(i + 1) * ch].copy_from_slice(&back.data()[i * ch..(i + 1) * ch]);
        }
    }
    Ok(Synthesis {
        frame: Frame::from_raw_unchecked(h, w, ch, data),
        splat0,
        splat1,
        fallback: Mask::new(h, w, fallback)?,
    })
}
