//! Flow-based interpolation-error prediction and error-level segmentation.
//!
//! Three per-pixel metrics are derived from a flow pair: motion size (flow
//! magnitude), motion variation (deviation of each flow component from its
//! local box mean, max over components) and photometric consistency (l1
//! residual between a frame and the other frame backward-warped onto it).
//! Each metric is taken as the max over both flow directions, normalized by
//! its per-frame maximum, and merged by a per-pixel max into `E_tot`, which is
//! thresholded at its mean and at the midpoint of the remaining interval.

use crate::error::{check_dims, Error, Result};
use crate::types::{elementwise_max, ErrorMap, ErrorMasks, FlowField, Frame, Mask, TimeStep};
use crate::warp::{backward_warp, scale_flow};

pub const DEFAULT_VARIATION_RADIUS: usize = 7;
pub const DEFAULT_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricConfig {
    /// Half-width of the box window used for the local flow mean.
    pub variation_radius: usize,
    /// Per-frame maxima below this normalize to an all-zero map.
    pub epsilon: f64,
}

impl MetricConfig {
    pub fn new(variation_radius: usize, epsilon: f64) -> Result<Self> {
        if variation_radius < 1 {
            return Err(Error::InvalidArgument("variation radius must be >= 1".into()));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self {
            variation_radius,
            epsilon,
        })
    }
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            variation_radius: DEFAULT_VARIATION_RADIUS,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// Per-frame maxima used to normalize each metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationScalars {
    pub gamma_ms: f64,
    pub gamma_mv: f64,
    pub gamma_pc: f64,
}

/// Per-pixel flow magnitude `sqrt(u² + v²)`.
pub fn motion_size(flow: &FlowField) -> ErrorMap {
    let data = flow
        .data()
        .chunks_exact(2)
        .map(|uv| uv[0].hypot(uv[1]))
        .collect();
    ErrorMap::new(flow.height(), flow.width(), data, false).expect("magnitudes are finite and non-negative")
}

/// Box means of one flow component over `(2r+1)²` windows clipped to the frame.
///
/// Values are shifted by the first sample before summation so a constant
/// component produces exact zeros downstream.
fn component_deviation(flow: &FlowField, comp: usize, radius: usize) -> Vec<f64> {
    let (h, w) = flow.dims();
    let reference = flow.data()[comp];
    let value = |y: usize, x: usize| flow.data()[(y * w + x) * 2 + comp] - reference;
    // summed-area table with a zero border row/column
    let stride = w + 1;
    let mut sat = vec![0.0f64; (h + 1) * stride];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += value(y, x);
            sat[(y + 1) * stride + x + 1] = sat[y * stride + x + 1] + row;
        }
    }
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let y0 = y.saturating_sub(radius);
        let y1 = (y + radius + 1).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(radius);
            let x1 = (x + radius + 1).min(w);
            let sum = sat[y1 * stride + x1] - sat[y0 * stride + x1] - sat[y1 * stride + x0]
                + sat[y0 * stride + x0];
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            out.push((value(y, x) - sum / n).abs());
        }
    }
    out
}

/// Per-pixel absolute deviation of each flow component from its local box
/// mean; the larger of the two components.
pub fn motion_variation(flow: &FlowField, cfg: &MetricConfig) -> ErrorMap {
    let dx = component_deviation(flow, 0, cfg.variation_radius);
    let dy = component_deviation(flow, 1, cfg.variation_radius);
    let data = dx.iter().zip(&dy).map(|(&a, &b)| a.max(b)).collect();
    ErrorMap::new(flow.height(), flow.width(), data, false).expect("deviations are finite and non-negative")
}

/// `Σ_c |I0 − w(I1, f01)|` per pixel.
pub fn photometric_consistency(i0: &Frame, i1: &Frame, flow_0_to_1: &FlowField) -> Result<ErrorMap> {
    check_dims("photometric_consistency: frames", i0.dims(), i1.dims())?;
    check_dims("photometric_consistency: flow", i0.dims(), flow_0_to_1.dims())?;
    if i0.channels() != i1.channels() {
        return Err(Error::DimensionMismatch {
            what: "photometric_consistency: channels",
            expected: i0.channels().to_string(),
            actual: i1.channels().to_string(),
        });
    }
    let warped = backward_warp(i1, flow_0_to_1)?;
    let ch = i0.channels();
    let data = i0
        .data()
        .chunks_exact(ch)
        .zip(warped.data().chunks_exact(ch))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum())
        .collect();
    ErrorMap::new(i0.height(), i0.width(), data, false)
}

fn normalize(map: &ErrorMap, eps: f64) -> (ErrorMap, f64) {
    let gamma = map.max();
    let data = if gamma < eps {
        vec![0.0; map.data().len()]
    } else {
        map.data().iter().map(|&v| (v / gamma).min(1.0)).collect()
    };
    let out = ErrorMap::new(map.height(), map.width(), data, true).expect("normalized values lie in [0, 1]");
    (out, gamma)
}

/// Normalizes each metric by its own maximum and merges by per-pixel max.
pub fn merge_metrics(
    e_ms: &ErrorMap,
    e_mv: &ErrorMap,
    e_pc: &ErrorMap,
    eps: f64,
) -> Result<(ErrorMap, NormalizationScalars)> {
    check_dims("merge_metrics: e_mv", e_ms.dims(), e_mv.dims())?;
    check_dims("merge_metrics: e_pc", e_ms.dims(), e_pc.dims())?;
    let (n_ms, gamma_ms) = normalize(e_ms, eps);
    let (n_mv, gamma_mv) = normalize(e_mv, eps);
    let (n_pc, gamma_pc) = normalize(e_pc, eps);
    let tot = elementwise_max(&elementwise_max(&n_ms, &n_mv)?, &n_pc)?;
    Ok((
        tot,
        NormalizationScalars {
            gamma_ms,
            gamma_mv,
            gamma_pc,
        },
    ))
}

/// What to do with an all-zero error map, where the threshold rule puts every
/// pixel in the mid region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FlatMapPolicy {
    /// Apply the thresholds as written: every pixel is mid.
    #[default]
    Literal,
    /// Treat a flat zero map as all-low.
    AllLow,
}

/// Splits a normalized error map at `τ^M = mean` and `τ^H = (1 − τ^M)/2 + τ^M`.
pub fn threshold_masks(e_tot: &ErrorMap) -> Result<ErrorMasks> {
    threshold_masks_with(e_tot, FlatMapPolicy::Literal)
}

pub fn threshold_masks_with(e_tot: &ErrorMap, policy: FlatMapPolicy) -> Result<ErrorMasks> {
    if !e_tot.is_normalized() {
        return Err(Error::InvalidArgument("threshold_masks needs a normalized error map".into()));
    }
    let (h, w) = e_tot.dims();
    let tau_mid = e_tot.mean().clamp(0.0, 1.0);
    let tau_high = ((1.0 - tau_mid) / 2.0 + tau_mid).clamp(tau_mid, 1.0);
    if policy == FlatMapPolicy::AllLow && e_tot.data().iter().all(|&v| v == 0.0) {
        let masks = ErrorMasks::uniform(h, w, crate::types::Region::Low)?;
        return ErrorMasks::new(
            masks.high().clone(),
            masks.mid().clone(),
            masks.low().clone(),
            tau_high,
            tau_mid,
        );
    }
    let d = e_tot.data();
    let high = Mask::new(h, w, d.iter().map(|&v| v >= tau_high).collect())?;
    let mid = Mask::new(h, w, d.iter().map(|&v| v < tau_high && v >= tau_mid).collect())?;
    let low = Mask::new(h, w, d.iter().map(|&v| v < tau_mid).collect())?;
    ErrorMasks::new(high, mid, low, tau_high, tau_mid)
}

/// Combines one metric evaluated on the forward and backward flows.
pub fn bidirectional_metric(forward: &ErrorMap, backward: &ErrorMap) -> Result<ErrorMap> {
    elementwise_max(forward, backward)
}

/// All intermediate maps of one error prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorAnalysis {
    pub e_ms: ErrorMap,
    pub e_mv: ErrorMap,
    pub e_pc: ErrorMap,
    pub e_tot: ErrorMap,
    pub scalars: NormalizationScalars,
    pub masks: ErrorMasks,
}

/// Error prediction from a frame pair and its flows.
///
/// Motion size and variation are measured on the flows to time `t`
/// (`f0t`, `f1t`); photometric consistency uses the full-interval flows,
/// comparing `I0` with `w(I1, f01)` and `I1` with `w(I0, f10)`.
pub fn analyze(
    i0: &Frame,
    i1: &Frame,
    f01: &FlowField,
    f10: &FlowField,
    f0t: &FlowField,
    f1t: &FlowField,
    cfg: &MetricConfig,
) -> Result<ErrorAnalysis> {
    let dims = i0.dims();
    for (what, d) in [
        ("analyze: frame 1", i1.dims()),
        ("analyze: flow 0->1", f01.dims()),
        ("analyze: flow 1->0", f10.dims()),
        ("analyze: flow 0->t", f0t.dims()),
        ("analyze: flow 1->t", f1t.dims()),
    ] {
        check_dims(what, dims, d)?;
    }
    let e_ms = bidirectional_metric(&motion_size(f0t), &motion_size(f1t))?;
    let e_mv = bidirectional_metric(&motion_variation(f0t, cfg), &motion_variation(f1t, cfg))?;
    let e_pc = bidirectional_metric(
        &photometric_consistency(i0, i1, f01)?,
        &photometric_consistency(i1, i0, f10)?,
    )?;
    let (e_tot, scalars) = merge_metrics(&e_ms, &e_mv, &e_pc, cfg.epsilon)?;
    let masks = threshold_masks(&e_tot)?;
    Ok(ErrorAnalysis {
        e_ms,
        e_mv,
        e_pc,
        e_tot,
        scalars,
        masks,
    })
}

/// [`analyze`] with the flows to time `t` obtained by linear scaling.
pub fn analyze_at(
    i0: &Frame,
    i1: &Frame,
    f01: &FlowField,
    f10: &FlowField,
    t: TimeStep,
    cfg: &MetricConfig,
) -> Result<ErrorAnalysis> {
    let f0t = scale_flow(f01, t);
    let f1t = scale_flow(f10, t.complement());
    analyze(i0, i1, f01, f10, &f0t, &f1t, cfg)
}
