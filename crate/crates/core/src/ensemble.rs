//! Staged region-by-region interpolation.
//!
//! The frame is split into high/mid/low predicted-error regions and processed
//! in that order. Stage `j` hands the current flow pair to a [`FlowRefiner`],
//! adds the returned residuals on its own region (and, scaled by
//! `refined_gain`, on the regions earlier stages already refined), synthesizes
//! a full frame from the updated flows and keeps it for its region. Refiners
//! can pass a [`FeatureBundle`] to the next stage.
//!
//! [`post_process`] recomputes the masks from the refined flows and runs a
//! second three-stage pass of [`PixelRefiner`]s over the assembled frame.

use std::collections::BTreeMap;

use crate::error::{check_dims, Error, Result};
use crate::metrics::{analyze, ErrorAnalysis, MetricConfig};
use crate::types::{FlowField, Frame, Mask, Region, TimeStep, VisibilityMap};
use crate::warp::{blend_splats, default_visibility, forward_warp, scale_flow, DEFAULT_WEIGHT_EPSILON};

/// Dense named array passed between stages.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Opaque features a refiner hands to the next stage.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureBundle(BTreeMap<String, Tensor>);

impl FeatureBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.0.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }
}

pub struct FlowStageInput<'a> {
    pub stage: usize,
    pub region: Region,
    pub i0: &'a Frame,
    pub i1: &'a Frame,
    pub flow_0t: &'a FlowField,
    pub flow_1t: &'a FlowField,
    /// Pixels first processed at this stage.
    pub region_mask: &'a Mask,
    /// Pixels refined by earlier stages.
    pub refined_mask: &'a Mask,
    pub features: &'a FeatureBundle,
}

#[derive(Debug, Clone)]
pub struct FlowStageOutput {
    pub residual_0t: FlowField,
    pub residual_1t: FlowField,
    /// `None` falls back to the splat-weight visibility.
    pub visibility: Option<VisibilityMap>,
    pub features: FeatureBundle,
}

/// Produces flow residuals (and optionally a visibility map) for one stage.
pub trait FlowRefiner: Send + Sync {
    fn name(&self) -> &str;
    fn refine(&self, input: &FlowStageInput) -> Result<FlowStageOutput>;
}

pub struct PixelStageInput<'a> {
    pub stage: usize,
    pub region: Region,
    pub i0: &'a Frame,
    pub i1: &'a Frame,
    /// `I0` and `I1` splatted with the refined flows.
    pub warped_0: &'a Frame,
    pub warped_1: &'a Frame,
    pub current: &'a Frame,
    pub region_mask: &'a Mask,
    pub features: &'a FeatureBundle,
}

#[derive(Debug, Clone)]
pub struct PixelStageOutput {
    pub frame: Frame,
    pub features: FeatureBundle,
}

/// Refines the interpolated frame itself during post-processing.
pub trait PixelRefiner: Send + Sync {
    fn name(&self) -> &str;
    fn refine(&self, input: &PixelStageInput) -> Result<PixelStageOutput>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleConfig {
    pub metrics: MetricConfig,
    /// Fraction of a later stage's residual applied to already-refined pixels.
    pub refined_gain: f64,
    pub weight_epsilon: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            metrics: MetricConfig::default(),
            refined_gain: 0.0,
            weight_epsilon: DEFAULT_WEIGHT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageTrace {
    pub stage: usize,
    pub region: Region,
    /// Flows after this stage's update (full field).
    pub flow_0t: FlowField,
    pub flow_1t: FlowField,
    pub visibility: VisibilityMap,
    /// Full-frame synthesis from this stage's flows; used on `region`.
    pub frame: Frame,
    /// Union of the regions processed up to this stage.
    pub refined_mask: Mask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelStageTrace {
    pub stage: usize,
    pub region: Region,
    pub frame: Frame,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostTrace {
    /// Error prediction recomputed from the refined flows.
    pub analysis: ErrorAnalysis,
    pub stages: Vec<PixelStageTrace>,
    pub frame: Frame,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleTrace {
    pub t: TimeStep,
    /// Linearly scaled input flows.
    pub flow_0t: FlowField,
    pub flow_1t: FlowField,
    pub analysis: ErrorAnalysis,
    pub stages: Vec<StageTrace>,
    pub features: FeatureBundle,
    /// Frame assembled from the per-region syntheses.
    pub frame: Frame,
    pub post: Option<PostTrace>,
}

impl EnsembleTrace {
    /// Post-processed frame when available, otherwise the assembled frame.
    pub fn output(&self) -> &Frame {
        self.post.as_ref().map_or(&self.frame, |p| &p.frame)
    }

    /// Refined flows after the last stage.
    pub fn refined_flows(&self) -> (&FlowField, &FlowField) {
        let last = self.stages.last().expect("trace has three stages");
        (&last.flow_0t, &last.flow_1t)
    }
}

fn refiner_error(stage: usize, name: &str, e: Error) -> Error {
    match e {
        Error::Refiner { .. } => e,
        other => Error::Refiner {
            stage,
            name: name.to_string(),
            message: other.to_string(),
        },
    }
}

fn contract(stage: usize, name: &str, message: String) -> Error {
    Error::Refiner {
        stage,
        name: name.to_string(),
        message,
    }
}

fn check_inputs(i0: &Frame, i1: &Frame, f01: &FlowField, f10: &FlowField) -> Result<()> {
    check_dims("ensemble: frame 1", i0.dims(), i1.dims())?;
    check_dims("ensemble: flow 0->1", i0.dims(), f01.dims())?;
    check_dims("ensemble: flow 1->0", i0.dims(), f10.dims())?;
    if i0.channels() != i1.channels() {
        return Err(Error::DimensionMismatch {
            what: "ensemble: channels",
            expected: i0.channels().to_string(),
            actual: i1.channels().to_string(),
        });
    }
    Ok(())
}

fn apply_residual(
    flow: &FlowField,
    residual: &FlowField,
    region: &Mask,
    refined: &Mask,
    gain: f64,
) -> Result<FlowField> {
    let mut data = flow.data().to_vec();
    for i in 0..region.data().len() {
        let k = if region.data()[i] {
            1.0
        } else if gain != 0.0 && refined.data()[i] {
            gain
        } else {
            continue;
        };
        data[2 * i] += k * residual.data()[2 * i];
        data[2 * i + 1] += k * residual.data()[2 * i + 1];
    }
    FlowField::new(flow.height(), flow.width(), data)
}

/// Copies the pixels of `src` selected by `mask` into `dst`.
fn assign_masked(dst: &mut [f64], src: &Frame, mask: &Mask) {
    let ch = src.channels();
    for (i, _) in mask.data().iter().enumerate().filter(|(_, &m)| m) {
        dst[i * ch..(i + 1) * ch].copy_from_slice(&src.data()[i * ch..(i + 1) * ch]);
    }
}

/// Runs the three flow-refinement stages (high, mid, low) and assembles the
/// interpolated frame at time `t`.
pub fn run_ensemble(
    i0: &Frame,
    i1: &Frame,
    f01: &FlowField,
    f10: &FlowField,
    t: TimeStep,
    refiners: [&dyn FlowRefiner; 3],
    cfg: &EnsembleConfig,
) -> Result<EnsembleTrace> {
    check_inputs(i0, i1, f01, f10)?;
    let flow_0t = scale_flow(f01, t);
    let flow_1t = scale_flow(f10, t.complement());
    let analysis = analyze(i0, i1, f01, f10, &flow_0t, &flow_1t, &cfg.metrics)?;
    let (h, w) = i0.dims();

    let mut cur0 = flow_0t.clone();
    let mut cur1 = flow_1t.clone();
    let mut refined = Mask::filled(h, w, false)?;
    let mut features = FeatureBundle::new();
    let mut stages = Vec::with_capacity(3);
    let mut assembled = vec![0.0; h * w * i0.channels()];

    for (region, refiner) in Region::ALL.into_iter().zip(refiners) {
        let stage = region.stage();
        let name = refiner.name();
        let region_mask = analysis.masks.get(region);
        let out = refiner
            .refine(&FlowStageInput {
                stage,
                region,
                i0,
                i1,
                flow_0t: &cur0,
                flow_1t: &cur1,
                region_mask,
                refined_mask: &refined,
                features: &features,
            })
            .map_err(|e| refiner_error(stage, name, e))?;
        for (what, d) in [("residual 0->t", out.residual_0t.dims()), ("residual 1->t", out.residual_1t.dims())] {
            if d != (h, w) {
                return Err(contract(stage, name, format!("{what} has dims {d:?}, expected {:?}", (h, w))));
            }
        }
        if let Some(v) = &out.visibility {
            if v.dims() != (h, w) {
                return Err(contract(stage, name, format!("visibility has dims {:?}", v.dims())));
            }
        }
        cur0 = apply_residual(&cur0, &out.residual_0t, region_mask, &refined, cfg.refined_gain)
            .map_err(|e| refiner_error(stage, name, e))?;
        cur1 = apply_residual(&cur1, &out.residual_1t, region_mask, &refined, cfg.refined_gain)
            .map_err(|e| refiner_error(stage, name, e))?;
        refined = refined.union(region_mask)?;
        features = out.features;

        let splat0 = forward_warp(i0, &cur0)?;
        let splat1 = forward_warp(i1, &cur1)?;
        let visibility = match out.visibility {
            Some(v) => v,
            None => default_visibility(&splat0.weight, &splat1.weight, cfg.weight_epsilon)?,
        };
        let synthesis = blend_splats(i0, &cur0, splat0, splat1, &visibility)?;
        assign_masked(&mut assembled, &synthesis.frame, region_mask);
        stages.push(StageTrace {
            stage,
            region,
            flow_0t: cur0.clone(),
            flow_1t: cur1.clone(),
            visibility,
            frame: synthesis.frame,
            refined_mask: refined.clone(),
        });
    }

    Ok(EnsembleTrace {
        t,
        flow_0t,
        flow_1t,
        analysis,
        stages,
        features,
        frame: Frame::new(h, w, i0.channels(), assembled)?,
        post: None,
    })
}

/// Pixel-level refinement pass over a completed trace.
///
/// The error masks are recomputed with the refined flows to time `t` (the
/// photometric term keeps the full-interval input flows), then each stage's
/// refiner rewrites its region of the current frame.
pub fn post_process(
    trace: &EnsembleTrace,
    i0: &Frame,
    i1: &Frame,
    f01: &FlowField,
    f10: &FlowField,
    refiners: [&dyn PixelRefiner; 3],
    cfg: &EnsembleConfig,
) -> Result<EnsembleTrace> {
    check_inputs(i0, i1, f01, f10)?;
    check_dims("post_process: trace", i0.dims(), trace.frame.dims())?;
    let (r0, r1) = trace.refined_flows();
    let analysis = analyze(i0, i1, f01, f10, r0, r1, &cfg.metrics)?;
    let warped_0 = forward_warp(i0, r0)?.image;
    let warped_1 = forward_warp(i1, r1)?.image;

    let (h, w, ch) = (i0.height(), i0.width(), i0.channels());
    let mut current = trace.frame.clone();
    let mut features = trace.features.clone();
    let mut stages = Vec::with_capacity(3);
    for (region, refiner) in Region::ALL.into_iter().zip(refiners) {
        let stage = region.stage();
        let name = refiner.name();
        let region_mask = analysis.masks.get(region);
        let out = refiner
            .refine(&PixelStageInput {
                stage,
                region,
                i0,
                i1,
                warped_0: &warped_0,
                warped_1: &warped_1,
                current: &current,
                region_mask,
                features: &features,
            })
            .map_err(|e| refiner_error(stage, name, e))?;
        if out.frame.dims() != (h, w) || out.frame.channels() != ch {
            return Err(contract(stage, name, "refined frame has the wrong shape".into()));
        }
        let mut next = current.clone().into_data();
        assign_masked(&mut next, &out.frame, region_mask);
        current = Frame::new(h, w, ch, next)?;
        features = out.features;
        stages.push(PixelStageTrace {
            stage,
            region,
            frame: out.frame,
        });
    }

    let mut result = trace.clone();
    result.post = Some(PostTrace {
        analysis,
        stages,
        frame: current,
    });
    Ok(result)
}

/// Zero residuals; visibility from splat weights; features passed through.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityFlowRefiner;

impl FlowRefiner for IdentityFlowRefiner {
    fn name(&self) -> &str {
        "identity"
    }

    fn refine(&self, input: &FlowStageInput) -> Result<FlowStageOutput> {
        let (h, w) = input.flow_0t.dims();
        Ok(FlowStageOutput {
            residual_0t: FlowField::zeros(h, w)?,
            residual_1t: FlowField::zeros(h, w)?,
            visibility: None,
            features: input.features.clone(),
        })
    }
}

/// Pulls each flow component towards its 3×3 median (clamp-to-edge) inside
/// the stage's region.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlowMedianRefiner;

fn median3x3_residual(flow: &FlowField, region: &Mask) -> Result<FlowField> {
    let (h, w) = flow.dims();
    let mut data = vec![0.0; h * w * 2];
    let mut window = [0.0f64; 9];
    for y in 0..h {
        for x in 0..w {
            if !region.get(y, x) {
                continue;
            }
            for comp in 0..2 {
                let mut k = 0;
                for dy in -1isize..=1 {
                    let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    for dx in -1isize..=1 {
                        let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                        window[k] = flow.data()[(sy * w + sx) * 2 + comp];
                        k += 1;
                    }
                }
                window.sort_unstable_by(f64::total_cmp);
                let i = (y * w + x) * 2 + comp;
                data[i] = window[4] - flow.data()[i];
            }
        }
    }
    FlowField::new(h, w, data)
}

impl FlowRefiner for FlowMedianRefiner {
    fn name(&self) -> &str {
        "flow-median"
    }

    fn refine(&self, input: &FlowStageInput) -> Result<FlowStageOutput> {
        Ok(FlowStageOutput {
            residual_0t: median3x3_residual(input.flow_0t, input.region_mask)?,
            residual_1t: median3x3_residual(input.flow_1t, input.region_mask)?,
            visibility: None,
            features: input.features.clone(),
        })
    }
}

/// Replays residuals computed elsewhere, e.g. by a trained network, one pair
/// per stage.
#[derive(Debug, Clone)]
pub struct PrecomputedFlowRefiner {
    name: String,
    residuals: Vec<(FlowField, FlowField)>,
}

impl PrecomputedFlowRefiner {
    pub fn new(name: impl Into<String>, residuals: Vec<(FlowField, FlowField)>) -> Result<Self> {
        if residuals.len() != 3 {
            return Err(Error::InvalidArgument(format!(
                "need one residual pair per stage, got {}",
                residuals.len()
            )));
        }
        Ok(Self {
            name: name.into(),
            residuals,
        })
    }
}

impl FlowRefiner for PrecomputedFlowRefiner {
    fn name(&self) -> &str {
        &self.name
    }

    fn refine(&self, input: &FlowStageInput) -> Result<FlowStageOutput> {
        let (r0, r1) = &self.residuals[input.stage - 1];
        Ok(FlowStageOutput {
            residual_0t: r0.clone(),
            residual_1t: r1.clone(),
            visibility: None,
            features: input.features.clone(),
        })
    }
}

/// Leaves the frame unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityPixelRefiner;

impl PixelRefiner for IdentityPixelRefiner {
    fn name(&self) -> &str {
        "identity"
    }

    fn refine(&self, input: &PixelStageInput) -> Result<PixelStageOutput> {
        Ok(PixelStageOutput {
            frame: input.current.clone(),
            features: input.features.clone(),
        })
    }
}

/// Blends region pixels with their 3×3 Gaussian (σ = 1) average:
/// `(1 − β)·I + β·G(I)`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianPixelRefiner {
    pub beta: f64,
}

impl Default for GaussianPixelRefiner {
    fn default() -> Self {
        Self { beta: 0.5 }
    }
}

fn gaussian3x3_weights() -> [f64; 9] {
    let mut k = [0.0; 9];
    for (i, v) in k.iter_mut().enumerate() {
        let dy = (i / 3) as f64 - 1.0;
        let dx = (i % 3) as f64 - 1.0;
        *v = (-(dx * dx + dy * dy) / 2.0).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

impl PixelRefiner for GaussianPixelRefiner {
    fn name(&self) -> &str {
        "pixel-gaussian"
    }

    fn refine(&self, input: &PixelStageInput) -> Result<PixelStageOutput> {
        let cur = input.current;
        let (h, w, ch) = (cur.height(), cur.width(), cur.channels());
        let k = gaussian3x3_weights();
        let mut data = cur.data().to_vec();
        for y in 0..h {
            for x in 0..w {
                if !input.region_mask.get(y, x) {
                    continue;
                }
                for c in 0..ch {
                    let mut acc = 0.0;
                    for (i, wgt) in k.iter().enumerate() {
                        let sy = (y as isize + i as isize / 3 - 1).clamp(0, h as isize - 1) as usize;
                        let sx = (x as isize + i as isize % 3 - 1).clamp(0, w as isize - 1) as usize;
                        acc += wgt * cur.get(sy, sx, c);
                    }
                    let v = &mut data[(y * w + x) * ch + c];
                    *v = ((1.0 - self.beta) * *v + self.beta * acc).clamp(0.0, 1.0);
                }
            }
        }
        Ok(PixelStageOutput {
            frame: Frame::new(h, w, ch, data)?,
            features: input.features.clone(),
        })
    }
}

/// Named built-in refiners.
pub struct RefinerCatalog {
    flow: Vec<Box<dyn FlowRefiner>>,
    pixel: Vec<Box<dyn PixelRefiner>>,
}

impl RefinerCatalog {
    pub fn flow(&self, name: &str) -> Result<&dyn FlowRefiner> {
        self.flow
            .iter()
            .find(|r| r.name() == name)
            .map(|r| r.as_ref())
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown flow refiner `{name}` (available: {})",
                    self.flow_names().join(", ")
                ))
            })
    }

    pub fn pixel(&self, name: &str) -> Result<&dyn PixelRefiner> {
        self.pixel
            .iter()
            .find(|r| r.name() == name)
            .map(|r| r.as_ref())
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown pixel refiner `{name}` (available: {})",
                    self.pixel_names().join(", ")
                ))
            })
    }

    pub fn flow_names(&self) -> Vec<&str> {
        self.flow.iter().map(|r| r.name()).collect()
    }

    pub fn pixel_names(&self) -> Vec<&str> {
        self.pixel.iter().map(|r| r.name()).collect()
    }
}

pub fn builtin_refiners() -> RefinerCatalog {
    RefinerCatalog {
        flow: vec![Box::new(IdentityFlowRefiner), Box::new(FlowMedianRefiner)],
        pixel: vec![Box::new(IdentityPixelRefiner), Box::new(GaussianPixelRefiner::default())],
    }
}
