//! Region-normalized content and feature losses for staged predictions.
//!
//! Each stage contributes one term per available region. Content terms are
//! the mean absolute error over the region's pixels and all channels, so a
//! small high-error region weighs as much as a large low-error one. Feature
//! terms are the Euclidean norm of the masked feature difference.

use std::collections::BTreeSet;

use crate::error::{check_dims, Error, Result};
use crate::types::{ErrorMasks, Frame, Mask, Region};

/// One stage's output and the regions its loss covers.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePrediction {
    stage: usize,
    frame: Frame,
    regions: BTreeSet<Region>,
}

impl StagePrediction {
    /// Stage 1 may cover only `High`, stage 2 only `High`/`Mid`, stage 3 all three.
    pub fn new(stage: usize, frame: Frame, regions: impl IntoIterator<Item = Region>) -> Result<Self> {
        let regions: BTreeSet<Region> = regions.into_iter().collect();
        if regions.is_empty() {
            return Err(Error::InvalidArgument("a stage needs at least one region".into()));
        }
        let ok = match stage {
            1 => regions.iter().all(|&r| r == Region::High),
            2 => regions.iter().all(|&r| r != Region::Low),
            3 => regions.len() == 3,
            _ => false,
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "stage {stage} cannot cover regions {regions:?}"
            )));
        }
        Ok(Self { stage, frame, regions })
    }

    /// The regions processed up to and including `stage` (H, then H+M, then all).
    pub fn cumulative(stage: usize, frame: Frame) -> Result<Self> {
        let n = stage.clamp(1, 3);
        Self::new(stage, frame, Region::ALL[..n].iter().copied())
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn regions(&self) -> impl Iterator<Item = Region> + '_ {
        self.regions.iter().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerm {
    pub stage: usize,
    pub region: Region,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub terms: Vec<LossTerm>,
}

fn check_inputs(stages: &[StagePrediction], gt: &Frame, masks: &ErrorMasks) -> Result<()> {
    check_dims("loss: masks", gt.dims(), masks.dims())?;
    for s in stages {
        check_dims("loss: stage frame", gt.dims(), s.frame.dims())?;
        if s.frame.channels() != gt.channels() {
            return Err(Error::DimensionMismatch {
                what: "loss: channels",
                expected: gt.channels().to_string(),
                actual: s.frame.channels().to_string(),
            });
        }
    }
    Ok(())
}

/// Masked per-pixel per-channel mean absolute error; 0 for an empty mask.
fn masked_l1_mean(pred: &Frame, gt: &Frame, mask: &Mask) -> f64 {
    let ch = pred.channels();
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (i, _) in mask.data().iter().enumerate().filter(|(_, &m)| m) {
        count += 1;
        for c in 0..ch {
            sum += (pred.data()[i * ch + c] - gt.data()[i * ch + c]).abs();
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / (count * ch) as f64
    }
}

/// Error-controlled content loss: per stage, per available region, the masked
/// mean absolute error.
pub fn ecc_loss(stages: &[StagePrediction], gt: &Frame, masks: &ErrorMasks) -> Result<LossBreakdown> {
    check_inputs(stages, gt, masks)?;
    let mut terms = Vec::new();
    for s in stages {
        for r in s.regions() {
            terms.push(LossTerm {
                stage: s.stage,
                region: r,
                value: masked_l1_mean(&s.frame, gt, masks.get(r)),
            });
        }
    }
    Ok(LossBreakdown {
        total: terms.iter().map(|t| t.value).sum(),
        terms,
    })
}

/// Content loss with each stage's available masks merged into one.
pub fn ecc_merged_loss(stages: &[StagePrediction], gt: &Frame, masks: &ErrorMasks) -> Result<f64> {
    check_inputs(stages, gt, masks)?;
    let mut total = 0.0;
    for s in stages {
        let mut regions = s.regions();
        let first = regions.next().expect("stage has a region");
        let merged = regions.try_fold(masks.get(first).clone(), |acc, r| acc.union(masks.get(r)))?;
        total += masked_l1_mean(&s.frame, gt, &merged);
    }
    Ok(total)
}

/// A multi-channel feature image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

/// Deterministic map from a frame to a feature image whose size is
/// `output_dims` of the frame size.
pub trait FeatureExtractor: Send + Sync {
    fn name(&self) -> &str;

    fn downsample_factor(&self) -> usize {
        1
    }

    fn output_dims(&self, height: usize, width: usize) -> (usize, usize) {
        let f = self.downsample_factor().max(1);
        ((height / f).max(1), (width / f).max(1))
    }

    fn extract(&self, frame: &Frame) -> Result<FeatureMap>;
}

/// Features are the frame itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn name(&self) -> &str {
        "identity"
    }

    fn extract(&self, frame: &Frame) -> Result<FeatureMap> {
        Ok(FeatureMap {
            height: frame.height(),
            width: frame.width(),
            channels: frame.channels(),
            data: frame.data().to_vec(),
        })
    }
}

/// Fixed bank of six 2-D kernels applied to every input channel with
/// clamp-to-edge borders, stride 1.
#[derive(Debug, Clone)]
pub struct FilterBank {
    kernels: Vec<Kernel>,
}

#[derive(Debug, Clone)]
struct Kernel {
    radius: usize,
    weights: Vec<f64>,
}

impl Kernel {
    fn new(radius: usize, weights: Vec<f64>) -> Self {
        debug_assert_eq!(weights.len(), (2 * radius + 1).pow(2));
        Self { radius, weights }
    }

    fn gaussian(radius: usize, sigma: f64) -> Self {
        let r = radius as isize;
        let mut w: Vec<f64> = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp()))
            .collect();
        let sum: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= sum);
        Self::new(radius, w)
    }
}

/// Channel order per input channel: identity, 3×3 Gaussian (σ=1), Sobel-x,
/// Sobel-y, 3×3 Laplacian, 5×5 Gaussian (σ=2).
pub fn default_feature_extractor() -> FilterBank {
    let mut identity = vec![0.0; 9];
    identity[4] = 1.0;
    FilterBank {
        kernels: vec![
            Kernel::new(1, identity),
            Kernel::gaussian(1, 1.0),
            Kernel::new(1, vec![-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0]),
            Kernel::new(1, vec![-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0]),
            Kernel::new(1, vec![0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0]),
            Kernel::gaussian(2, 2.0),
        ],
    }
}

impl FilterBank {
    pub fn kernels_per_channel(&self) -> usize {
        self.kernels.len()
    }
}

impl FeatureExtractor for FilterBank {
    fn name(&self) -> &str {
        "filter-bank"
    }

    fn extract(&self, frame: &Frame) -> Result<FeatureMap> {
        let (h, w, ch) = (frame.height(), frame.width(), frame.channels());
        let nk = self.kernels.len();
        let out_ch = ch * nk;
        let mut data = vec![0.0; h * w * out_ch];
        let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        for y in 0..h {
            for x in 0..w {
                for c in 0..ch {
                    for (k, kernel) in self.kernels.iter().enumerate() {
                        let r = kernel.radius as isize;
                        let side = 2 * kernel.radius + 1;
                        let mut acc = 0.0;
                        for dy in -r..=r {
                            let sy = clamp(y as isize + dy, h);
                            for dx in -r..=r {
                                let wgt = kernel.weights[((dy + r) as usize) * side + (dx + r) as usize];
                                if wgt != 0.0 {
                                    acc += wgt * frame.get(sy, clamp(x as isize + dx, w), c);
                                }
                            }
                        }
                        data[(y * w + x) * out_ch + c * nk + k] = acc;
                    }
                }
            }
        }
        Ok(FeatureMap {
            height: h,
            width: w,
            channels: out_ch,
            data,
        })
    }
}

/// Nearest-neighbour mask resampling to `(h, w)` by sampling at `(y·f, x·f)`.
pub fn downsample_mask(mask: &Mask, factor: usize, h: usize, w: usize) -> Result<Mask> {
    let f = factor.max(1);
    Mask::from_fn(h, w, |y, x| {
        mask.get((y * f).min(mask.height() - 1), (x * f).min(mask.width() - 1))
    })
}

fn extract_checked(phi: &dyn FeatureExtractor, frame: &Frame) -> Result<FeatureMap> {
    let fm = phi.extract(frame)?;
    let (eh, ew) = phi.output_dims(frame.height(), frame.width());
    if (fm.height, fm.width) != (eh, ew) || fm.data.len() != fm.height * fm.width * fm.channels {
        return Err(Error::DimensionMismatch {
            what: "feature extractor output",
            expected: format!("{eh}x{ew}"),
            actual: format!("{}x{} ({} values)", fm.height, fm.width, fm.data.len()),
        });
    }
    Ok(fm)
}

/// Error-controlled feature loss: Euclidean norm of the masked feature
/// difference per stage and available region, summed.
pub fn ecp_loss(
    stages: &[StagePrediction],
    gt: &Frame,
    masks: &ErrorMasks,
    phi: &dyn FeatureExtractor,
) -> Result<LossBreakdown> {
    check_inputs(stages, gt, masks)?;
    let gt_feat = extract_checked(phi, gt)?;
    let (fh, fw) = (gt_feat.height, gt_feat.width);
    let small = |r: Region| downsample_mask(masks.get(r), phi.downsample_factor(), fh, fw);
    let small_masks = [small(Region::High)?, small(Region::Mid)?, small(Region::Low)?];
    let mut terms = Vec::new();
    for s in stages {
        let feat = extract_checked(phi, &s.frame)?;
        if (feat.height, feat.width, feat.channels) != (fh, fw, gt_feat.channels) {
            return Err(Error::DimensionMismatch {
                what: "feature shapes",
                expected: format!("{fh}x{fw}x{}", gt_feat.channels),
                actual: format!("{}x{}x{}", feat.height, feat.width, feat.channels),
            });
        }
        let ch = feat.channels;
        for r in s.regions() {
            let mask = &small_masks[r.stage() - 1];
            let mut sq = 0.0f64;
            for (i, _) in mask.data().iter().enumerate().filter(|(_, &m)| m) {
                for c in 0..ch {
                    let d = feat.data[i * ch + c] - gt_feat.data[i * ch + c];
                    sq += d * d;
                }
            }
            terms.push(LossTerm {
                stage: s.stage,
                region: r,
                value: sq.sqrt(),
            });
        }
    }
    Ok(LossBreakdown {
        total: terms.iter().map(|t| t.value).sum(),
        terms,
    })
}
