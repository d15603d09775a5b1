//! Full-frame and region-conditioned quality metrics.

use crate::error::{check_dims, Error, Result};
use crate::io::{Metric, ReportRecord, ReportRegion};
use crate::types::{ErrorMasks, FlowField, Frame, Mask, Region};

/// PSNR reported for a zero-error region.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const HISTOGRAM_BINS: usize = 64;
pub const HISTOGRAM_MAX: f64 = 0.25;

fn check_frames(pred: &Frame, gt: &Frame) -> Result<()> {
    check_dims("eval: frames", gt.dims(), pred.dims())?;
    if pred.channels() != gt.channels() {
        return Err(Error::DimensionMismatch {
            what: "eval: channels",
            expected: gt.channels().to_string(),
            actual: pred.channels().to_string(),
        });
    }
    Ok(())
}

/// Squared error averaged over channels, per pixel.
fn pixel_squared_errors(pred: &Frame, gt: &Frame) -> Vec<f64> {
    let ch = pred.channels();
    pred.data()
        .chunks_exact(ch)
        .zip(gt.data().chunks_exact(ch))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / ch as f64)
        .collect()
}

/// Mean squared error over the masked pixels and all channels.
pub fn masked_mse(pred: &Frame, gt: &Frame, mask: &Mask) -> Result<f64> {
    check_frames(pred, gt)?;
    check_dims("masked_mse: mask", gt.dims(), mask.dims())?;
    let ch = pred.channels();
    let (mut sum, mut n) = (0.0f64, 0usize);
    for (i, _) in mask.data().iter().enumerate().filter(|(_, &m)| m) {
        n += 1;
        for c in 0..ch {
            let d = pred.data()[i * ch + c] - gt.data()[i * ch + c];
            sum += d * d;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / (n * ch) as f64)
}

pub fn mse(pred: &Frame, gt: &Frame) -> Result<f64> {
    masked_mse(pred, gt, &Mask::filled(gt.height(), gt.width(), true)?)
}

/// `10 log10(1 / mse)` with peak 1, capped at [`PSNR_CAP`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

pub fn masked_psnr(pred: &Frame, gt: &Frame, mask: &Mask) -> Result<f64> {
    masked_mse(pred, gt, mask).map(psnr_from_mse)
}

pub fn psnr(pred: &Frame, gt: &Frame) -> Result<f64> {
    mse(pred, gt).map(psnr_from_mse)
}

fn luminance(f: &Frame) -> Vec<f64> {
    let ch = f.channels();
    f.data()
        .chunks_exact(ch)
        .map(|p| p.iter().sum::<f64>() / ch as f64)
        .collect()
}

fn gaussian_1d() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Local SSIM at every pixel whose 11×11 window lies inside the frame;
/// `None` elsewhere.
pub fn ssim_map(pred: &Frame, gt: &Frame) -> Result<Vec<Option<f64>>> {
    check_frames(pred, gt)?;
    let (h, w) = gt.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let x = luminance(pred);
    let y = luminance(gt);
    let g = gaussian_1d();
    let r = SSIM_WINDOW / 2;
    // five moment images, filtered horizontally then vertically (valid region only)
    let planes: [Vec<f64>; 5] = [
        x.clone(),
        y.clone(),
        x.iter().map(|v| v * v).collect(),
        y.iter().map(|v| v * v).collect(),
        x.iter().zip(&y).map(|(a, b)| a * b).collect(),
    ];
    let wv = w - 2 * r;
    let hv = h - 2 * r;
    let filtered: Vec<Vec<f64>> = planes
        .iter()
        .map(|p| {
            let mut horiz = vec![0.0; h * wv];
            for yy in 0..h {
                for xx in 0..wv {
                    horiz[yy * wv + xx] = (0..SSIM_WINDOW).map(|k| g[k] * p[yy * w + xx + k]).sum();
                }
            }
            let mut out = vec![0.0; hv * wv];
            for yy in 0..hv {
                for xx in 0..wv {
                    out[yy * wv + xx] = (0..SSIM_WINDOW).map(|k| g[k] * horiz[(yy + k) * wv + xx]).sum();
                }
            }
            out
        })
        .collect();
    let mut map = vec![None; h * w];
    for yy in 0..hv {
        for xx in 0..wv {
            let i = yy * wv + xx;
            let (mx, my) = (filtered[0][i], filtered[1][i]);
            let vx = filtered[2][i] - mx * mx;
            let vy = filtered[3][i] - my * my;
            let cxy = filtered[4][i] - mx * my;
            let s = ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
            map[(yy + r) * w + xx + r] = Some(s.clamp(-1.0, 1.0));
        }
    }
    Ok(map)
}

/// Mean local SSIM over all fully in-bounds windows.
pub fn ssim(pred: &Frame, gt: &Frame) -> Result<f64> {
    let mask = Mask::filled(gt.height(), gt.width(), true)?;
    masked_ssim(pred, gt, &mask)
}

/// Mean local SSIM over masked pixels whose window lies fully in bounds.
pub fn masked_ssim(pred: &Frame, gt: &Frame, mask: &Mask) -> Result<f64> {
    check_dims("masked_ssim: mask", gt.dims(), mask.dims())?;
    let map = ssim_map(pred, gt)?;
    mean_over_mask(&map, mask)
}

fn mean_over_mask(map: &[Option<f64>], mask: &Mask) -> Result<f64> {
    let (sum, n) = map
        .iter()
        .zip(mask.data())
        .filter_map(|(v, &m)| if m { *v } else { None })
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        Err(Error::EmptyMask)
    } else {
        Ok(sum / n as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionStats {
    pub region: ReportRegion,
    pub pixel_count: usize,
    pub mse: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    /// Per-pixel squared error counts over [`HISTOGRAM_BINS`] uniform bins on
    /// `[0, HISTOGRAM_MAX]`; larger values land in the last bin.
    pub histogram: Vec<u64>,
}

fn histogram_bin(v: f64) -> usize {
    ((v / HISTOGRAM_MAX * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
}

/// Statistics for the high, mid and low regions and the full frame, in that
/// order. Empty regions have count 0 and no metric values; SSIM is omitted
/// when the frame is smaller than the SSIM window.
pub fn regional_report(pred: &Frame, gt: &Frame, masks: &ErrorMasks) -> Result<Vec<RegionStats>> {
    check_frames(pred, gt)?;
    check_dims("regional_report: masks", gt.dims(), masks.dims())?;
    let sq = pixel_squared_errors(pred, gt);
    let ssim_values = ssim_map(pred, gt).ok();
    let full = Mask::filled(gt.height(), gt.width(), true)?;
    let regions: Vec<(ReportRegion, &Mask)> = Region::ALL
        .iter()
        .map(|&r| (r.into(), masks.get(r)))
        .chain(std::iter::once((ReportRegion::Full, &full)))
        .collect();
    regions
        .into_iter()
        .map(|(region, mask)| {
            let mut histogram = vec![0u64; HISTOGRAM_BINS];
            for (v, _) in sq.iter().zip(mask.data()).filter(|(_, &m)| m) {
                histogram[histogram_bin(*v)] += 1;
            }
            let pixel_count = mask.count();
            let mse = if pixel_count > 0 { Some(masked_mse(pred, gt, mask)?) } else { None };
            let ssim = ssim_values.as_ref().and_then(|m| mean_over_mask(m, mask).ok());
            Ok(RegionStats {
                region,
                pixel_count,
                mse,
                psnr: mse.map(psnr_from_mse),
                ssim,
                histogram,
            })
        })
        .collect()
}

/// Flattens region statistics into report rows (histograms are not exported).
pub fn stats_records(scene: &str, stats: &[RegionStats]) -> Vec<ReportRecord> {
    let mut out = Vec::new();
    for s in stats {
        out.push(ReportRecord::new(scene, s.region, Metric::PixelCount, s.pixel_count as f64));
        for (metric, value) in [(Metric::Mse, s.mse), (Metric::Psnr, s.psnr), (Metric::Ssim, s.ssim)] {
            if let Some(v) = value {
                out.push(ReportRecord::new(scene, s.region, metric, v));
            }
        }
    }
    out
}

/// Mean Euclidean distance between two flow fields, optionally restricted to a mask.
pub fn mean_endpoint_error(estimate: &FlowField, truth: &FlowField, mask: Option<&Mask>) -> Result<f64> {
    check_dims("endpoint error", truth.dims(), estimate.dims())?;
    if let Some(m) = mask {
        check_dims("endpoint error: mask", truth.dims(), m.dims())?;
    }
    let (mut sum, mut n) = (0.0f64, 0usize);
    for (i, (a, b)) in estimate.data().chunks_exact(2).zip(truth.data().chunks_exact(2)).enumerate() {
        if mask.is_none_or(|m| m.data()[i]) {
            sum += (a[0] - b[0]).hypot(a[1] - b[1]);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / n as f64)
}
