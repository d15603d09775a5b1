//! Scalar reference implementations, written without reusing library code
//! paths, plus random input generators.
#![allow(dead_code)]

use errvfi::types::{ErrorMasks, FlowField, Frame, Mask};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

pub fn random_frame(rng: &mut ChaCha8Rng, h: usize, w: usize, ch: usize) -> Frame {
    let data = (0..h * w * ch).map(|_| rng.gen::<f64>()).collect();
    Frame::new(h, w, ch, data).unwrap()
}

pub fn random_flow(rng: &mut ChaCha8Rng, h: usize, w: usize, scale: f64) -> FlowField {
    let data = (0..h * w * 2).map(|_| rng.gen_range(-scale..scale)).collect();
    FlowField::new(h, w, data).unwrap()
}

/// Random partition of the frame with every region non-empty.
pub fn random_masks(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ErrorMasks {
    let mut labels: Vec<u8> = (0..h * w).map(|_| rng.gen_range(0..3)).collect();
    labels[0] = 0;
    labels[1] = 1;
    labels[2] = 2;
    let m = |k: u8| Mask::new(h, w, labels.iter().map(|&l| l == k).collect()).unwrap();
    ErrorMasks::new(m(0), m(1), m(2), 0.75, 0.5).unwrap()
}

pub fn flow_at(f: &FlowField, y: usize, x: usize) -> (f64, f64) {
    let d = f.data();
    let i = (y * f.width() + x) * 2;
    (d[i], d[i + 1])
}

pub fn px(f: &Frame, y: usize, x: usize, c: usize) -> f64 {
    f.data()[(y * f.width() + x) * f.channels() + c]
}

pub fn motion_size(f: &FlowField) -> Vec<f64> {
    let mut out = Vec::new();
    for y in 0..f.height() {
        for x in 0..f.width() {
            let (u, v) = flow_at(f, y, x);
            out.push((u * u + v * v).sqrt());
        }
    }
    out
}

/// Direct O(HW·r²) windowed means, window clipped to the frame.
pub fn motion_variation(f: &FlowField, r: usize) -> Vec<f64> {
    let (h, w) = (f.height() as isize, f.width() as isize);
    let r = r as isize;
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let mut best = 0.0f64;
            for comp in 0..2 {
                let mut sum = 0.0;
                let mut n = 0.0;
                for yy in (y - r).max(0)..=(y + r).min(h - 1) {
                    for xx in (x - r).max(0)..=(x + r).min(w - 1) {
                        let (u, v) = flow_at(f, yy as usize, xx as usize);
                        sum += if comp == 0 { u } else { v };
                        n += 1.0;
                    }
                }
                let (u, v) = flow_at(f, y as usize, x as usize);
                let here = if comp == 0 { u } else { v };
                best = best.max((here - sum / n).abs());
            }
            out.push(best);
        }
    }
    out
}

/// Four-tap bilinear lookup with clamp-to-edge, result clamped to [0, 1].
pub fn bilinear(img: &Frame, x: f64, y: f64, c: usize) -> f64 {
    let (h, w) = (img.height(), img.width());
    let x = x.max(0.0).min((w - 1) as f64);
    let y = y.max(0.0).min((h - 1) as f64);
    let xl = x.floor() as usize;
    let yl = y.floor() as usize;
    let xh = if xl + 1 < w { xl + 1 } else { w - 1 };
    let yh = if yl + 1 < h { yl + 1 } else { h - 1 };
    let ax = x - xl as f64;
    let ay = y - yl as f64;
    let v = (1.0 - ay) * ((1.0 - ax) * px(img, yl, xl, c) + ax * px(img, yl, xh, c))
        + ay * ((1.0 - ax) * px(img, yh, xl, c) + ax * px(img, yh, xh, c));
    v.clamp(0.0, 1.0)
}

pub fn backward_warp(img: &Frame, f: &FlowField) -> Vec<f64> {
    let mut out = Vec::new();
    for y in 0..img.height() {
        for x in 0..img.width() {
            let (u, v) = flow_at(f, y, x);
            for c in 0..img.channels() {
                out.push(bilinear(img, x as f64 + u, y as f64 + v, c));
            }
        }
    }
    out
}

pub fn photometric(i0: &Frame, i1: &Frame, f01: &FlowField) -> Vec<f64> {
    let warped = backward_warp(i1, f01);
    let ch = i0.channels();
    (0..i0.height() * i0.width())
        .map(|p| (0..ch).map(|c| (i0.data()[p * ch + c] - warped[p * ch + c]).abs()).sum())
        .collect()
}

pub fn normalize(m: &[f64], eps: f64) -> Vec<f64> {
    let mx = m.iter().fold(0.0f64, |a, &b| a.max(b));
    if mx < eps {
        vec![0.0; m.len()]
    } else {
        m.iter().map(|v| v / mx).collect()
    }
}

pub fn merge(a: &[f64], b: &[f64], c: &[f64], eps: f64) -> Vec<f64> {
    let (a, b, c) = (normalize(a, eps), normalize(b, eps), normalize(c, eps));
    (0..a.len()).map(|i| a[i].max(b[i]).max(c[i])).collect()
}

/// 0 = high, 1 = mid, 2 = low.
pub fn threshold(e: &[f64]) -> (Vec<u8>, f64, f64) {
    let tau_m = e.iter().sum::<f64>() / e.len() as f64;
    let tau_h = (1.0 - tau_m) / 2.0 + tau_m;
    let labels = e
        .iter()
        .map(|&v| {
            if v >= tau_h {
                0
            } else if v >= tau_m {
                1
            } else {
                2
            }
        })
        .collect();
    (labels, tau_h, tau_m)
}

pub fn masked_l1(pred: &Frame, gt: &Frame, mask: &Mask) -> f64 {
    let ch = pred.channels();
    let mut total = 0.0;
    let mut n = 0usize;
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            if mask.data()[y * pred.width() + x] {
                n += 1;
                for c in 0..ch {
                    total += (px(pred, y, x, c) - px(gt, y, x, c)).abs();
                }
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        total / (n * ch) as f64
    }
}

pub fn masked_mse(pred: &Frame, gt: &Frame, mask: &Mask) -> f64 {
    let ch = pred.channels();
    let mut total = 0.0;
    let mut n = 0usize;
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            if mask.data()[y * pred.width() + x] {
                n += 1;
                for c in 0..ch {
                    total += (px(pred, y, x, c) - px(gt, y, x, c)).powi(2);
                }
            }
        }
    }
    total / (n * ch) as f64
}

/// Feature image as `[y][x][channel]`, channels grouped per input channel.
pub type Features = Vec<Vec<Vec<f64>>>;

fn gaussian_kernel(radius: isize, sigma: f64) -> Vec<Vec<f64>> {
    let mut k = vec![vec![0.0; (2 * radius + 1) as usize]; (2 * radius + 1) as usize];
    let mut sum = 0.0;
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let v = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
            k[(dy + radius) as usize][(dx + radius) as usize] = v;
            sum += v;
        }
    }
    for row in &mut k {
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    k
}

pub fn filter_bank_kernels() -> Vec<Vec<Vec<f64>>> {
    vec![
        vec![vec![0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 0.0]],
        gaussian_kernel(1, 1.0),
        vec![vec![-1.0, 0.0, 1.0], vec![-2.0, 0.0, 2.0], vec![-1.0, 0.0, 1.0]],
        vec![vec![-1.0, -2.0, -1.0], vec![0.0, 0.0, 0.0], vec![1.0, 2.0, 1.0]],
        vec![vec![0.0, 1.0, 0.0], vec![1.0, -4.0, 1.0], vec![0.0, 1.0, 0.0]],
        gaussian_kernel(2, 2.0),
    ]
}

pub fn filter_bank(img: &Frame) -> Features {
    let (h, w) = (img.height() as isize, img.width() as isize);
    let kernels = filter_bank_kernels();
    let mut out = vec![vec![Vec::new(); w as usize]; h as usize];
    for y in 0..h {
        for x in 0..w {
            for c in 0..img.channels() {
                for k in &kernels {
                    let r = (k.len() / 2) as isize;
                    let mut acc = 0.0;
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let sy = (y + dy).clamp(0, h - 1) as usize;
                            let sx = (x + dx).clamp(0, w - 1) as usize;
                            acc += k[(dy + r) as usize][(dx + r) as usize] * px(img, sy, sx, c);
                        }
                    }
                    out[y as usize][x as usize].push(acc);
                }
            }
        }
    }
    out
}

pub fn identity_features(img: &Frame) -> Features {
    (0..img.height())
        .map(|y| (0..img.width()).map(|x| img.pixel(y, x).to_vec()).collect())
        .collect()
}

/// Euclidean norm of the feature difference over masked pixels.
pub fn masked_feature_norm(a: &Features, b: &Features, mask: &Mask) -> f64 {
    let mut sq = 0.0;
    for y in 0..a.len() {
        for x in 0..a[0].len() {
            if mask.get(y, x) {
                for c in 0..a[y][x].len() {
                    sq += (a[y][x][c] - b[y][x][c]).powi(2);
                }
            }
        }
    }
    sq.sqrt()
}

/// Average bilinear splatting: `(values, weights)` before normalization.
pub fn splat(img: &Frame, f: &FlowField) -> (Vec<f64>, Vec<f64>) {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let mut vals = vec![0.0; h * w * ch];
    let mut wts = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (u, v) = flow_at(f, y, x);
            let (tx, ty) = (x as f64 + u, y as f64 + v);
            let (fx, fy) = (tx.floor(), ty.floor());
            for (qx, qy) in [(fx, fy), (fx + 1.0, fy), (fx, fy + 1.0), (fx + 1.0, fy + 1.0)] {
                let wgt = (1.0 - (tx - qx).abs()) * (1.0 - (ty - qy).abs());
                if wgt <= 0.0 || qx < 0.0 || qy < 0.0 || qx > (w - 1) as f64 || qy > (h - 1) as f64 {
                    continue;
                }
                let t = qy as usize * w + qx as usize;
                wts[t] += wgt;
                for c in 0..ch {
                    vals[t * ch + c] += wgt * px(img, y, x, c);
                }
            }
        }
    }
    (vals, wts)
}

fn gaussian_window_2d() -> Vec<Vec<f64>> {
    gaussian_kernel(5, 1.5)
}

/// Mean SSIM over all fully in-bounds 11×11 windows of the channel-mean luminance.
pub fn ssim(a: &Frame, b: &Frame) -> f64 {
    let (h, w) = (a.height(), a.width());
    let lum = |f: &Frame, y: usize, x: usize| (0..f.channels()).map(|c| px(f, y, x, c)).sum::<f64>() / f.channels() as f64;
    let win = gaussian_window_2d();
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut n = 0.0;
    for y in 5..h - 5 {
        for x in 5..w - 5 {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (dy, row) in win.iter().enumerate() {
                for (dx, &g) in row.iter().enumerate() {
                    let va = lum(a, y + dy - 5, x + dx - 5);
                    let vb = lum(b, y + dy - 5, x + dx - 5);
                    ma += g * va;
                    mb += g * vb;
                    saa += g * va * va;
                    sbb += g * vb * vb;
                    sab += g * va * vb;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            n += 1.0;
        }
    }
    total / n
}

/// Hand-written `.flo` layout.
pub fn flo_bytes(w: u32, h: u32, values: &[f32]) -> Vec<u8> {
    let mut out = vec![b'P', b'I', b'E', b'H'];
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Impulse noise: 5% of pixels get ±10 px added to each component.
pub fn salt(flow: &FlowField, seed: u64) -> FlowField {
    let mut r = rng(seed);
    let data = flow
        .data()
        .chunks_exact(2)
        .flat_map(|uv| {
            if r.gen_bool(0.05) {
                let mut s = || if r.gen::<bool>() { 10.0 } else { -10.0 };
                let (du, dv) = (s(), s());
                [uv[0] + du, uv[1] + dv]
            } else {
                [uv[0], uv[1]]
            }
        })
        .collect();
    FlowField::new(flow.height(), flow.width(), data).unwrap()
}
