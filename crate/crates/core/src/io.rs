//! Readers and writers for Middlebury `.flo` flow files, binary PPM/PGM
//! images and masks, and flat CSV/JSON analysis reports.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ErrorMap, FlowField, Frame, Mask, Region};

/// `"PIEH"`, the little-endian bytes of the float 202021.25.
pub const FLO_MAGIC: [u8; 4] = *b"PIEH";
pub const FLO_HEADER_LEN: usize = 12;

/// Magnitudes above this are "unknown flow" markers.
pub const UNKNOWN_FLOW_THRESHOLD: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FloHeader {
    pub width: usize,
    pub height: usize,
}

impl FloHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < FLO_HEADER_LEN {
            return Err(Error::Truncated {
                expected: FLO_HEADER_LEN,
                actual: bytes.len(),
            });
        }
        if bytes[..4] != FLO_MAGIC {
            return Err(Error::Format(format!(
                "bad .flo magic {:?}, expected \"PIEH\"",
                &bytes[..4]
            )));
        }
        let width = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let height = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if width < 1 || height < 1 {
            return Err(Error::Format(format!(
                "invalid .flo dimensions {width}x{height}"
            )));
        }
        Ok(Self {
            width: width as usize,
            height: height as usize,
        })
    }

    pub fn payload_len(&self) -> Option<usize> {
        self.width.checked_mul(self.height)?.checked_mul(8)
    }
}

/// Decodes a `.flo` byte stream.
///
/// Non-finite values and unknown-flow sentinels are errors unless `lenient`
/// is set, in which case they are replaced by 0.
pub fn read_flo(bytes: &[u8], lenient: bool) -> Result<FlowField> {
    let header = FloHeader::parse(bytes)?;
    let payload = header
        .payload_len()
        .ok_or_else(|| Error::Format("flow dimensions overflow".into()))?;
    let expected = FLO_HEADER_LEN + payload;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after .flo payload",
            bytes.len() - expected
        )));
    }
    let mut data = Vec::with_capacity(payload / 4);
    for (index, chunk) in bytes[FLO_HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        if !v.is_finite() || v.abs() > UNKNOWN_FLOW_THRESHOLD {
            if lenient {
                data.push(0.0);
                continue;
            }
            return Err(Error::NonFinite {
                what: ".flo payload",
                index,
            });
        }
        data.push(v);
    }
    FlowField::new(header.height, header.width, data)
}

/// Encodes a flow field as `.flo`; values are stored as 32-bit floats.
pub fn write_flo(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(FLO_HEADER_LEN + flow.data().len() * 4);
    out.extend_from_slice(&FLO_MAGIC);
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for &v in flow.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

struct PnmHeader {
    channels: usize,
    width: usize,
    height: usize,
    data_offset: usize,
}

fn parse_pnm_header(bytes: &[u8]) -> Result<PnmHeader> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::Format("expected binary PGM (P5) or PPM (P6)".into())),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments before each field
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::Format("truncated PNM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format(format!("malformed PNM header at byte {pos}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::Format("PNM header value out of range".into()))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Format("missing whitespace after PNM maxval".into())),
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported maxval {maxval}, expected 255")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("invalid PNM dimensions {width}x{height}")));
    }
    Ok(PnmHeader {
        channels,
        width,
        height,
        data_offset: pos,
    })
}

fn pnm_pixels(bytes: &[u8]) -> Result<(PnmHeader, &[u8])> {
    let header = parse_pnm_header(bytes)?;
    let len = header
        .width
        .checked_mul(header.height)
        .and_then(|n| n.checked_mul(header.channels))
        .ok_or_else(|| Error::Format("PNM dimensions overflow".into()))?;
    let available = bytes.len() - header.data_offset;
    if available < len {
        return Err(Error::Truncated {
            expected: header.data_offset + len,
            actual: bytes.len(),
        });
    }
    let start = header.data_offset;
    Ok((header, &bytes[start..start + len]))
}

/// Decodes P5 (single channel) or P6 (RGB) with maxval 255, mapping `v → v/255`.
pub fn read_image(bytes: &[u8]) -> Result<Frame> {
    let (h, pixels) = pnm_pixels(bytes)?;
    let data = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    Frame::new(h.height, h.width, h.channels, data)
}

fn pnm_bytes(magic: &str, width: usize, height: usize, pixels: impl Iterator<Item = u8>) -> Vec<u8> {
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels);
    out
}

#[inline]
pub fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Encodes a frame as P6 (3 channels) or P5 (1 channel), mapping `v → round(255 v)`.
pub fn write_image(frame: &Frame) -> Vec<u8> {
    let magic = if frame.channels() == 3 { "P6" } else { "P5" };
    pnm_bytes(
        magic,
        frame.width(),
        frame.height(),
        frame.data().iter().map(|&v| quantize(v)),
    )
}

/// Masks are P5 with values {0, 255}.
pub fn write_mask(mask: &Mask) -> Vec<u8> {
    pnm_bytes(
        "P5",
        mask.width(),
        mask.height(),
        mask.data().iter().map(|&b| if b { 255 } else { 0 }),
    )
}

/// Reads a P5 mask; any byte ≥ 128 is set.
pub fn read_mask(bytes: &[u8]) -> Result<Mask> {
    let (h, pixels) = pnm_pixels(bytes)?;
    if h.channels != 1 {
        return Err(Error::Format("masks must be single-channel P5".into()));
    }
    Mask::new(h.height, h.width, pixels.iter().map(|&b| b >= 128).collect())
}

/// Linear P5 heatmap of `map` on `[0, scale]`; returns the bytes and the scale
/// used (the map maximum).
pub fn write_heatmap(map: &ErrorMap) -> (Vec<u8>, f64) {
    let max = map.max();
    let bytes = pnm_bytes(
        "P5",
        map.width(),
        map.height(),
        map.data().iter().map(|&v| if max > 0.0 { quantize(v / max) } else { 0 }),
    );
    (bytes, max)
}

/// Region column of a report; `Full` is the whole frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportRegion {
    High,
    Mid,
    Low,
    Full,
}

impl ReportRegion {
    pub fn name(self) -> &'static str {
        match self {
            ReportRegion::High => "high",
            ReportRegion::Mid => "mid",
            ReportRegion::Low => "low",
            ReportRegion::Full => "full",
        }
    }
}

impl From<Region> for ReportRegion {
    fn from(r: Region) -> Self {
        match r {
            Region::High => ReportRegion::High,
            Region::Mid => ReportRegion::Mid,
            Region::Low => ReportRegion::Low,
        }
    }
}

impl fmt::Display for ReportRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    PixelCount,
    Mse,
    Psnr,
    Ssim,
    MeanError,
    TauHigh,
    TauMid,
    GammaMs,
    GammaMv,
    GammaPc,
    EMsMax,
    EMvMax,
    EPcMax,
    ETotMax,
    EccLoss,
    EcpLoss,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::PixelCount => "pixel_count",
            Metric::Mse => "mse",
            Metric::Psnr => "psnr",
            Metric::Ssim => "ssim",
            Metric::MeanError => "mean_error",
            Metric::TauHigh => "tau_high",
            Metric::TauMid => "tau_mid",
            Metric::GammaMs => "gamma_ms",
            Metric::GammaMv => "gamma_mv",
            Metric::GammaPc => "gamma_pc",
            Metric::EMsMax => "e_ms_max",
            Metric::EMvMax => "e_mv_max",
            Metric::EPcMax => "e_pc_max",
            Metric::ETotMax => "e_tot_max",
            Metric::EccLoss => "ecc_loss",
            Metric::EcpLoss => "ecp_loss",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub scene: String,
    pub region: ReportRegion,
    pub metric: Metric,
    pub value: f64,
}

impl ReportRecord {
    pub fn new(scene: impl Into<String>, region: ReportRegion, metric: Metric, value: f64) -> Self {
        Self {
            scene: scene.into(),
            region,
            metric,
            value,
        }
    }
}

/// 17 significant digits: lossless for f64 and valid in both CSV and JSON.
fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_report_csv(records: &[ReportRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scene", "region", "metric", "value"])?;
    for r in records {
        w.write_record([
            r.scene.as_str(),
            r.region.name(),
            r.metric.name(),
            &format_value(r.value),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

pub fn write_report_json(records: &[ReportRecord]) -> Result<Vec<u8>> {
    if records.is_empty() {
        return Ok(b"[]\n".to_vec());
    }
    let mut out = String::from("[\n");
    for (i, r) in records.iter().enumerate() {
        if !r.value.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "non-finite report value for {}/{}",
                r.region, r.metric
            )));
        }
        out.push_str(&format!(
            "  {{\"scene\": {}, \"region\": \"{}\", \"metric\": \"{}\", \"value\": {}}}",
            serde_json::to_string(&r.scene)?,
            r.region,
            r.metric,
            format_value(r.value)
        ));
        out.push_str(if i + 1 < records.len() { ",\n" } else { "\n" });
    }
    out.push_str("]\n");
    Ok(out.into_bytes())
}

pub fn read_report_json(bytes: &[u8]) -> Result<Vec<ReportRecord>> {
    Ok(serde_json::from_slice(bytes)?)
}
