//! Shared value types: frames, flow fields, scalar error maps, binary masks and
//! the three-way error partition.
//!
//! Every constructor validates its invariants, so a value that exists is a value
//! that satisfies them. All types are plain data and are `Send + Sync`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};

fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            what,
            expected: format!("{expected} values"),
            actual: format!("{actual} values"),
        });
    }
    Ok(())
}

fn check_positive(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!(
            "dimensions must be positive, got {height}x{width}"
        )));
    }
    Ok(())
}

fn check_finite(what: &'static str, data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { what, index }),
        None => Ok(()),
    }
}

fn check_range(what: &'static str, data: &[f64], lo: f64, hi: f64) -> Result<()> {
    check_finite(what, data)?;
    match data.iter().position(|&v| v < lo || v > hi) {
        Some(index) => Err(Error::OutOfRange {
            what,
            index,
            value: data[index],
            lo,
            hi,
        }),
        None => Ok(()),
    }
}

/// An image with intensities normalized to `[0, 1]`, stored row-major with
/// interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Frame {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        check_positive(height, width)?;
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "frames have 1 or 3 channels, got {channels}"
            )));
        }
        check_len("frame data", height * width * channels, data.len())?;
        check_range("frame", &data, 0.0, 1.0)?;
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds a frame from a per-(y, x, c) function.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Applies `f` to every value, clamping the result into `[0, 1]`.
    pub fn map_clamped(&self, mut f: impl FnMut(f64) -> f64) -> Frame {
        Frame {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
        }
    }

    pub(crate) fn from_raw_unchecked(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Frame {
        debug_assert_eq!(data.len(), height * width * channels);
        debug_assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
        Frame {
            height,
            width,
            channels,
            data,
        }
    }
}

/// Per-pixel `(u, v)` displacement in pixels over the source→target interval.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_positive(height, width)?;
        check_len("flow data", height * width * 2, data.len())?;
        check_finite("flow", &data)?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0.0; height * width * 2])
    }

    pub fn uniform(height: usize, width: usize, u: f64, v: f64) -> Result<Self> {
        Self::from_fn(height, width, |_, _| (u, v))
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> (f64, f64),
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 2);
        for y in 0..height {
            for x in 0..width {
                let (u, v) = f(y, x);
                data.push(u);
                data.push(v);
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> (f64, f64) {
        let i = (y * self.width + x) * 2;
        (self.data[i], self.data[i + 1])
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Result<FlowField> {
        FlowField::new(
            self.height,
            self.width,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn negated(&self) -> FlowField {
        FlowField {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| -v).collect(),
        }
    }
}

/// Non-negative per-pixel scalar field; `normalized` maps are bounded by 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
    normalized: bool,
}

impl ErrorMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>, normalized: bool) -> Result<Self> {
        check_positive(height, width)?;
        check_len("error map data", height * width, data.len())?;
        let hi = if normalized { 1.0 } else { f64::INFINITY };
        check_range("error map", &data, 0.0, hi)?;
        Ok(Self {
            height,
            width,
            data,
            normalized,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0.0; height * width], false)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Largest value in the map (0 for an all-zero map).
    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Per-pixel maximum of two maps. The result is normalized only if both
/// inputs are.
pub fn elementwise_max(a: &ErrorMap, b: &ErrorMap) -> Result<ErrorMap> {
    check_dims("elementwise_max", a.dims(), b.dims())?;
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| if y > x { y } else { x })
        .collect();
    Ok(ErrorMap {
        height: a.height,
        width: a.width,
        data,
        normalized: a.normalized && b.normalized,
    })
}

/// Binary H×W mask. Single-channel; broadcast over color channels wherever a
/// mask meets a frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        check_positive(height, width)?;
        check_len("mask data", height * width, data.len())?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn union(&self, other: &Mask) -> Result<Mask> {
        check_dims("mask union", self.dims(), other.dims())?;
        Ok(Mask {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a || b).collect(),
        })
    }
}

/// The three error levels, in the order the staged pipeline visits them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    High,
    Mid,
    Low,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::High, Region::Mid, Region::Low];

    pub fn name(self) -> &'static str {
        match self {
            Region::High => "high",
            Region::Mid => "mid",
            Region::Low => "low",
        }
    }

    /// 1-based stage index at which this region is first processed.
    pub fn stage(self) -> usize {
        match self {
            Region::High => 1,
            Region::Mid => 2,
            Region::Low => 3,
        }
    }
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// High/mid/low partition of a frame together with the thresholds that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMasks {
    high: Mask,
    mid: Mask,
    low: Mask,
    tau_high: f64,
    tau_mid: f64,
}

impl ErrorMasks {
    pub fn new(high: Mask, mid: Mask, low: Mask, tau_high: f64, tau_mid: f64) -> Result<Self> {
        check_dims("error masks", high.dims(), mid.dims())?;
        check_dims("error masks", high.dims(), low.dims())?;
        if let Some(i) = (0..high.data.len())
            .position(|i| high.data[i] as u8 + mid.data[i] as u8 + low.data[i] as u8 != 1)
        {
            return Err(Error::InvalidArgument(format!(
                "masks do not partition the frame at pixel {i}"
            )));
        }
        if !(0.0..=1.0).contains(&tau_mid) || !(tau_mid..=1.0).contains(&tau_high) {
            return Err(Error::InvalidArgument(format!(
                "thresholds must satisfy 0 <= tau_mid <= tau_high <= 1, got {tau_mid}, {tau_high}"
            )));
        }
        Ok(Self {
            high,
            mid,
            low,
            tau_high,
            tau_mid,
        })
    }

    /// Every pixel assigned to `region`; thresholds are reported as 0.
    pub fn uniform(height: usize, width: usize, region: Region) -> Result<Self> {
        let m = |r| Mask::filled(height, width, r == region);
        Self::new(m(Region::High)?, m(Region::Mid)?, m(Region::Low)?, 0.0, 0.0)
    }

    pub fn get(&self, region: Region) -> &Mask {
        match region {
            Region::High => &self.high,
            Region::Mid => &self.mid,
            Region::Low => &self.low,
        }
    }

    pub fn high(&self) -> &Mask {
        &self.high
    }

    pub fn mid(&self) -> &Mask {
        &self.mid
    }

    pub fn low(&self) -> &Mask {
        &self.low
    }

    pub fn tau_high(&self) -> f64 {
        self.tau_high
    }

    pub fn tau_mid(&self) -> f64 {
        self.tau_mid
    }

    pub fn dims(&self) -> (usize, usize) {
        self.high.dims()
    }

    /// Region label of pixel `(y, x)`.
    pub fn region_at(&self, y: usize, x: usize) -> Region {
        if self.high.get(y, x) {
            Region::High
        } else if self.mid.get(y, x) {
            Region::Mid
        } else {
            Region::Low
        }
    }
}

/// Per-pixel blend weight in `[0, 1]` between the two warped source frames.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl VisibilityMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_positive(height, width)?;
        check_len("visibility data", height * width, data.len())?;
        check_range("visibility", &data, 0.0, 1.0)?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Interpolation instant strictly between the two input frames.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct TimeStep(f64);

impl TimeStep {
    pub fn new(t: f64) -> Result<Self> {
        if t > 0.0 && t < 1.0 {
            Ok(Self(t))
        } else {
            Err(Error::InvalidArgument(format!("time step must lie in (0, 1), got {t}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `1 - t`, the time step seen from the second frame.
    pub fn complement(self) -> TimeStep {
        TimeStep(1.0 - self.0)
    }
}

impl Default for TimeStep {
    fn default() -> Self {
        TimeStep(0.5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frame_accepts_in_range_constant() {
        let f = Frame::filled(2, 2, 3, 0.5).unwrap();
        assert_eq!(f.data().len(), 12);
    }

    #[test]
    fn frame_rejects_out_of_range() {
        let mut data = vec![0.5; 12];
        data[7] = 1.5;
        assert!(matches!(
            Frame::new(2, 2, 3, data),
            Err(Error::OutOfRange { index: 7, .. })
        ));
    }

    #[test]
    fn frame_rejects_bad_shape() {
        assert!(matches!(
            Frame::new(2, 2, 3, vec![0.0; 11]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(Frame::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(Frame::new(0, 2, 1, vec![]).is_err());
    }

    #[test]
    fn flow_rejects_non_finite() {
        let mut data = vec![0.0; 8];
        data[3] = f64::NAN;
        assert!(matches!(
            FlowField::new(2, 2, data),
            Err(Error::NonFinite { index: 3, .. })
        ));
        let mut data = vec![0.0; 8];
        data[0] = f64::INFINITY;
        assert!(FlowField::new(2, 2, data).is_err());
    }

    #[test]
    fn error_map_invariants() {
        assert!(ErrorMap::new(1, 2, vec![0.0, -1.0], false).is_err());
        assert!(ErrorMap::new(1, 2, vec![0.0, 2.0], true).is_err());
        assert!(ErrorMap::new(1, 2, vec![0.0, 2.0], false).is_ok());
    }

    #[test]
    fn masks_must_partition() {
        let t = Mask::filled(1, 2, true).unwrap();
        let f = Mask::filled(1, 2, false).unwrap();
        assert!(ErrorMasks::new(t.clone(), f.clone(), f.clone(), 0.7, 0.4).is_ok());
        assert!(ErrorMasks::new(t.clone(), t.clone(), f.clone(), 0.7, 0.4).is_err());
        assert!(ErrorMasks::new(f.clone(), f.clone(), f.clone(), 0.7, 0.4).is_err());
        assert!(ErrorMasks::new(t, f.clone(), f, 0.3, 0.4).is_err());
    }

    #[test]
    fn time_step_bounds() {
        assert!(TimeStep::new(0.0).is_err());
        assert!(TimeStep::new(1.0).is_err());
        assert!(TimeStep::new(f64::NAN).is_err());
        assert_eq!(TimeStep::new(0.25).unwrap().complement().value(), 0.75);
    }

    #[test]
    fn max_with_zero_is_identity() {
        let x = ErrorMap::new(2, 2, vec![0.1, 3.0, 0.0, 7.5], false).unwrap();
        let z = ErrorMap::zeros(2, 2).unwrap();
        assert_eq!(elementwise_max(&z, &x).unwrap().data(), x.data());
        assert_eq!(elementwise_max(&x, &x).unwrap(), x);
    }

    #[test]
    fn max_rejects_mismatch() {
        let a = ErrorMap::zeros(2, 2).unwrap();
        let b = ErrorMap::zeros(2, 3).unwrap();
        assert!(elementwise_max(&a, &b).is_err());
    }

    #[test]
    fn max_normalized_flag() {
        let a = ErrorMap::new(1, 1, vec![0.5], true).unwrap();
        let b = ErrorMap::new(1, 1, vec![0.5], false).unwrap();
        assert!(elementwise_max(&a, &a).unwrap().is_normalized());
        assert!(!elementwise_max(&a, &b).unwrap().is_normalized());
    }

    fn map_strategy() -> impl Strategy<Value = ErrorMap> {
        proptest::collection::vec(0.0f64..10.0, 16)
            .prop_map(|d| ErrorMap::new(4, 4, d, false).unwrap())
    }

    proptest! {
        #[test]
        fn max_laws(a in map_strategy(), b in map_strategy(), c in map_strategy()) {
            let ab = elementwise_max(&a, &b).unwrap();
            prop_assert_eq!(&ab, &elementwise_max(&b, &a).unwrap());
            prop_assert_eq!(
                elementwise_max(&ab, &c).unwrap(),
                elementwise_max(&a, &elementwise_max(&b, &c).unwrap()).unwrap()
            );
            for i in 0..16 {
                prop_assert!(ab.data()[i] >= a.data()[i] && ab.data()[i] >= b.data()[i]);
            }
        }
    }
}
