//! Raster types shared by every stage of the pipeline.
//!
//! All rasters are stored row-major in a single buffer. Construction is the
//! only place their invariants are checked; after that they are immutable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Common shape accessors and index remapping for all raster kinds.
pub trait Raster: Sized {
    fn height(&self) -> usize;
    fn width(&self) -> usize;

    /// Builds a new `out_h`×`out_w` raster where pixel `i` is taken from
    /// pixel `source_of[i]` of `self`.
    fn gather(&self, out_h: usize, out_w: usize, source_of: &[usize]) -> Self;

    fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    fn pixel_count(&self) -> usize {
        self.height() * self.width()
    }
}

fn check_len(height: usize, width: usize, per_pixel: usize, actual: usize) -> Result<()> {
    let expected = height * width * per_pixel;
    if expected != actual {
        return Err(Error::LengthMismatch {
            height,
            width,
            expected,
            actual,
        });
    }
    Ok(())
}

pub(crate) fn ensure_same_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected_h: a.0,
            expected_w: a.1,
            actual_h: b.0,
            actual_w: b.1,
        });
    }
    Ok(())
}

/// An RGB image with 8-bit channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl ImageBuffer {
    pub const CHANNELS: usize = 3;

    /// `data` is row-major, channel-interleaved RGB.
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        check_len(height, width, Self::CHANNELS, data.len())?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(height * width * 3)
            .collect();
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for r in 0..height {
            for c in 0..width {
                data.extend_from_slice(&f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

impl Raster for ImageBuffer {
    fn height(&self) -> usize {
        self.height
    }

    fn width(&self) -> usize {
        self.width
    }

    fn gather(&self, out_h: usize, out_w: usize, source_of: &[usize]) -> Self {
        debug_assert_eq!(source_of.len(), out_h * out_w);
        let mut data = Vec::with_capacity(source_of.len() * 3);
        for &s in source_of {
            data.extend_from_slice(&self.data[s * 3..s * 3 + 3]);
        }
        Self {
            height: out_h,
            width: out_w,
            data,
        }
    }
}

/// Per-pixel foreground probabilities, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProbMask")]
pub struct ProbMask {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawProbMask {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl TryFrom<RawProbMask> for ProbMask {
    type Error = Error;

    fn try_from(raw: RawProbMask) -> Result<Self> {
        ProbMask::new(raw.height, raw.width, raw.data)
    }
}

impl ProbMask {
    /// Validates shape and range. Values outside `[0, 1]` (including NaN) are
    /// rejected, never clamped.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_len(height, width, 1, data.len())?;
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::ProbabilityOutOfRange { index, value });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    /// Caller guarantees every value lies in `[0, 1]`.
    pub(crate) fn from_valid(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
        debug_assert_eq!(data.len(), height * width);
        Self {
            height,
            width,
            data,
        }
    }

    /// Lifts a binary mask to probabilities 0.0 / 1.0.
    pub fn from_binary(mask: &BinaryMask) -> Self {
        let data = mask
            .data()
            .iter()
            .map(|&fg| if fg { 1.0 } else { 0.0 })
            .collect();
        Self::from_valid(mask.height(), mask.width(), data)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

impl Raster for ProbMask {
    fn height(&self) -> usize {
        self.height
    }

    fn width(&self) -> usize {
        self.width
    }

    fn gather(&self, out_h: usize, out_w: usize, source_of: &[usize]) -> Self {
        let data = source_of.iter().map(|&s| self.data[s]).collect();
        Self::from_valid(out_h, out_w, data)
    }
}

/// Foreground (`true`) / background (`false`) raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        check_len(height, width, 1, data.len())?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&fg| fg).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&fg| fg)
    }
}

impl Raster for BinaryMask {
    fn height(&self) -> usize {
        self.height
    }

    fn width(&self) -> usize {
        self.width
    }

    fn gather(&self, out_h: usize, out_w: usize, source_of: &[usize]) -> Self {
        let data = source_of.iter().map(|&s| self.data[s]).collect();
        Self {
            height: out_h,
            width: out_w,
            data,
        }
    }
}

/// Convenience for [`ProbMask::new`].
pub fn new_prob_mask(height: usize, width: usize, values: Vec<f64>) -> Result<ProbMask> {
    ProbMask::new(height, width, values)
}

fn check_pad_target(h: usize, w: usize, target_h: usize, target_w: usize) -> Result<()> {
    if target_h < h || target_w < w {
        return Err(Error::PadTargetTooSmall {
            height: h,
            width: w,
            target_h,
            target_w,
        });
    }
    Ok(())
}

/// Pads `image` with black pixels to `target_h`×`target_w`, keeping the
/// original content anchored at the top-left corner.
pub fn zero_pad(image: &ImageBuffer, target_h: usize, target_w: usize) -> Result<ImageBuffer> {
    let (h, w) = image.dims();
    check_pad_target(h, w, target_h, target_w)?;
    let mut data = vec![0u8; target_h * target_w * 3];
    for r in 0..h {
        let src = &image.data[r * w * 3..(r + 1) * w * 3];
        data[r * target_w * 3..r * target_w * 3 + w * 3].copy_from_slice(src);
    }
    Ok(ImageBuffer {
        height: target_h,
        width: target_w,
        data,
    })
}

/// Pads `mask` with background, top-left anchored like [`zero_pad`].
pub fn zero_pad_mask(mask: &BinaryMask, target_h: usize, target_w: usize) -> Result<BinaryMask> {
    let (h, w) = mask.dims();
    check_pad_target(h, w, target_h, target_w)?;
    let mut data = vec![false; target_h * target_w];
    for r in 0..h {
        data[r * target_w..r * target_w + w].copy_from_slice(&mask.data[r * w..(r + 1) * w]);
    }
    Ok(BinaryMask {
        height: target_h,
        width: target_w,
        data,
    })
}
