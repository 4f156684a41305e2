//! Dihedral transforms for test-time augmentation, and the stochastic
//! training augmentations.
//!
//! Rotations are counter-clockwise in quarter turns and are applied before
//! the optional horizontal flip. Inversion is defined against that order.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::average_probmasks;
use crate::error::{Error, Result};
use crate::mask::{ensure_same_dims, BinaryMask, ImageBuffer, ProbMask, Raster};

/// One element of the dihedral group of the square: a counter-clockwise
/// rotation by `quarter_turns`·90° followed by an optional horizontal flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TtaVariant {
    quarter_turns: u8,
    hflip: bool,
}

impl TtaVariant {
    pub const IDENTITY: TtaVariant = TtaVariant {
        quarter_turns: 0,
        hflip: false,
    };

    /// All eight variants, identity first.
    pub const ALL: [TtaVariant; 8] = [
        TtaVariant::new_unchecked(0, false),
        TtaVariant::new_unchecked(1, false),
        TtaVariant::new_unchecked(2, false),
        TtaVariant::new_unchecked(3, false),
        TtaVariant::new_unchecked(0, true),
        TtaVariant::new_unchecked(1, true),
        TtaVariant::new_unchecked(2, true),
        TtaVariant::new_unchecked(3, true),
    ];

    const fn new_unchecked(quarter_turns: u8, hflip: bool) -> Self {
        Self {
            quarter_turns,
            hflip,
        }
    }

    pub fn new(quarter_turns: u8, hflip: bool) -> Result<Self> {
        if quarter_turns > 3 {
            return Err(Error::InvalidConfig(format!(
                "quarter turns must be in 0..=3, got {quarter_turns}"
            )));
        }
        Ok(Self::new_unchecked(quarter_turns, hflip))
    }

    pub fn quarter_turns(self) -> u8 {
        self.quarter_turns
    }

    pub fn hflip(self) -> bool {
        self.hflip
    }

    pub fn is_identity(self) -> bool {
        self == Self::IDENTITY
    }

    /// Output shape when applied to an `h`×`w` raster.
    pub fn output_dims(self, h: usize, w: usize) -> (usize, usize) {
        if self.quarter_turns % 2 == 1 {
            (w, h)
        } else {
            (h, w)
        }
    }

    /// For each source pixel index of an `h`×`w` raster, the index it lands
    /// on in the transformed raster.
    fn destination_map(self, h: usize, w: usize) -> Vec<usize> {
        let (out_h, out_w) = self.output_dims(h, w);
        let mut map = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                let (mut rr, mut cc, mut hh, mut ww) = (r, c, h, w);
                for _ in 0..self.quarter_turns {
                    // counter-clockwise quarter turn: the top-right corner
                    // moves to the top-left
                    (rr, cc) = (ww - 1 - cc, rr);
                    (hh, ww) = (ww, hh);
                }
                if self.hflip {
                    cc = ww - 1 - cc;
                }
                debug_assert_eq!((hh, ww), (out_h, out_w));
                map.push(rr * out_w + cc);
            }
        }
        map
    }
}

impl fmt::Display for TtaVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rot{}", self.quarter_turns as u32 * 90)?;
        if self.hflip {
            write!(f, "+hflip")?;
        }
        Ok(())
    }
}

impl FromStr for TtaVariant {
    type Err = Error;

    /// Parses `rot0`, `rot90`, `rot180`, `rot270`, each optionally suffixed
    /// with `+hflip`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("unrecognised TTA variant `{s}`"));
        let (rot, hflip) = match s.strip_suffix("+hflip") {
            Some(rot) => (rot, true),
            None => (s, false),
        };
        let degrees: u32 = rot
            .strip_prefix("rot")
            .ok_or_else(bad)?
            .parse()
            .map_err(|_| bad())?;
        if !degrees.is_multiple_of(90) || degrees >= 360 {
            return Err(bad());
        }
        TtaVariant::new((degrees / 90) as u8, hflip)
    }
}

impl TryFrom<String> for TtaVariant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TtaVariant> for String {
    fn from(v: TtaVariant) -> String {
        v.to_string()
    }
}

fn inverse_permutation(map: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; map.len()];
    for (src, &dst) in map.iter().enumerate() {
        inv[dst] = src;
    }
    inv
}

pub fn apply_variant<R: Raster>(raster: &R, v: TtaVariant) -> R {
    let (h, w) = raster.dims();
    let (out_h, out_w) = v.output_dims(h, w);
    let source_of = inverse_permutation(&v.destination_map(h, w));
    raster.gather(out_h, out_w, &source_of)
}

/// Undoes [`apply_variant`]. The original shape is recovered from the
/// transformed one, so this is total.
pub fn invert_variant<R: Raster>(raster: &R, v: TtaVariant) -> R {
    let (oh, ow) = raster.dims();
    // output_dims is an involution on shapes
    let (h, w) = v.output_dims(oh, ow);
    raster.gather(h, w, &v.destination_map(h, w))
}

/// Like [`invert_variant`], but first checks that `raster` has the shape that
/// `v` produces from an `original.0`×`original.1` input.
pub fn invert_variant_checked<R: Raster>(
    raster: &R,
    v: TtaVariant,
    original: (usize, usize),
) -> Result<R> {
    ensure_same_dims(v.output_dims(original.0, original.1), raster.dims())?;
    Ok(invert_variant(raster, v))
}

/// Test-time augmentation: predicts on every transformed copy of `image`,
/// maps each prediction back to the input frame and takes the pixel-wise
/// mean.
///
/// Variants are averaged in canonical order, so the result does not depend
/// on the order of `variants`.
pub fn tta_predict<F>(predict: F, image: &ImageBuffer, variants: &[TtaVariant]) -> Result<ProbMask>
where
    F: Fn(&ImageBuffer) -> Result<ProbMask>,
{
    if variants.is_empty() {
        return Err(Error::Empty("TTA variant list"));
    }
    let mut ordered = variants.to_vec();
    ordered.sort_unstable();

    let (h, w) = image.dims();
    let mut restored = Vec::with_capacity(ordered.len());
    for v in ordered {
        let transformed = apply_variant(image, v);
        let prob = predict(&transformed)?;
        let (eh, ew) = v.output_dims(h, w);
        if prob.dims() != (eh, ew) {
            return Err(Error::PredictorShape {
                variant: v,
                expected_h: eh,
                expected_w: ew,
                actual_h: prob.height(),
                actual_w: prob.width(),
            });
        }
        restored.push(invert_variant(&prob, v));
    }
    average_probmasks(&restored, None)
}

/// Stochastic training augmentation parameters. Probabilities are per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub scale_limit: f64,
    pub scale_prob: f64,
    pub rot90_prob: f64,
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    pub brightness_contrast_limit: f64,
    pub brightness_contrast_prob: f64,
    pub rng_seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            scale_limit: 0.1,
            scale_prob: 0.3,
            rot90_prob: 0.5,
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            brightness_contrast_limit: 0.15,
            brightness_contrast_prob: 0.4,
            rng_seed: 0,
        }
    }
}

impl AugmentationConfig {
    /// Every stage switched off.
    pub fn disabled() -> Self {
        Self {
            scale_prob: 0.0,
            rot90_prob: 0.0,
            hflip_prob: 0.0,
            vflip_prob: 0.0,
            brightness_contrast_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("scale_prob", self.scale_prob),
            ("rot90_prob", self.rot90_prob),
            ("hflip_prob", self.hflip_prob),
            ("vflip_prob", self.vflip_prob),
            ("brightness_contrast_prob", self.brightness_contrast_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if !(self.scale_limit >= 0.0 && self.scale_limit < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "scale_limit must be in [0, 1), got {}",
                self.scale_limit
            )));
        }
        if self.brightness_contrast_limit.is_nan() || self.brightness_contrast_limit < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "brightness_contrast_limit must be >= 0, got {}",
                self.brightness_contrast_limit
            )));
        }
        Ok(())
    }

    pub fn rng(&self) -> AugmentRng {
        AugmentRng::seed_from_u64(self.rng_seed)
    }

    /// Independent stream for worker `worker`, derived from the same seed.
    pub fn worker_rng(&self, worker: u64) -> AugmentRng {
        let mut rng = AugmentRng::seed_from_u64(self.rng_seed);
        rng.set_stream(worker);
        rng
    }
}

/// Portable, seedable generator used for all augmentation draws.
pub type AugmentRng = ChaCha8Rng;

fn draw(rng: &mut impl Rng, p: f64) -> bool {
    // the coin is always drawn so the stream position does not depend on p
    let u: f64 = rng.random();
    u < p
}

fn uniform(rng: &mut impl Rng, limit: f64) -> f64 {
    if limit == 0.0 {
        return 0.0;
    }
    rng.random_range(-limit..=limit)
}

/// Applies the random augmentation chain to an image and its mask.
///
/// Draw order: scale coin (then factor), rot90 coin (then 1..=3 turns),
/// hflip coin, vflip coin, photometric coin (then brightness, then
/// contrast). Geometry is shared between image and mask; photometric shifts
/// touch the image only.
pub fn augment(
    image: &ImageBuffer,
    mask: &BinaryMask,
    cfg: &AugmentationConfig,
    rng: &mut impl Rng,
) -> Result<(ImageBuffer, BinaryMask)> {
    ensure_same_dims(image.dims(), mask.dims())?;
    let mut image = image.clone();
    let mut mask = mask.clone();

    if draw(rng, cfg.scale_prob) {
        let s = uniform(rng, cfg.scale_limit);
        (image, mask) = scale_about_center(&image, &mask, 1.0 + s);
    }
    if draw(rng, cfg.rot90_prob) {
        let turns = rng.random_range(1..=3u8);
        let v = TtaVariant::new_unchecked(turns, false);
        image = apply_variant(&image, v);
        mask = apply_variant(&mask, v);
    }
    if draw(rng, cfg.hflip_prob) {
        let v = TtaVariant::new_unchecked(0, true);
        image = apply_variant(&image, v);
        mask = apply_variant(&mask, v);
    }
    if draw(rng, cfg.vflip_prob) {
        // a vertical flip is a half turn followed by a horizontal flip
        let v = TtaVariant::new_unchecked(2, true);
        image = apply_variant(&image, v);
        mask = apply_variant(&mask, v);
    }
    if draw(rng, cfg.brightness_contrast_prob) {
        let brightness = uniform(rng, cfg.brightness_contrast_limit);
        let contrast = uniform(rng, cfg.brightness_contrast_limit);
        image = brightness_contrast(&image, brightness, contrast);
    }
    Ok((image, mask))
}

/// `out = clamp((v - 128)·(1 + contrast) + 128 + 255·brightness)`, rounded.
pub fn brightness_contrast(image: &ImageBuffer, brightness: f64, contrast: f64) -> ImageBuffer {
    let data = image
        .data()
        .iter()
        .map(|&v| {
            let out = (v as f64 - 128.0) * (1.0 + contrast) + 128.0 + 255.0 * brightness;
            out.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    ImageBuffer::new(image.height(), image.width(), data).expect("shape unchanged")
}

/// Resamples image (bilinear) and mask (nearest) by `factor`, then
/// center-crops or zero-pads back to the original shape.
pub fn scale_about_center(
    image: &ImageBuffer,
    mask: &BinaryMask,
    factor: f64,
) -> (ImageBuffer, BinaryMask) {
    let (h, w) = image.dims();
    let nh = ((h as f64 * factor).round() as usize).max(1);
    let nw = ((w as f64 * factor).round() as usize).max(1);
    let scaled_img = resize_bilinear(image, nh, nw);
    let scaled_mask = resize_nearest(mask, nh, nw);
    let img = recenter(scaled_img.data(), nh, nw, 3, h, w, 0u8);
    let m = recenter(scaled_mask.data(), nh, nw, 1, h, w, false);
    (
        ImageBuffer::new(h, w, img).expect("recentered shape"),
        BinaryMask::new(h, w, m).expect("recentered shape"),
    )
}

fn source_coord(dst: usize, ratio: f64, len: usize) -> f64 {
    ((dst as f64 + 0.5) * ratio - 0.5).clamp(0.0, (len - 1) as f64)
}

pub fn resize_bilinear(image: &ImageBuffer, out_h: usize, out_w: usize) -> ImageBuffer {
    let (h, w) = image.dims();
    let ry = h as f64 / out_h as f64;
    let rx = w as f64 / out_w as f64;
    let src = image.data();
    let mut data = Vec::with_capacity(out_h * out_w * 3);
    for y in 0..out_h {
        let sy = source_coord(y, ry, h);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for x in 0..out_w {
            let sx = source_coord(x, rx, w);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            for ch in 0..3 {
                let at = |r: usize, c: usize| src[(r * w + c) * 3 + ch] as f64;
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    ImageBuffer::new(out_h, out_w, data).expect("resized shape")
}

pub fn resize_nearest(mask: &BinaryMask, out_h: usize, out_w: usize) -> BinaryMask {
    let (h, w) = mask.dims();
    let ry = h as f64 / out_h as f64;
    let rx = w as f64 / out_w as f64;
    BinaryMask::from_fn(out_h, out_w, |y, x| {
        let sy = (((y as f64 + 0.5) * ry) as usize).min(h - 1);
        let sx = (((x as f64 + 0.5) * rx) as usize).min(w - 1);
        mask.get(sy, sx)
    })
}

/// Center-crops (when larger) or center-pads with `fill` (when smaller) a
/// `src_h`×`src_w` buffer to `h`×`w`, independently per axis.
fn recenter<T: Copy>(
    src: &[T],
    src_h: usize,
    src_w: usize,
    channels: usize,
    h: usize,
    w: usize,
    fill: T,
) -> Vec<T> {
    let mut out = vec![fill; h * w * channels];
    for y in 0..h {
        // offset of the output frame inside the source frame
        let sy = y as isize + (src_h as isize - h as isize) / 2;
        if sy < 0 || sy >= src_h as isize {
            continue;
        }
        for x in 0..w {
            let sx = x as isize + (src_w as isize - w as isize) / 2;
            if sx < 0 || sx >= src_w as isize {
                continue;
            }
            let s = (sy as usize * src_w + sx as usize) * channels;
            let d = (y * w + x) * channels;
            out[d..d + channels].copy_from_slice(&src[s..s + channels]);
        }
    }
    out
}
