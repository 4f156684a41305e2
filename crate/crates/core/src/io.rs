//! PNG/TIFF reading and writing for rasters.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, ImageBuffer, ProbMask, Raster};

/// Mask files are foreground where the 8-bit intensity is at least this.
pub const MASK_FOREGROUND_MIN: u8 = 128;

/// File extensions recognised for rasters, in lookup order.
pub const RASTER_EXTENSIONS: &[&str] = &["png", "tif", "tiff"];

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::image(path, e))
}

pub fn read_image(path: &Path) -> Result<ImageBuffer> {
    let rgb = open(path)?.to_rgb8();
    let (w, h) = rgb.dimensions();
    ImageBuffer::new(h as usize, w as usize, rgb.into_raw())
}

/// Reads a ground-truth or predicted mask, converting colour or 16-bit data
/// to 8-bit luma first.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let luma = open(path)?.to_luma8();
    let (w, h) = luma.dimensions();
    let data = luma.into_raw().into_iter().map(|v| v >= MASK_FOREGROUND_MIN).collect();
    BinaryMask::new(h as usize, w as usize, data)
}

/// Reads a stored probability map: 8-bit values decode as `v/255`, 16-bit
/// as `v/65535`. Anything else is rejected.
pub fn read_prob_map(path: &Path) -> Result<ProbMask> {
    let malformed = |reason: String| Error::MalformedMap {
        path: path.to_path_buf(),
        reason,
    };
    let (h, w, data): (usize, usize, Vec<f64>) = match open(path)? {
        DynamicImage::ImageLuma8(img) => {
            let (w, h) = img.dimensions();
            let data = img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
            (h as usize, w as usize, data)
        }
        DynamicImage::ImageLuma16(img) => {
            let (w, h) = img.dimensions();
            let data = img.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect();
            (h as usize, w as usize, data)
        }
        other => {
            return Err(malformed(format!(
                "expected 8- or 16-bit grayscale, got {:?}",
                other.color()
            )))
        }
    };
    ProbMask::new(h, w, data).map_err(|e| malformed(e.to_string()))
}

fn save_gray(path: &Path, h: usize, w: usize, data: Vec<u8>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let img = GrayImage::from_raw(w as u32, h as u32, data).expect("buffer sized to dims");
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::image(path, e))
}

/// Quantises a probability to the 8-bit value stored on disk.
pub fn quantize(p: f64) -> u8 {
    (p * 255.0).round() as u8
}

/// 8-bit grayscale PNG with value `round(p·255)`.
pub fn write_prob_map(path: &Path, prob: &ProbMask) -> Result<()> {
    let data = prob.data().iter().map(|&p| quantize(p)).collect();
    save_gray(path, prob.height(), prob.width(), data)
}

/// 8-bit PNG, 255 for foreground and 0 for background.
pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let data = mask.data().iter().map(|&fg| if fg { 255 } else { 0 }).collect();
    save_gray(path, mask.height(), mask.width(), data)
}

pub fn write_image(path: &Path, image: &ImageBuffer) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let img = image::RgbImage::from_raw(image.width() as u32, image.height() as u32, image.data().to_vec())
        .expect("buffer sized to dims");
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::image(path, e))
}

/// Finds `<dir>/<stem>.<ext>` for the first recognised extension present.
pub fn find_raster(dir: &Path, stem: &str) -> Option<std::path::PathBuf> {
    RASTER_EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prob_map_quantisation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let img = GrayImage::from_raw(3, 1, vec![0, 128, 255]).unwrap();
        img.save(&path).unwrap();
        let m = read_prob_map(&path).unwrap();
        assert_eq!(m.dims(), (1, 3));
        assert_eq!(m.data()[0], 0.0);
        assert!((m.data()[1] - 0.50196).abs() < 1e-5);
        assert_eq!(m.data()[1], 128.0 / 255.0);
        assert_eq!(m.data()[2], 1.0);
    }

    #[test]
    fn prob_map_16_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m16.png");
        let img = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(2, 1, vec![0u16, 65535]).unwrap();
        img.save(&path).unwrap();
        assert_eq!(read_prob_map(&path).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn colour_prob_map_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgb.png");
        image::RgbImage::new(2, 2).save(&path).unwrap();
        assert!(matches!(read_prob_map(&path), Err(Error::MalformedMap { .. })));
    }

    #[test]
    fn binary_maps_round_trip_losslessly() {
        let dir = tempfile::tempdir().unwrap();
        let mask = BinaryMask::from_fn(4, 5, |r, c| (r * c) % 3 == 1);
        let prob = ProbMask::from_binary(&mask);
        write_prob_map(&dir.path().join("p.png"), &prob).unwrap();
        assert_eq!(read_prob_map(&dir.path().join("p.png")).unwrap(), prob);
        write_mask(&dir.path().join("m.png"), &mask).unwrap();
        assert_eq!(read_mask(&dir.path().join("m.png")).unwrap(), mask);
    }

    #[test]
    fn mask_threshold_at_128() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gt.png");
        GrayImage::from_raw(3, 1, vec![127, 128, 200]).unwrap().save(&path).unwrap();
        assert_eq!(read_mask(&path).unwrap().data(), &[false, true, true]);
    }

    #[test]
    fn image_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageBuffer::from_fn(3, 4, |r, c| [r as u8 * 50, c as u8 * 40, 9]);
        let path = dir.path().join("a/b/img.png");
        write_image(&path, &img).unwrap();
        assert_eq!(read_image(&path).unwrap(), img);
        assert_eq!(find_raster(&dir.path().join("a/b"), "img"), Some(path));
        assert_eq!(find_raster(dir.path(), "img"), None);
    }
}
