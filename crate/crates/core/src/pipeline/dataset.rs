use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{find_raster, read_image, read_mask, write_image, write_mask, RASTER_EXTENSIONS};
use crate::mask::{zero_pad, zero_pad_mask, BinaryMask, ImageBuffer, Raster};
use crate::synthetic::SyntheticSample;

/// One image of a dataset, already padded to the canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub id: String,
    pub image_path: Option<PathBuf>,
    pub mask_path: Option<PathBuf>,
    pub image: ImageBuffer,
    pub mask: Option<BinaryMask>,
    /// Shape before padding.
    pub original_dims: (usize, usize),
}

/// Dataset records sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    canvas: Option<usize>,
    records: Vec<DatasetRecord>,
}

impl DatasetIndex {
    /// Builds an index from in-memory records, padding each to the canvas.
    pub fn from_records(canvas: Option<usize>, records: Vec<DatasetRecord>) -> Result<Self> {
        let mut records = records
            .into_iter()
            .map(|r| pad_record(r, canvas))
            .collect::<Result<Vec<_>>>()?;
        records.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(dup) = records.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::DuplicateId(dup[0].id.clone()));
        }
        Ok(Self { canvas, records })
    }

    pub fn from_samples(canvas: Option<usize>, samples: &[SyntheticSample]) -> Result<Self> {
        let records = samples
            .iter()
            .map(|s| DatasetRecord {
                id: s.id.clone(),
                image_path: None,
                mask_path: None,
                image: s.image.clone(),
                mask: Some(s.mask.clone()),
                original_dims: s.image.dims(),
            })
            .collect();
        Self::from_records(canvas, records)
    }

    pub fn canvas(&self) -> Option<usize> {
        self.canvas
    }

    pub fn records(&self) -> &[DatasetRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&DatasetRecord> {
        self.records
            .binary_search_by(|r| r.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.records[i])
    }

    /// True when every record carries a ground-truth mask.
    pub fn is_complete(&self) -> bool {
        self.records.iter().all(|r| r.mask.is_some())
    }

    /// `(image, mask)` pairs for the records with ground truth, in id order.
    pub fn labelled_pairs(&self) -> Vec<(ImageBuffer, BinaryMask)> {
        self.records
            .iter()
            .filter_map(|r| r.mask.as_ref().map(|m| (r.image.clone(), m.clone())))
            .collect()
    }

    /// Restricts the index to the records at `positions` (indices into
    /// [`DatasetIndex::records`]).
    pub fn subset(&self, positions: &[usize]) -> Self {
        let mut records: Vec<_> = positions.iter().map(|&i| self.records[i].clone()).collect();
        records.sort_by(|a, b| a.id.cmp(&b.id));
        Self {
            canvas: self.canvas,
            records,
        }
    }
}

fn pad_record(mut r: DatasetRecord, canvas: Option<usize>) -> Result<DatasetRecord> {
    if let Some(m) = &r.mask {
        if m.dims() != r.image.dims() {
            return Err(Error::MaskImageMismatch {
                id: r.id.clone(),
                image_h: r.image.height(),
                image_w: r.image.width(),
                mask_h: m.height(),
                mask_w: m.width(),
            });
        }
    }
    if let Some(size) = canvas {
        let (h, w) = r.image.dims();
        if h > size || w > size {
            return Err(Error::Dataset(format!(
                "image `{}` is {h}x{w}, larger than the {size}x{size} canvas",
                r.id
            )));
        }
        r.image = zero_pad(&r.image, size, size)?;
        r.mask = r.mask.map(|m| zero_pad_mask(&m, size, size)).transpose()?;
    }
    Ok(r)
}

/// Maps file stem to path for every recognised raster in `dir`.
fn list_rasters(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if !path.is_file() || !ext.is_some_and(|e| RASTER_EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if out.insert(stem.to_string(), path.clone()).is_some() {
            return Err(Error::DuplicateId(stem.to_string()));
        }
    }
    Ok(out)
}

/// Loads `root/images/*` and, when present, the matching `root/masks/*`,
/// padding everything to `canvas`×`canvas`. Mask files are binarised at
/// intensity 128.
pub fn ingest(root: &Path, canvas: Option<usize>) -> Result<DatasetIndex> {
    let image_dir = root.join("images");
    if !image_dir.is_dir() {
        return Err(Error::Dataset(format!(
            "{} has no images/ directory",
            root.display()
        )));
    }
    let images = list_rasters(&image_dir)?;
    let mask_dir = root.join("masks");
    let masks = if mask_dir.is_dir() {
        list_rasters(&mask_dir)?
    } else {
        BTreeMap::new()
    };
    if let Some(orphan) = masks.keys().find(|k| !images.contains_key(*k)) {
        return Err(Error::Dataset(format!("mask `{orphan}` has no matching image")));
    }

    let records = images
        .into_par_iter()
        .map(|(id, image_path)| {
            let image = read_image(&image_path)?;
            let mask_path = masks.get(&id).cloned();
            let mask = mask_path.as_deref().map(read_mask).transpose()?;
            let original_dims = image.dims();
            pad_record(
                DatasetRecord {
                    id,
                    image_path: Some(image_path),
                    mask_path,
                    image,
                    mask,
                    original_dims,
                },
                canvas,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    DatasetIndex::from_records(canvas, records)
}

/// Writes samples in the `images/` + `masks/` layout read by [`ingest`].
pub fn write_dataset(root: &Path, samples: &[SyntheticSample], with_masks: bool) -> Result<()> {
    for s in samples {
        write_image(&root.join("images").join(format!("{}.png", s.id)), &s.image)?;
        if with_masks {
            write_mask(&root.join("masks").join(format!("{}.png", s.id)), &s.mask)?;
        }
    }
    Ok(())
}

/// Reads `<dir>/<id>.png` masks for the given ids; ids with no file are
/// returned separately.
pub fn read_prediction_masks(
    dir: &Path,
    ids: &[String],
) -> Result<(BTreeMap<String, BinaryMask>, Vec<String>)> {
    let mut found = BTreeMap::new();
    let mut missing = Vec::new();
    for id in ids {
        match find_raster(dir, id) {
            Some(p) => {
                found.insert(id.clone(), read_mask(&p)?);
            }
            None => missing.push(id.clone()),
        }
    }
    Ok((found, missing))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate_blob_dataset, BlobConfig};

    fn samples(n: usize) -> Vec<SyntheticSample> {
        let cfg = BlobConfig {
            size: 12,
            ..BlobConfig::default()
        };
        generate_blob_dataset(n, &cfg, 5)
    }

    #[test]
    fn ingest_complete_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let s = samples(6);
        write_dataset(dir.path(), &s, true).unwrap();
        let idx = ingest(dir.path(), Some(16)).unwrap();
        assert_eq!(idx.len(), 6);
        assert!(idx.is_complete());
        let rec = idx.get("blob_002").unwrap();
        assert_eq!(rec.image.dims(), (16, 16));
        assert_eq!(rec.original_dims, (12, 12));
        assert_eq!(rec.mask.as_ref().unwrap().foreground_count(), s[2].mask.foreground_count());
    }

    #[test]
    fn ingest_without_masks() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &samples(3), false).unwrap();
        let idx = ingest(dir.path(), None).unwrap();
        assert_eq!(idx.len(), 3);
        assert!(idx.records().iter().all(|r| r.mask.is_none()));
    }

    #[test]
    fn ingest_mask_size_mismatch_names_id() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &samples(2), true).unwrap();
        write_mask(&dir.path().join("masks/blob_001.png"), &BinaryMask::empty(5, 12)).unwrap();
        match ingest(dir.path(), Some(16)) {
            Err(Error::MaskImageMismatch { id, .. }) => assert_eq!(id, "blob_001"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ingest_rejects_duplicates_and_orphans() {
        let dir = tempfile::tempdir().unwrap();
        let s = samples(2);
        write_dataset(dir.path(), &s, true).unwrap();
        std::fs::copy(
            dir.path().join("images/blob_000.png"),
            dir.path().join("images/blob_000.tif"),
        )
        .unwrap();
        assert!(matches!(ingest(dir.path(), None), Err(Error::DuplicateId(_))));
        std::fs::remove_file(dir.path().join("images/blob_000.tif")).unwrap();
        write_mask(&dir.path().join("masks/extra.png"), &BinaryMask::empty(12, 12)).unwrap();
        assert!(matches!(ingest(dir.path(), None), Err(Error::Dataset(_))));
    }

    #[test]
    fn ingest_rejects_too_small_canvas_and_missing_dir() {
        let dir = tempfile::tempdir().unwrap();
        assert!(ingest(dir.path(), None).is_err());
        write_dataset(dir.path(), &samples(1), true).unwrap();
        assert!(ingest(dir.path(), Some(8)).is_err());
    }

    #[test]
    fn from_records_sorts_and_checks() {
        let s = samples(4);
        let mut shuffled = s.clone();
        shuffled.reverse();
        let a = DatasetIndex::from_samples(None, &s).unwrap();
        let b = DatasetIndex::from_samples(None, &shuffled).unwrap();
        assert_eq!(a, b);
        let mut dup = s.clone();
        dup.push(s[0].clone());
        assert!(matches!(DatasetIndex::from_samples(None, &dup), Err(Error::DuplicateId(_))));
    }
}
