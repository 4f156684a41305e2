//! Turning fused probability maps into final masks: threshold, fill holes,
//! drop tiny objects.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, ProbMask, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    /// The complementary neighbourhood used for the background.
    pub fn dual(self) -> Self {
        match self {
            Connectivity::Four => Connectivity::Eight,
            Connectivity::Eight => Connectivity::Four,
        }
    }
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;

    fn try_from(n: u8) -> Result<Self> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            _ => Err(Error::InvalidConfig(format!("connectivity must be 4 or 8, got {n}"))),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessConfig {
    pub threshold: f64,
    /// Foreground components strictly smaller than this are removed.
    pub min_object_area: usize,
    /// Foreground connectivity; holes are found with the dual.
    pub connectivity: Connectivity,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            min_object_area: 100,
            connectivity: Connectivity::Eight,
        }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        check_threshold(self.threshold)
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::InvalidConfig(format!("threshold must be in (0, 1), got {t}")));
    }
    Ok(())
}

/// Foreground where `p >= threshold`.
pub fn binarize(prob: &ProbMask, threshold: f64) -> Result<BinaryMask> {
    check_threshold(threshold)?;
    let data = prob.data().iter().map(|&p| p >= threshold).collect();
    BinaryMask::new(prob.height(), prob.width(), data)
}

/// Per-pixel component labels; 0 is background, components are `1..=count`
/// numbered in raster order of their first pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    count: usize,
}

impl LabelMap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Pixel count per component; index 0 is the background.
    pub fn areas(&self) -> Vec<usize> {
        let mut areas = vec![0; self.count + 1];
        for &l in &self.labels {
            areas[l as usize] += 1;
        }
        areas
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let ra = find(parent, a);
    let rb = find(parent, b);
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

/// Labels the `true` pixels of `select` (which has the shape `h`×`w`).
fn label_pixels(h: usize, w: usize, select: &[bool], conn: Connectivity) -> LabelMap {
    // two-pass union-find; only already-visited neighbours are inspected
    let back: &[(isize, isize)] = match conn {
        Connectivity::Four => &[(-1, 0), (0, -1)],
        Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1)],
    };
    let mut provisional = vec![0u32; h * w];
    let mut parent: Vec<u32> = vec![0];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if !select[i] {
                continue;
            }
            let mut label = 0u32;
            for &(dr, dc) in back {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nc >= w as isize {
                    continue;
                }
                let nl = provisional[nr as usize * w + nc as usize];
                if nl == 0 {
                    continue;
                }
                if label == 0 {
                    label = nl;
                } else {
                    union(&mut parent, label, nl);
                }
            }
            if label == 0 {
                label = parent.len() as u32;
                parent.push(label);
            }
            provisional[i] = label;
        }
    }

    let mut remap = vec![0u32; parent.len()];
    let mut count = 0u32;
    let mut labels = vec![0u32; h * w];
    for i in 0..h * w {
        let p = provisional[i];
        if p == 0 {
            continue;
        }
        let root = find(&mut parent, p) as usize;
        if remap[root] == 0 {
            count += 1;
            remap[root] = count;
        }
        labels[i] = remap[root];
    }
    LabelMap {
        height: h,
        width: w,
        labels,
        count: count as usize,
    }
}

pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> LabelMap {
    label_pixels(mask.height(), mask.width(), mask.data(), connectivity)
}

/// Sets every background region that cannot reach the raster border to
/// foreground. `connectivity` is the foreground connectivity; background
/// regions are traced with its dual.
pub fn fill_holes(mask: &BinaryMask, connectivity: Connectivity) -> BinaryMask {
    let (h, w) = mask.dims();
    let background: Vec<bool> = mask.data().iter().map(|&fg| !fg).collect();
    let regions = label_pixels(h, w, &background, connectivity.dual());
    let mut touches_border = vec![false; regions.count() + 1];
    for r in 0..h {
        for c in 0..w {
            if r == 0 || c == 0 || r + 1 == h || c + 1 == w {
                touches_border[regions.labels()[r * w + c] as usize] = true;
            }
        }
    }
    let data = mask
        .data()
        .iter()
        .zip(regions.labels())
        .map(|(&fg, &l)| fg || !touches_border[l as usize])
        .collect();
    BinaryMask::new(h, w, data).expect("shape unchanged")
}

/// Removes foreground components with fewer than `min_area` pixels.
pub fn remove_small_objects(
    mask: &BinaryMask,
    min_area: usize,
    connectivity: Connectivity,
) -> BinaryMask {
    if min_area == 0 {
        return mask.clone();
    }
    let labels = connected_components(mask, connectivity);
    let areas = labels.areas();
    let data = labels
        .labels()
        .iter()
        .map(|&l| l != 0 && areas[l as usize] >= min_area)
        .collect();
    BinaryMask::new(mask.height(), mask.width(), data).expect("shape unchanged")
}

/// Threshold, then fill holes, then remove small objects.
pub fn postprocess(prob: &ProbMask, cfg: &PostprocessConfig) -> Result<BinaryMask> {
    cfg.validate()?;
    let binary = binarize(prob, cfg.threshold)?;
    let filled = fill_holes(&binary, cfg.connectivity);
    Ok(remove_small_objects(&filled, cfg.min_object_area, cfg.connectivity))
}
