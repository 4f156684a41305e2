//! Cross-validation partitioning, sub-model averaging and model fusion.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{tta_predict, TtaVariant};
use crate::mask::{ensure_same_dims, ImageBuffer, ProbMask, Raster};
use crate::predictor::Predictor;

/// Assignment of `n` items to `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    k: usize,
    assignment: Vec<usize>,
}

impl FoldAssignment {
    pub fn new(k: usize, assignment: Vec<usize>) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidConfig(format!("fold count must be >= 2, got {k}")));
        }
        if let Some(&bad) = assignment.iter().find(|&&f| f >= k) {
            return Err(Error::FoldTable(format!("fold index {bad} out of range for k={k}")));
        }
        Ok(Self { k, assignment })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_items(&self) -> usize {
        self.assignment.len()
    }

    pub fn fold_of(&self, item: usize) -> usize {
        self.assignment[item]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Items held out for validation in `fold`, ascending.
    pub fn validation_items(&self, fold: usize) -> Vec<usize> {
        (0..self.n_items()).filter(|&i| self.assignment[i] == fold).collect()
    }

    /// Items used for training when `fold` is held out, ascending.
    pub fn training_items(&self, fold: usize) -> Vec<usize> {
        (0..self.n_items()).filter(|&i| self.assignment[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }

    /// Two-column tab-separated table `item_id<TAB>fold` with a header line.
    pub fn to_table(&self, ids: &[String]) -> Result<String> {
        if ids.len() != self.n_items() {
            return Err(Error::FoldTable(format!(
                "{} ids for {} assigned items",
                ids.len(),
                self.n_items()
            )));
        }
        let mut out = String::from("item_id\tfold\n");
        for (id, fold) in ids.iter().zip(&self.assignment) {
            out.push_str(&format!("{id}\t{fold}\n"));
        }
        Ok(out)
    }

    /// Parses the output of [`FoldAssignment::to_table`].
    pub fn from_table(text: &str, k: usize) -> Result<(Vec<String>, Self)> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == "item_id\tfold" => {}
            other => {
                return Err(Error::FoldTable(format!("bad header {other:?}")));
            }
        }
        let mut ids = Vec::new();
        let mut folds = Vec::new();
        for (n, line) in lines.enumerate() {
            let (id, fold) = line
                .split_once('\t')
                .ok_or_else(|| Error::FoldTable(format!("line {}: expected two columns", n + 2)))?;
            let fold: usize = fold
                .trim()
                .parse()
                .map_err(|_| Error::FoldTable(format!("line {}: bad fold `{fold}`", n + 2)))?;
            ids.push(id.to_string());
            folds.push(fold);
        }
        Ok((ids, Self::new(k, folds)?))
    }
}

/// Shuffled, balanced k-fold split: fold sizes are ⌊n/k⌋ or ⌈n/k⌉.
pub fn split_folds(n_items: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("fold count must be >= 2, got {k}")));
    }
    if n_items < k {
        return Err(Error::InvalidConfig(format!(
            "cannot split {n_items} items into {k} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n_items).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n_items];
    for (pos, item) in order.into_iter().enumerate() {
        assignment[item] = pos % k;
    }
    FoldAssignment::new(k, assignment)
}

/// Pixel-wise weighted arithmetic mean.
///
/// Members are summed in list order. The result is clamped to the per-pixel
/// range of the inputs, so it never leaves `[min, max]` and equal inputs
/// reproduce their common value exactly.
pub fn average_probmasks(masks: &[ProbMask], weights: Option<&[f64]>) -> Result<ProbMask> {
    let first = masks.first().ok_or(Error::Empty("probability mask list"))?;
    for m in &masks[1..] {
        ensure_same_dims(first.dims(), m.dims())?;
    }
    let weights: Vec<f64> = match weights {
        Some(w) => {
            if w.len() != masks.len() {
                return Err(Error::InvalidConfig(format!(
                    "{} weights for {} masks",
                    w.len(),
                    masks.len()
                )));
            }
            if let Some(bad) = w.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::InvalidConfig(format!("weights must be positive, got {bad}")));
            }
            w.to_vec()
        }
        None => vec![1.0; masks.len()],
    };
    let total: f64 = weights.iter().sum();

    let n = first.pixel_count();
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let mut acc = 0.0;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (m, &w) in masks.iter().zip(&weights) {
            let v = m.data()[i];
            acc += w * v;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        data.push((acc / total).clamp(lo, hi));
    }
    Ok(ProbMask::from_valid(first.height(), first.width(), data))
}

/// Unweighted mean of two model families' maps.
pub fn fuse_models(a: &ProbMask, b: &ProbMask) -> Result<ProbMask> {
    ensure_same_dims(a.dims(), b.dims())?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x + y) / 2.0)
        .collect();
    Ok(ProbMask::from_valid(a.height(), a.width(), data))
}

/// Fuses any number of family outputs: a single map passes through, two use
/// [`fuse_models`], more fall back to an equal-weight mean.
pub fn fuse_all(maps: &[ProbMask]) -> Result<ProbMask> {
    match maps {
        [] => Err(Error::Empty("model family list")),
        [only] => Ok(only.clone()),
        [a, b] => fuse_models(a, b),
        _ => average_probmasks(maps, None),
    }
}

/// A weighted sub-model.
#[derive(Clone)]
pub struct Member {
    pub predictor: Arc<dyn Predictor>,
    pub weight: f64,
}

impl std::fmt::Debug for Member {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Member")
            .field("predictor", &self.predictor.name())
            .field("weight", &self.weight)
            .finish()
    }
}

/// The sub-models of one model family (typically one per CV fold).
#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    name: String,
    members: Vec<Member>,
}

impl EnsembleSpec {
    pub fn new(name: impl Into<String>, members: Vec<Member>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Empty("ensemble members"));
        }
        if let Some(m) = members.iter().find(|m| !(m.weight > 0.0 && m.weight.is_finite())) {
            return Err(Error::InvalidConfig(format!(
                "member `{}` has non-positive weight {}",
                m.predictor.name(),
                m.weight
            )));
        }
        Ok(Self {
            name: name.into(),
            members,
        })
    }

    /// All members with weight 1.
    pub fn equal(name: impl Into<String>, predictors: Vec<Arc<dyn Predictor>>) -> Result<Self> {
        let members = predictors
            .into_iter()
            .map(|predictor| Member {
                predictor,
                weight: 1.0,
            })
            .collect();
        Self::new(name, members)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }
}

/// Averages the sub-models' predictions for one image. When `tta` is given,
/// each sub-model that accepts transformed input is wrapped in TTA before
/// the fold average; stored-map predictors are used as-is.
///
/// Sub-models run concurrently, but the reduction is in member order.
pub fn fold_ensemble_predict(
    spec: &EnsembleSpec,
    id: &str,
    image: &ImageBuffer,
    tta: Option<&[TtaVariant]>,
) -> Result<ProbMask> {
    let outputs: Vec<ProbMask> = spec
        .members
        .par_iter()
        .enumerate()
        .map(|(index, member)| {
            let p = &member.predictor;
            let out = match tta {
                Some(variants) if p.accepts_transformed_input() => {
                    tta_predict(|img| p.predict(id, img), image, variants)
                }
                _ => p.predict(id, image).and_then(|m| {
                    ensure_same_dims(image.dims(), m.dims())?;
                    Ok(m)
                }),
            };
            out.map_err(|e| Error::SubModel {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let weights: Vec<f64> = spec.members.iter().map(|m| m.weight).collect();
    average_probmasks(&outputs, Some(&weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::ConstantPredictor;
    use rand::Rng;

    fn random_mask(rng: &mut impl Rng, h: usize, w: usize) -> ProbMask {
        ProbMask::new(h, w, (0..h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    struct PatternPredictor(ProbMask);

    impl Predictor for PatternPredictor {
        fn name(&self) -> &str {
            "pattern"
        }
        fn predict(&self, _id: &str, _image: &ImageBuffer) -> Result<ProbMask> {
            Ok(self.0.clone())
        }
    }

    struct Failing;

    impl Predictor for Failing {
        fn name(&self) -> &str {
            "failing"
        }
        fn predict(&self, id: &str, _image: &ImageBuffer) -> Result<ProbMask> {
            Err(Error::UnknownImage {
                predictor: "failing".into(),
                id: id.into(),
            })
        }
    }

    fn constants(values: &[f64]) -> EnsembleSpec {
        let preds = values
            .iter()
            .map(|&v| Arc::new(ConstantPredictor::new(format!("c{v}"), v).unwrap()) as Arc<dyn Predictor>)
            .collect();
        EnsembleSpec::equal("consts", preds).unwrap()
    }

    #[test]
    fn split_810_into_five() {
        let f = split_folds(810, 5, 3).unwrap();
        assert_eq!(f.fold_sizes(), vec![162; 5]);
    }

    #[test]
    fn split_deterministic() {
        assert_eq!(split_folds(10, 5, 7).unwrap(), split_folds(10, 5, 7).unwrap());
    }

    #[test]
    fn split_seven_into_five() {
        let mut sizes = split_folds(7, 5, 11).unwrap().fold_sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![1, 1, 1, 2, 2]);
    }

    #[test]
    fn split_rejects_too_few_items() {
        assert!(split_folds(4, 5, 0).is_err());
        assert!(split_folds(4, 1, 0).is_err());
    }

    #[test]
    fn split_seeds_differ() {
        let base = split_folds(100, 5, 0).unwrap();
        let differing = (1..20)
            .filter(|&s| split_folds(100, 5, s).unwrap() != base)
            .count();
        assert_eq!(differing, 19);
    }

    #[test]
    fn fold_views_partition_items() {
        let f = split_folds(23, 4, 5).unwrap();
        for fold in 0..4 {
            let val = f.validation_items(fold);
            let train = f.training_items(fold);
            assert_eq!(val.len() + train.len(), 23);
            assert!(val.iter().all(|i| !train.contains(i)));
        }
    }

    #[test]
    fn fold_table_round_trip() {
        let f = split_folds(6, 3, 1).unwrap();
        let ids: Vec<String> = (0..6).map(|i| format!("img{i:02}")).collect();
        let table = f.to_table(&ids).unwrap();
        assert!(table.starts_with("item_id\tfold\n"));
        let (ids2, f2) = FoldAssignment::from_table(&table, 3).unwrap();
        assert_eq!(ids2, ids);
        assert_eq!(f2, f);
        assert!(FoldAssignment::from_table("item_id\tfold\na\t7\n", 3).is_err());
        assert!(FoldAssignment::from_table("nope\n", 3).is_err());
    }

    #[test]
    fn average_singleton() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_mask(&mut rng, 3, 3);
        assert_eq!(average_probmasks(std::slice::from_ref(&m), None).unwrap(), m);
    }

    #[test]
    fn average_two_constants() {
        let a = ProbMask::constant(2, 2, 0.2).unwrap();
        let b = ProbMask::constant(2, 2, 0.6).unwrap();
        let out = average_probmasks(&[a, b], None).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.4).abs() < 1e-15));
    }

    #[test]
    fn average_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let masks: Vec<_> = (0..5).map(|_| random_mask(&mut rng, 8, 8)).collect();
        let out = average_probmasks(&masks, None).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                let mut s = 0.0;
                for m in &masks {
                    s += m.get(r, c);
                }
                assert!((out.get(r, c) - s / 5.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn average_weighted_and_errors() {
        let a = ProbMask::constant(1, 2, 0.0).unwrap();
        let b = ProbMask::constant(1, 2, 1.0).unwrap();
        let out = average_probmasks(&[a.clone(), b.clone()], Some(&[3.0, 1.0])).unwrap();
        assert_eq!(out.data(), &[0.25, 0.25]);
        assert!(average_probmasks(&[], None).is_err());
        assert!(average_probmasks(&[a.clone(), b.clone()], Some(&[1.0])).is_err());
        assert!(average_probmasks(&[a.clone(), b], Some(&[1.0, 0.0])).is_err());
        let c = ProbMask::constant(2, 1, 0.5).unwrap();
        assert!(matches!(
            average_probmasks(&[a, c], None),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn fuse_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_mask(&mut rng, 4, 4);
        assert_eq!(fuse_models(&m, &m).unwrap(), m);
        let zero = ProbMask::constant(4, 4, 0.0).unwrap();
        let one = ProbMask::constant(4, 4, 1.0).unwrap();
        assert!(fuse_models(&zero, &one).unwrap().data().iter().all(|&v| v == 0.5));
        let n = random_mask(&mut rng, 4, 4);
        assert_eq!(fuse_models(&m, &n).unwrap(), fuse_models(&n, &m).unwrap());
        assert!(fuse_models(&m, &ProbMask::constant(4, 3, 0.0).unwrap()).is_err());
    }

    #[test]
    fn fold_ensemble_constants() {
        let img = ImageBuffer::filled(3, 4, [1, 2, 3]);
        let out = fold_ensemble_predict(&constants(&[0.5; 5]), "x", &img, None).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
        let out = fold_ensemble_predict(&constants(&[0.1, 0.2, 0.3, 0.4, 0.5]), "x", &img, Some(&TtaVariant::ALL)).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn fold_ensemble_patterns() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_mask(&mut rng, 4, 4);
        let b = random_mask(&mut rng, 4, 4);
        let spec = EnsembleSpec::equal(
            "p",
            vec![Arc::new(PatternPredictor(a.clone())), Arc::new(PatternPredictor(b.clone()))],
        )
        .unwrap();
        let img = ImageBuffer::filled(4, 4, [0, 0, 0]);
        let out = fold_ensemble_predict(&spec, "x", &img, None).unwrap();
        for i in 0..16 {
            let expected = (a.data()[i] + b.data()[i]) / 2.0;
            assert!((out.data()[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn fold_ensemble_identical_members() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_mask(&mut rng, 5, 5);
        let preds: Vec<Arc<dyn Predictor>> = (0..5).map(|_| Arc::new(PatternPredictor(a.clone())) as _).collect();
        let spec = EnsembleSpec::equal("same", preds).unwrap();
        let img = ImageBuffer::filled(5, 5, [0, 0, 0]);
        assert_eq!(fold_ensemble_predict(&spec, "x", &img, None).unwrap(), a);
    }

    #[test]
    fn fold_ensemble_annotates_failing_member() {
        let spec = EnsembleSpec::equal(
            "mixed",
            vec![
                Arc::new(ConstantPredictor::new("ok", 0.2).unwrap()),
                Arc::new(Failing),
            ],
        )
        .unwrap();
        let img = ImageBuffer::filled(2, 2, [0, 0, 0]);
        match fold_ensemble_predict(&spec, "x", &img, None) {
            Err(Error::SubModel { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ensemble_spec_rejects_empty() {
        assert!(EnsembleSpec::equal("none", vec![]).is_err());
    }
}
