use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::raster::RasterImage;
use super::stroke::StrokeSequence;
use crate::error::{Error, Result};
use crate::math;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub id: String,
    pub photo: RasterImage,
    pub sketch: StrokeSequence,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledPairSet {
    pub pairs: Vec<LabeledPair>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnlabeledPhoto {
    pub id: String,
    pub photo: RasterImage,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UnlabeledPhotoSet {
    pub photos: Vec<UnlabeledPhoto>,
}

fn check_unique<'a>(ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::InvalidArgument(format!("duplicate id {id:?}")));
        }
    }
    Ok(())
}

impl LabeledPairSet {
    pub fn new(pairs: Vec<LabeledPair>) -> Result<Self> {
        check_unique(pairs.iter().map(|p| p.id.as_str()))?;
        Ok(Self { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// First `n` pairs (in stored order).
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            pairs: self.pairs.iter().take(n).cloned().collect(),
        }
    }
}

impl UnlabeledPhotoSet {
    pub fn new(photos: Vec<UnlabeledPhoto>) -> Result<Self> {
        check_unique(photos.iter().map(|p| p.id.as_str()))?;
        Ok(Self { photos })
    }

    pub fn len(&self) -> usize {
        self.photos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.photos.is_empty()
    }
}

/// Training pairs, unlabelled photos and a held-out test split. Ids are
/// unique across all three splits.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub labeled: LabeledPairSet,
    pub unlabeled: UnlabeledPhotoSet,
    pub test: LabeledPairSet,
}

impl Corpus {
    pub fn validate(&self) -> Result<()> {
        check_unique(
            self.labeled
                .pairs
                .iter()
                .map(|p| p.id.as_str())
                .chain(self.unlabeled.photos.iter().map(|p| p.id.as_str()))
                .chain(self.test.pairs.iter().map(|p| p.id.as_str())),
        )
    }

    pub fn is_empty(&self) -> bool {
        self.labeled.is_empty() && self.unlabeled.is_empty() && self.test.is_empty()
    }
}

/// Divide every offset by the population standard deviation of all `dx`
/// and `dy` values in the set. Returns the rescaled set and the scale.
pub fn normalize_offsets(dataset: &LabeledPairSet) -> Result<(LabeledPairSet, f64)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset(
            "normalize_offsets needs at least one pair",
        ));
    }
    let values: Vec<f64> = dataset
        .pairs
        .iter()
        .flat_map(|p| p.sketch.points().iter().flat_map(|q| [q.dx, q.dy]))
        .collect();
    if values.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateCorpus);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    // identical nonzero offsets have zero spread; fall back to their magnitude
    let scale = if var > 0.0 {
        math::sqrt(var)
    } else {
        math::sqrt(values.iter().map(|v| v * v).sum::<f64>() / n)
    };
    Ok((scale_offsets(dataset, scale), scale))
}

/// Divide offsets by a previously computed scale (e.g. on the test split).
pub fn scale_offsets(dataset: &LabeledPairSet, scale: f64) -> LabeledPairSet {
    LabeledPairSet {
        pairs: dataset
            .pairs
            .iter()
            .map(|p| LabeledPair {
                id: p.id.clone(),
                photo: p.photo.clone(),
                sketch: p.sketch.map_offsets(|v| v / scale),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::stroke::{PenState, StrokePoint, DEFAULT_MAX_LEN};
    use alloc::vec;

    fn set(sketches: &[&[(f64, f64)]]) -> LabeledPairSet {
        LabeledPairSet::new(
            sketches
                .iter()
                .enumerate()
                .map(|(i, pts)| LabeledPair {
                    id: format!("s{i}"),
                    photo: RasterImage::zeros(4, 4),
                    sketch: StrokeSequence::new(
                        pts.iter()
                            .map(|&(x, y)| StrokePoint::new(x, y, PenState::Down))
                            .collect(),
                        DEFAULT_MAX_LEN,
                    )
                    .unwrap(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn std_of_cross_offsets_is_sqrt2() {
        let d = set(&[&[(2.0, 0.0), (0.0, 2.0), (-2.0, 0.0), (0.0, -2.0)]]);
        let (n, s) = normalize_offsets(&d).unwrap();
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
        assert!((n.pairs[0].sketch.points()[0].dx - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn unit_std_is_identity() {
        let d = set(&[&[(1.0, -1.0), (-1.0, 1.0)]]);
        let (n, s) = normalize_offsets(&d).unwrap();
        assert_eq!(s, 1.0);
        assert_eq!(n, d);
    }

    #[test]
    fn single_point_population_std() {
        let d = set(&[&[(3.0, 4.0)]]);
        let (n, s) = normalize_offsets(&d).unwrap();
        assert!((s - 0.5).abs() < 1e-15);
        let p = n.pairs[0].sketch.points()[0];
        assert_eq!((p.dx, p.dy), (6.0, 8.0));
    }

    #[test]
    fn degenerate_and_empty() {
        assert_eq!(
            normalize_offsets(&set(&[&[(0.0, 0.0)]])),
            Err(Error::DegenerateCorpus)
        );
        assert!(matches!(
            normalize_offsets(&LabeledPairSet::default()),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn rescaling_restores_offsets() {
        let d = set(&[&[(0.37, -12.5), (3.0, 4.25)], &[(-7.5, 0.125)]]);
        let (n, s) = normalize_offsets(&d).unwrap();
        for (a, b) in d.pairs.iter().zip(&n.pairs) {
            for (p, q) in a.sketch.points().iter().zip(b.sketch.points()) {
                assert!((q.dx * s - p.dx).abs() <= 1e-12 * p.dx.abs().max(1.0));
                assert!((q.dy * s - p.dy).abs() <= 1e-12 * p.dy.abs().max(1.0));
            }
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let d = set(&[&[(1.0, 0.0)]]);
        let mut pairs = d.pairs.clone();
        pairs.push(d.pairs[0].clone());
        assert!(LabeledPairSet::new(pairs).is_err());
        let _ = vec![0];
    }
}
