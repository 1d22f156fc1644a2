use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::parallel;
use crate::sketch::{
    normalize_offsets, rasterize, scale_offsets, Corpus, LabeledPairSet, RasterConfig, RasterImage,
    StrokeSequence,
};

#[derive(Clone, Debug, PartialEq)]
pub struct PairItem {
    pub id: String,
    pub photo: RasterImage,
    /// Offsets divided by the training scale.
    pub sketch: StrokeSequence,
    pub raster: RasterImage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhotoItem {
    pub id: String,
    pub photo: RasterImage,
}

/// Corpus prepared for training: normalized sketches with their rasters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainData {
    pub raster: RasterConfig,
    pub scale: f64,
    pub labeled: Vec<PairItem>,
    pub unlabeled: Vec<PhotoItem>,
    pub test: Vec<PairItem>,
}

fn items(set: &LabeledPairSet, raster: &RasterConfig, max_len: usize) -> Result<Vec<PairItem>> {
    parallel::map_indexed(set.len(), |i| {
        let p = &set.pairs[i];
        if p.sketch.len() > max_len {
            return Err(Error::InvalidSequence(alloc::format!(
                "sketch {} has {} points, more than max_len {max_len}",
                p.id,
                p.sketch.len()
            )));
        }
        Ok(PairItem {
            id: p.id.clone(),
            photo: p.photo.clone(),
            sketch: p.sketch.clone(),
            raster: rasterize(&p.sketch, raster)?,
        })
    })
    .into_iter()
    .collect()
}

impl TrainData {
    /// Normalize offsets by the labelled set's spread (reused for the test
    /// split) and rasterize every sketch.
    pub fn prepare(corpus: &Corpus, raster: RasterConfig, max_len: usize) -> Result<Self> {
        corpus.validate()?;
        let (labeled, scale) = normalize_offsets(&corpus.labeled)?;
        let test = scale_offsets(&corpus.test, scale);
        Ok(Self {
            labeled: items(&labeled, &raster, max_len)?,
            test: items(&test, &raster, max_len)?,
            unlabeled: corpus
                .unlabeled
                .photos
                .iter()
                .map(|p| PhotoItem {
                    id: p.id.clone(),
                    photo: p.photo.clone(),
                })
                .collect(),
            raster,
            scale,
        })
    }
}
