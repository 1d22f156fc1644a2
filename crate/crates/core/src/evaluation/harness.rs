//! Metric computation over trained models.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{
    acc_at_q, arp, certainty_consistency, fid, rank_percentile, spearman, ConsistencyBin, RankTable,
};
use crate::discriminator::Discriminator;
use crate::error::{Error, Result};
use crate::generator::{Decoding, Generator};
use crate::parallel;
use crate::retrieval::RetrievalModel;
use crate::rng::{self, purpose};
use crate::sketch::{rasterize, RasterConfig, RasterImage};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub acc1: f64,
    /// Acc@min(10, N).
    pub acc10: f64,
    pub arp: f64,
}

impl RetrievalMetrics {
    pub fn from_table(table: &RankTable) -> Result<Self> {
        let n = table
            .records()
            .iter()
            .map(|r| r.gallery_size)
            .min()
            .unwrap_or(0);
        Ok(Self {
            acc1: acc_at_q(table, 1)?,
            acc10: acc_at_q(table, n.min(10))?,
            arp: arp(table)?,
        })
    }
}

fn check_aligned(a: usize, b: usize, ids: usize) -> Result<()> {
    if a != b || a != ids {
        return Err(crate::error::shape_err((a, b), ids));
    }
    if a < 2 {
        return Err(Error::EmptyDataset("evaluation needs at least 2 pairs"));
    }
    Ok(())
}

/// Sketch `i` queries the photo gallery; its true match is photo `i`.
pub fn evaluate_retrieval(
    model: &RetrievalModel,
    sketches: &[&RasterImage],
    photos: &[&RasterImage],
    ids: &[String],
) -> Result<(RankTable, RetrievalMetrics)> {
    check_aligned(sketches.len(), photos.len(), ids.len())?;
    let q = model.embed_many(sketches)?;
    let g = model.embed_many(photos)?;
    let targets: Vec<usize> = (0..q.len()).collect();
    let table = RankTable::from_embeddings(ids, &q, &targets, ids, &g)?;
    let m = RetrievalMetrics::from_table(&table)?;
    Ok((table, m))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationMetrics {
    pub acc1: f64,
    pub acc10: f64,
    /// `None` when there are no more samples than feature dimensions.
    pub fid: Option<f64>,
}

/// Greedy sketches for each photo, judged by `judge`: retrieval accuracy of
/// the generated sketch against the photo gallery, and FID between the
/// judge's pooled features of generated and real sketches.
pub fn evaluate_generation(
    generator: &Generator,
    judge: &RetrievalModel,
    photos: &[&RasterImage],
    real_sketches: &[&RasterImage],
    ids: &[String],
    raster: &RasterConfig,
) -> Result<GenerationMetrics> {
    check_aligned(photos.len(), real_sketches.len(), ids.len())?;
    let max_len = generator.config.max_len;
    let generated = parallel::map_indexed(photos.len(), |i| {
        let mut r = rng::stream(0, purpose::EVAL, i as u64);
        let s = generator.sample(photos[i], Decoding::Greedy, max_len, &mut r)?;
        rasterize(&s.sequence, raster)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let gen_refs: Vec<&RasterImage> = generated.iter().collect();
    let (_, m) = evaluate_retrieval(judge, &gen_refs, photos, ids)?;
    let feats = |imgs: &[&RasterImage]| -> Result<Vec<Vec<f64>>> {
        parallel::map_indexed(imgs.len(), |i| {
            judge.embed_with_features(imgs[i]).map(|(_, f)| f)
        })
        .into_iter()
        .collect()
    };
    let fid = match fid(&feats(&gen_refs)?, &feats(real_sketches)?) {
        Ok(v) => Some(v.max(0.0)),
        Err(Error::TooFewSamples { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(GenerationMetrics {
        acc1: m.acc1,
        acc10: m.acc10,
        fid,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub bins: Vec<ConsistencyBin>,
    /// Rank correlation between bin index and mean ARP over populated bins.
    pub spearman: Option<f64>,
    pub pairs: usize,
}

/// Generate one pseudo sketch per photo, score the pair with `disc`, and
/// relate the score to how well the sketch retrieves its own photo among
/// `photos`.
#[allow(clippy::too_many_arguments)]
pub fn consistency_analysis(
    generator: &Generator,
    disc: &Discriminator,
    retrieval: &RetrievalModel,
    photos: &[&RasterImage],
    ids: &[String],
    raster: &RasterConfig,
    decoding: Decoding,
    seed: u64,
) -> Result<ConsistencyReport> {
    check_aligned(photos.len(), ids.len(), ids.len())?;
    let max_len = generator.config.max_len;
    let sketches = parallel::map_indexed(photos.len(), |i| {
        let mut r = rng::stream(seed, purpose::EVAL, i as u64);
        let s = generator.sample(photos[i], decoding, max_len, &mut r)?;
        rasterize(&s.sequence, raster)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&RasterImage> = sketches.iter().collect();
    let pairs: Vec<(&RasterImage, &RasterImage)> =
        photos.iter().copied().zip(refs.iter().copied()).collect();
    let scores = disc.certainty_weights(&pairs)?;
    let (table, _) = evaluate_retrieval(retrieval, &refs, photos, ids)?;
    let pct: Vec<f64> = table
        .records()
        .iter()
        .map(|r| rank_percentile(r.rank, r.gallery_size))
        .collect();
    let bins = certainty_consistency(&scores, &pct)?;
    let idx: Vec<f64> = bins.iter().map(|b| b.index as f64).collect();
    let means: Vec<f64> = bins.iter().map(|b| b.mean_arp).collect();
    Ok(ConsistencyReport {
        spearman: spearman(&idx, &means),
        bins,
        pairs: photos.len(),
    })
}
