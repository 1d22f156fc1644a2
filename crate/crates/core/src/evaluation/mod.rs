//! Retrieval and generation metrics.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::parallel;
use crate::retrieval::rank_of;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankRecord {
    pub query_id: String,
    /// 1-based rank of the true match.
    pub rank: usize,
    pub gallery_size: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankTable {
    records: Vec<RankRecord>,
}

impl RankTable {
    pub fn new(records: Vec<RankRecord>) -> Result<Self> {
        for r in &records {
            if r.rank == 0 || r.rank > r.gallery_size {
                return Err(Error::InvalidArgument(alloc::format!(
                    "rank {} outside 1..={} for query {}",
                    r.rank,
                    r.gallery_size,
                    r.query_id
                )));
            }
        }
        Ok(Self { records })
    }

    /// Table over a shared gallery of `n` items from 1-based ranks.
    pub fn from_ranks(ranks: &[usize], n: usize) -> Result<Self> {
        Self::new(
            ranks
                .iter()
                .enumerate()
                .map(|(i, &rank)| RankRecord {
                    query_id: alloc::format!("q{i}"),
                    rank,
                    gallery_size: n,
                })
                .collect(),
        )
    }

    /// Rank each query embedding against the gallery; query `i` is paired
    /// with gallery item `targets[i]`.
    pub fn from_embeddings(
        query_ids: &[String],
        queries: &[Vec<f64>],
        targets: &[usize],
        gallery_ids: &[String],
        gallery: &[Vec<f64>],
    ) -> Result<Self> {
        if gallery.is_empty() {
            return Err(Error::EmptyDataset("gallery"));
        }
        let ranks = parallel::map_indexed(queries.len(), |i| {
            rank_of(&queries[i], gallery, gallery_ids, targets[i])
        });
        Self::new(
            ranks
                .into_iter()
                .enumerate()
                .map(|(i, rank)| RankRecord {
                    query_id: query_ids[i].clone(),
                    rank,
                    gallery_size: gallery.len(),
                })
                .collect(),
        )
    }

    pub fn records(&self) -> &[RankRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn min_gallery(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.gallery_size)
            .min()
            .unwrap_or(0)
    }
}

/// Fraction of queries whose true match ranks within the top `q`.
pub fn acc_at_q(table: &RankTable, q: usize) -> Result<f64> {
    if table.is_empty() {
        return Err(Error::EmptyDataset("rank table"));
    }
    if q == 0 || q > table.min_gallery() {
        return Err(Error::InvalidArgument(alloc::format!(
            "q = {q} outside 1..={}",
            table.min_gallery()
        )));
    }
    Ok(table.records.iter().filter(|r| r.rank <= q).count() as f64 / table.len() as f64)
}

/// Percentile of one rank in a gallery of `n`: `(n - rank) / (n - 1)`.
pub fn rank_percentile(rank: usize, n: usize) -> f64 {
    (n - rank) as f64 / (n - 1) as f64
}

/// Mean ranking percentile in `[0, 1]`.
pub fn arp(table: &RankTable) -> Result<f64> {
    if table.is_empty() {
        return Err(Error::EmptyDataset("rank table"));
    }
    if table.min_gallery() < 2 {
        return Err(Error::InvalidArgument(
            "ARP needs galleries of at least 2".into(),
        ));
    }
    Ok(table
        .records
        .iter()
        .map(|r| rank_percentile(r.rank, r.gallery_size))
        .sum::<f64>()
        / table.len() as f64)
}

fn mean_cov(x: &[Vec<f64>]) -> (Vec<f64>, DMatrix<f64>) {
    let (n, d) = (x.len(), x[0].len());
    let mut mu = vec![0.0; d];
    for r in x {
        for (m, v) in mu.iter_mut().zip(r) {
            *m += v;
        }
    }
    mu.iter_mut().for_each(|m| *m /= n as f64);
    let mut c = DMatrix::<f64>::zeros(d, d);
    for r in x {
        for i in 0..d {
            let a = r[i] - mu[i];
            for j in i..d {
                c[(i, j)] += a * (r[j] - mu[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = c[(i, j)] / (n - 1) as f64;
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    (mu, c)
}

fn psd_sqrt(m: DMatrix<f64>) -> DMatrix<f64> {
    let e = m.symmetric_eigen();
    let d = e.eigenvalues.map(|v| math::sqrt(v.max(0.0)));
    &e.eigenvectors * DMatrix::from_diagonal(&d) * e.eigenvectors.transpose()
}

/// Frechet distance between Gaussian fits of two feature sets.
/// `Tr((S1 S2)^(1/2))` is evaluated as `Tr((S1^(1/2) S2 S1^(1/2))^(1/2))`,
/// which is symmetric; negative eigenvalues are clamped to zero.
pub fn fid(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let d = a.first().map_or(0, |r| r.len());
    for set in [a, b] {
        if set.len() <= d {
            return Err(Error::TooFewSamples {
                needed: d,
                got: set.len(),
            });
        }
        if set
            .iter()
            .any(|r| r.len() != d || r.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidArgument(
                "features must be finite and of equal length".into(),
            ));
        }
    }
    let (m1, s1) = mean_cov(a);
    let (m2, s2) = mean_cov(b);
    let r1 = psd_sqrt(s1.clone());
    let mut mid = &r1 * &s2 * &r1;
    mid = (&mid + mid.transpose()) * 0.5;
    let tr_cross: f64 = mid
        .symmetric_eigenvalues()
        .iter()
        .map(|&v| math::sqrt(v.max(0.0)))
        .sum();
    let dm: f64 = m1.iter().zip(&m2).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(dm + s1.trace() + s2.trace() - 2.0 * tr_cross)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyBin {
    pub index: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_arp: f64,
}

/// Ten half-open score bins `[k/10, (k+1)/10)`, the last one closed at 1.
pub fn score_bin(score: f64) -> usize {
    (math::floor(score * 10.0) as usize).min(9)
}

/// Group pairs by discriminator score and average the per-pair ranking
/// percentile of each bin. Empty bins are absent.
pub fn certainty_consistency(scores: &[f64], percentiles: &[f64]) -> Result<Vec<ConsistencyBin>> {
    if scores.len() != percentiles.len() {
        return Err(crate::error::shape_err(scores.len(), percentiles.len()));
    }
    let mut sum = [0.0; 10];
    let mut cnt = [0usize; 10];
    for (&s, &p) in scores.iter().zip(percentiles) {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::InvalidArgument(alloc::format!(
                "score {s} outside [0, 1]"
            )));
        }
        let k = score_bin(s);
        sum[k] += p;
        cnt[k] += 1;
    }
    Ok((0..10)
        .filter(|&k| cnt[k] > 0)
        .map(|k| ConsistencyBin {
            index: k,
            lo: k as f64 / 10.0,
            hi: (k + 1) as f64 / 10.0,
            count: cnt[k],
            mean_arp: sum[k] / cnt[k] as f64,
        })
        .collect())
}

fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties. `None` when
/// either side is constant or fewer than two points are given.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / math::sqrt(vx * vy))
}

#[cfg(test)]
mod tests;

mod harness;
pub use harness::{
    consistency_analysis, evaluate_generation, evaluate_retrieval, ConsistencyReport,
    GenerationMetrics, RetrievalMetrics,
};

mod ablation;
pub use ablation::{ablation_grid, run_row, AblationRow, GridRow, PretrainCache};
