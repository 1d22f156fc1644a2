//! Corpus selection for a configuration.

use anyhow::{Context, Result};
use sketchssl_core::sketch::{generate_corpus, Corpus};
use sketchssl_core::trainer::TrainData;

use crate::config::ExperimentConfig;
use crate::corpus_io;

/// The configured corpus: loaded from `data_dir`, or generated from the
/// shape settings and seed when `data_dir` is empty. The labelled set is
/// cut to its `labeled_fraction` prefix.
pub fn corpus(cfg: &ExperimentConfig) -> Result<Corpus> {
    let mut c = if cfg.data_dir.is_empty() {
        generate_corpus(&cfg.shape_spec(), cfg.corpus_sizes(), cfg.seed)
            .map_err(anyhow::Error::msg)?
    } else {
        corpus_io::load_corpus(cfg.data_dir.as_ref())
            .with_context(|| format!("loading corpus from {}", cfg.data_dir))?
    };
    let keep = labeled_count(c.labeled.len(), cfg.labeled_fraction);
    c.labeled = c.labeled.truncated(keep);
    Ok(c)
}

pub fn labeled_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).min(n)
}

pub fn train_data(cfg: &ExperimentConfig) -> Result<TrainData> {
    let c = corpus(cfg)?;
    TrainData::prepare(&c, cfg.raster(), cfg.max_len).map_err(anyhow::Error::msg)
}
