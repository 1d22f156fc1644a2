//! Multi-seed benchmark runs: SSL against the supervised baseline, the
//! ablation ordering, certainty consistency and the labelled-data sweep.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};
use sketchssl_core::evaluation::{
    consistency_analysis, run_row, ConsistencyReport, GenerationMetrics, GridRow, PretrainCache,
    RetrievalMetrics,
};
use sketchssl_core::sketch::RasterImage;
use sketchssl_core::trainer::{AblationFlags, JointState, MetricSink, TrainData};

use crate::config::ExperimentConfig;
use crate::data;
use crate::plot;

pub const IW_OFF: GridRow = GridRow {
    flags: AblationFlags {
        iw: false,
        ..AblationFlags::FULL
    },
    semi_supervised: true,
};
pub const TR_OFF: GridRow = GridRow {
    flags: AblationFlags {
        tr: false,
        ..AblationFlags::FULL
    },
    semi_supervised: true,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowResult {
    pub seed: u64,
    pub label: String,
    pub row: GridRow,
    pub retrieval: RetrievalMetrics,
    pub generation: GenerationMetrics,
    /// Wall time of the row, including any pre-training it triggered.
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub labeled_fraction: f64,
    pub n_labeled: usize,
    pub results: Vec<RowResult>,
    /// Corpus generation and preparation over all seeds.
    pub setup_seconds: f64,
    /// Certainty consistency of the first seed's full model.
    pub consistency: Option<ConsistencyReport>,
}

#[derive(Clone, Debug)]
pub struct GridOptions {
    pub seeds: Vec<u64>,
    /// Run in this order per seed; put the most expensive pre-training
    /// consumer first so later rows reuse it.
    pub rows: Vec<GridRow>,
    pub consistency: bool,
}

/// Certainty consistency on the first `consistency_pairs` unlabelled photos.
pub fn consistency(
    state: &JointState,
    data: &TrainData,
    cfg: &ExperimentConfig,
) -> Result<ConsistencyReport> {
    let n = cfg.consistency_pairs.min(data.unlabeled.len());
    let photos: Vec<&RasterImage> = data.unlabeled[..n].iter().map(|p| &p.photo).collect();
    let ids: Vec<String> = data.unlabeled[..n].iter().map(|p| p.id.clone()).collect();
    let m = &state.models;
    Ok(consistency_analysis(
        &m.generator,
        &m.discriminator,
        &m.retrieval,
        &photos,
        &ids,
        &data.raster,
        cfg.train_config().pseudo_decoding(),
        cfg.seed,
    )?)
}

pub fn run_grid(
    cfg: &ExperimentConfig,
    opts: &GridOptions,
    sink: &mut dyn MetricSink,
) -> Result<GridReport> {
    cfg.validate()?;
    let mut results = Vec::new();
    let mut report_consistency = None;
    let mut n_labeled = 0;
    let mut setup_seconds = 0.0;
    for (k, &seed) in opts.seeds.iter().enumerate() {
        let cfg = ExperimentConfig {
            seed,
            ..cfg.clone()
        };
        let t = Instant::now();
        let data = data::train_data(&cfg)?;
        setup_seconds += t.elapsed().as_secs_f64();
        n_labeled = data.labeled.len();
        let base = cfg.train_config();
        let mut cache = PretrainCache::default();
        for &row in &opts.rows {
            let t = Instant::now();
            let (r, state) = run_row(&data, &base, row, &mut cache, sink)?;
            let seconds = t.elapsed().as_secs_f64();
            log::info!(
                "seed {seed} {:<14} acc1 {:.3} acc10 {:.3} arp {:.3} ({seconds:.0}s)",
                r.label,
                r.retrieval.acc1,
                r.retrieval.acc10,
                r.retrieval.arp
            );
            if opts.consistency && k == 0 && row == GridRow::FULL {
                report_consistency = Some(consistency(&state, &data, &cfg)?);
            }
            results.push(RowResult {
                seed,
                label: r.label,
                row,
                retrieval: r.retrieval,
                generation: r.generation,
                seconds,
            });
        }
    }
    Ok(GridReport {
        labeled_fraction: cfg.labeled_fraction,
        n_labeled,
        results,
        setup_seconds,
        consistency: report_consistency,
    })
}

impl GridReport {
    pub fn get(&self, seed: u64, row: GridRow) -> Option<&RowResult> {
        self.results.iter().find(|r| r.seed == seed && r.row == row)
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut s: Vec<u64> = self.results.iter().map(|r| r.seed).collect();
        s.dedup();
        s
    }

    /// Mean Acc@1 of a row over every seed it ran for.
    pub fn mean_acc1(&self, row: GridRow) -> Option<f64> {
        let v: Vec<f64> = self
            .results
            .iter()
            .filter(|r| r.row == row)
            .map(|r| r.retrieval.acc1)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn seconds(&self, rows: &[GridRow]) -> f64 {
        self.results
            .iter()
            .filter(|r| rows.contains(&r.row))
            .map(|r| r.seconds)
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "fraction,n_labeled,seed,row,acc1,acc10,arp,gen_acc1,gen_acc10,fid,seconds\n",
        );
        for r in &self.results {
            let fid = r.generation.fid.map_or(String::new(), |f| f.to_string());
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{:.1}",
                self.labeled_fraction,
                self.n_labeled,
                r.seed,
                r.label,
                r.retrieval.acc1,
                r.retrieval.acc10,
                r.retrieval.arp,
                r.generation.acc1,
                r.generation.acc10,
                fid,
                r.seconds
            );
        }
        s
    }
}

/// Full method against the supervised baseline, per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub seeds: Vec<u64>,
    pub full_acc1: Vec<f64>,
    pub supervised_acc1: Vec<f64>,
    pub gaps: Vec<f64>,
    pub mean_gap: f64,
    /// Wall time of both rows over all seeds plus corpus setup.
    pub seconds: f64,
}

impl Comparison {
    pub fn from_grid(g: &GridReport) -> Result<Self> {
        let seeds = g.seeds();
        let mut full = Vec::new();
        let mut sup = Vec::new();
        for &s in &seeds {
            let f = g
                .get(s, GridRow::FULL)
                .ok_or_else(|| anyhow!("seed {s} has no full-method row"))?;
            let b = g
                .get(s, GridRow::SUPERVISED)
                .ok_or_else(|| anyhow!("seed {s} has no supervised row"))?;
            full.push(f.retrieval.acc1);
            sup.push(b.retrieval.acc1);
        }
        let gaps: Vec<f64> = full.iter().zip(&sup).map(|(f, b)| f - b).collect();
        let mean_gap = gaps.iter().sum::<f64>() / gaps.len().max(1) as f64;
        Ok(Self {
            seeds,
            full_acc1: full,
            supervised_acc1: sup,
            gaps,
            mean_gap,
            seconds: g.setup_seconds + g.seconds(&[GridRow::FULL, GridRow::SUPERVISED]),
        })
    }

    pub fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }
}

/// Mean Acc@1 of the full method, the two single-switch ablations and
/// vanilla SSL.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationOrdering {
    pub full: f64,
    pub iw_off: f64,
    pub tr_off: f64,
    pub vanilla: f64,
}

impl AblationOrdering {
    pub fn from_grid(g: &GridReport) -> Result<Self> {
        let m = |row: GridRow| {
            g.mean_acc1(row)
                .ok_or_else(|| anyhow!("grid has no {} row", row.label()))
        };
        Ok(Self {
            full: m(GridRow::FULL)?,
            iw_off: m(IW_OFF)?,
            tr_off: m(TR_OFF)?,
            vanilla: m(GridRow::VANILLA_SSL)?,
        })
    }

    /// `full >= {iw_off, tr_off} >= vanilla`.
    pub fn holds(&self) -> bool {
        self.full >= self.iw_off.max(self.tr_off) && self.iw_off.min(self.tr_off) >= self.vanilla
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub fraction: f64,
    pub n_labeled: usize,
    pub ssl_acc1: f64,
    pub supervised_acc1: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub points: Vec<SweepPoint>,
}

impl Sweep {
    pub fn from_grids(grids: &[GridReport]) -> Result<Self> {
        let points = grids
            .iter()
            .map(|g| {
                let c = Comparison::from_grid(g)?;
                let (ssl, sup) = (
                    Comparison::mean(&c.full_acc1),
                    Comparison::mean(&c.supervised_acc1),
                );
                Ok(SweepPoint {
                    fraction: g.labeled_fraction,
                    n_labeled: g.n_labeled,
                    ssl_acc1: ssl,
                    supervised_acc1: sup,
                    gap: ssl - sup,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { points })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("fraction,n_labeled,ssl_acc1,supervised_acc1,gap\n");
        for p in &self.points {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                p.fraction, p.n_labeled, p.ssl_acc1, p.supervised_acc1, p.gap
            );
        }
        s
    }

    /// Writes `sweep.csv` and `sweep.svg` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let csv = dir.join("sweep.csv");
        fs::write(&csv, self.to_csv())?;
        let svg = dir.join("sweep.svg");
        let pct = |f: fn(&SweepPoint) -> f64| {
            self.points
                .iter()
                .map(|p| (100.0 * p.fraction, 100.0 * f(p)))
                .collect()
        };
        plot::line_chart(
            &svg,
            "Acc@1 against labelled data",
            "labelled pairs used (%)",
            "Acc@1 (%)",
            &[
                ("semi-supervised".into(), pct(|p| p.ssl_acc1)),
                ("supervised".into(), pct(|p| p.supervised_acc1)),
            ],
        )?;
        Ok((csv, svg))
    }
}

/// The full-versus-supervised grid at each labelled fraction.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    seeds: &[u64],
    fractions: &[f64],
    sink: &mut dyn MetricSink,
) -> Result<Vec<GridReport>> {
    let opts = GridOptions {
        seeds: seeds.to_vec(),
        rows: vec![GridRow::FULL, GridRow::SUPERVISED],
        consistency: false,
    };
    fractions
        .iter()
        .map(|&f| {
            run_grid(
                &ExperimentConfig {
                    labeled_fraction: f,
                    ..cfg.clone()
                },
                &opts,
                sink,
            )
        })
        .collect()
}

pub fn consistency_csv(r: &ConsistencyReport) -> String {
    let mut s = String::from("bin,lo,hi,count,mean_arp\n");
    for b in &r.bins {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            b.index, b.lo, b.hi, b.count, b.mean_arp
        );
    }
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}
