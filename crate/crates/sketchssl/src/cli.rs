//! Command-line front end. Exit codes: 0 success, 1 runtime failure,
//! 2 usage or configuration error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sketchssl_core::evaluation::{evaluate_generation, evaluate_retrieval, GridRow};
use sketchssl_core::sketch::{generate_corpus, normalize_offsets, RasterImage};
use sketchssl_core::trainer::{joint_train, Pretrained, TrainConfig};

use crate::config::{ConfigError, ExperimentConfig, KEYS};
use crate::experiments::{self, AblationOrdering, Comparison, GridOptions, Sweep, IW_OFF, TR_OFF};
use crate::metrics::{self, FileSink};
use crate::run_dir::RunDir;
use crate::{corpus_io, data, plot};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

#[derive(Parser, Debug)]
#[command(
    name = "sketchssl",
    version,
    about = "Semi-supervised sketch-photo retrieval with a sketch generator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Default, Clone)]
pub struct Common {
    /// `key = value` config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (corpus, run or report).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Replace an existing output directory.
    #[arg(long, global = true)]
    pub force: bool,
    /// Total joint-training cycles.
    #[arg(long, global = true)]
    pub cycles: Option<usize>,
    /// Disable instance weighting.
    #[arg(long, global = true)]
    pub no_iw: bool,
    /// Disable teacher distillation.
    #[arg(long, global = true)]
    pub no_tr: bool,
    /// 1-D attention over the flattened feature map.
    #[arg(long = "attn-1d", global = true)]
    pub attn_1d: bool,
    /// Disable joint generator training.
    #[arg(long, global = true)]
    pub no_jt: bool,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic corpus and print its statistics.
    GenData,
    /// Pre-train the generator and the retrieval model into a new run.
    Pretrain,
    /// Joint training from the run's latest checkpoint up to `cycles`.
    Train,
    /// Evaluate a run: retrieval, generation and certainty consistency.
    Eval,
    /// Loss and metric curves of a run as SVG.
    Plot,
    /// Multi-seed benchmark experiments.
    Experiment {
        #[arg(value_enum)]
        kind: ExperimentKind,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "0.3,0.6,1.0")]
        fractions: Vec<f64>,
    },
    /// List every config key.
    Keys,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExperimentKind {
    /// Full method against the supervised baseline.
    Compare,
    /// Comparison plus the single-switch ablations and vanilla SSL.
    Ablation,
    /// Comparison at each labelled fraction.
    Sweep,
}

/// Parse and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(f) => {
            let (Failure::Usage(e) | Failure::Runtime(e)) = &f;
            eprintln!("error: {e:#}");
            f.code()
        }
    }
}

impl Common {
    /// Apply the command-line overrides on top of `cfg`.
    fn apply(&self, cfg: &mut ExperimentConfig) -> std::result::Result<(), ConfigError> {
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| ConfigError::Syntax {
                file: "--set".into(),
                line: 1,
            })?;
            cfg.set(k.trim(), v)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(c) = self.cycles {
            cfg.cycles = c;
        }
        cfg.iw &= !self.no_iw;
        cfg.tr &= !self.no_tr;
        cfg.at &= !self.attn_1d;
        cfg.jt &= !self.no_jt;
        Ok(())
    }

    /// Defaults, config file, environment, then flags.
    fn fresh_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(self.config.as_deref()).map_err(usage)?;
        self.apply(&mut cfg).map_err(usage)?;
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }

    /// A run's stored configuration with the environment and flags on top.
    fn run_config(&self, dir: &RunDir) -> Result<ExperimentConfig> {
        let mut cfg = dir.read_config().map_err(usage)?;
        if let Some(f) = &self.config {
            cfg.apply_file(f).map_err(usage)?;
        }
        cfg.apply_env(std::env::vars()).map_err(usage)?;
        self.apply(&mut cfg).map_err(usage)?;
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }

    fn out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| usage(anyhow!("--out is required")))
    }
}

/// Keys that may change between invocations of `train` on one run.
const FREE_KEYS: &[&str] = &[
    "cycles",
    "checkpoint_every",
    "keep_checkpoints",
    "consistency_pairs",
];

/// Keys used only by joint training; they may still change before the
/// first training cycle.
const JOINT_KEYS: &[&str] = &[
    "k_r",
    "k_g",
    "lambda_kd",
    "lambda_r1",
    "lambda_r2",
    "lambda_g",
    "lr_discriminator",
    "batch_rl",
    "disc_widths",
    "eval_every",
    "iw",
    "tr",
    "jt",
    "semi_supervised",
    "baseline",
    "kd_mode",
    "pseudo_mode",
    "pseudo_temperature",
    "rl_temperature",
    "generator_update",
    "max_grad_norm",
];

fn check_unchanged(
    stored: &ExperimentConfig,
    now: &ExperimentConfig,
    allowed: &[&str],
) -> Result<()> {
    let changed: Vec<&str> = stored
        .entries()
        .into_iter()
        .zip(now.entries())
        .filter(|((k, a), (_, b))| a != b && !allowed.contains(k))
        .map(|((k, _), _)| k)
        .collect();
    if changed.is_empty() {
        Ok(())
    } else {
        Err(usage(anyhow!(
            "cannot change {} of an existing run",
            changed.join(", ")
        )))
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let c = &cli.common;
    match cli.command {
        Command::GenData => gen_data(c),
        Command::Pretrain => pretrain(c),
        Command::Train => train(c),
        Command::Eval => eval(c),
        Command::Plot => plot_run(c),
        Command::Experiment {
            kind,
            seeds,
            fractions,
        } => experiment(c, kind, &seeds, &fractions),
        Command::Keys => {
            for (k, doc) in KEYS {
                println!("{k:<20} {doc}");
            }
            Ok(())
        }
    }
}

fn gen_data(c: &Common) -> Result<()> {
    let cfg = c.fresh_config()?;
    let out = c.out()?;
    if out.join(corpus_io::MANIFEST).exists() {
        if !c.force {
            return Err(usage(anyhow!(
                "{} already holds a corpus; pass --force to replace it",
                out.display()
            )));
        }
        fs::remove_dir_all(out)?;
    }
    let corpus = generate_corpus(&cfg.shape_spec(), cfg.corpus_sizes(), cfg.seed)?;
    corpus_io::save_corpus(&corpus, out)?;
    let (_, scale) = normalize_offsets(&corpus.labeled)?;
    println!(
        "N_L={} N_U={} N_test={} offset_std={scale:.6}",
        corpus.labeled.len(),
        corpus.unlabeled.len(),
        corpus.test.len()
    );
    Ok(())
}

fn pretrain_gen_steps(n: usize, cfg: &TrainConfig) -> u64 {
    (cfg.pretrain_gen_epochs * n.div_ceil(cfg.batch_gen)) as u64
}

fn pretrain(c: &Common) -> Result<()> {
    let cfg = c.fresh_config()?;
    let dir = RunDir::create(c.out()?, &cfg, c.force).map_err(usage)?;
    let data = data::train_data(&cfg)?;
    let tc = cfg.train_config();
    let mut sink = FileSink::open(&dir.root)?.with_echo();
    let pre = Pretrained::run(&data, &tc, &mut sink)?;
    sink.flush()?;
    let s = dir.save_pretrained(
        &pre,
        pretrain_gen_steps(data.labeled.len(), &tc),
        tc.pretrain_ret_steps as u64,
    )?;
    println!(
        "pre-trained: generator {} steps, retrieval {} steps",
        s.pretrain_gen_steps, s.pretrain_ret_steps
    );
    Ok(())
}

fn train(c: &Common) -> Result<()> {
    let dir = RunDir::open(c.out()?).map_err(usage)?;
    let stored = dir.read_config().map_err(usage)?;
    let cfg = c.run_config(&dir)?;
    let mut state = dir.state()?;
    if state.cycle == 0 {
        let allowed: Vec<&str> = FREE_KEYS.iter().chain(JOINT_KEYS).copied().collect();
        check_unchanged(&stored, &cfg, &allowed)?;
        dir.write_config(&cfg)?;
    } else {
        check_unchanged(&stored, &cfg, FREE_KEYS)?;
    }
    let total = cfg.cycles as u64;
    if state.cycle >= total {
        println!("already at cycle {} of {total}", state.cycle);
        return Ok(());
    }
    dir.rewind_logs(&state)?;
    let data = data::train_data(&cfg)?;
    let tc = cfg.train_config();
    let mut joint = dir.load_joint(&state, &cfg)?;
    let mut sink = FileSink::open(&dir.root)?.with_echo();
    while joint.cycle < total {
        let n = (cfg.checkpoint_every as u64).min(total - joint.cycle);
        joint_train(&mut joint, &data, &tc, n as usize, &mut sink)?;
        sink.flush()?;
        state = dir.save_joint(&state, &joint, cfg.keep_checkpoints)?;
    }
    sink.finish()?;
    let m = joint.evaluate(&data)?;
    println!(
        "cycle {}: acc1 {:.4} acc10 {:.4} arp {:.4}",
        joint.cycle, m.acc1, m.acc10, m.arp
    );
    Ok(())
}

fn eval(c: &Common) -> Result<()> {
    let dir = RunDir::open(c.out()?).map_err(usage)?;
    let cfg = c.run_config(&dir)?;
    let state = dir.state()?;
    let data = data::train_data(&cfg)?;
    let joint = dir.load_joint(&state, &cfg)?;
    let m = &joint.models;
    let photos: Vec<&RasterImage> = data.test.iter().map(|p| &p.photo).collect();
    let sketches: Vec<&RasterImage> = data.test.iter().map(|p| &p.raster).collect();
    let ids: Vec<String> = data.test.iter().map(|p| p.id.clone()).collect();
    let (table, retrieval) = evaluate_retrieval(&m.retrieval, &sketches, &photos, &ids)?;
    let generation = evaluate_generation(
        &m.generator,
        m.teacher.model(),
        &photos,
        &sketches,
        &ids,
        &data.raster,
    )?;
    let consistency = match state.latest.discriminator {
        Some(_) => Some(experiments::consistency(&joint, &data, &cfg)?),
        None => None,
    };
    let report = serde_json::json!({
        "cycle": state.cycle,
        "retrieval": retrieval,
        "generation": generation,
        "consistency": consistency,
    });
    experiments::write_json(&dir.path("eval.json"), &report)?;
    let mut ranks = String::from("query,rank,gallery_size\n");
    for r in table.records() {
        ranks.push_str(&format!("{},{},{}\n", r.query_id, r.rank, r.gallery_size));
    }
    fs::write(dir.path("ranks.csv"), ranks)?;
    println!(
        "retrieval: acc1 {:.4} acc10 {:.4} arp {:.4}",
        retrieval.acc1, retrieval.acc10, retrieval.arp
    );
    let fid = generation.fid.map_or("n/a".into(), |f| format!("{f:.4}"));
    println!(
        "generation: acc1 {:.4} acc10 {:.4} fid {fid}",
        generation.acc1, generation.acc10
    );
    match consistency {
        Some(r) => {
            fs::write(
                dir.path("consistency.csv"),
                experiments::consistency_csv(&r),
            )?;
            if r.bins.iter().any(|b| b.count > 0) {
                plot::consistency_chart(&r, &dir.path("consistency.svg"))?;
            }
            print!("{}", experiments::consistency_csv(&r));
            let rho = r.spearman.map_or("n/a".into(), |s| format!("{s:.4}"));
            println!("consistency: {} pairs, spearman {rho}", r.pairs);
        }
        None => println!("consistency: skipped, the run has no trained discriminator yet"),
    }
    Ok(())
}

fn plot_run(c: &Common) -> Result<()> {
    let out = c.out()?;
    let log = metrics::read_log(&out.join(metrics::NDJSON))?;
    for p in plot::loss_curves(&log, &out.join("plots"))? {
        println!("{}", p.display());
    }
    Ok(())
}

fn experiment(c: &Common, kind: ExperimentKind, seeds: &[u64], fractions: &[f64]) -> Result<()> {
    let cfg = c.fresh_config()?;
    let out = c.out()?;
    if seeds.is_empty() {
        return Err(usage(anyhow!("--seeds must name at least one seed")));
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut sink = sketchssl_core::trainer::NullSink;
    let mut rows = vec![GridRow::FULL, GridRow::SUPERVISED];
    if kind == ExperimentKind::Ablation {
        rows.extend([IW_OFF, TR_OFF, GridRow::VANILLA_SSL]);
    }
    match kind {
        ExperimentKind::Compare | ExperimentKind::Ablation => {
            let opts = GridOptions {
                seeds: seeds.to_vec(),
                rows,
                consistency: true,
            };
            let grid = experiments::run_grid(&cfg, &opts, &mut sink)?;
            fs::write(out.join("grid.csv"), grid.to_csv())?;
            experiments::write_json(&out.join("grid.json"), &grid)?;
            let cmp = Comparison::from_grid(&grid)?;
            experiments::write_json(&out.join("comparison.json"), &cmp)?;
            for (i, s) in cmp.seeds.iter().enumerate() {
                println!(
                    "seed {s}: full {:.4} supervised {:.4} gap {:+.4}",
                    cmp.full_acc1[i], cmp.supervised_acc1[i], cmp.gaps[i]
                );
            }
            println!("mean gap {:+.4} ({:.0}s)", cmp.mean_gap, cmp.seconds);
            if let Some(r) = &grid.consistency {
                fs::write(out.join("consistency.csv"), experiments::consistency_csv(r))?;
                let rho = r.spearman.map_or("n/a".into(), |s| format!("{s:.4}"));
                println!("consistency spearman {rho} over {} pairs", r.pairs);
            }
            if kind == ExperimentKind::Ablation {
                let o = AblationOrdering::from_grid(&grid)?;
                experiments::write_json(&out.join("ablation.json"), &o)?;
                println!(
                    "full {:.4} iw-off {:.4} tr-off {:.4} vanilla {:.4} ordering {}",
                    o.full,
                    o.iw_off,
                    o.tr_off,
                    o.vanilla,
                    if o.holds() { "holds" } else { "violated" }
                );
            }
        }
        ExperimentKind::Sweep => {
            let grids = experiments::run_sweep(&cfg, seeds, fractions, &mut sink)?;
            let sweep = Sweep::from_grids(&grids)?;
            let (csv, svg) = sweep.write(out)?;
            print!("{}", sweep.to_csv());
            println!("{} {}", csv.display(), svg.display());
        }
    }
    Ok(())
}
