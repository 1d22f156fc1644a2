//! Run directory layout and resumable state.
//!
//! ```text
//! <run>/config.txt                 effective configuration
//! <run>/version.txt                build stamp
//! <run>/state.json                 counters and latest checkpoint paths
//! <run>/metrics.ndjson, metrics.csv
//! <run>/{gen,ret,teacher,disc}/step-N/model.ckpt
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sketchssl_core::discriminator::Discriminator;
use sketchssl_core::generator::Generator;
use sketchssl_core::retrieval::{RetrievalModel, TeacherSnapshot};
use sketchssl_core::trainer::{JointState, Models, Optimizers, Pretrained};

use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::metrics;

pub const CONFIG: &str = "config.txt";
pub const VERSION: &str = "version.txt";
pub const STATE: &str = "state.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrained,
    Training,
}

/// Checkpoint paths relative to the run directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Latest {
    pub generator: String,
    pub retrieval: String,
    pub teacher: String,
    pub discriminator: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunState {
    pub stage: Stage,
    pub pretrain_gen_steps: u64,
    pub pretrain_ret_steps: u64,
    pub cycle: u64,
    pub ret_steps: u64,
    pub disc_steps: u64,
    pub gen_steps: u64,
    pub latest: Latest,
    /// Metric-log lengths at the time of the checkpoint; anything logged
    /// after it is discarded on resume.
    pub log_lines: u64,
    pub csv_lines: u64,
}

pub struct RunDir {
    pub root: PathBuf,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).with_context(|| format!("writing {}", tmp.display()))?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))
}

fn count_lines(path: &Path) -> Result<u64> {
    match fs::File::open(path) {
        Ok(f) => Ok(BufReader::new(f).lines().count() as u64),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(0),
        Err(e) => Err(e).with_context(|| format!("reading {}", path.display())),
    }
}

/// Keep the first `n` lines of a file.
fn truncate_lines(path: &Path, n: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(path)?;
    let kept: String = text.split_inclusive('\n').take(n as usize).collect();
    if kept.len() != text.len() {
        write_atomic(path, kept.as_bytes())?;
    }
    Ok(())
}

impl RunDir {
    /// Start a new run. An existing run is only replaced with `force`.
    pub fn create(root: &Path, cfg: &ExperimentConfig, force: bool) -> Result<Self> {
        if root.join(STATE).exists() || root.join(CONFIG).exists() {
            if !force {
                bail!(
                    "{} already holds a run; pass --force to replace it",
                    root.display()
                );
            }
            fs::remove_dir_all(root).with_context(|| format!("removing {}", root.display()))?;
        }
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        let dir = Self {
            root: root.to_path_buf(),
        };
        dir.write_config(cfg)?;
        write_atomic(
            &root.join(VERSION),
            format!("{}\n", crate::version_stamp()).as_bytes(),
        )?;
        Ok(dir)
    }

    /// Open a run that has completed pre-training.
    pub fn open(root: &Path) -> Result<Self> {
        if !root.join(STATE).exists() {
            bail!(
                "{} has no pre-trained checkpoints; run `pretrain` first",
                root.display()
            );
        }
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn read_config(&self) -> Result<ExperimentConfig> {
        let mut c = ExperimentConfig::default();
        c.apply_file(&self.path(CONFIG))?;
        Ok(c)
    }

    pub fn write_config(&self, cfg: &ExperimentConfig) -> Result<()> {
        write_atomic(&self.path(CONFIG), cfg.render().as_bytes())
    }

    pub fn state(&self) -> Result<RunState> {
        let p = self.path(STATE);
        let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
    }

    fn write_state(&self, s: &RunState) -> Result<()> {
        write_atomic(
            &self.path(STATE),
            serde_json::to_string_pretty(s)?.as_bytes(),
        )
    }

    fn log_lengths(&self) -> Result<(u64, u64)> {
        Ok((
            count_lines(&self.path(metrics::NDJSON))?,
            count_lines(&self.path(metrics::CSV))?,
        ))
    }

    /// Drop log lines written after the last checkpoint.
    pub fn rewind_logs(&self, s: &RunState) -> Result<()> {
        truncate_lines(&self.path(metrics::NDJSON), s.log_lines)?;
        truncate_lines(&self.path(metrics::CSV), s.csv_lines)
    }

    /// Checkpoint pre-trained models and record the run as pre-trained.
    /// The metric sink must be flushed first.
    pub fn save_pretrained(
        &self,
        pre: &Pretrained,
        gen_steps: u64,
        ret_steps: u64,
    ) -> Result<RunState> {
        let generator = format!("gen/step-{gen_steps}/model.ckpt");
        let retrieval = format!("ret/step-{ret_steps}/model.ckpt");
        let teacher = format!("teacher/step-{ret_steps}/model.ckpt");
        checkpoint::save(
            &self.path(&generator),
            "generator",
            &pre.generator,
            Some(&pre.generator_adam),
        )?;
        checkpoint::save(
            &self.path(&retrieval),
            "retrieval",
            &pre.retrieval,
            Some(&pre.retrieval_adam),
        )?;
        checkpoint::save(&self.path(&teacher), "teacher", pre.teacher.model(), None)?;
        let (log_lines, csv_lines) = self.log_lengths()?;
        let s = RunState {
            stage: Stage::Pretrained,
            pretrain_gen_steps: gen_steps,
            pretrain_ret_steps: ret_steps,
            cycle: 0,
            ret_steps: 0,
            disc_steps: 0,
            gen_steps: 0,
            latest: Latest {
                generator,
                retrieval,
                teacher,
                discriminator: None,
            },
            log_lines,
            csv_lines,
        };
        self.write_state(&s)?;
        Ok(s)
    }

    /// Models and optimizers at the recorded state. Before training starts
    /// the discriminator is freshly initialised, as the trainer does.
    pub fn load_joint(&self, s: &RunState, cfg: &ExperimentConfig) -> Result<JointState> {
        let (generator, gen_adam) =
            checkpoint::load::<Generator>(&self.path(&s.latest.generator), "generator")?;
        let (retrieval, ret_adam) =
            checkpoint::load::<RetrievalModel>(&self.path(&s.latest.retrieval), "retrieval")?;
        let (teacher, _) =
            checkpoint::load::<RetrievalModel>(&self.path(&s.latest.teacher), "teacher")?;
        let missing =
            |what: &str| anyhow::anyhow!("checkpoint of the {what} has no optimizer state");
        let pre = Pretrained {
            generator,
            generator_adam: gen_adam.ok_or_else(|| missing("generator"))?,
            retrieval,
            retrieval_adam: ret_adam.ok_or_else(|| missing("retrieval model"))?,
            teacher: TeacherSnapshot::new(&teacher),
        };
        let mut state = JointState::new(pre, &cfg.train_config())?;
        if let Some(d) = &s.latest.discriminator {
            let (disc, adam) = checkpoint::load::<Discriminator>(&self.path(d), "discriminator")?;
            state.models.discriminator = disc;
            state.optimizers.discriminator = adam.ok_or_else(|| missing("discriminator"))?;
        }
        state.cycle = s.cycle;
        state.ret_steps = s.ret_steps;
        state.disc_steps = s.disc_steps;
        state.gen_steps = s.gen_steps;
        Ok(state)
    }

    /// Checkpoint the joint state after a cycle and prune old checkpoints.
    /// The metric sink must be flushed first.
    pub fn save_joint(&self, prev: &RunState, state: &JointState, keep: usize) -> Result<RunState> {
        let JointState {
            models:
                Models {
                    generator,
                    retrieval,
                    discriminator,
                    ..
                },
            optimizers,
            ..
        } = state;
        let Optimizers {
            generator: gen_adam,
            retrieval: ret_adam,
            discriminator: disc_adam,
        } = optimizers;
        let generator_path = format!(
            "gen/step-{}/model.ckpt",
            prev.pretrain_gen_steps + state.gen_steps
        );
        let retrieval_path = format!(
            "ret/step-{}/model.ckpt",
            prev.pretrain_ret_steps + state.ret_steps
        );
        let disc_path = format!("disc/step-{}/model.ckpt", state.disc_steps);
        checkpoint::save(
            &self.path(&generator_path),
            "generator",
            generator,
            Some(gen_adam),
        )?;
        checkpoint::save(
            &self.path(&retrieval_path),
            "retrieval",
            retrieval,
            Some(ret_adam),
        )?;
        checkpoint::save(
            &self.path(&disc_path),
            "discriminator",
            discriminator,
            Some(disc_adam),
        )?;
        let (log_lines, csv_lines) = self.log_lengths()?;
        let s = RunState {
            stage: Stage::Training,
            cycle: state.cycle,
            ret_steps: state.ret_steps,
            disc_steps: state.disc_steps,
            gen_steps: state.gen_steps,
            latest: Latest {
                generator: generator_path,
                retrieval: retrieval_path,
                teacher: prev.latest.teacher.clone(),
                discriminator: Some(disc_path),
            },
            log_lines,
            csv_lines,
            ..prev.clone()
        };
        self.write_state(&s)?;
        self.prune("gen", prev.pretrain_gen_steps, keep)?;
        self.prune("ret", prev.pretrain_ret_steps, keep)?;
        self.prune("disc", u64::MAX, keep)?;
        Ok(s)
    }

    /// Remove all but the newest `keep` step directories of one model,
    /// never touching the pre-training checkpoint `protected`.
    fn prune(&self, model: &str, protected: u64, keep: usize) -> Result<()> {
        let dir = self.path(model);
        let mut steps: Vec<u64> = fs::read_dir(&dir)
            .with_context(|| format!("listing {}", dir.display()))?
            .filter_map(|e| {
                e.ok()?
                    .file_name()
                    .to_str()?
                    .strip_prefix("step-")?
                    .parse()
                    .ok()
            })
            .filter(|&s| s != protected)
            .collect();
        steps.sort_unstable();
        let n = steps.len().saturating_sub(keep);
        for s in &steps[..n] {
            fs::remove_dir_all(dir.join(format!("step-{s}")))?;
        }
        Ok(())
    }
}
