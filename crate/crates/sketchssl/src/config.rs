//! Flat `key = value` experiment configuration.
//!
//! Values are resolved in order: built-in defaults, the config file, then
//! `SKETCHSSL_<KEY>` environment variables, then command-line flags. Unknown
//! keys are rejected at every level.

use std::fmt::Write as _;
use std::path::Path;

use sketchssl_core::discriminator::DiscriminatorConfig;
use sketchssl_core::generator::{AttentionKind, GeneratorConfig};
use sketchssl_core::retrieval::RetrievalConfig;
use sketchssl_core::sketch::{CorpusSizes, RasterConfig, ShapeFamily, ShapeSpec};
use sketchssl_core::trainer::{AblationFlags, GeneratorUpdate, KdMode, PseudoMode, TrainConfig};

pub const ENV_PREFIX: &str = "SKETCHSSL_";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {msg}")]
    BadValue {
        key: String,
        value: String,
        msg: String,
    },
    #[error("{file}:{line}: expected `key = value`")]
    Syntax { file: String, line: usize },
    #[error("{0}")]
    Io(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

pub trait ConfigValue: Sized {
    fn parse(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! display_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse(s: &str) -> Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
display_value!(u64, usize, f64, String);

impl ConfigValue for bool {
    fn parse(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" => Ok(false),
            _ => Err("expected true or false".into()),
        }
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

/// Comma-separated layer widths.
#[derive(Clone, Debug, PartialEq)]
pub struct Widths(pub Vec<usize>);

impl ConfigValue for Widths {
    fn parse(s: &str) -> Result<Self, String> {
        let v = s
            .split(',')
            .map(|x| x.trim().parse::<usize>().map_err(|e| e.to_string()))
            .collect::<Result<Vec<_>, _>>()?;
        if v.is_empty() || v.contains(&0) {
            return Err("widths must be positive".into());
        }
        Ok(Self(v))
    }
    fn render(&self) -> String {
        self.0
            .iter()
            .map(|w| w.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

macro_rules! enum_value {
    ($t:ty { $($name:literal => $v:expr),* $(,)? }) => {
        impl ConfigValue for $t {
            fn parse(s: &str) -> Result<Self, String> {
                match s {
                    $($name => Ok($v),)*
                    _ => Err(format!("expected one of {}", [$($name),*].join(", "))),
                }
            }
            fn render(&self) -> String {
                $(if *self == $v { return $name.into(); })*
                unreachable!()
            }
        }
    };
}
enum_value!(KdMode { "relative" => KdMode::Relative, "absolute" => KdMode::Absolute });
enum_value!(PseudoMode { "greedy" => PseudoMode::Greedy, "sampled" => PseudoMode::Sampled });
enum_value!(GeneratorUpdate { "combined" => GeneratorUpdate::Combined, "alternate" => GeneratorUpdate::Alternate });

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FamilyName {
    Polygon,
    Ellipse,
    Composite,
    Mixed,
}
enum_value!(FamilyName {
    "polygon" => FamilyName::Polygon,
    "ellipse" => FamilyName::Ellipse,
    "composite" => FamilyName::Composite,
    "mixed" => FamilyName::Mixed,
});

macro_rules! config {
    ($( #[doc = $doc:literal] $name:ident : $ty:ty = $default:expr; )*) => {
        #[derive(Clone, Debug, PartialEq)]
        pub struct ExperimentConfig {
            $( #[doc = $doc] pub $name: $ty, )*
        }

        impl Default for ExperimentConfig {
            fn default() -> Self {
                Self { $( $name: $default, )* }
            }
        }

        /// Every key with its documentation line.
        pub const KEYS: &[(&str, &str)] = &[ $( (stringify!($name), $doc.trim_ascii()), )* ];

        impl ExperimentConfig {
            pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
                let value = value.trim();
                let bad = |msg: String| ConfigError::BadValue { key: key.into(), value: value.into(), msg };
                match key {
                    $( stringify!($name) => self.$name = <$ty as ConfigValue>::parse(value).map_err(bad)?, )*
                    _ => return Err(ConfigError::UnknownKey(key.into())),
                }
                Ok(())
            }

            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![ $( (stringify!($name), self.$name.render()), )* ]
            }
        }
    };
}

config! {
    /// Master seed for data generation, initialisation and sampling.
    seed: u64 = 0;
    /// Corpus directory; empty generates the synthetic corpus in memory.
    data_dir: String = String::new();
    /// Labelled training pairs of the synthetic corpus.
    n_labeled: usize = 200;
    /// Unlabelled photos of the synthetic corpus.
    n_unlabeled: usize = 2000;
    /// Held-out test pairs of the synthetic corpus.
    n_test: usize = 200;
    /// Fraction of the labelled pairs used for training (prefix of the set).
    labeled_fraction: f64 = 1.0;
    /// Shape family: polygon, ellipse, composite or mixed.
    shape_family: FamilyName = FamilyName::Mixed;
    /// Fewest polygon sides.
    min_sides: usize = 3;
    /// Most polygon sides.
    max_sides: usize = 8;
    /// Smallest shape radius in pixels.
    radius_min: f64 = 10.0;
    /// Largest shape radius in pixels.
    radius_max: f64 = 22.0;
    /// Relative radial jitter of polygon vertices.
    irregularity: f64 = 0.25;
    /// Standard deviation of sketch offset noise in pixels.
    jitter: f64 = 0.6;
    /// Per-vertex dropout probability of sketches.
    dropout: f64 = 0.1;
    /// Side of photos and sketch rasters in pixels.
    image_size: usize = 64;
    /// Generator photo-encoder channel widths.
    gen_widths: Widths = Widths(vec![32, 64, 96, 128]);
    /// Latent size of the generator.
    latent_dim: usize = 128;
    /// Decoder hidden size.
    hidden: usize = 512;
    /// Mixture components per step.
    mixtures: usize = 20;
    /// Attention key size.
    attention_dim: usize = 64;
    /// Longest sketch in points.
    max_len: usize = 100;
    /// Retrieval backbone channel widths.
    ret_widths: Widths = Widths(vec![32, 64, 96, 128]);
    /// Embedding size.
    embed_dim: usize = 64;
    /// Discriminator channel widths.
    disc_widths: Widths = Widths(vec![32, 64, 128]);
    /// Retrieval iterations per cycle.
    k_r: usize = 5;
    /// Generator iterations per cycle.
    k_g: usize = 5;
    /// Triplet margin.
    margin: f64 = 0.3;
    /// KL weight of the VAE loss.
    w_kl: f64 = 1.0;
    /// Distillation weight.
    lambda_kd: f64 = 0.1;
    /// Reward weight of the triplet term.
    lambda_r1: f64 = 1.0;
    /// Reward weight of the discriminator term.
    lambda_r2: f64 = 1.0;
    /// Policy-gradient weight.
    lambda_g: f64 = 10.0;
    /// Generator learning rate.
    lr_generator: f64 = 1e-4;
    /// Retrieval learning rate.
    lr_retrieval: f64 = 1e-4;
    /// Discriminator learning rate.
    lr_discriminator: f64 = 1e-4;
    /// VAE batch size.
    batch_gen: usize = 64;
    /// Retrieval batch size per side (labelled and pseudo).
    batch_ret: usize = 16;
    /// Photos per side sampled for rewards.
    batch_rl: usize = 8;
    /// Generator pre-training epochs.
    pretrain_gen_epochs: usize = 10;
    /// Retrieval pre-training steps.
    pretrain_ret_steps: usize = 500;
    /// Joint-training cycles.
    cycles: usize = 10;
    /// Evaluate every this many cycles; 0 disables.
    eval_every: usize = 1;
    /// Instance weighting of pseudo triplets.
    iw: bool = true;
    /// Teacher distillation.
    tr: bool = true;
    /// 2-D attention (false: 1x1 keys over the flattened map).
    at: bool = true;
    /// Joint generator training with rewards.
    jt: bool = true;
    /// Use unlabelled photos; false trains the supervised baseline.
    semi_supervised: bool = true;
    /// Subtract the batch-mean reward.
    baseline: bool = true;
    /// Distillation target: relative or absolute.
    kd_mode: KdMode = KdMode::Relative;
    /// Pseudo sketch decoding: greedy or sampled.
    pseudo_mode: PseudoMode = PseudoMode::Greedy;
    /// Sampling temperature of sampled pseudo sketches.
    pseudo_temperature: f64 = 1.0;
    /// Sampling temperature of the reward batch.
    rl_temperature: f64 = 1.0;
    /// combined or alternate generator updates.
    generator_update: GeneratorUpdate = GeneratorUpdate::Combined;
    /// Global gradient-norm clip; 0 disables.
    max_grad_norm: f64 = 0.0;
    /// Pseudo pairs scored for the certainty-consistency table.
    consistency_pairs: usize = 500;
    /// Save training checkpoints every this many cycles.
    checkpoint_every: usize = 1;
    /// Training checkpoints kept per model (pre-training ones are always kept).
    keep_checkpoints: usize = 2;
}

fn parse_lines(text: &str, file: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax {
            file: file.into(),
            line: i + 1,
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn apply_text(&mut self, text: &str, file: &str) -> Result<(), ConfigError> {
        for (k, v) in parse_lines(text, file)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Apply `SKETCHSSL_<KEY>` variables from `vars`.
    pub fn apply_env(
        &mut self,
        vars: impl IntoIterator<Item = (String, String)>,
    ) -> Result<(), ConfigError> {
        let mut vars: Vec<(String, String)> = vars
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        vars.sort();
        for (k, v) in vars {
            self.set(&k[ENV_PREFIX.len()..].to_ascii_lowercase(), &v)?;
        }
        Ok(())
    }

    /// Defaults, then `file`, then the process environment.
    pub fn load(file: Option<&Path>) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        if let Some(f) = file {
            c.apply_file(f)?;
        }
        c.apply_env(std::env::vars())?;
        Ok(c)
    }

    /// The effective configuration as a config file.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn flags(&self) -> AblationFlags {
        AblationFlags {
            iw: self.iw,
            tr: self.tr,
            at: self.at,
            jt: self.jt,
        }
    }

    pub fn shape_spec(&self) -> ShapeSpec {
        let (min_sides, max_sides) = (self.min_sides, self.max_sides);
        ShapeSpec {
            family: match self.shape_family {
                FamilyName::Polygon => ShapeFamily::Polygon {
                    min_sides,
                    max_sides,
                },
                FamilyName::Ellipse => ShapeFamily::Ellipse,
                FamilyName::Composite => ShapeFamily::Composite,
                FamilyName::Mixed => ShapeFamily::Mixed {
                    min_sides,
                    max_sides,
                },
            },
            canvas: self.image_size,
            radius: (self.radius_min, self.radius_max),
            irregularity: self.irregularity,
            jitter: self.jitter,
            dropout: self.dropout,
            ..ShapeSpec::default()
        }
    }

    pub fn corpus_sizes(&self) -> CorpusSizes {
        CorpusSizes {
            labeled: self.n_labeled,
            unlabeled: self.n_unlabeled,
            test: self.n_test,
        }
    }

    pub fn raster(&self) -> RasterConfig {
        RasterConfig::square(self.image_size)
    }

    pub fn train_config(&self) -> TrainConfig {
        let s = self.image_size;
        TrainConfig {
            seed: self.seed,
            k_r: self.k_r,
            k_g: self.k_g,
            margin: self.margin,
            w_kl: self.w_kl,
            lambda_kd: self.lambda_kd,
            lambda_r1: self.lambda_r1,
            lambda_r2: self.lambda_r2,
            lambda_g: self.lambda_g,
            lr_generator: self.lr_generator,
            lr_retrieval: self.lr_retrieval,
            lr_discriminator: self.lr_discriminator,
            batch_gen: self.batch_gen,
            batch_ret: self.batch_ret,
            batch_rl: self.batch_rl,
            generator: GeneratorConfig {
                image_size: s,
                encoder_widths: self.gen_widths.0.clone(),
                latent_dim: self.latent_dim,
                hidden: self.hidden,
                mixtures: self.mixtures,
                attention_dim: self.attention_dim,
                attention: AttentionKind::Spatial2d,
                max_len: self.max_len,
            },
            retrieval: RetrievalConfig {
                image_size: s,
                widths: self.ret_widths.0.clone(),
                embed_dim: self.embed_dim,
            },
            discriminator: DiscriminatorConfig {
                image_size: s,
                widths: self.disc_widths.0.clone(),
            },
            pretrain_gen_epochs: self.pretrain_gen_epochs,
            pretrain_ret_steps: self.pretrain_ret_steps,
            cycles: self.cycles,
            eval_every: self.eval_every,
            flags: self.flags(),
            semi_supervised: self.semi_supervised,
            baseline_enabled: self.baseline,
            kd_mode: self.kd_mode,
            pseudo_mode: self.pseudo_mode,
            pseudo_temperature: self.pseudo_temperature,
            rl_temperature: self.rl_temperature,
            generator_update: self.generator_update,
            max_grad_norm: self.max_grad_norm,
        }
    }

    /// Check every derived configuration.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: sketchssl_core::Error| ConfigError::Invalid(e.to_string());
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return Err(ConfigError::Invalid(
                "labeled_fraction must lie in (0, 1]".into(),
            ));
        }
        if self.checkpoint_every == 0 || self.keep_checkpoints == 0 {
            return Err(ConfigError::Invalid(
                "checkpoint_every and keep_checkpoints must be at least 1".into(),
            ));
        }
        self.shape_spec().validate().map_err(inv)?;
        self.train_config().validate().map_err(inv)
    }
}
