//! Pre-training and the alternating semi-supervised loop.
//!
//! One cycle runs `k_r` iterations of (pseudo pairs, retrieval step,
//! discriminator step) followed by `k_g` generator steps. All randomness is
//! drawn from streams keyed by the seed, a purpose tag and the step counter
//! of the phase that consumes it, so a run resumed from a saved state
//! continues exactly as an uninterrupted run would.

pub mod bandit;
mod data;
mod joint;
mod pretrain;
mod steps;


use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::discriminator::DiscriminatorConfig;
use crate::error::{Error, Result};
use crate::generator::{AttentionKind, Decoding, GeneratorConfig};
use crate::optim::AdamConfig;
use crate::retrieval::RetrievalConfig;

pub use bandit::{reinforce_selfcheck, BanditReport};
pub use data::{PairItem, PhotoItem, TrainData};
pub use joint::{joint_train, JointState, Models, Optimizers};
pub use pretrain::{
    pretrain_generator, pretrain_retrieval, supervised_retrieval_steps, vae_validation_loss,
    Pretrained,
};
pub use steps::{
    compute_reward, discriminator_step, generator_step, make_pseudo_pairs, reinforce_grad,
    retrieval_loss_and_grad, retrieval_step, reward_from_parts, DiscriminatorLoss, GeneratorLoss,
    GeneratorPaths, RetrievalInputs, RetrievalLoss, RewardRecord,
};

/// Table-3 style switches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    /// Instance weighting of pseudo triplets by the discriminator.
    pub iw: bool,
    /// Teacher regularisation (distillation term).
    pub tr: bool,
    /// 2-D attention in the generator (off: 1x1 keys, a flat sequence).
    pub at: bool,
    /// Joint training of the generator with rewards.
    pub jt: bool,
}

impl AblationFlags {
    pub const FULL: Self = Self {
        iw: true,
        tr: true,
        at: true,
        jt: true,
    };
    pub const NONE: Self = Self {
        iw: false,
        tr: false,
        at: false,
        jt: false,
    };

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        for (on, name) in [
            (self.iw, "IW"),
            (self.tr, "TR"),
            (self.at, "AT"),
            (self.jt, "JT"),
        ] {
            if on {
                parts.push(name);
            }
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KdMode {
    Relative,
    Absolute,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PseudoMode {
    Greedy,
    Sampled,
}

/// How the supervised and policy-gradient generator paths are applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeneratorUpdate {
    /// Both gradients summed into one optimizer step.
    Combined,
    /// Even generator steps apply the supervised path, odd steps the
    /// policy gradient.
    Alternate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub k_r: usize,
    pub k_g: usize,
    pub margin: f64,
    pub w_kl: f64,
    pub lambda_kd: f64,
    pub lambda_r1: f64,
    pub lambda_r2: f64,
    pub lambda_g: f64,
    pub lr_generator: f64,
    pub lr_retrieval: f64,
    pub lr_discriminator: f64,
    pub batch_gen: usize,
    pub batch_ret: usize,
    /// Photos per side (labelled and unlabelled) sampled for rewards.
    pub batch_rl: usize,
    pub generator: GeneratorConfig,
    pub retrieval: RetrievalConfig,
    pub discriminator: DiscriminatorConfig,
    pub pretrain_gen_epochs: usize,
    pub pretrain_ret_steps: usize,
    pub cycles: usize,
    /// Evaluate every this many cycles; 0 disables.
    pub eval_every: usize,
    pub flags: AblationFlags,
    /// Use unlabelled photos at all. Off gives the supervised baseline.
    pub semi_supervised: bool,
    pub baseline_enabled: bool,
    pub kd_mode: KdMode,
    pub pseudo_mode: PseudoMode,
    /// Sampling temperature of sampled pseudo sketches.
    pub pseudo_temperature: f64,
    pub rl_temperature: f64,
    pub generator_update: GeneratorUpdate,
    pub max_grad_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            k_r: 5,
            k_g: 5,
            margin: 0.3,
            w_kl: 1.0,
            lambda_kd: 0.1,
            lambda_r1: 1.0,
            lambda_r2: 1.0,
            lambda_g: 10.0,
            lr_generator: 1e-4,
            lr_retrieval: 1e-4,
            lr_discriminator: 1e-4,
            batch_gen: 64,
            batch_ret: 16,
            batch_rl: 8,
            generator: GeneratorConfig::default(),
            retrieval: RetrievalConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            pretrain_gen_epochs: 10,
            pretrain_ret_steps: 500,
            cycles: 10,
            eval_every: 1,
            flags: AblationFlags::FULL,
            semi_supervised: true,
            baseline_enabled: true,
            kd_mode: KdMode::Relative,
            pseudo_mode: PseudoMode::Greedy,
            pseudo_temperature: 1.0,
            rl_temperature: 1.0,
            generator_update: GeneratorUpdate::Combined,
            max_grad_norm: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.k_r == 0 || self.k_g == 0 {
            return bad("k_r and k_g must be at least 1");
        }
        let lambdas = [
            self.w_kl,
            self.lambda_kd,
            self.lambda_r1,
            self.lambda_r2,
            self.lambda_g,
        ];
        if lambdas.iter().any(|l| !(*l >= 0.0)) {
            return bad("loss weights must be non-negative");
        }
        if [self.lr_generator, self.lr_retrieval, self.lr_discriminator]
            .iter()
            .any(|l| !(*l > 0.0))
        {
            return bad("learning rates must be positive");
        }
        if !(self.margin > 0.0) {
            return bad("margin must be positive");
        }
        if self.batch_ret < 2 || self.batch_gen == 0 || self.batch_rl < 2 {
            return bad("batch_ret and batch_rl need at least 2 items, batch_gen at least 1");
        }
        if !(self.rl_temperature > 0.0) || !(self.pseudo_temperature > 0.0) {
            return bad("sampling temperatures must be positive");
        }
        let s = self.generator.image_size;
        if self.retrieval.image_size != s || self.discriminator.image_size != s {
            return bad("generator, retrieval and discriminator image sizes differ");
        }
        self.effective_generator().validate()
    }

    /// How pseudo sketches are decoded.
    pub fn pseudo_decoding(&self) -> Decoding {
        match self.pseudo_mode {
            PseudoMode::Greedy => Decoding::Greedy,
            PseudoMode::Sampled => Decoding::Stochastic {
                temperature: self.pseudo_temperature,
            },
        }
    }

    /// Generator architecture with the attention flag applied.
    pub fn effective_generator(&self) -> GeneratorConfig {
        let mut g = self.generator.clone();
        if !self.flags.at {
            g.attention = AttentionKind::Flat1d;
        }
        g
    }

    pub fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            max_grad_norm: self.max_grad_norm,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    PretrainGenerator,
    PretrainRetrieval,
    Retrieval,
    Discriminator,
    Generator,
    Eval,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::PretrainGenerator => "pretrain_gen",
            Phase::PretrainRetrieval => "pretrain_ret",
            Phase::Retrieval => "retrieval",
            Phase::Discriminator => "discriminator",
            Phase::Generator => "generator",
            Phase::Eval => "eval",
        }
    }
}

/// One optimizer step (or evaluation) worth of logged values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub phase: Phase,
    /// Step counter of this phase.
    pub step: u64,
    pub cycle: u64,
    pub values: Vec<(String, f64)>,
}

impl MetricRecord {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }
}

pub trait MetricSink {
    fn record(&mut self, record: MetricRecord);
}

impl MetricSink for Vec<MetricRecord> {
    fn record(&mut self, record: MetricRecord) {
        self.push(record);
    }
}

/// Discards records.
pub struct NullSink;

impl MetricSink for NullSink {
    fn record(&mut self, _: MetricRecord) {}
}

fn record(sink: &mut dyn MetricSink, phase: Phase, step: u64, cycle: u64, values: &[(&str, f64)]) {
    sink.record(MetricRecord {
        phase,
        step,
        cycle,
        values: values.iter().map(|(k, v)| (String::from(*k), *v)).collect(),
    });
}

/// A 16-pixel corpus and matching miniature models for fast tests.
#[doc(hidden)]
pub fn tiny_setup(
    seed: u64,
    sizes: crate::sketch::CorpusSizes,
) -> Result<(TrainData, TrainConfig)> {
    use crate::sketch::{generate_corpus, RasterConfig, ShapeFamily, ShapeSpec};
    let spec = ShapeSpec {
        family: ShapeFamily::Polygon {
            min_sides: 3,
            max_sides: 5,
        },
        canvas: 16,
        radius: (3.0, 7.0),
        ..ShapeSpec::default()
    };
    let generator = GeneratorConfig {
        max_len: 12,
        ..crate::generator::tiny_config()
    };
    let cfg = TrainConfig {
        seed,
        lr_generator: 1e-3,
        lr_retrieval: 1e-3,
        lr_discriminator: 1e-3,
        batch_gen: 4,
        batch_ret: 4,
        batch_rl: 2,
        retrieval: RetrievalConfig {
            image_size: 16,
            widths: alloc::vec![4, 6],
            embed_dim: 4,
        },
        discriminator: DiscriminatorConfig {
            image_size: 16,
            widths: alloc::vec![4, 6],
        },
        pretrain_gen_epochs: 1,
        pretrain_ret_steps: 3,
        cycles: 3,
        max_grad_norm: 0.0,
        generator,
        ..TrainConfig::default()
    };
    let corpus = generate_corpus(&spec, sizes, seed)?;
    let data = TrainData::prepare(&corpus, RasterConfig::square(16), cfg.generator.max_len)?;
    Ok((data, cfg))
}
