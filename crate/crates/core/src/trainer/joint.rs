use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::pretrain::{labeled_batch, loss_values};
use super::steps::{
    discriminator_step, generator_step, in_batch_negatives, make_pseudo_pairs, retrieval_step,
    sample_indices, GeneratorPaths,
};
use super::{record, GeneratorUpdate, MetricSink, Phase, Pretrained, TrainConfig, TrainData};
use crate::discriminator::Discriminator;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_retrieval, RetrievalMetrics};
use crate::generator::{Decoding, Generator};
use crate::optim::Adam;
use crate::retrieval::{RetrievalModel, TeacherSnapshot};
use crate::rng::{self, purpose};
use crate::sketch::{RasterImage, StrokeSequence};

#[derive(Clone, Debug)]
pub struct Models {
    pub generator: Generator,
    pub retrieval: RetrievalModel,
    pub teacher: TeacherSnapshot,
    pub discriminator: Discriminator,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Optimizers {
    pub generator: Adam,
    pub retrieval: Adam,
    pub discriminator: Adam,
}

/// Everything needed to continue the joint loop from a cycle boundary.
#[derive(Clone, Debug)]
pub struct JointState {
    pub models: Models,
    pub optimizers: Optimizers,
    pub cycle: u64,
    pub ret_steps: u64,
    pub disc_steps: u64,
    pub gen_steps: u64,
}

impl JointState {
    /// Start from pre-trained models with a freshly initialised
    /// discriminator. Optimizer moments of the pre-trainings carry over.
    pub fn new(pre: Pretrained, cfg: &TrainConfig) -> Result<Self> {
        let discriminator = Discriminator::new(
            cfg.discriminator.clone(),
            rng::derive_seed(cfg.seed, purpose::INIT_DISCRIMINATOR, 0),
        )?;
        let disc_adam = Adam::new(cfg.adam(cfg.lr_discriminator), &discriminator.store);
        Ok(Self {
            optimizers: Optimizers {
                generator: pre.generator_adam,
                retrieval: pre.retrieval_adam,
                discriminator: disc_adam,
            },
            models: Models {
                generator: pre.generator,
                retrieval: pre.retrieval,
                teacher: pre.teacher,
                discriminator,
            },
            cycle: 0,
            ret_steps: 0,
            disc_steps: 0,
            gen_steps: 0,
        })
    }

    /// Retrieval metrics of the current student on the test split.
    pub fn evaluate(&self, data: &TrainData) -> Result<RetrievalMetrics> {
        evaluate_test(&self.models.retrieval, data)
    }
}

pub(crate) fn evaluate_test(model: &RetrievalModel, data: &TrainData) -> Result<RetrievalMetrics> {
    let sketches: Vec<&RasterImage> = data.test.iter().map(|p| &p.raster).collect();
    let photos: Vec<&RasterImage> = data.test.iter().map(|p| &p.photo).collect();
    let ids: Vec<String> = data.test.iter().map(|p| p.id.clone()).collect();
    Ok(evaluate_retrieval(model, &sketches, &photos, &ids)?.1)
}

/// Run `cycles` further cycles of the alternating loop.
pub fn joint_train(
    state: &mut JointState,
    data: &TrainData,
    cfg: &TrainConfig,
    cycles: usize,
    sink: &mut dyn MetricSink,
) -> Result<()> {
    cfg.validate()?;
    if data.labeled.len() < 2 {
        return Err(Error::InvalidArgument(
            "joint training needs at least 2 labelled pairs".into(),
        ));
    }
    let ssl = cfg.semi_supervised;
    if ssl && data.unlabeled.len() < 2 {
        return Err(Error::InvalidArgument(
            "semi-supervised training needs at least 2 unlabelled photos".into(),
        ));
    }
    let decoding = cfg.pseudo_decoding();
    for _ in 0..cycles {
        let cycle = state.cycle;
        for _ in 0..cfg.k_r {
            retrieval_iteration(state, data, cfg, ssl, decoding, sink)?;
        }
        if ssl && cfg.flags.jt {
            for _ in 0..cfg.k_g {
                generator_iteration(state, data, cfg, sink)?;
            }
        }
        state.cycle += 1;
        if cfg.eval_every > 0
            && state.cycle.is_multiple_of(cfg.eval_every as u64)
            && data.test.len() >= 2
        {
            let m = state.evaluate(data)?;
            record(
                sink,
                Phase::Eval,
                state.cycle,
                cycle,
                &[("acc1", m.acc1), ("acc10", m.acc10), ("arp", m.arp)],
            );
        }
    }
    Ok(())
}

fn retrieval_iteration(
    state: &mut JointState,
    data: &TrainData,
    cfg: &TrainConfig,
    ssl: bool,
    decoding: Decoding,
    sink: &mut dyn MetricSink,
) -> Result<()> {
    let s = state.ret_steps;
    let mut inputs = labeled_batch(data, cfg, s);
    let mut pseudo: Vec<(StrokeSequence, RasterImage)> = Vec::new();
    let mut photos: Vec<&RasterImage> = Vec::new();
    if ssl {
        let n = inputs.labeled.len();
        let uidx = sample_indices(
            &mut rng::stream(cfg.seed, purpose::RET_UNLABELED_BATCH, s),
            data.unlabeled.len(),
            n,
        );
        photos = uidx.iter().map(|&i| &data.unlabeled[i].photo).collect();
        pseudo = make_pseudo_pairs(
            &state.models.generator,
            &photos,
            decoding,
            &data.raster,
            cfg.seed,
            s,
        )?;
    }
    let fake: Vec<(&RasterImage, &RasterImage)> = photos
        .iter()
        .copied()
        .zip(pseudo.iter().map(|p| &p.1))
        .collect();
    if ssl {
        inputs.weights = if cfg.flags.iw {
            state.models.discriminator.certainty_weights(&fake)?
        } else {
            vec![1.0; fake.len()]
        };
        inputs.unlabeled_negatives = in_batch_negatives(
            &mut rng::stream(cfg.seed, purpose::RET_UNLABELED_NEG, s),
            fake.len(),
        );
        inputs.unlabeled = fake.clone();
    }
    let teacher = if cfg.flags.tr {
        Some(&state.models.teacher)
    } else {
        None
    };
    let loss = retrieval_step(
        &mut state.models.retrieval,
        &mut state.optimizers.retrieval,
        teacher,
        &inputs,
        cfg,
    )?;
    record(sink, Phase::Retrieval, s, state.cycle, &loss_values(&loss));
    state.ret_steps += 1;
    if ssl {
        let d = discriminator_step(
            &mut state.models.discriminator,
            &mut state.optimizers.discriminator,
            &inputs.labeled,
            &fake,
        )?;
        record(
            sink,
            Phase::Discriminator,
            state.disc_steps,
            state.cycle,
            &[
                ("loss", d.loss),
                ("real_score", d.real_mean),
                ("fake_score", d.fake_mean),
            ],
        );
        state.disc_steps += 1;
    }
    Ok(())
}

fn generator_iteration(
    state: &mut JointState,
    data: &TrainData,
    cfg: &TrainConfig,
    sink: &mut dyn MetricSink,
) -> Result<()> {
    let s = state.gen_steps;
    let paths = match cfg.generator_update {
        GeneratorUpdate::Combined => GeneratorPaths::BOTH,
        GeneratorUpdate::Alternate => GeneratorPaths {
            supervised: s.is_multiple_of(2),
            reinforce: s % 2 == 1,
        },
    };
    let lidx = sample_indices(
        &mut rng::stream(cfg.seed, purpose::GEN_LABELED_BATCH, s),
        data.labeled.len(),
        cfg.batch_gen,
    );
    let uidx = sample_indices(
        &mut rng::stream(cfg.seed, purpose::GEN_UNLABELED_BATCH, s),
        data.unlabeled.len(),
        cfg.batch_rl,
    );
    let g = &state.models.generator;
    let vae: Vec<(&RasterImage, &StrokeSequence, Vec<f64>)> = lidx
        .iter()
        .enumerate()
        .map(|(j, &i)| {
            let eps = g.draw_eps(&mut rng::substream(
                cfg.seed,
                purpose::GEN_NOISE,
                s,
                j as u64,
            ));
            (&data.labeled[i].photo, &data.labeled[i].sketch, eps)
        })
        .collect();
    // the reward batch reuses the head of the labelled batch
    let rl_photos: Vec<&RasterImage> = lidx
        .iter()
        .take(cfg.batch_rl)
        .map(|&i| &data.labeled[i].photo)
        .chain(uidx.iter().map(|&i| &data.unlabeled[i].photo))
        .collect();
    let negs = in_batch_negatives(
        &mut rng::stream(cfg.seed, purpose::GEN_RL_NEG, s),
        rl_photos.len(),
    );
    let (loss, _) = generator_step(
        &mut state.models.generator,
        &mut state.optimizers.generator,
        &state.models.retrieval,
        &state.models.discriminator,
        &vae,
        &rl_photos,
        &negs,
        &data.raster,
        cfg,
        paths,
        s,
    )?;
    record(
        sink,
        Phase::Generator,
        s,
        state.cycle,
        &[
            ("vae", loss.vae),
            ("reconstruction", loss.reconstruction),
            ("kl", loss.kl),
            ("reward", loss.reward_mean),
            ("reward_triplet", loss.triplet_mean),
            ("reward_disc", loss.disc_mean),
            ("baseline", loss.baseline),
            ("surrogate", loss.surrogate),
        ],
    );
    state.gen_steps += 1;
    Ok(())
}
