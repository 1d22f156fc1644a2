use alloc::vec::Vec;

use super::steps::{in_batch_negatives, retrieval_step, sample_indices, RetrievalInputs};
use super::{record, MetricSink, Phase, TrainConfig, TrainData};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::optim::Adam;
use crate::parallel;
use crate::params::Grads;
use crate::retrieval::{RetrievalModel, TeacherSnapshot};
use crate::rng::{self, purpose};

/// Models and optimizer state after both pre-trainings.
#[derive(Clone, Debug)]
pub struct Pretrained {
    pub generator: Generator,
    pub generator_adam: Adam,
    pub retrieval: RetrievalModel,
    pub retrieval_adam: Adam,
    pub teacher: TeacherSnapshot,
}

impl Pretrained {
    /// Fresh models initialised from `cfg.seed`, then both pre-trainings.
    pub fn run(data: &TrainData, cfg: &TrainConfig, sink: &mut dyn MetricSink) -> Result<Self> {
        cfg.validate()?;
        let mut generator = Generator::new(
            cfg.effective_generator(),
            rng::derive_seed(cfg.seed, purpose::INIT_GENERATOR, 0),
        )?;
        let mut generator_adam = Adam::new(cfg.adam(cfg.lr_generator), &generator.store);
        pretrain_generator(&mut generator, &mut generator_adam, data, cfg, sink)?;
        let (retrieval, retrieval_adam, teacher) = Self::retrieval_only(data, cfg, sink)?;
        Ok(Self {
            generator,
            generator_adam,
            retrieval,
            retrieval_adam,
            teacher,
        })
    }

    /// The retrieval half of [`Pretrained::run`], which does not depend on
    /// the generator.
    pub fn retrieval_only(
        data: &TrainData,
        cfg: &TrainConfig,
        sink: &mut dyn MetricSink,
    ) -> Result<(RetrievalModel, Adam, TeacherSnapshot)> {
        let mut retrieval = RetrievalModel::new(
            cfg.retrieval.clone(),
            rng::derive_seed(cfg.seed, purpose::INIT_RETRIEVAL, 0),
        )?;
        let mut adam = Adam::new(cfg.adam(cfg.lr_retrieval), &retrieval.store);
        let teacher = pretrain_retrieval(&mut retrieval, &mut adam, data, cfg, sink)?;
        Ok((retrieval, adam, teacher))
    }
}

/// VAE pre-training: `pretrain_gen_epochs` shuffled passes over the
/// labelled pairs in batches of `batch_gen`. Returns the number of steps.
pub fn pretrain_generator(
    generator: &mut Generator,
    adam: &mut Adam,
    data: &TrainData,
    cfg: &TrainConfig,
    sink: &mut dyn MetricSink,
) -> Result<u64> {
    let n = data.labeled.len();
    if n == 0 {
        return Err(Error::EmptyDataset(
            "generator pre-training needs labelled pairs",
        ));
    }
    let mut step = 0u64;
    for epoch in 0..cfg.pretrain_gen_epochs {
        let order = sample_indices(
            &mut rng::stream(cfg.seed, purpose::PRETRAIN_GEN_SHUFFLE, epoch as u64),
            n,
            n,
        );
        for chunk in order.chunks(cfg.batch_gen) {
            let g = &*generator;
            let w = 1.0 / chunk.len() as f64;
            let (grads, terms) = parallel::sum_grads_with(&g.store, chunk.len(), |j, acc| {
                let item = &data.labeled[chunk[j]];
                let eps = g.draw_eps(&mut rng::substream(
                    cfg.seed,
                    purpose::PRETRAIN_GEN_NOISE,
                    step,
                    j as u64,
                ));
                g.vae_grad(&item.photo, &item.sketch, &eps, cfg.w_kl, w, acc)
            });
            let (mut total, mut rec, mut kl) = (0.0, 0.0, 0.0);
            for t in terms {
                let t = t?;
                total += t.total * w;
                rec += t.reconstruction * w;
                kl += t.kl * w;
            }
            adam.step(&mut generator.store, &grads);
            record(
                sink,
                Phase::PretrainGenerator,
                step,
                epoch as u64,
                &[("vae", total), ("reconstruction", rec), ("kl", kl)],
            );
            step += 1;
        }
    }
    Ok(step)
}

/// Mean VAE loss with `z = mu` (no sampling noise), for validation.
pub fn vae_validation_loss(
    generator: &Generator,
    data: &[super::PairItem],
    w_kl: f64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("validation set"));
    }
    let zero = alloc::vec![0.0; generator.config.latent_dim];
    let losses = parallel::map_indexed(data.len(), |i| {
        let mut sink = Grads::for_store(&generator.store);
        generator
            .vae_grad(&data[i].photo, &data[i].sketch, &zero, w_kl, 0.0, &mut sink)
            .map(|t| t.total)
    });
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / data.len() as f64)
}

fn labeled_inputs<'a>(
    data: &'a TrainData,
    idx: &[usize],
    neg_rng: &mut rng::StreamRng,
) -> RetrievalInputs<'a> {
    RetrievalInputs {
        labeled: idx
            .iter()
            .map(|&i| (&data.labeled[i].photo, &data.labeled[i].raster))
            .collect(),
        labeled_negatives: in_batch_negatives(neg_rng, idx.len()),
        unlabeled: Vec::new(),
        unlabeled_negatives: Vec::new(),
        weights: Vec::new(),
    }
}

/// Triplet pre-training on labelled pairs; returns the teacher snapshot
/// taken at the end.
pub fn pretrain_retrieval(
    model: &mut RetrievalModel,
    adam: &mut Adam,
    data: &TrainData,
    cfg: &TrainConfig,
    sink: &mut dyn MetricSink,
) -> Result<TeacherSnapshot> {
    if data.labeled.len() < 2 {
        return Err(Error::InvalidArgument(
            "retrieval pre-training needs at least 2 labelled pairs".into(),
        ));
    }
    for s in 0..cfg.pretrain_ret_steps as u64 {
        let idx = sample_indices(
            &mut rng::stream(cfg.seed, purpose::PRETRAIN_RET_BATCH, s),
            data.labeled.len(),
            cfg.batch_ret,
        );
        let inputs = labeled_inputs(
            data,
            &idx,
            &mut rng::stream(cfg.seed, purpose::PRETRAIN_RET_NEG, s),
        );
        let loss = retrieval_step(model, adam, None, &inputs, cfg)?;
        record(
            sink,
            Phase::PretrainRetrieval,
            s,
            0,
            &[("triplet", loss.triplet_labeled)],
        );
    }
    Ok(TeacherSnapshot::new(model))
}

/// Labelled-only retrieval steps `start..start + count`, drawing batches
/// exactly as the joint loop does. This is the supervised baseline; with
/// `semi_supervised` off and no teacher term the joint loop reduces to it.
pub fn supervised_retrieval_steps(
    model: &mut RetrievalModel,
    adam: &mut Adam,
    data: &TrainData,
    cfg: &TrainConfig,
    start: u64,
    count: u64,
    sink: &mut dyn MetricSink,
) -> Result<()> {
    if data.labeled.len() < 2 {
        return Err(Error::InvalidArgument(
            "retrieval training needs at least 2 labelled pairs".into(),
        ));
    }
    for s in start..start + count {
        let inputs = labeled_batch(data, cfg, s);
        let loss = retrieval_step(model, adam, None, &inputs, cfg)?;
        record(
            sink,
            Phase::Retrieval,
            s,
            s / cfg.k_r as u64,
            &loss_values(&loss),
        );
    }
    Ok(())
}

pub(super) fn labeled_batch<'a>(
    data: &'a TrainData,
    cfg: &TrainConfig,
    step: u64,
) -> RetrievalInputs<'a> {
    let idx = sample_indices(
        &mut rng::stream(cfg.seed, purpose::RET_LABELED_BATCH, step),
        data.labeled.len(),
        cfg.batch_ret,
    );
    labeled_inputs(
        data,
        &idx,
        &mut rng::stream(cfg.seed, purpose::RET_LABELED_NEG, step),
    )
}

pub(super) fn loss_values(l: &super::RetrievalLoss) -> [(&'static str, f64); 5] {
    [
        ("triplet_labeled", l.triplet_labeled),
        ("triplet_unlabeled", l.triplet_unlabeled),
        ("kd", l.kd),
        ("mean_weight", l.mean_weight),
        ("total", l.total),
    ]
}
