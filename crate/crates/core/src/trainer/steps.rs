//! The three optimizer steps of a cycle and the reward.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;

use super::{KdMode, TrainConfig};
use crate::discriminator::Discriminator;
use crate::error::{Error, Result};
use crate::generator::{Decoding, Generator, Sample};
use crate::optim::Adam;
use crate::parallel;
use crate::params::Grads;
use crate::retrieval::{
    kd_absolute_grad, kd_relative_grad, triplet_grad, triplet_loss, EmbeddingBatch, RetrievalModel,
    TeacherSnapshot,
};
use crate::rng;
use crate::sketch::{rasterize, RasterConfig, RasterImage, StrokeSequence};

/// `k` distinct indices out of `n` (all of them when `n <= k`).
pub(crate) fn sample_indices<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    index::sample(rng, n, k.min(n)).into_vec()
}

/// For each position of a batch of `n`, a uniformly drawn different position.
pub(crate) fn in_batch_negatives<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<usize> {
    (0..n)
        .map(|i| {
            let j = rng.gen_range(0..n - 1);
            if j >= i {
                j + 1
            } else {
                j
            }
        })
        .collect()
}

/// Decode and rasterize one sketch per photo. Stochastic decoding of photo
/// `j` draws from sub-stream `j` of `(seed, purpose, step)`.
pub fn make_pseudo_pairs(
    generator: &Generator,
    photos: &[&RasterImage],
    decoding: Decoding,
    raster: &RasterConfig,
    seed: u64,
    step: u64,
) -> Result<Vec<(StrokeSequence, RasterImage)>> {
    let max_len = generator.config.max_len;
    parallel::map_indexed(photos.len(), |j| {
        let mut r = rng::substream(seed, rng::purpose::RET_PSEUDO_SAMPLE, step, j as u64);
        let s = generator.sample(photos[j], decoding, max_len, &mut r)?;
        let img = rasterize(&s.sequence, raster)?;
        Ok((s.sequence, img))
    })
    .into_iter()
    .collect()
}

/// Inputs of one semi-supervised retrieval step. Pairs are
/// `(photo, sketch raster)`; negatives index into the same batch.
pub struct RetrievalInputs<'a> {
    pub labeled: Vec<(&'a RasterImage, &'a RasterImage)>,
    pub labeled_negatives: Vec<usize>,
    pub unlabeled: Vec<(&'a RasterImage, &'a RasterImage)>,
    pub unlabeled_negatives: Vec<usize>,
    /// Certainty weight of each pseudo pair.
    pub weights: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RetrievalLoss {
    pub triplet_labeled: f64,
    /// `sum_j w_j * triplet_j / |U|`.
    pub triplet_unlabeled: f64,
    pub kd: f64,
    pub total: f64,
    pub mean_weight: f64,
}

/// Combined retrieval loss and its gradient for the student.
pub fn retrieval_loss_and_grad(
    model: &RetrievalModel,
    teacher: Option<&TeacherSnapshot>,
    inputs: &RetrievalInputs,
    cfg: &TrainConfig,
) -> Result<(RetrievalLoss, Grads)> {
    let (nl, nu) = (inputs.labeled.len(), inputs.unlabeled.len());
    if nl < 2 || (nu == 1) {
        return Err(Error::InvalidArgument(
            "retrieval batches need at least 2 pairs".into(),
        ));
    }
    if inputs.labeled_negatives.len() != nl
        || inputs.unlabeled_negatives.len() != nu
        || inputs.weights.len() != nu
    {
        return Err(Error::InvalidArgument(
            "negatives and weights must match the batches".into(),
        ));
    }
    // images: labelled photos, labelled sketches, pseudo photos, pseudo sketches
    let mut images: Vec<&RasterImage> = Vec::with_capacity(2 * (nl + nu));
    images.extend(inputs.labeled.iter().map(|p| p.0));
    images.extend(inputs.labeled.iter().map(|p| p.1));
    images.extend(inputs.unlabeled.iter().map(|p| p.0));
    images.extend(inputs.unlabeled.iter().map(|p| p.1));
    let (lp, ls, up, us) = (0, nl, 2 * nl, 2 * nl + nu);
    let batch = EmbeddingBatch::forward(model, &images)?;
    let e = batch.embeddings();
    let dim = model.config.embed_dim;
    let mut d = vec![vec![0.0; dim]; images.len()];
    let add = |d: &mut Vec<Vec<f64>>, i: usize, g: &[f64], w: f64| {
        for (a, b) in d[i].iter_mut().zip(g) {
            *a += w * b;
        }
    };

    let mut loss = RetrievalLoss::default();
    for i in 0..nl {
        let n = inputs.labeled_negatives[i];
        let (v, [ga, gp, gn]) = triplet_grad(&e[ls + i], &e[lp + i], &e[lp + n], cfg.margin);
        loss.triplet_labeled += v / nl as f64;
        add(&mut d, ls + i, &ga, 1.0 / nl as f64);
        add(&mut d, lp + i, &gp, 1.0 / nl as f64);
        add(&mut d, lp + n, &gn, 1.0 / nl as f64);
    }
    for j in 0..nu {
        let n = inputs.unlabeled_negatives[j];
        let w = inputs.weights[j] / nu as f64;
        let (v, [ga, gp, gn]) = triplet_grad(&e[us + j], &e[up + j], &e[up + n], cfg.margin);
        loss.triplet_unlabeled += w * v;
        add(&mut d, us + j, &ga, w);
        add(&mut d, up + j, &gp, w);
        add(&mut d, up + n, &gn, w);
    }
    if nu > 0 {
        loss.mean_weight = inputs.weights.iter().sum::<f64>() / nu as f64;
    }
    if let Some(t) = teacher.filter(|_| cfg.flags.tr) {
        let te = t.embed_many(&images)?;
        let pairs: Vec<(usize, usize)> = (0..nl)
            .map(|i| (lp + i, ls + i))
            .chain((0..nu).map(|j| (up + j, us + j)))
            .collect();
        let w = cfg.lambda_kd / pairs.len() as f64;
        for &(p, s) in &pairs {
            match cfg.kd_mode {
                KdMode::Relative => {
                    let (v, gp, gs) = kd_relative_grad(&te[p], &te[s], &e[p], &e[s]);
                    loss.kd += v / pairs.len() as f64;
                    add(&mut d, p, &gp, w);
                    add(&mut d, s, &gs, w);
                }
                KdMode::Absolute => {
                    let (vp, gp) = kd_absolute_grad(&te[p], &e[p]);
                    let (vs, gs) = kd_absolute_grad(&te[s], &e[s]);
                    loss.kd += 0.5 * (vp + vs) / pairs.len() as f64;
                    add(&mut d, p, &gp, 0.5 * w);
                    add(&mut d, s, &gs, 0.5 * w);
                }
            }
        }
    }
    loss.total = loss.triplet_labeled
        + loss.triplet_unlabeled
        + if cfg.flags.tr && teacher.is_some() {
            cfg.lambda_kd * loss.kd
        } else {
            0.0
        };
    let grads = batch.backward(&model.store, &d);
    Ok((loss, grads))
}

/// One optimizer step on the retrieval model.
pub fn retrieval_step(
    model: &mut RetrievalModel,
    adam: &mut Adam,
    teacher: Option<&TeacherSnapshot>,
    inputs: &RetrievalInputs,
    cfg: &TrainConfig,
) -> Result<RetrievalLoss> {
    let (loss, grads) = retrieval_loss_and_grad(model, teacher, inputs, cfg)?;
    adam.step(&mut model.store, &grads);
    Ok(loss)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DiscriminatorLoss {
    pub loss: f64,
    pub real_mean: f64,
    pub fake_mean: f64,
}

/// One optimizer step on the discriminator: labelled pairs are real,
/// pseudo pairs fake.
pub fn discriminator_step(
    disc: &mut Discriminator,
    adam: &mut Adam,
    real: &[(&RasterImage, &RasterImage)],
    fake: &[(&RasterImage, &RasterImage)],
) -> Result<DiscriminatorLoss> {
    let (loss, rs, fs, grads) = disc.loss_and_grad(real, fake)?;
    adam.step(&mut disc.store, &grads);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(DiscriminatorLoss {
        loss,
        real_mean: mean(&rs),
        fake_mean: mean(&fs),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RewardRecord {
    pub reward: f64,
    pub triplet: f64,
    pub disc_score: f64,
    pub baseline: f64,
}

impl RewardRecord {
    pub fn advantage(&self) -> f64 {
        self.reward - self.baseline
    }
}

/// `R = -lambda_r1 * triplet + lambda_r2 * score`.
pub fn reward_from_parts(triplet: f64, disc_score: f64, cfg: &TrainConfig) -> RewardRecord {
    RewardRecord {
        reward: -cfg.lambda_r1 * triplet + cfg.lambda_r2 * disc_score,
        triplet,
        disc_score,
        baseline: 0.0,
    }
}

/// Reward of a generated sketch for its photo under frozen `F` and `D_C`.
pub fn compute_reward(
    photo: &RasterImage,
    sketch: &RasterImage,
    negative: &RasterImage,
    retrieval: &RetrievalModel,
    disc: &Discriminator,
    cfg: &TrainConfig,
) -> Result<RewardRecord> {
    if photo == negative {
        return Err(Error::InvalidArgument(
            "negative photo equals the positive photo".into(),
        ));
    }
    let t = triplet_loss(
        &retrieval.embed(sketch)?,
        &retrieval.embed(photo)?,
        &retrieval.embed(negative)?,
        cfg.margin,
    );
    Ok(reward_from_parts(t, disc.score_pair(photo, sketch)?, cfg))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneratorPaths {
    pub supervised: bool,
    pub reinforce: bool,
}

impl GeneratorPaths {
    pub const BOTH: Self = Self {
        supervised: true,
        reinforce: true,
    };
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GeneratorLoss {
    pub vae: f64,
    pub reconstruction: f64,
    pub kl: f64,
    pub reward_mean: f64,
    pub triplet_mean: f64,
    pub disc_mean: f64,
    pub baseline: f64,
    /// `-lambda_G * mean((R - b) * log p)`, whose gradient the policy path
    /// follows.
    pub surrogate: f64,
}

/// One generator step: VAE gradient on `vae_batch` (labelled pairs with
/// their latent noise) plus the policy gradient for sketches sampled from
/// `rl_photos`, rewarded against in-batch negatives `rl_negatives`. The
/// policy path only reaches the output layer.
#[allow(clippy::too_many_arguments)]
pub fn generator_step(
    generator: &mut Generator,
    adam: &mut Adam,
    retrieval: &RetrievalModel,
    disc: &Discriminator,
    vae_batch: &[(&RasterImage, &StrokeSequence, Vec<f64>)],
    rl_photos: &[&RasterImage],
    rl_negatives: &[usize],
    raster: &RasterConfig,
    cfg: &TrainConfig,
    paths: GeneratorPaths,
    step: u64,
) -> Result<(GeneratorLoss, Vec<RewardRecord>)> {
    let mut loss = GeneratorLoss::default();
    let mut grads = Grads::for_store(&generator.store);
    if paths.supervised && !vae_batch.is_empty() {
        let g = &*generator;
        let w = 1.0 / vae_batch.len() as f64;
        let (gr, terms) = parallel::sum_grads_with(&g.store, vae_batch.len(), |i, acc| {
            let (p, s, eps) = &vae_batch[i];
            g.vae_grad(p, s, eps, cfg.w_kl, w, acc)
        });
        for t in terms {
            let t = t?;
            loss.vae += t.total * w;
            loss.reconstruction += t.reconstruction * w;
            loss.kl += t.kl * w;
        }
        grads.add_assign(&gr);
    }
    let mut records = Vec::new();
    if paths.reinforce && !rl_photos.is_empty() {
        let n = rl_photos.len();
        if rl_negatives.len() != n {
            return Err(Error::InvalidArgument(
                "one negative per sampled photo is required".into(),
            ));
        }
        let g = &*generator;
        let decoding = Decoding::Stochastic {
            temperature: cfg.rl_temperature,
        };
        let samples: Vec<(Sample, RasterImage)> = parallel::map_indexed(n, |j| {
            let mut r = rng::substream(cfg.seed, rng::purpose::GEN_RL_SAMPLE, step, j as u64);
            let s = g.sample(rl_photos[j], decoding, g.config.max_len, &mut r)?;
            let img = rasterize(&s.sequence, raster)?;
            Ok((s, img))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let sketches: Vec<&RasterImage> = samples.iter().map(|s| &s.1).collect();
        let se = retrieval.embed_many(&sketches)?;
        let pe = retrieval.embed_many(rl_photos)?;
        let pairs: Vec<(&RasterImage, &RasterImage)> =
            (0..n).map(|j| (rl_photos[j], sketches[j])).collect();
        let scores = disc.certainty_weights(&pairs)?;
        records = (0..n)
            .map(|j| {
                reward_from_parts(
                    triplet_loss(&se[j], &pe[j], &pe[rl_negatives[j]], cfg.margin),
                    scores[j],
                    cfg,
                )
            })
            .collect();
        let mean = |rs: &[RewardRecord], f: fn(&RewardRecord) -> f64| {
            rs.iter().map(f).sum::<f64>() / n as f64
        };
        loss.reward_mean = mean(&records, |r| r.reward);
        loss.triplet_mean = mean(&records, |r| r.triplet);
        loss.disc_mean = mean(&records, |r| r.disc_score);
        let seqs: Vec<&Sample> = samples.iter().map(|s| &s.0).collect();
        let (b, surrogate) = reinforce_grad(generator, &seqs, &mut records, cfg, &mut grads)?;
        loss.baseline = b;
        loss.surrogate = surrogate;
    }
    adam.step(&mut generator.store, &grads);
    Ok((loss, records))
}

/// Policy-gradient contribution `-lambda_G * (R - b) * grad log p(sample)`,
/// averaged over the batch and restricted to the output layer. Fills in the
/// baseline of each record and returns it with the surrogate loss.
pub fn reinforce_grad(
    generator: &Generator,
    samples: &[&Sample],
    records: &mut [RewardRecord],
    cfg: &TrainConfig,
    grads: &mut Grads,
) -> Result<(f64, f64)> {
    let n = samples.len();
    if records.len() != n || n == 0 {
        return Err(Error::InvalidArgument(
            "one reward per sample is required".into(),
        ));
    }
    // mean shifted by the first reward, exact when all rewards are equal
    let r0 = records[0].reward;
    let b = if cfg.baseline_enabled {
        r0 + records.iter().map(|r| r.reward - r0).sum::<f64>() / n as f64
    } else {
        0.0
    };
    let mut surrogate = 0.0;
    for (r, s) in records.iter_mut().zip(samples) {
        r.baseline = b;
        let scale = -cfg.lambda_g * r.advantage() / n as f64;
        surrogate += scale * s.log_prob();
        generator.output_layer_log_prob_grad(s, scale, grads)?;
    }
    Ok((b, surrogate))
}
