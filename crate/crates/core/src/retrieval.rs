//! Cross-modal embedding network with soft spatial attention, shared
//! between the photo and sketch branches, plus its training losses.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Trainable, Var};
use crate::error::{shape_err, Error, Result};
use crate::layers::{Activation, Conv2d, ConvStack, Linear};
use crate::math;
use crate::parallel;
use crate::params::{Grads, ParamStore};
use crate::rng;
use crate::sketch::RasterImage;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub image_size: usize,
    pub widths: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            widths: vec![32, 64, 96, 128],
            embed_dim: 64,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RetrievalModel {
    pub config: RetrievalConfig,
    pub store: ParamStore,
    backbone: ConvStack,
    attention: Conv2d,
    head: Linear,
}

/// Tape handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Embedded {
    pub embedding: Var,
    /// Globally pooled attended features (penultimate activations).
    pub pooled: Var,
    pub attention: Var,
}

impl RetrievalModel {
    pub fn new(config: RetrievalConfig, seed: u64) -> Result<Self> {
        if config.widths.is_empty() || config.embed_dim == 0 {
            return Err(Error::InvalidArgument(
                "retrieval widths and embed_dim must be non-empty".into(),
            ));
        }
        let mut r = rng::stream(seed, rng::purpose::INIT_RETRIEVAL, 0);
        let mut store = ParamStore::new();
        let backbone = ConvStack::new(
            &mut store,
            "ret.backbone",
            3,
            &config.widths,
            Activation::LeakyRelu(0.2),
            &mut r,
        );
        let c = *config.widths.last().unwrap();
        let attention = Conv2d::new(&mut store, "ret.attention", c, 1, 1, 1, 0, true, &mut r);
        let head = Linear::new(
            &mut store,
            "ret.head",
            c,
            config.embed_dim,
            true,
            1.0,
            &mut r,
        );
        Ok(Self {
            config,
            store,
            backbone,
            attention,
            head,
        })
    }

    fn check(&self, image: &RasterImage) -> Result<()> {
        let s = self.config.image_size;
        if image.height() != s || image.width() != s {
            return Err(shape_err([3, s, s], image.tensor().shape()));
        }
        Ok(())
    }

    /// `F = F' + F' * softmax(conv1x1(F'))`, pooled and projected.
    pub fn forward(&self, tape: &mut Tape, image: &RasterImage) -> Result<Embedded> {
        self.check(image)?;
        let x = tape.constant(image.tensor().clone());
        let f = self.backbone.forward(tape, x);
        let logits = self.attention.forward(tape, f);
        let a = tape.softmax(logits);
        let gated = tape.spatial_gate(f, a);
        let attended = tape.add(f, gated);
        let pooled = tape.spatial_mean(attended);
        let embedding = self.head.forward(tape, pooled);
        Ok(Embedded {
            embedding,
            pooled,
            attention: a,
        })
    }

    pub fn embed(&self, image: &RasterImage) -> Result<Vec<f64>> {
        let mut tape = Tape::inference(&self.store);
        let e = self.forward(&mut tape, image)?;
        Ok(tape.data(e.embedding).to_vec())
    }

    /// Embedding and penultimate features.
    pub fn embed_with_features(&self, image: &RasterImage) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::inference(&self.store);
        let e = self.forward(&mut tape, image)?;
        Ok((
            tape.data(e.embedding).to_vec(),
            tape.data(e.pooled).to_vec(),
        ))
    }

    pub fn attention_map(&self, image: &RasterImage) -> Result<Vec<f64>> {
        let mut tape = Tape::inference(&self.store);
        let e = self.forward(&mut tape, image)?;
        Ok(tape.data(e.attention).to_vec())
    }

    /// Embeddings of many images, computed in parallel, in input order.
    pub fn embed_many(&self, images: &[&RasterImage]) -> Result<Vec<Vec<f64>>> {
        parallel::map_indexed(images.len(), |i| self.embed(images[i]))
            .into_iter()
            .collect()
    }

    pub fn load_values(&mut self, store: &ParamStore) -> Result<()> {
        crate::generator::load_values(&mut self.store, store)
    }
}

/// Frozen copy of a retrieval model. There is no mutable access.
#[derive(Clone, Debug)]
pub struct TeacherSnapshot {
    model: RetrievalModel,
}

impl TeacherSnapshot {
    pub fn new(model: &RetrievalModel) -> Self {
        Self {
            model: model.clone(),
        }
    }

    pub fn model(&self) -> &RetrievalModel {
        &self.model
    }

    pub fn embed(&self, image: &RasterImage) -> Result<Vec<f64>> {
        self.model.embed(image)
    }

    pub fn embed_many(&self, images: &[&RasterImage]) -> Result<Vec<Vec<f64>>> {
        self.model.embed_many(images)
    }
}

/// Differentiable forward passes for a batch of images, kept so that a
/// later backward can consume per-image embedding gradients.
pub struct EmbeddingBatch<'a> {
    tapes: Vec<(Tape<'a>, Var)>,
}

impl<'a> EmbeddingBatch<'a> {
    pub fn forward(model: &'a RetrievalModel, images: &[&RasterImage]) -> Result<Self> {
        let tapes = parallel::map_indexed(images.len(), |i| {
            let mut tape = Tape::new(&model.store, Trainable::All);
            let e = model.forward(&mut tape, images[i])?;
            Ok((tape, e.embedding))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        Ok(Self { tapes })
    }

    pub fn len(&self) -> usize {
        self.tapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tapes.is_empty()
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        let (tape, v) = &self.tapes[i];
        tape.data(*v)
    }

    pub fn embeddings(&self) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|i| self.embedding(i).to_vec())
            .collect()
    }

    /// Parameter gradient for the given `dL/d embedding_i`.
    pub fn backward(&self, store: &ParamStore, d_emb: &[Vec<f64>]) -> Grads {
        assert_eq!(d_emb.len(), self.len());
        parallel::sum_grads(store, self.len(), |i, g| {
            if d_emb[i].iter().any(|&x| x != 0.0) {
                let (tape, v) = &self.tapes[i];
                tape.backward_seeded(&[(*v, &d_emb[i])], g);
            }
        })
    }
}

fn unit_diff(a: &[f64], b: &[f64]) -> (f64, Vec<f64>) {
    let d = math::l2_distance(a, b);
    let u = if d > 0.0 {
        a.iter().zip(b).map(|(x, y)| (x - y) / d).collect()
    } else {
        vec![0.0; a.len()]
    };
    (d, u)
}

/// `max(0, m + |a - p| - |a - n|)`.
pub fn triplet_loss(anchor: &[f64], pos: &[f64], neg: &[f64], margin: f64) -> f64 {
    (margin + math::l2_distance(anchor, pos) - math::l2_distance(anchor, neg)).max(0.0)
}

/// Gradients of [`triplet_loss`] with respect to anchor, positive and
/// negative. The hinge kink and zero distances take subgradient 0.
pub fn triplet_grad(anchor: &[f64], pos: &[f64], neg: &[f64], margin: f64) -> (f64, [Vec<f64>; 3]) {
    let (dp, up) = unit_diff(anchor, pos);
    let (dn, un) = unit_diff(anchor, neg);
    let v = margin + dp - dn;
    if v <= 0.0 {
        let z = vec![0.0; anchor.len()];
        return (0.0, [z.clone(), z.clone(), z]);
    }
    let ga = up.iter().zip(&un).map(|(p, n)| p - n).collect();
    let gp = up.iter().map(|p| -p).collect();
    (v, [ga, gp, un])
}

/// `| d(T(p), T(s)) - d(S(p), S(s)) |` from precomputed embeddings.
pub fn kd_relative(
    teacher_photo: &[f64],
    teacher_sketch: &[f64],
    photo: &[f64],
    sketch: &[f64],
) -> f64 {
    (math::l2_distance(teacher_photo, teacher_sketch) - math::l2_distance(photo, sketch)).abs()
}

/// [`kd_relative`] and its gradients with respect to the student's photo
/// and sketch embeddings.
pub fn kd_relative_grad(
    teacher_photo: &[f64],
    teacher_sketch: &[f64],
    photo: &[f64],
    sketch: &[f64],
) -> (f64, Vec<f64>, Vec<f64>) {
    let dt = math::l2_distance(teacher_photo, teacher_sketch);
    let (ds, u) = unit_diff(photo, sketch);
    let diff = ds - dt;
    let s = if diff > 0.0 {
        1.0
    } else if diff < 0.0 {
        -1.0
    } else {
        0.0
    };
    let gp: Vec<f64> = u.iter().map(|x| s * x).collect();
    let gs = gp.iter().map(|x| -x).collect();
    (diff.abs(), gp, gs)
}

/// `| T(x) - S(x) |_2` for one image.
pub fn kd_absolute(teacher: &[f64], student: &[f64]) -> f64 {
    math::l2_distance(teacher, student)
}

/// [`kd_absolute`] and its gradient with respect to the student embedding.
pub fn kd_absolute_grad(teacher: &[f64], student: &[f64]) -> (f64, Vec<f64>) {
    unit_diff(student, teacher)
}

/// Relative-teacher distillation of one photo/sketch pair.
pub fn kd_loss_relative(
    teacher: &TeacherSnapshot,
    student: &RetrievalModel,
    photo: &RasterImage,
    sketch: &RasterImage,
) -> Result<f64> {
    Ok(kd_relative(
        &teacher.embed(photo)?,
        &teacher.embed(sketch)?,
        &student.embed(photo)?,
        &student.embed(sketch)?,
    ))
}

/// Absolute-teacher distillation of one image.
pub fn kd_loss_absolute(
    teacher: &TeacherSnapshot,
    student: &RetrievalModel,
    image: &RasterImage,
) -> Result<f64> {
    Ok(kd_absolute(&teacher.embed(image)?, &student.embed(image)?))
}

/// Gallery indices sorted by ascending distance to `query`, ties broken by
/// ascending id.
pub fn rank_gallery<S: Ord>(query: &[f64], gallery: &[Vec<f64>], ids: &[S]) -> Result<Vec<usize>> {
    if gallery.is_empty() {
        return Err(Error::EmptyDataset("gallery"));
    }
    if ids.len() != gallery.len() {
        return Err(shape_err(gallery.len(), ids.len()));
    }
    let d: Vec<f64> = gallery
        .iter()
        .map(|g| math::l2_distance(query, g))
        .collect();
    let mut order: Vec<usize> = (0..gallery.len()).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then_with(|| ids[a].cmp(&ids[b])));
    Ok(order)
}

/// 1-based rank of gallery item `target` under [`rank_gallery`]'s order,
/// computed without sorting.
pub fn rank_of<S: Ord>(query: &[f64], gallery: &[Vec<f64>], ids: &[S], target: usize) -> usize {
    let dt = math::l2_distance(query, &gallery[target]);
    1 + gallery
        .iter()
        .enumerate()
        .filter(|&(i, g)| {
            let d = math::l2_distance(query, g);
            d < dt || (d == dt && ids[i] < ids[target])
        })
        .count()
}
