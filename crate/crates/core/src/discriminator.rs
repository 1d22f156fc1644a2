//! Pair discriminator scoring (photo, rasterized sketch) pairs as real or
//! generated. Its frozen scores double as certainty weights for pseudo pairs.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Trainable, Var};
use crate::error::{shape_err, Error, Result};
use crate::layers::{Activation, Conv2d, ConvStack};
use crate::math;
use crate::parallel;
use crate::params::{Grads, ParamStore};
use crate::rng;
use crate::sketch::RasterImage;

/// Scores are clamped to `[SCORE_CLAMP, 1 - SCORE_CLAMP]` inside the loss.
pub const SCORE_CLAMP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub image_size: usize,
    pub widths: Vec<usize>,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            widths: vec![32, 64, 128],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub store: ParamStore,
    body: ConvStack,
    head: Conv2d,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        if config.widths.is_empty() {
            return Err(Error::InvalidArgument(
                "discriminator needs at least one block".into(),
            ));
        }
        let mut r = rng::stream(seed, rng::purpose::INIT_DISCRIMINATOR, 0);
        let mut store = ParamStore::new();
        let body = ConvStack::new(
            &mut store,
            "disc.body",
            6,
            &config.widths,
            Activation::LeakyRelu(0.2),
            &mut r,
        );
        let c = *config.widths.last().unwrap();
        let head = Conv2d::new(&mut store, "disc.head", c, 1, 1, 1, 0, true, &mut r);
        Ok(Self {
            config,
            store,
            body,
            head,
        })
    }

    /// Pre-sigmoid score: patch logits averaged over the grid.
    pub fn logit(&self, tape: &mut Tape, photo: &RasterImage, sketch: &RasterImage) -> Result<Var> {
        let s = self.config.image_size;
        if photo.height() != sketch.height() || photo.width() != sketch.width() {
            return Err(shape_err(photo.tensor().shape(), sketch.tensor().shape()));
        }
        if photo.height() != s || photo.width() != s {
            return Err(shape_err([3, s, s], photo.tensor().shape()));
        }
        let x = tape.constant(RasterImage::pair_channels(photo, sketch)?);
        let f = self.body.forward(tape, x);
        let patches = self.head.forward(tape, f);
        Ok(tape.spatial_mean(patches))
    }

    /// Sigmoid score in (0, 1).
    pub fn score_pair(&self, photo: &RasterImage, sketch: &RasterImage) -> Result<f64> {
        let mut tape = Tape::inference(&self.store);
        let l = self.logit(&mut tape, photo, sketch)?;
        Ok(math::sigmoid(tape.scalar(l)))
    }

    /// Frozen scores used as instance weights.
    pub fn certainty_weights(&self, pairs: &[(&RasterImage, &RasterImage)]) -> Result<Vec<f64>> {
        parallel::map_indexed(pairs.len(), |i| self.score_pair(pairs[i].0, pairs[i].1))
            .into_iter()
            .collect()
    }

    /// Binary cross-entropy over real and fake pairs with its parameter
    /// gradient. Returns `(loss, real scores, fake scores, grads)`.
    pub fn loss_and_grad(
        &self,
        real: &[(&RasterImage, &RasterImage)],
        fake: &[(&RasterImage, &RasterImage)],
    ) -> Result<(f64, Vec<f64>, Vec<f64>, Grads)> {
        if real.is_empty() || fake.is_empty() {
            return Err(Error::EmptyDataset("discriminator batch"));
        }
        let n = real.len() + fake.len();
        let pair = |i: usize| {
            if i < real.len() {
                real[i]
            } else {
                fake[i - real.len()]
            }
        };
        let tapes = parallel::map_indexed(n, |i| {
            let mut tape = Tape::new(&self.store, Trainable::All);
            let (p, s) = pair(i);
            let l = self.logit(&mut tape, p, s)?;
            Ok((tape, l))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let scores: Vec<f64> = tapes
            .iter()
            .map(|(t, l)| math::sigmoid(t.scalar(*l)))
            .collect();
        let (rs, fs) = scores.split_at(real.len());
        let (loss, gr, gf) = d_loss_grad(rs, fs);
        let seeds: Vec<f64> = gr.into_iter().chain(gf).collect();
        let grads = parallel::sum_grads(&self.store, n, |i, g| {
            let (tape, l) = &tapes[i];
            tape.backward_seeded(&[(*l, &[seeds[i]])], g);
        });
        Ok((loss, rs.to_vec(), fs.to_vec(), grads))
    }

    pub fn load_values(&mut self, store: &ParamStore) -> Result<()> {
        crate::generator::load_values(&mut self.store, store)
    }
}

fn clamp(s: f64) -> f64 {
    s.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP)
}

/// `-mean(log real) - mean(log(1 - fake))` with scores clamped.
pub fn d_loss(real: &[f64], fake: &[f64]) -> f64 {
    let r = real.iter().map(|&s| -math::ln(clamp(s))).sum::<f64>() / real.len() as f64;
    let f = fake.iter().map(|&s| -math::ln(1.0 - clamp(s))).sum::<f64>() / fake.len() as f64;
    r + f
}

/// [`d_loss`] with its gradients with respect to the pre-sigmoid logits of
/// the real and fake scores.
pub fn d_loss_grad(real: &[f64], fake: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let inside = |s: f64| (SCORE_CLAMP..=1.0 - SCORE_CLAMP).contains(&s);
    let nr = real.len() as f64;
    let nf = fake.len() as f64;
    let gr = real
        .iter()
        .map(|&s| if inside(s) { -(1.0 - s) / nr } else { 0.0 })
        .collect();
    let gf = fake
        .iter()
        .map(|&s| if inside(s) { s / nf } else { 0.0 })
        .collect();
    (d_loss(real, fake), gr, gf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn tiny() -> DiscriminatorConfig {
        DiscriminatorConfig {
            image_size: 16,
            widths: vec![4, 6],
        }
    }

    fn image(seed: u64) -> RasterImage {
        let mut r = rng::stream(seed, 66, 0);
        let data = (0..3 * 16 * 16).map(|_| r.gen_range(0.0..1.0)).collect();
        RasterImage::from_tensor(Tensor::new(vec![3, 16, 16], data).unwrap()).unwrap()
    }

    #[test]
    fn loss_examples() {
        assert_abs_diff_eq!(d_loss(&[0.5], &[0.5]), 2.0 * 2f64.ln(), epsilon = 1e-12);
        assert!(d_loss(&[1.0 - 1e-12], &[1e-12]) < 1e-5);
        let v = -(0.9f64.ln() + 0.8f64.ln()) / 2.0 - 0.9f64.ln();
        assert_abs_diff_eq!(d_loss(&[0.9, 0.8], &[0.1]), v, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.2696, epsilon = 1e-4);
        assert!(d_loss(&[1.0], &[0.0]).is_finite());
    }

    #[test]
    fn zero_head_gives_sigmoid_of_bias() {
        let mut d = Discriminator::new(tiny(), 0).unwrap();
        let (w, b) = (d.head.weight, d.head.bias.unwrap());
        d.store.get_mut(w).data_mut().fill(0.0);
        d.store.get_mut(b).data_mut()[0] = 0.7;
        assert_abs_diff_eq!(
            d.score_pair(&image(1), &image(2)).unwrap(),
            math::sigmoid(0.7),
            epsilon = 1e-15
        );
    }

    #[test]
    fn scores_are_interior_and_weights_match_direct_calls() {
        let d = Discriminator::new(tiny(), 1).unwrap();
        let imgs: Vec<RasterImage> = (0..6).map(image).collect();
        let pairs = [
            (&imgs[0], &imgs[1]),
            (&imgs[2], &imgs[3]),
            (&imgs[0], &imgs[1]),
        ];
        let w = d.certainty_weights(&pairs).unwrap();
        assert_eq!(w[0], w[2]);
        for (i, (p, s)) in pairs.iter().enumerate() {
            assert!(w[i] > 0.0 && w[i] < 1.0);
            assert_eq!(w[i], d.score_pair(p, s).unwrap());
        }
        assert!(d.score_pair(&imgs[0], &RasterImage::zeros(8, 8)).is_err());
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let d = Discriminator::new(tiny(), 2).unwrap();
        let imgs: Vec<RasterImage> = (0..6).map(|i| image(i + 10)).collect();
        let real = [(&imgs[0], &imgs[1]), (&imgs[2], &imgs[3])];
        let fake = [(&imgs[4], &imgs[5])];
        let (loss, rs, fs, grads) = d.loss_and_grad(&real, &fake).unwrap();
        assert_abs_diff_eq!(loss, d_loss(&rs, &fs), epsilon = 1e-15);
        let value = |m: &Discriminator| {
            let r: Vec<f64> = real
                .iter()
                .map(|(p, s)| m.score_pair(p, s).unwrap())
                .collect();
            let f: Vec<f64> = fake
                .iter()
                .map(|(p, s)| m.score_pair(p, s).unwrap())
                .collect();
            d_loss(&r, &f)
        };
        for (id, p) in d.store.iter() {
            for k in [0, p.value.len() - 1] {
                let h = 1e-5;
                let mut a = d.clone();
                a.store.get_mut(id).data_mut()[k] += h;
                let mut b = d.clone();
                b.store.get_mut(id).data_mut()[k] -= h;
                let fd = (value(&a) - value(&b)) / (2.0 * h);
                let an = grads.get(id).unwrap()[k];
                assert!(
                    (fd - an).abs() <= 1e-5 * fd.abs().max(1e-3),
                    "{} fd {fd} vs {an}",
                    p.name
                );
            }
        }
    }
}
