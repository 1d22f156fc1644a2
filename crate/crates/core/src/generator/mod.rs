//! Photo-conditioned sequential sketch generator.
//!
//! A strided conv encoder maps the photo to a feature grid `B`; its global
//! average feeds a variational latent `z`, which initialises an LSTM. At each
//! step the LSTM attends over `B`, consumes the glimpse and the previous
//! stroke-5 point, and emits the raw mixture-density vector of [`gmm`].

pub mod gmm;
pub mod loss;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Trainable, Var};
use crate::error::{shape_err, Error, Result};
use crate::layers::{Activation, Conv2d, ConvStack, Linear};
use crate::params::{Grads, ParamId, ParamStore};
use crate::rng::{self, normal};
use crate::sketch::{PenState, RasterImage, StrokePoint, StrokeSequence};
use crate::tensor::Tensor;

pub use gmm::{split_gmm_params, split_gmm_params_tempered, GmmStepParams};
pub use loss::{
    kl_grad, kl_loss, reconstruction_loss, reconstruction_loss_grad, reparameterize, vae_loss,
};

/// Kernel of the attention key convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttentionKind {
    /// 3x3 convolution over the feature grid.
    Spatial2d,
    /// 1x1 convolution: every grid cell is scored on its own, as if the
    /// grid were a flat sequence.
    Flat1d,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub image_size: usize,
    pub encoder_widths: Vec<usize>,
    pub latent_dim: usize,
    pub hidden: usize,
    pub mixtures: usize,
    pub attention_dim: usize,
    pub attention: AttentionKind,
    pub max_len: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            encoder_widths: vec![32, 64, 96, 128],
            latent_dim: 128,
            hidden: 512,
            mixtures: 20,
            attention_dim: 64,
            attention: AttentionKind::Spatial2d,
            max_len: 100,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let side = feature_side(self.image_size, self.encoder_widths.len());
        if self.encoder_widths.is_empty() || side < 2 {
            return Err(Error::InvalidArgument(format!(
                "encoder leaves a {side}x{side} grid; attention needs at least 2x2"
            )));
        }
        if self.latent_dim == 0
            || self.hidden == 0
            || self.mixtures == 0
            || self.attention_dim == 0
            || self.max_len == 0
        {
            return Err(Error::InvalidArgument(
                "generator sizes must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        gmm::raw_len(self.mixtures)
    }
}

fn feature_side(mut size: usize, blocks: usize) -> usize {
    for _ in 0..blocks {
        size = (size + 2 - 3) / 2 + 1;
    }
    size
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub store: ParamStore,
    encoder: ConvStack,
    mu_head: Linear,
    log_var_head: Linear,
    init: Linear,
    att_key: Conv2d,
    att_query: Linear,
    att_score: Conv2d,
    lstm: Linear,
    output: Linear,
}

/// Tape handles produced by [`Generator::encode`].
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub features: Var,
    pub mu: Var,
    pub log_var: Var,
    keys: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
}

/// One decoded step on a tape.
#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    pub state: DecoderState,
    pub raw: Var,
    pub alpha: Var,
}

/// A sampled sketch with everything needed to re-score it.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub sequence: StrokeSequence,
    /// Per-step `log p(offset) + log p(pen)` at the sampling temperature.
    pub log_probs: Vec<f64>,
    /// Decoder hidden state that produced each step's output.
    pub hiddens: Vec<Vec<f64>>,
    pub raws: Vec<Vec<f64>>,
    pub eps: Vec<f64>,
    pub temperature: f64,
}

impl Sample {
    pub fn log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Decoding {
    Stochastic {
        temperature: f64,
    },
    /// Argmax component mean and argmax pen state with `z = mu`.
    Greedy,
}

/// Per-sample loss values returned by [`Generator::vae_grad`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VaeTerms {
    pub reconstruction: f64,
    pub kl: f64,
    pub total: f64,
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(seed, rng::purpose::INIT_GENERATOR, 0);
        let mut store = ParamStore::new();
        let act = Activation::LeakyRelu(0.2);
        let encoder = ConvStack::new(
            &mut store,
            "gen.enc",
            3,
            &config.encoder_widths,
            act,
            &mut r,
        );
        let c = *config.encoder_widths.last().unwrap();
        let (nz, h, a) = (config.latent_dim, config.hidden, config.attention_dim);
        let mu_head = Linear::new(&mut store, "gen.mu", c, nz, true, 1.0, &mut r);
        let log_var_head = Linear::new(&mut store, "gen.log_var", c, nz, true, 0.1, &mut r);
        let init = Linear::new(&mut store, "gen.init", nz, 2 * h, true, 1.0, &mut r);
        let (k, pad) = match config.attention {
            AttentionKind::Spatial2d => (3, 1),
            AttentionKind::Flat1d => (1, 0),
        };
        let att_key = Conv2d::new(&mut store, "gen.att_key", c, a, k, 1, pad, true, &mut r);
        let att_query = Linear::new(&mut store, "gen.att_query", h, a, false, 1.0, &mut r);
        let att_score = Conv2d::new(&mut store, "gen.att_score", a, 1, 1, 1, 0, false, &mut r);
        let lstm = Linear::new(&mut store, "gen.lstm", c + 5 + h, 4 * h, true, 1.0, &mut r);
        // forget-gate bias starts at 1
        let b = lstm.bias.unwrap();
        store.get_mut(b).data_mut()[h..2 * h].fill(1.0);
        let output = Linear::new(
            &mut store,
            "gen.out",
            h,
            config.output_dim(),
            true,
            1.0,
            &mut r,
        );
        Ok(Self {
            config,
            store,
            encoder,
            mu_head,
            log_var_head,
            init,
            att_key,
            att_query,
            att_score,
            lstm,
            output,
        })
    }

    /// Output layer `(W_y, b_y)`.
    pub fn output_layer(&self) -> (ParamId, ParamId) {
        (self.output.weight, self.output.bias.unwrap())
    }

    /// Trainable mask selecting only the output layer.
    pub fn output_layer_mask(&self) -> Vec<bool> {
        let (w, b) = self.output_layer();
        (0..self.store.len())
            .map(|i| i == w.0 || i == b.0)
            .collect()
    }

    fn check_photo(&self, photo: &RasterImage) -> Result<()> {
        let s = self.config.image_size;
        if photo.height() != s || photo.width() != s {
            return Err(shape_err([3, s, s], photo.tensor().shape()));
        }
        Ok(())
    }

    /// Feature grid `B` and the latent heads.
    pub fn encode(&self, tape: &mut Tape, photo: &RasterImage) -> Result<Encoded> {
        self.check_photo(photo)?;
        let x = tape.constant(photo.tensor().clone());
        let features = self.encoder.forward(tape, x);
        let pooled = tape.spatial_mean(features);
        let mu = self.mu_head.forward(tape, pooled);
        let log_var = self.log_var_head.forward(tape, pooled);
        let keys = self.att_key.forward(tape, features);
        Ok(Encoded {
            features,
            mu,
            log_var,
            keys,
        })
    }

    /// `z` on the tape, differentiable in `mu` and `log_var`.
    pub fn latent(&self, tape: &mut Tape, enc: &Encoded, eps: &[f64]) -> Var {
        let half = tape.scale(enc.log_var, 0.5);
        let std = tape.exp(half);
        let e = tape.constant(Tensor::from_vec(eps.to_vec()));
        let noise = tape.mul(std, e);
        tape.add(enc.mu, noise)
    }

    /// `[h0; c0] = tanh(W_z z + b_z)`.
    pub fn initial_state(&self, tape: &mut Tape, z: Var) -> DecoderState {
        let h = self.config.hidden;
        let pre = self.init.forward(tape, z);
        let s = tape.tanh(pre);
        DecoderState {
            h: tape.slice(s, 0, h),
            c: tape.slice(s, h, h),
        }
    }

    /// Glimpse `g` and attention map `alpha` for the previous hidden state.
    pub fn attend(&self, tape: &mut Tape, enc: &Encoded, h_prev: Var) -> (Var, Var) {
        let q = self.att_query.forward(tape, h_prev);
        let pre = tape.add_channel_vec(enc.keys, q);
        let j = tape.tanh(pre);
        let scores = self.att_score.forward(tape, j);
        let alpha = tape.softmax(scores);
        let g = tape.weighted_spatial_sum(enc.features, alpha);
        (g, alpha)
    }

    /// One LSTM step on `[g, prev]` followed by the output layer.
    pub fn decode_step(
        &self,
        tape: &mut Tape,
        enc: &Encoded,
        state: DecoderState,
        prev: StrokePoint,
    ) -> StepOutput {
        let hs = self.config.hidden;
        let (g, alpha) = self.attend(tape, enc, state.h);
        let p = tape.constant(Tensor::from_vec(prev.to_stroke5().to_vec()));
        let x = tape.concat(&[g, p, state.h]);
        let gates = self.lstm.forward(tape, x);
        let i = tape.slice(gates, 0, hs);
        let f = tape.slice(gates, hs, hs);
        let u = tape.slice(gates, 2 * hs, hs);
        let o = tape.slice(gates, 3 * hs, hs);
        let (i, f, o) = (tape.sigmoid(i), tape.sigmoid(f), tape.sigmoid(o));
        let u = tape.tanh(u);
        let keep = tape.mul(f, state.c);
        let write = tape.mul(i, u);
        let c = tape.add(keep, write);
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc);
        let raw = self.output.forward(tape, h);
        StepOutput {
            state: DecoderState { h, c },
            raw,
            alpha,
        }
    }

    /// Decode `steps` outputs teacher-forced on `seq` (padded with end
    /// points), returning the raw output handles.
    pub fn teacher_forced(
        &self,
        tape: &mut Tape,
        enc: &Encoded,
        z: Var,
        seq: &StrokeSequence,
        steps: usize,
    ) -> Vec<Var> {
        let mut state = self.initial_state(tape, z);
        let mut prev = StrokePoint::start_token();
        let mut raws = Vec::with_capacity(steps);
        for t in 0..steps {
            let out = self.decode_step(tape, enc, state, prev);
            raws.push(out.raw);
            state = out.state;
            prev = seq
                .points()
                .get(t)
                .copied()
                .unwrap_or_else(StrokePoint::pad);
        }
        raws
    }

    /// VAE loss of one labelled pair and its gradient, accumulated into
    /// `grads` scaled by `weight`.
    pub fn vae_grad(
        &self,
        photo: &RasterImage,
        seq: &StrokeSequence,
        eps: &[f64],
        w_kl: f64,
        weight: f64,
        grads: &mut Grads,
    ) -> Result<VaeTerms> {
        let t_pad = self.config.max_len;
        if seq.len() > t_pad {
            return Err(Error::InvalidSequence(format!(
                "length {} exceeds maximum {t_pad}",
                seq.len()
            )));
        }
        let mut tape = Tape::new(&self.store, Trainable::All);
        let enc = self.encode(&mut tape, photo)?;
        let z = self.latent(&mut tape, &enc, eps);
        let raw_vars = self.teacher_forced(&mut tape, &enc, z, seq, t_pad);
        let raws: Vec<Vec<f64>> = raw_vars.iter().map(|&v| tape.data(v).to_vec()).collect();
        let (rec, mut rec_g) = reconstruction_loss_grad(seq, &raws, self.config.mixtures)?;
        let (mu, lv) = (tape.data(enc.mu).to_vec(), tape.data(enc.log_var).to_vec());
        let kl = kl_loss(&mu, &lv);
        let (mut gm, mut gl) = kl_grad(&mu, &lv);
        for g in rec_g.iter_mut() {
            g.iter_mut().for_each(|v| *v *= weight);
        }
        gm.iter_mut().for_each(|v| *v *= w_kl * weight);
        gl.iter_mut().for_each(|v| *v *= w_kl * weight);
        let mut seeds: Vec<(Var, &[f64])> = raw_vars
            .iter()
            .zip(&rec_g)
            .map(|(&v, g)| (v, g.as_slice()))
            .collect();
        seeds.push((enc.mu, &gm));
        seeds.push((enc.log_var, &gl));
        tape.backward_seeded(&seeds, grads);
        Ok(VaeTerms {
            reconstruction: rec,
            kl,
            total: rec + w_kl * kl,
        })
    }

    /// Standard normal draw for the latent.
    pub fn draw_eps<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.config.latent_dim).map(|_| normal(rng)).collect()
    }

    /// Autoregressive decoding from the start token until an end point or
    /// `max_len` points.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        photo: &RasterImage,
        decoding: Decoding,
        max_len: usize,
        rng: &mut R,
    ) -> Result<Sample> {
        let max_len = max_len.min(self.config.max_len);
        if max_len == 0 {
            return Err(Error::InvalidArgument("max_len must be positive".into()));
        }
        let tau = match decoding {
            Decoding::Stochastic { temperature } if temperature > 0.0 => temperature,
            Decoding::Stochastic { .. } => {
                return Err(Error::InvalidArgument(
                    "temperature must be positive".into(),
                ))
            }
            Decoding::Greedy => 1.0,
        };
        let m = self.config.mixtures;
        let mut tape = Tape::inference(&self.store);
        let enc = self.encode(&mut tape, photo)?;
        let eps = match decoding {
            Decoding::Greedy => vec![0.0; self.config.latent_dim],
            Decoding::Stochastic { .. } => self.draw_eps(rng),
        };
        let z = self.latent(&mut tape, &enc, &eps);
        let mut state = self.initial_state(&mut tape, z);
        let mut prev = StrokePoint::start_token();
        let (mut points, mut log_probs, mut hiddens, mut raws) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        while points.len() < max_len {
            let out = self.decode_step(&mut tape, &enc, state, prev);
            let raw = tape.data(out.raw).to_vec();
            let params = split_gmm_params_tempered(&raw, m, tau)?;
            let (dx, dy, pen) = match decoding {
                Decoding::Greedy => params.greedy(),
                Decoding::Stochastic { .. } => params.sample(rng),
            };
            log_probs.push(params.log_density(dx, dy) + params.pen_log_probs()[pen.index()]);
            hiddens.push(tape.data(out.state.h).to_vec());
            raws.push(raw);
            let p = StrokePoint::new(dx, dy, pen);
            points.push(p);
            state = out.state;
            prev = p;
            if pen == PenState::End {
                break;
            }
        }
        let sequence = StrokeSequence::new(points, max_len)?;
        Ok(Sample {
            sequence,
            log_probs,
            hiddens,
            raws,
            eps,
            temperature: tau,
        })
    }

    /// Teacher-forced `sum_t log p(point_t)` of `seq` under latent noise
    /// `eps` at temperature `tau`.
    pub fn sequence_log_prob(
        &self,
        photo: &RasterImage,
        seq: &StrokeSequence,
        eps: &[f64],
        tau: f64,
    ) -> Result<f64> {
        let mut tape = Tape::inference(&self.store);
        let enc = self.encode(&mut tape, photo)?;
        let z = self.latent(&mut tape, &enc, eps);
        let raws = self.teacher_forced(&mut tape, &enc, z, seq, seq.len());
        let mut total = 0.0;
        for (raw, p) in raws.iter().zip(seq.points()) {
            let params = split_gmm_params_tempered(tape.data(*raw), self.config.mixtures, tau)?;
            total += params.log_density(p.dx, p.dy) + params.pen_log_probs()[p.pen.index()];
        }
        Ok(total)
    }

    /// Accumulate `scale * d(sum_t log p_t)/d(W_y, b_y)` for a recorded
    /// sample. The hidden states do not depend on the output layer, so the
    /// gradient is a sum of outer products with the recorded `h_t`.
    pub fn output_layer_log_prob_grad(
        &self,
        sample: &Sample,
        scale: f64,
        grads: &mut Grads,
    ) -> Result<()> {
        let m = self.config.mixtures;
        let (w, b) = self.output_layer();
        let (out_dim, hidden) = (self.config.output_dim(), self.config.hidden);
        let mut gw = vec![0.0; out_dim * hidden];
        let mut gb = vec![0.0; out_dim];
        for ((raw, h), p) in sample
            .raws
            .iter()
            .zip(&sample.hiddens)
            .zip(sample.sequence.points())
        {
            // gradient of -log p, negated below
            let (_, mut g) = gmm::offset_nll_grad(raw, m, sample.temperature, p.dx, p.dy)?;
            gmm::pen_nll_accumulate(raw, m, sample.temperature, p.pen, 1.0, &mut g);
            for (r, gr) in g.iter().enumerate() {
                let s = -gr * scale;
                gb[r] += s;
                for (k, hk) in h.iter().enumerate() {
                    gw[r * hidden + k] += s * hk;
                }
            }
        }
        grads.accumulate(w, &gw);
        grads.accumulate(b, &gb);
        Ok(())
    }

    /// Attention maps for every step of a greedy decode (diagnostics).
    pub fn attention_trace(&self, photo: &RasterImage, steps: usize) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::inference(&self.store);
        let enc = self.encode(&mut tape, photo)?;
        let eps = vec![0.0; self.config.latent_dim];
        let z = self.latent(&mut tape, &enc, &eps);
        let mut state = self.initial_state(&mut tape, z);
        let mut prev = StrokePoint::start_token();
        let mut maps = Vec::with_capacity(steps);
        for _ in 0..steps {
            let out = self.decode_step(&mut tape, &enc, state, prev);
            maps.push(tape.data(out.alpha).to_vec());
            let params = split_gmm_params(tape.data(out.raw), self.config.mixtures)?;
            let (dx, dy, pen) = params.greedy();
            prev = StrokePoint::new(dx, dy, pen);
            state = out.state;
        }
        Ok(maps)
    }

    /// Copy parameter values from a store with the same layout.
    pub fn load_values(&mut self, store: &ParamStore) -> Result<()> {
        load_values(&mut self.store, store)
    }
}

/// Copy values after checking names and shapes match.
pub(crate) fn load_values(dst: &mut ParamStore, src: &ParamStore) -> Result<()> {
    if dst.len() != src.len() {
        return Err(shape_err(dst.len(), src.len()));
    }
    for (a, b) in dst.params().iter().zip(src.params()) {
        if a.name != b.name || a.value.shape() != b.value.shape() {
            return Err(shape_err(
                (&a.name, a.value.shape()),
                (&b.name, b.value.shape()),
            ));
        }
    }
    dst.copy_values_from(src);
    Ok(())
}


#[doc(hidden)]
pub fn tiny_config() -> GeneratorConfig {
    GeneratorConfig {
        image_size: 16,
        encoder_widths: vec![4, 6],
        latent_dim: 3,
        hidden: 5,
        mixtures: 2,
        attention_dim: 4,
        attention: AttentionKind::Spatial2d,
        max_len: 6,
    }
}
