//! VAE objective: padded reconstruction loss over a decoded trace plus the
//! per-dimension KL divergence to a unit normal prior.

use alloc::vec;
use alloc::vec::Vec;

use super::gmm::{self, GmmStepParams};
use crate::error::{Error, Result};
use crate::math;
use crate::sketch::{PenState, StrokeSequence};

/// `z = mu + exp(log_var / 2) * eps`.
pub fn reparameterize(mu: &[f64], log_var: &[f64], eps: &[f64]) -> Vec<f64> {
    mu.iter()
        .zip(log_var)
        .zip(eps)
        .map(|((m, lv), e)| m + math::exp(0.5 * lv) * e)
        .collect()
}

/// `-(1 / 2N) * sum(1 + log_var - mu^2 - exp(log_var))`.
pub fn kl_loss(mu: &[f64], log_var: &[f64]) -> f64 {
    let n = mu.len() as f64;
    -mu.iter()
        .zip(log_var)
        .map(|(m, lv)| 1.0 + lv - m * m - math::exp(*lv))
        .sum::<f64>()
        / (2.0 * n)
}

/// Gradients of [`kl_loss`] with respect to `mu` and `log_var`.
pub fn kl_grad(mu: &[f64], log_var: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = mu.len() as f64;
    let gm = mu.iter().map(|m| m / n).collect();
    let gl = log_var
        .iter()
        .map(|lv| (math::exp(*lv) - 1.0) / (2.0 * n))
        .collect();
    (gm, gl)
}

fn target_at(seq: &StrokeSequence, i: usize) -> (Option<(f64, f64)>, PenState) {
    match seq.points().get(i) {
        Some(p) => (Some((p.dx, p.dy)), p.pen),
        None => (None, PenState::End),
    }
}

fn check_lengths(seq: &StrokeSequence, t_pad: usize) -> Result<()> {
    if t_pad < seq.len() {
        return Err(Error::InvalidArgument(alloc::format!(
            "trace of {t_pad} steps is shorter than the sequence ({} points)",
            seq.len()
        )));
    }
    Ok(())
}

/// Offset NLL over the true points plus pen cross-entropy over the whole
/// padded trace (padding target: end), divided by the trace length.
pub fn reconstruction_loss(seq: &StrokeSequence, trace: &[GmmStepParams]) -> Result<f64> {
    check_lengths(seq, trace.len())?;
    let mut total = 0.0;
    for (i, p) in trace.iter().enumerate() {
        let (off, pen) = target_at(seq, i);
        if let Some((dx, dy)) = off {
            total += gmm::gmm_nll(p, dx, dy);
        }
        total -= p.pen_log_probs()[pen.index()];
    }
    Ok(total / trace.len() as f64)
}

/// [`reconstruction_loss`] evaluated from raw output vectors, with the
/// gradient with respect to each step's raw vector.
pub fn reconstruction_loss_grad(
    seq: &StrokeSequence,
    raws: &[Vec<f64>],
    m: usize,
) -> Result<(f64, Vec<Vec<f64>>)> {
    check_lengths(seq, raws.len())?;
    let t = raws.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(raws.len());
    for (i, raw) in raws.iter().enumerate() {
        let (off, pen) = target_at(seq, i);
        let mut g = match off {
            Some((dx, dy)) => {
                let (v, g) = gmm::offset_nll_grad(raw, m, 1.0, dx, dy)?;
                total += v;
                g
            }
            None => vec![0.0; gmm::raw_len(m)],
        };
        total += gmm::pen_nll_accumulate(raw, m, 1.0, pen, 1.0, &mut g);
        for v in &mut g {
            *v /= t;
        }
        grads.push(g);
    }
    Ok((total / t, grads))
}

pub fn vae_loss(
    seq: &StrokeSequence,
    trace: &[GmmStepParams],
    mu: &[f64],
    log_var: &[f64],
    w_kl: f64,
) -> Result<f64> {
    Ok(reconstruction_loss(seq, trace)? + w_kl * kl_loss(mu, log_var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::sketch::StrokePoint;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn reparameterize_examples() {
        assert_eq!(
            reparameterize(&[1.0, 2.0], &[0.3, 0.1], &[0.0, 0.0]),
            vec![1.0, 2.0]
        );
        assert_eq!(reparameterize(&[0.0], &[0.0], &[0.7]), vec![0.7]);
        let z = reparameterize(
            &[1.0, 2.0],
            &[0.0, 2.0 * core::f64::consts::LN_2],
            &[1.0, 1.0],
        );
        assert_abs_diff_eq!(z[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z[1], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_loss(&[0.0; 4], &[0.0; 4]), 0.0);
        assert_abs_diff_eq!(kl_loss(&[1.0, 0.0], &[0.0, 0.0]), 0.25, epsilon = 1e-12);
        let mut r = rng::stream(1, 0, 0);
        for _ in 0..100 {
            let mu: Vec<f64> = (0..5).map(|_| r.gen_range(-2.0..2.0)).collect();
            let lv: Vec<f64> = (0..5).map(|_| r.gen_range(-2.0..2.0)).collect();
            assert!(kl_loss(&mu, &lv) >= 0.0);
        }
    }

    #[test]
    fn uniform_pen_logits_cost_log_three_per_step() {
        let seq = StrokeSequence::new(vec![StrokePoint::new(0.0, 0.0, PenState::End)], 10).unwrap();
        let p = gmm::split_gmm_params(&[0.0; 9], 1).unwrap();
        let trace = vec![p; 4];
        let l = reconstruction_loss(&seq, &trace).unwrap();
        assert_abs_diff_eq!(
            l,
            (1.8378770664093453 + 4.0 * 3f64.ln()) / 4.0,
            epsilon = 1e-12
        );
        assert!(reconstruction_loss(&seq, &[]).is_err());
    }
}
