//! Score-function estimator check on a categorical bandit.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::rng::{self, purpose};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BanditReport {
    /// `max |exact - sum_k p_k grad log p_k R_k|`.
    pub max_abs_diff: f64,
    /// Same with a constant baseline `b = E[R]` subtracted from every reward.
    pub max_abs_diff_baseline: f64,
    pub expected_reward_final: f64,
    pub max_reward: f64,
    /// `(n, measured RMS error, predicted sqrt(tr Var / n))` of the Monte
    /// Carlo estimate at the initial logits.
    pub monte_carlo: Vec<(usize, f64, f64)>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| math::exp(l - m)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `dE[R]/dtheta_j = p_j (R_j - E[R])`.
pub fn exact_gradient(logits: &[f64], rewards: &[f64]) -> Vec<f64> {
    let p = softmax(logits);
    let er: f64 = p.iter().zip(rewards).map(|(a, b)| a * b).sum();
    p.iter()
        .zip(rewards)
        .map(|(pj, rj)| pj * (rj - er))
        .collect()
}

/// `sum_k p_k (R_k - b) grad log p_k` with `grad_j log p_k = [j = k] - p_j`.
pub fn weighted_score_gradient(logits: &[f64], rewards: &[f64], baseline: f64) -> Vec<f64> {
    let p = softmax(logits);
    let mut g = vec![0.0; p.len()];
    for k in 0..p.len() {
        for j in 0..p.len() {
            let dlog = if j == k { 1.0 } else { 0.0 } - p[j];
            g[j] += p[k] * (rewards[k] - baseline) * dlog;
        }
    }
    g
}

fn draw<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut c = 0.0;
    for (k, pk) in p.iter().enumerate() {
        c += pk;
        if u < c {
            return k;
        }
    }
    p.len() - 1
}

/// Monte-Carlo score-function estimate from `n` draws; with `baseline`
/// the batch-mean reward is subtracted.
pub fn sampled_gradient<R: Rng + ?Sized>(
    logits: &[f64],
    rewards: &[f64],
    n: usize,
    baseline: bool,
    rng: &mut R,
) -> Vec<f64> {
    let p = softmax(logits);
    let ks: Vec<usize> = (0..n).map(|_| draw(&p, rng)).collect();
    let b = if baseline {
        ks.iter().map(|&k| rewards[k]).sum::<f64>() / n as f64
    } else {
        0.0
    };
    let mut g = vec![0.0; p.len()];
    for &k in &ks {
        for j in 0..p.len() {
            let dlog = if j == k { 1.0 } else { 0.0 } - p[j];
            g[j] += (rewards[k] - b) * dlog / n as f64;
        }
    }
    g
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Exact and sampled checks of the estimator on a `K`-armed bandit with
/// logits starting at zero, then `steps` of gradient ascent with learning
/// rate `lr` using `batch` sampled arms per step.
pub fn reinforce_selfcheck(
    rewards: &[f64],
    steps: usize,
    lr: f64,
    batch: usize,
    baseline: bool,
    seed: u64,
) -> Result<BanditReport> {
    let k = rewards.len();
    if k < 2 {
        return Err(Error::InvalidArgument(
            "the bandit needs at least 2 arms".into(),
        ));
    }
    if batch == 0 {
        return Err(Error::InvalidArgument("batch must be positive".into()));
    }
    let zero = vec![0.0; k];
    // a non-uniform point exercises the identity more than the symmetric start
    let probe: Vec<f64> = (0..k).map(|j| 0.3 * j as f64 - 0.5).collect();
    let mut diff: f64 = 0.0;
    let mut diff_b: f64 = 0.0;
    for logits in [&zero, &probe] {
        let exact = exact_gradient(logits, rewards);
        diff = diff.max(max_abs_diff(
            &exact,
            &weighted_score_gradient(logits, rewards, 0.0),
        ));
        let p = softmax(logits);
        let er: f64 = p.iter().zip(rewards).map(|(a, b)| a * b).sum();
        diff_b = diff_b.max(max_abs_diff(
            &exact,
            &weighted_score_gradient(logits, rewards, er),
        ));
    }

    let mut theta = zero.clone();
    let mut r = rng::stream(seed, purpose::BANDIT, 0);
    for _ in 0..steps {
        let g = sampled_gradient(&theta, rewards, batch, baseline, &mut r);
        theta.iter_mut().zip(&g).for_each(|(t, gi)| *t += lr * gi);
    }
    let p = softmax(&theta);
    let expected_reward_final = p.iter().zip(rewards).map(|(a, b)| a * b).sum();

    let exact = exact_gradient(&zero, rewards);
    let p0 = softmax(&zero);
    // per-draw variance of the plain estimator, summed over coordinates
    let second: f64 = (0..k)
        .map(|a| {
            p0[a]
                * rewards[a]
                * rewards[a]
                * (0..k)
                    .map(|j| {
                        let d = (a == j) as u8 as f64 - p0[j];
                        d * d
                    })
                    .sum::<f64>()
        })
        .sum();
    let trace_var = second - exact.iter().map(|g| g * g).sum::<f64>();
    let trials = 400;
    let monte_carlo = [100usize, 10_000]
        .iter()
        .map(|&n| {
            let mut mc = rng::stream(seed, purpose::BANDIT, n as u64);
            let mse: f64 = (0..trials)
                .map(|_| {
                    let g = sampled_gradient(&zero, rewards, n, false, &mut mc);
                    g.iter()
                        .zip(&exact)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / trials as f64;
            (n, math::sqrt(mse), math::sqrt(trace_var / n as f64))
        })
        .collect();
    Ok(BanditReport {
        max_abs_diff: diff,
        max_abs_diff_baseline: diff_b,
        expected_reward_final,
        max_reward: rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        monte_carlo,
    })
}
