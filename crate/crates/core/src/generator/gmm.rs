//! Mixture-density output head: bivariate Gaussian mixture over pen offsets
//! plus a 3-way pen-state categorical.
//!
//! Raw layout of one step's output vector (length `6M + 3`):
//! `[pi logits | mu_x | mu_y | log sigma_x | log sigma_y | rho (pre-tanh) | pen logits]`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::shape_err;
use crate::math;
use crate::rng::normal;
use crate::sketch::PenState;
use crate::Result;

/// Raw log-sigma values are clamped to this range before `exp`.
pub const LOG_SIGMA_CLAMP: f64 = 30.0;
/// Raw correlation values are clamped to this range before `tanh`.
pub const RHO_RAW_CLAMP: f64 = 15.0;

pub const fn raw_len(m: usize) -> usize {
    6 * m + 3
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmStepParams {
    pub pi: Vec<f64>,
    pub mu_x: Vec<f64>,
    pub mu_y: Vec<f64>,
    pub sigma_x: Vec<f64>,
    pub sigma_y: Vec<f64>,
    pub rho: Vec<f64>,
    /// `1 - rho^2`, computed as `sech^2` of the raw value so it stays
    /// accurate when `|rho|` is close to 1.
    pub one_minus_rho_sq: Vec<f64>,
    pub pen_logits: [f64; 3],
}

fn clamp_rho_raw(r: f64) -> f64 {
    r.clamp(-RHO_RAW_CLAMP, RHO_RAW_CLAMP)
}

fn sech_sq(r: f64) -> f64 {
    let e = math::exp(-2.0 * math::abs(r));
    4.0 * e / ((1.0 + e) * (1.0 + e))
}

/// Constrain a raw output vector at temperature 1.
pub fn split_gmm_params(raw: &[f64], m: usize) -> Result<GmmStepParams> {
    split_gmm_params_tempered(raw, m, 1.0)
}

/// Constrain a raw output vector; `tau` divides the mixture and pen logits
/// and multiplies the variances.
pub fn split_gmm_params_tempered(raw: &[f64], m: usize, tau: f64) -> Result<GmmStepParams> {
    if raw.len() != raw_len(m) || m == 0 {
        return Err(shape_err(raw_len(m), raw.len()));
    }
    let seg = |k: usize| &raw[k * m..(k + 1) * m];
    let mut pi: Vec<f64> = seg(0).iter().map(|l| l / tau).collect();
    math::softmax_in_place(&mut pi);
    let half_log_tau = 0.5 * math::ln(tau);
    let sig = |k: usize| -> Vec<f64> {
        seg(k)
            .iter()
            .map(|&s| math::exp(s.clamp(-LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP) + half_log_tau))
            .collect()
    };
    let p = &raw[6 * m..];
    Ok(GmmStepParams {
        pi,
        mu_x: seg(1).to_vec(),
        mu_y: seg(2).to_vec(),
        sigma_x: sig(3),
        sigma_y: sig(4),
        rho: seg(5)
            .iter()
            .map(|&r| math::tanh(clamp_rho_raw(r)))
            .collect(),
        one_minus_rho_sq: seg(5).iter().map(|&r| sech_sq(clamp_rho_raw(r))).collect(),
        pen_logits: [p[0] / tau, p[1] / tau, p[2] / tau],
    })
}

/// Log density of one bivariate normal component.
pub fn log_bivariate_normal(
    dx: f64,
    dy: f64,
    mu_x: f64,
    mu_y: f64,
    sx: f64,
    sy: f64,
    rho: f64,
    q: f64,
) -> f64 {
    let zx = (dx - mu_x) / sx;
    let zy = (dy - mu_y) / sy;
    let z = zx * zx + zy * zy - 2.0 * rho * zx * zy;
    -math::ln(2.0 * math::PI * sx * sy) - 0.5 * math::ln(q) - z / (2.0 * q)
}

impl GmmStepParams {
    pub fn components(&self) -> usize {
        self.pi.len()
    }

    /// `log pi_j + log N_j(dx, dy)` for every component.
    pub fn weighted_log_components(&self, dx: f64, dy: f64) -> Vec<f64> {
        (0..self.components())
            .map(|j| {
                math::ln(self.pi[j])
                    + log_bivariate_normal(
                        dx,
                        dy,
                        self.mu_x[j],
                        self.mu_y[j],
                        self.sigma_x[j],
                        self.sigma_y[j],
                        self.rho[j],
                        self.one_minus_rho_sq[j],
                    )
            })
            .collect()
    }

    pub fn log_density(&self, dx: f64, dy: f64) -> f64 {
        math::log_sum_exp(&self.weighted_log_components(dx, dy))
    }

    pub fn pen_log_probs(&self) -> [f64; 3] {
        let mut l = self.pen_logits;
        math::log_softmax_in_place(&mut l);
        l
    }

    pub fn pen_probs(&self) -> [f64; 3] {
        let mut l = self.pen_logits;
        math::softmax_in_place(&mut l);
        l
    }

    /// Draw `(dx, dy, pen)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64, PenState) {
        let j = categorical(&self.pi, rng);
        let (n1, n2) = (normal(rng), normal(rng));
        let dx = self.mu_x[j] + self.sigma_x[j] * n1;
        let dy = self.mu_y[j]
            + self.sigma_y[j] * (self.rho[j] * n1 + math::sqrt(self.one_minus_rho_sq[j]) * n2);
        let pen = PenState::from_index(categorical(&self.pen_probs(), rng));
        (dx, dy, pen)
    }

    /// Mean of the most probable component and the most probable pen state.
    pub fn greedy(&self) -> (f64, f64, PenState) {
        let j = math::argmax(&self.pi);
        let pen = PenState::from_index(math::argmax(&self.pen_logits));
        (self.mu_x[j], self.mu_y[j], pen)
    }
}

fn categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// `-log p(dx, dy)` under the mixture.
pub fn gmm_nll(params: &GmmStepParams, dx: f64, dy: f64) -> f64 {
    -params.log_density(dx, dy)
}

/// Offset negative log-likelihood at temperature `tau` and its gradient with
/// respect to the raw output vector. The pen slots of the gradient are zero.
pub fn offset_nll_grad(
    raw: &[f64],
    m: usize,
    tau: f64,
    dx: f64,
    dy: f64,
) -> Result<(f64, Vec<f64>)> {
    let p = split_gmm_params_tempered(raw, m, tau)?;
    let logs = p.weighted_log_components(dx, dy);
    let lse = math::log_sum_exp(&logs);
    let mut g = vec![0.0; raw_len(m)];
    for j in 0..m {
        let gamma = math::exp(logs[j] - lse);
        let (sx, sy, rho, q) = (p.sigma_x[j], p.sigma_y[j], p.rho[j], p.one_minus_rho_sq[j]);
        let zx = (dx - p.mu_x[j]) / sx;
        let zy = (dy - p.mu_y[j]) / sy;
        let z = zx * zx + zy * zy - 2.0 * rho * zx * zy;
        g[j] = (p.pi[j] - gamma) / tau;
        g[m + j] = -gamma * (zx - rho * zy) / (sx * q);
        g[2 * m + j] = -gamma * (zy - rho * zx) / (sy * q);
        if raw[3 * m + j].abs() < LOG_SIGMA_CLAMP {
            g[3 * m + j] = -gamma * (-1.0 + (zx * zx - rho * zx * zy) / q);
        }
        if raw[4 * m + j].abs() < LOG_SIGMA_CLAMP {
            g[4 * m + j] = -gamma * (-1.0 + (zy * zy - rho * zx * zy) / q);
        }
        if raw[5 * m + j].abs() < RHO_RAW_CLAMP {
            g[5 * m + j] = -gamma * (rho + zx * zy - rho * z / q);
        }
    }
    Ok((-lse, g))
}

/// Pen cross-entropy at temperature `tau` for `target`, with its gradient
/// added into the pen slots of `grad` (scaled by `weight`).
pub fn pen_nll_accumulate(
    raw: &[f64],
    m: usize,
    tau: f64,
    target: PenState,
    weight: f64,
    grad: &mut [f64],
) -> f64 {
    let base = 6 * m;
    let mut lp = [raw[base] / tau, raw[base + 1] / tau, raw[base + 2] / tau];
    math::log_softmax_in_place(&mut lp);
    let k = target.index();
    for i in 0..3 {
        let ind = if i == k { 1.0 } else { 0.0 };
        grad[base + i] += weight * (math::exp(lp[i]) - ind) / tau;
    }
    -lp[k]
}
