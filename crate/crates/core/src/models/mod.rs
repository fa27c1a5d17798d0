//! State-space model interface and the bundled models.
//!
//! A model supplies log densities for the initial law, the transition, and
//! the observation, plus samplers for each. Proposal hooks default to the
//! model's own laws (a bootstrap filter); a model can override them with
//! guided proposals without touching the filter code.
//!
//! All densities are log densities and may return `-inf` for impossible
//! configurations; they must never return NaN for in-support parameters.

mod lgssm;
mod sv;

pub use lgssm::Lgssm;
pub use sv::StochVol;

use crate::error::{Error, Result};
use crate::math::{std_normal_cdf, std_normal_inv_cdf};
use crate::rng::ReplayRng;
use crate::state::{Dataset, StateMat, Theta};
use rand::Rng;
use rand_distr::StandardNormal;

pub trait Model: Send + Sync {
    /// Dimension of the parameter vector.
    fn theta_dim(&self) -> usize;

    /// Dimension of the latent state.
    fn state_dim(&self) -> usize;

    /// Whether `theta` lies in the prior's support.
    fn in_support(&self, theta: &Theta) -> bool;

    /// Normalized log prior density; `-inf` outside the support.
    fn log_prior(&self, theta: &Theta) -> f64;

    /// Draws a parameter vector from the prior.
    fn sample_prior(&self, rng: &mut ReplayRng) -> Theta;

    /// Log density of the initial state law.
    fn log_init(&self, theta: &Theta, x0: &[f64]) -> f64;

    /// Log density of the transition into `x` at time `t` (t >= 1).
    fn log_trans(&self, theta: &Theta, t: usize, x_prev: &[f64], x: &[f64]) -> f64;

    /// Log density of observing `y` at time `t` in state `x`.
    fn log_obs(&self, theta: &Theta, t: usize, y: f64, x: &[f64]) -> f64;

    /// Samples from the initial state law.
    fn sample_init_state(&self, theta: &Theta, rng: &mut ReplayRng, out: &mut [f64]);

    /// Samples the transition at time `t` (t >= 1).
    fn sample_trans_state(
        &self,
        theta: &Theta,
        t: usize,
        x_prev: &[f64],
        rng: &mut ReplayRng,
        out: &mut [f64],
    );

    /// Samples an observation at time `t` in state `x`.
    fn sample_obs(&self, theta: &Theta, t: usize, x: &[f64], rng: &mut ReplayRng) -> f64;

    // --- Filter proposals; defaults give a bootstrap filter. ---

    fn sample_init_proposal(&self, theta: &Theta, rng: &mut ReplayRng, out: &mut [f64]) {
        self.sample_init_state(theta, rng, out);
    }

    fn log_init_proposal(&self, theta: &Theta, x0: &[f64]) -> f64 {
        self.log_init(theta, x0)
    }

    fn sample_step_proposal(
        &self,
        theta: &Theta,
        t: usize,
        x_prev: &[f64],
        rng: &mut ReplayRng,
        out: &mut [f64],
    ) {
        self.sample_trans_state(theta, t, x_prev, rng, out);
    }

    fn log_step_proposal(&self, theta: &Theta, t: usize, x_prev: &[f64], x: &[f64]) -> f64 {
        self.log_trans(theta, t, x_prev, x)
    }

    // --- Optional capabilities. ---

    /// Exact marginal log likelihood of `data` given `theta`, for models with
    /// a closed-form filter. `None` when unavailable.
    fn closed_form_loglik(&self, _theta: &Theta, _data: &Dataset) -> Option<f64> {
        None
    }

    /// Whether `gibbs_theta` is implemented.
    fn has_gibbs_theta(&self) -> bool {
        false
    }

    /// One sweep of the parameter full conditionals given a complete state
    /// trajectory (rows 0..=t of `path`). Returns the updated parameters.
    fn gibbs_theta(
        &self,
        _path: &StateMat,
        _data: &Dataset,
        _theta: &Theta,
        _rng: &mut ReplayRng,
    ) -> Result<Theta> {
        Err(Error::Unsupported("parameter full conditionals".into()))
    }
}

/// Draws from N(mean, sd^2) truncated to [lo, hi]: plain rejection while the
/// interval holds appreciable mass, inverse-CDF otherwise.
pub(crate) fn sample_trunc_normal(
    rng: &mut ReplayRng,
    mean: f64,
    sd: f64,
    lo: f64,
    hi: f64,
) -> f64 {
    let p_lo = std_normal_cdf((lo - mean) / sd);
    let p_hi = std_normal_cdf((hi - mean) / sd);
    let mass = p_hi - p_lo;
    if mass > 0.01 {
        for _ in 0..1000 {
            let z: f64 = rng.sample(StandardNormal);
            let x = mean + sd * z;
            if (lo..=hi).contains(&x) {
                return x;
            }
        }
    }
    if mass <= 0.0 {
        // All mass is beyond one endpoint within machine precision.
        return if mean < lo { lo } else { hi };
    }
    let u = p_lo + mass * rng.next_f64();
    (mean + sd * std_normal_inv_cdf(u)).clamp(lo, hi)
}

/// Samples the stationary-AR(1) coefficient conditional shared by the
/// bundled models: density on [-1, 1] proportional to
///
/// ```text
/// exp(-lambda rho^2 / 2 + b rho) * sqrt(1 - rho^2) * exp(-c (1 - rho^2))
/// ```
///
/// where the Gaussian part collects the transition terms (and any Gaussian
/// prior) and the leftover factor comes from the stationary initial law.
/// Exact rejection: propose from the truncated Gaussian part, accept against
/// the leftover factor using its envelope sup over u = 1-rho^2 in [0, 1] of
/// sqrt(u) e^{-cu}; fall back to inverse-CDF sampling on a dense grid of the
/// exact density if the rejection loop stalls (or lambda vanishes, e.g. a
/// length-one trajectory under a flat prior).
pub(crate) fn sample_ar1_coef_conditional(
    lambda: f64,
    b: f64,
    c: f64,
    rng: &mut ReplayRng,
) -> f64 {
    if lambda > 1e-12 {
        let m = b / lambda;
        let sd = (1.0 / lambda).sqrt();
        let log_m = if c <= 0.5 {
            -c
        } else {
            -0.5 * (2.0 * c).ln() - 0.5
        };
        for _ in 0..1000 {
            let rho = sample_trunc_normal(rng, m, sd, -1.0, 1.0);
            let u = 1.0 - rho * rho;
            let log_h = if u > 0.0 { 0.5 * u.ln() - c * u } else { f64::NEG_INFINITY };
            if rng.next_f64().ln() < log_h - log_m {
                return rho;
            }
        }
    }
    let n = 8193;
    let mut logd = Vec::with_capacity(n);
    let h = 2.0 / (n - 1) as f64;
    for i in 0..n {
        let rho = -1.0 + h * i as f64;
        let u = (1.0 - rho * rho).max(0.0);
        let lg = -0.5 * lambda * rho * rho + b * rho;
        let lh = if u > 0.0 { 0.5 * u.ln() - c * u } else { f64::NEG_INFINITY };
        logd.push(lg + lh);
    }
    let peak = logd.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let dens: Vec<f64> = logd.iter().map(|l| (l - peak).exp()).collect();
    let mut cum = Vec::with_capacity(n);
    let mut acc = 0.0;
    cum.push(0.0);
    for i in 1..n {
        acc += 0.5 * (dens[i - 1] + dens[i]) * h;
        cum.push(acc);
    }
    let target = rng.next_f64() * acc;
    let mut idx = match cum.binary_search_by(|v| v.partial_cmp(&target).unwrap()) {
        Ok(i) => i,
        Err(i) => i,
    };
    idx = idx.clamp(1, n - 1);
    let cell = cum[idx] - cum[idx - 1];
    let frac = if cell > 0.0 { (target - cum[idx - 1]) / cell } else { 0.5 };
    -1.0 + h * ((idx - 1) as f64 + frac)
}

/// Exact marginal log likelihood for models that provide one; an error for
/// models that do not.
pub fn exact_loglik(model: &dyn Model, theta: &Theta, data: &Dataset) -> Result<f64> {
    model
        .closed_form_loglik(theta, data)
        .ok_or_else(|| Error::Unsupported("an exact marginal likelihood".into()))
}

/// Simulates states x_0..x_t and observations y_0..y_t from the model.
pub fn simulate(
    model: &dyn Model,
    theta: &Theta,
    t_max: usize,
    rng: &mut ReplayRng,
) -> Result<(StateMat, Dataset)> {
    if !model.in_support(theta) {
        return Err(Error::InvalidParameter(
            "simulation parameters outside the prior support".into(),
        ));
    }
    let dim = model.state_dim();
    let mut states = StateMat::zeros(t_max + 1, dim);
    let mut obs = Vec::with_capacity(t_max + 1);
    let mut prev = vec![0.0; dim];
    model.sample_init_state(theta, rng, &mut prev);
    states.row_mut(0).copy_from_slice(&prev);
    obs.push(model.sample_obs(theta, 0, &prev, rng));
    let mut next = vec![0.0; dim];
    for t in 1..=t_max {
        model.sample_trans_state(theta, t, &prev, rng, &mut next);
        states.row_mut(t).copy_from_slice(&next);
        obs.push(model.sample_obs(theta, t, &next, rng));
        std::mem::swap(&mut prev, &mut next);
    }
    Ok((states, Dataset::new(obs)?))
}
