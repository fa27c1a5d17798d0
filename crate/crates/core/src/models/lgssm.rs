//! Linear-Gaussian state-space model with a scalar state.
//!
//!   x_0 ~ N(0, sigma_x^2 / (1 - rho^2))
//!   x_t = rho x_{t-1} + sigma_x eps_t
//!   y_t = x_t + sigma_y eta_t
//!
//! The unknown parameter is `rho` alone, with a uniform prior on (-1, 1);
//! `sigma_x` and `sigma_y` are model constants. Because the model is linear
//! and Gaussian it admits a Kalman filter, which makes it the reference model
//! for checking the particle machinery against exact answers: the marginal
//! likelihood is available in closed form, and a backward-sampling pass draws
//! exact trajectories from the smoothing distribution.

use super::Model;
use crate::error::{Error, Result};
use crate::math::normal_logpdf;
use crate::rng::ReplayRng;
use crate::state::{Dataset, StateMat, Theta};
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Debug)]
pub struct Lgssm {
    sigma_x: f64,
    sigma_y: f64,
}

impl Lgssm {
    pub fn new(sigma_x: f64, sigma_y: f64) -> Result<Self> {
        if !(sigma_x > 0.0 && sigma_x.is_finite()) || !(sigma_y > 0.0 && sigma_y.is_finite()) {
            return Err(Error::InvalidParameter(
                "noise scales must be positive and finite".into(),
            ));
        }
        Ok(Lgssm { sigma_x, sigma_y })
    }

    pub fn sigma_x(&self) -> f64 {
        self.sigma_x
    }

    pub fn sigma_y(&self) -> f64 {
        self.sigma_y
    }

    fn rho(theta: &Theta) -> f64 {
        theta[0]
    }

    /// Kalman-filter predictive log densities log p(y_t | y_{0:t-1}); their
    /// sum is the marginal log likelihood.
    pub fn kalman_increments(&self, theta: &Theta, data: &Dataset) -> Vec<f64> {
        let rho = Self::rho(theta);
        let q = self.sigma_x * self.sigma_x;
        let r = self.sigma_y * self.sigma_y;
        let mut incs = Vec::with_capacity(data.len());
        // Prior (predictive) moments for x_0.
        let mut m_pred = 0.0;
        let mut p_pred = q / (1.0 - rho * rho);
        for &y in data.obs() {
            let s = p_pred + r;
            incs.push(normal_logpdf(y, m_pred, s));
            // Measurement update.
            let k = p_pred / s;
            let m_filt = m_pred + k * (y - m_pred);
            let p_filt = (1.0 - k) * p_pred;
            // Time update.
            m_pred = rho * m_filt;
            p_pred = rho * rho * p_filt + q;
        }
        incs
    }

    /// Exact marginal log likelihood via the Kalman filter.
    pub fn kalman_loglik(&self, theta: &Theta, data: &Dataset) -> f64 {
        let mut total = 0.0;
        for inc in self.kalman_increments(theta, data) {
            total += inc;
        }
        total
    }

    /// Draws an exact sample from p(x_{0:T} | y_{0:T}, theta) by forward
    /// filtering and backward sampling.
    pub fn ffbs_sample_path(&self, theta: &Theta, data: &Dataset, rng: &mut ReplayRng) -> StateMat {
        let rho = Self::rho(theta);
        let q = self.sigma_x * self.sigma_x;
        let r = self.sigma_y * self.sigma_y;
        let t_max = data.t_max();
        // Forward pass: filtered moments at each time.
        let mut m_filt = vec![0.0; t_max + 1];
        let mut p_filt = vec![0.0; t_max + 1];
        let mut m_pred = 0.0;
        let mut p_pred = q / (1.0 - rho * rho);
        for (t, &y) in data.obs().iter().enumerate() {
            let s = p_pred + r;
            let k = p_pred / s;
            m_filt[t] = m_pred + k * (y - m_pred);
            p_filt[t] = (1.0 - k) * p_pred;
            m_pred = rho * m_filt[t];
            p_pred = rho * rho * p_filt[t] + q;
        }
        // Backward pass: sample x_T, then x_t | x_{t+1} for t = T-1..0.
        let mut path = StateMat::zeros(t_max + 1, 1);
        let z: f64 = rng.sample(StandardNormal);
        let mut x_next = m_filt[t_max] + p_filt[t_max].sqrt() * z;
        path.row_mut(t_max)[0] = x_next;
        for t in (0..t_max).rev() {
            let p_ahead = rho * rho * p_filt[t] + q;
            let gain = rho * p_filt[t] / p_ahead;
            let mean = m_filt[t] + gain * (x_next - rho * m_filt[t]);
            let var = p_filt[t] - gain * rho * p_filt[t];
            let z: f64 = rng.sample(StandardNormal);
            x_next = mean + var.max(0.0).sqrt() * z;
            path.row_mut(t)[0] = x_next;
        }
        path
    }
}

impl Model for Lgssm {
    fn theta_dim(&self) -> usize {
        1
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn in_support(&self, theta: &Theta) -> bool {
        theta.dim() == 1 && theta[0].is_finite() && theta[0].abs() < 1.0
    }

    fn log_prior(&self, theta: &Theta) -> f64 {
        if self.in_support(theta) {
            // Uniform on (-1, 1): density 1/2.
            -std::f64::consts::LN_2
        } else {
            f64::NEG_INFINITY
        }
    }

    fn sample_prior(&self, rng: &mut ReplayRng) -> Theta {
        Theta::new(vec![2.0 * rng.next_f64() - 1.0])
    }

    fn log_init(&self, theta: &Theta, x0: &[f64]) -> f64 {
        let rho = Self::rho(theta);
        let var = self.sigma_x * self.sigma_x / (1.0 - rho * rho);
        normal_logpdf(x0[0], 0.0, var)
    }

    fn log_trans(&self, theta: &Theta, _t: usize, x_prev: &[f64], x: &[f64]) -> f64 {
        normal_logpdf(
            x[0],
            Self::rho(theta) * x_prev[0],
            self.sigma_x * self.sigma_x,
        )
    }

    fn log_obs(&self, _theta: &Theta, _t: usize, y: f64, x: &[f64]) -> f64 {
        normal_logpdf(y, x[0], self.sigma_y * self.sigma_y)
    }

    fn sample_init_state(&self, theta: &Theta, rng: &mut ReplayRng, out: &mut [f64]) {
        let rho = Self::rho(theta);
        let sd = (self.sigma_x * self.sigma_x / (1.0 - rho * rho)).sqrt();
        let z: f64 = rng.sample(StandardNormal);
        out[0] = sd * z;
    }

    fn sample_trans_state(
        &self,
        theta: &Theta,
        _t: usize,
        x_prev: &[f64],
        rng: &mut ReplayRng,
        out: &mut [f64],
    ) {
        let z: f64 = rng.sample(StandardNormal);
        out[0] = Self::rho(theta) * x_prev[0] + self.sigma_x * z;
    }

    fn sample_obs(&self, _theta: &Theta, _t: usize, x: &[f64], rng: &mut ReplayRng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        x[0] + self.sigma_y * z
    }

    fn closed_form_loglik(&self, theta: &Theta, data: &Dataset) -> Option<f64> {
        if !self.in_support(theta) {
            return None;
        }
        Some(self.kalman_loglik(theta, data))
    }

    fn has_gibbs_theta(&self) -> bool {
        true
    }

    /// The observation law does not involve rho, so the conditional given a
    /// complete state path is exact: under the flat prior, rho's conditional
    /// is the Gaussian collected from the transitions times the stationary
    /// initial-law leftover sqrt(1-rho^2) exp(-c (1-rho^2)).
    fn gibbs_theta(
        &self,
        path: &StateMat,
        _data: &Dataset,
        _theta: &Theta,
        rng: &mut ReplayRng,
    ) -> Result<Theta> {
        let q = self.sigma_x * self.sigma_x;
        let t = path.n_rows() - 1;
        let mut lambda = 0.0;
        let mut b = 0.0;
        for s in 1..=t {
            let xp = path.row(s - 1)[0];
            lambda += xp * xp / q;
            b += path.row(s)[0] * xp / q;
        }
        let x0 = path.row(0)[0];
        let c = x0 * x0 / (2.0 * q);
        Ok(Theta::new(vec![super::sample_ar1_coef_conditional(
            lambda, b, c, rng,
        )]))
    }
}
