//! Stochastic volatility model with AR(1) log-volatility.
//!
//!   x_0 ~ N(mu, sigma^2 / (1 - rho^2))
//!   x_t - mu = rho (x_{t-1} - mu) + sigma eps_t
//!   y_t ~ N(0, exp(x_t))
//!
//! Parameters theta = (mu, rho, sigma^2) with priors
//!
//!   mu      ~ N(0, 2^2)
//!   rho     ~ N(0, 1) truncated to [-1, 1]
//!   sigma^2 ~ InvGamma(shape 3, scale 1/2)
//!
//! The observation law does not involve theta, so the parameter posterior
//! given a complete volatility path collapses to p(theta | x): that is what
//! makes full-conditional parameter sweeps available for this model. The
//! mu and sigma^2 conditionals are conjugate (Gaussian and inverse-gamma);
//! the rho conditional picks up a non-Gaussian factor
//! sqrt(1-rho^2) exp(-(1-rho^2)(x_0-mu)^2/(2 sigma^2)) from the stationary
//! initial law and is sampled exactly by rejection, with a dense-grid
//! inverse-CDF fallback if the rejection loop ever stalls.

use super::Model;
use crate::error::{Error, Result};
use crate::math::{normal_logpdf, LN_2PI};
use crate::rng::ReplayRng;
use crate::state::{Dataset, StateMat, Theta};
use rand::Rng;
use rand_distr::{Gamma, StandardNormal};

/// Prior mass of N(0,1) on [-1, 1]; the truncation constant of the rho prior.
pub const RHO_PRIOR_MASS: f64 = 0.682_689_492_137_085_9;

const MU_PRIOR_VAR: f64 = 4.0;
const SIGMA2_PRIOR_SHAPE: f64 = 3.0;
const SIGMA2_PRIOR_SCALE: f64 = 0.5;

#[derive(Clone, Debug, Default)]
pub struct StochVol;

impl StochVol {
    pub fn new() -> Self {
        StochVol
    }

    fn unpack(theta: &Theta) -> (f64, f64, f64) {
        (theta[0], theta[1], theta[2])
    }

    /// Mean and variance of the Gaussian full conditional of mu.
    fn mu_conditional(path: &StateMat, rho: f64, sigma2: f64) -> (f64, f64) {
        let t = path.n_rows() - 1;
        let x0 = path.row(0)[0];
        let omr2 = 1.0 - rho * rho;
        let omr = 1.0 - rho;
        let mut cross = 0.0;
        for s in 1..=t {
            cross += path.row(s)[0] - rho * path.row(s - 1)[0];
        }
        let precision = 1.0 / MU_PRIOR_VAR + omr2 / sigma2 + t as f64 * omr * omr / sigma2;
        let linear = x0 * omr2 / sigma2 + omr / sigma2 * cross;
        (linear / precision, 1.0 / precision)
    }

    /// Shape and scale of the inverse-gamma full conditional of sigma^2.
    fn sigma2_conditional(path: &StateMat, mu: f64, rho: f64) -> (f64, f64) {
        let t = path.n_rows() - 1;
        let d0 = path.row(0)[0] - mu;
        let mut ss = (1.0 - rho * rho) * d0 * d0;
        for s in 1..=t {
            let e = (path.row(s)[0] - mu) - rho * (path.row(s - 1)[0] - mu);
            ss += e * e;
        }
        (
            SIGMA2_PRIOR_SHAPE + (t as f64 + 1.0) / 2.0,
            SIGMA2_PRIOR_SCALE + 0.5 * ss,
        )
    }

    /// Coefficients of the rho full conditional: the Gaussian part has
    /// precision `lambda` and linear term `b` (combining the transitions with
    /// the untruncated N(0,1) prior), and the stationary-init leftover factor
    /// is sqrt(1-rho^2) exp(-c (1-rho^2)).
    fn rho_conditional_coeffs(path: &StateMat, mu: f64, sigma2: f64) -> (f64, f64, f64) {
        let t = path.n_rows() - 1;
        let mut lambda = 1.0;
        let mut b = 0.0;
        for s in 1..=t {
            let dp = path.row(s - 1)[0] - mu;
            let d = path.row(s)[0] - mu;
            lambda += dp * dp / sigma2;
            b += d * dp / sigma2;
        }
        let d0 = path.row(0)[0] - mu;
        let c = d0 * d0 / (2.0 * sigma2);
        (lambda, b, c)
    }

    fn sample_rho_conditional(path: &StateMat, mu: f64, sigma2: f64, rng: &mut ReplayRng) -> f64 {
        let (lambda, b, c) = Self::rho_conditional_coeffs(path, mu, sigma2);
        super::sample_ar1_coef_conditional(lambda, b, c, rng)
    }
}

impl Model for StochVol {
    fn theta_dim(&self) -> usize {
        3
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn in_support(&self, theta: &Theta) -> bool {
        theta.dim() == 3
            && theta[0].is_finite()
            && theta[1].is_finite()
            && theta[1].abs() <= 1.0
            && theta[2].is_finite()
            && theta[2] > 0.0
    }

    fn log_prior(&self, theta: &Theta) -> f64 {
        if !self.in_support(theta) {
            return f64::NEG_INFINITY;
        }
        let (mu, rho, sigma2) = Self::unpack(theta);
        let lp_mu = normal_logpdf(mu, 0.0, MU_PRIOR_VAR);
        let lp_rho = normal_logpdf(rho, 0.0, 1.0) - RHO_PRIOR_MASS.ln();
        let (a, b) = (SIGMA2_PRIOR_SHAPE, SIGMA2_PRIOR_SCALE);
        // ln Gamma(3) = ln 2.
        let lp_s2 = a * b.ln() - 2f64.ln() - (a + 1.0) * sigma2.ln() - b / sigma2;
        lp_mu + lp_rho + lp_s2
    }

    fn sample_prior(&self, rng: &mut ReplayRng) -> Theta {
        let z: f64 = rng.sample(StandardNormal);
        let mu = 2.0 * z;
        let rho = loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= 1.0 {
                break z;
            }
        };
        // 1/Gamma(shape, scale 1/rate) is InvGamma(shape, scale=rate).
        let g = Gamma::new(SIGMA2_PRIOR_SHAPE, 1.0 / SIGMA2_PRIOR_SCALE).unwrap();
        let sigma2 = 1.0 / rng.sample::<f64, _>(g);
        Theta::new(vec![mu, rho, sigma2])
    }

    fn log_init(&self, theta: &Theta, x0: &[f64]) -> f64 {
        let (mu, rho, sigma2) = Self::unpack(theta);
        normal_logpdf(x0[0], mu, sigma2 / (1.0 - rho * rho))
    }

    fn log_trans(&self, theta: &Theta, _t: usize, x_prev: &[f64], x: &[f64]) -> f64 {
        let (mu, rho, sigma2) = Self::unpack(theta);
        normal_logpdf(x[0], mu + rho * (x_prev[0] - mu), sigma2)
    }

    fn log_obs(&self, _theta: &Theta, _t: usize, y: f64, x: &[f64]) -> f64 {
        let x = x[0];
        // Guard y = 0 against 0 * inf when exp(-x) overflows.
        let quad = if y == 0.0 { 0.0 } else { y * y * (-x).exp() };
        -0.5 * (LN_2PI + x + quad)
    }

    fn sample_init_state(&self, theta: &Theta, rng: &mut ReplayRng, out: &mut [f64]) {
        let (mu, rho, sigma2) = Self::unpack(theta);
        let sd = (sigma2 / (1.0 - rho * rho)).sqrt();
        let z: f64 = rng.sample(StandardNormal);
        out[0] = mu + sd * z;
    }

    fn sample_trans_state(
        &self,
        theta: &Theta,
        _t: usize,
        x_prev: &[f64],
        rng: &mut ReplayRng,
        out: &mut [f64],
    ) {
        let (mu, rho, sigma2) = Self::unpack(theta);
        let z: f64 = rng.sample(StandardNormal);
        out[0] = mu + rho * (x_prev[0] - mu) + sigma2.sqrt() * z;
    }

    fn sample_obs(&self, _theta: &Theta, _t: usize, x: &[f64], rng: &mut ReplayRng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        (0.5 * x[0]).exp() * z
    }

    fn has_gibbs_theta(&self) -> bool {
        true
    }

    fn gibbs_theta(
        &self,
        path: &StateMat,
        _data: &Dataset,
        theta: &Theta,
        rng: &mut ReplayRng,
    ) -> Result<Theta> {
        if path.n_rows() == 0 || path.dim() != 1 {
            return Err(Error::InvalidInput(
                "parameter conditionals need a non-empty scalar trajectory".into(),
            ));
        }
        let (_, mut rho, mut sigma2) = Self::unpack(theta);
        // Sweep order mu, rho, sigma^2, each conditional given the freshest
        // values of the other two.
        let (m_mu, v_mu) = Self::mu_conditional(path, rho, sigma2);
        let z: f64 = rng.sample(StandardNormal);
        let mu = m_mu + v_mu.sqrt() * z;
        rho = Self::sample_rho_conditional(path, mu, sigma2, rng);
        let (shape, scale) = Self::sigma2_conditional(path, mu, rho);
        let g = Gamma::new(shape, 1.0 / scale)
            .map_err(|e| Error::InvalidInput(format!("degenerate variance conditional: {e}")))?;
        sigma2 = 1.0 / rng.sample::<f64, _>(g);
        Ok(Theta::new(vec![mu, rho, sigma2]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{ln_gamma, std_normal_cdf};
    use crate::models::simulate;
    use crate::testutil::{gamma_cdf_upper, ks_one_sample};

    fn truth() -> Theta {
        Theta::new(vec![0.0, 0.95, 0.1])
    }

    fn sim_path(t_max: usize, seed: u64) -> StateMat {
        let m = StochVol::new();
        let mut rng = ReplayRng::spawn_stream(seed, 0, 0);
        simulate(&m, &truth(), t_max, &mut rng).unwrap().0
    }

    #[test]
    fn support_and_prior_edges() {
        let m = StochVol::new();
        assert!(m.in_support(&Theta::new(vec![0.0, 1.0, 0.5])));
        assert!(!m.in_support(&Theta::new(vec![0.0, 1.1, 0.5])));
        assert!(!m.in_support(&Theta::new(vec![0.0, 0.5, 0.0])));
        assert!(!m.in_support(&Theta::new(vec![f64::NAN, 0.5, 0.5])));
        assert_eq!(m.log_prior(&Theta::new(vec![0.0, -1.5, 0.5])), f64::NEG_INFINITY);
    }

    #[test]
    fn log_prior_matches_hand_value_at_reference_point() {
        // theta = (0, 0, 1): each factor is available in closed form.
        let m = StochVol::new();
        let lp = m.log_prior(&Theta::new(vec![0.0, 0.0, 1.0]));
        let mu_term = -0.5 * (LN_2PI + 4f64.ln());
        let rho_term = -0.5 * LN_2PI - RHO_PRIOR_MASS.ln();
        let s2_term = 3.0 * 0.5f64.ln() - 2f64.ln() - 0.5;
        assert!((lp - (mu_term + rho_term + s2_term)).abs() < 1e-12, "{lp}");
    }

    #[test]
    fn prior_marginals_match_prior_density() {
        let m = StochVol::new();
        let mut rng = ReplayRng::spawn_stream(77, 0, 0);
        let n = 20_000;
        let mut mus = Vec::with_capacity(n);
        let mut rhos = Vec::with_capacity(n);
        let mut s2s = Vec::with_capacity(n);
        for _ in 0..n {
            let th = m.sample_prior(&mut rng);
            mus.push(th[0]);
            rhos.push(th[1]);
            s2s.push(th[2]);
        }
        let (_, p_mu) = ks_one_sample(&mus, |x| std_normal_cdf(x / 2.0));
        assert!(p_mu > 1e-3, "mu prior KS p = {p_mu}");
        let (_, p_rho) = ks_one_sample(&rhos, |x| {
            ((std_normal_cdf(x.clamp(-1.0, 1.0)) - std_normal_cdf(-1.0)) / RHO_PRIOR_MASS)
                .clamp(0.0, 1.0)
        });
        assert!(p_rho > 1e-3, "rho prior KS p = {p_rho}");
        // InvGamma(a, b) CDF at x is Q(a, b/x), the upper regularized gamma.
        let (_, p_s2) = ks_one_sample(&s2s, |x| {
            if x <= 0.0 {
                0.0
            } else {
                gamma_cdf_upper(SIGMA2_PRIOR_SHAPE, SIGMA2_PRIOR_SCALE / x)
            }
        });
        assert!(p_s2 > 1e-3, "sigma2 prior KS p = {p_s2}");
        // Moment spot-check: E sigma^2 = b/(a-1) = 0.25.
        let mean_s2 = crate::math::mean(&s2s);
        assert!((mean_s2 - 0.25).abs() < 0.01, "E[sigma2] = {mean_s2}");
    }

    #[test]
    fn simulated_states_have_stationary_moments() {
        let m = StochVol::new();
        let th = Theta::new(vec![0.5, 0.9, 0.2]);
        let mut rng = ReplayRng::spawn_stream(123, 0, 0);
        let (states, _) = simulate(&m, &th, 60_000, &mut rng).unwrap();
        let xs: Vec<f64> = (0..states.n_rows()).map(|i| states.row(i)[0]).collect();
        let m_x = crate::math::mean(&xs);
        let v_x = crate::math::sample_var(&xs);
        let want_var: f64 = 0.2 / (1.0 - 0.81);
        // AR(1) autocorrelation inflates the effective sample size cost;
        // tolerances sized for n_eff ~ n (1-rho)/(1+rho) ~ 3150.
        assert!((m_x - 0.5).abs() < 4.0 * (want_var / 3150.0).sqrt(), "mean {m_x}");
        assert!((v_x / want_var - 1.0).abs() < 0.15, "var {v_x} vs {want_var}");
    }

    #[test]
    fn observation_density_guards_extreme_logvol() {
        let m = StochVol::new();
        let th = truth();
        // Huge negative log-volatility with y = 0: density of a point mass
        // near zero evaluated at zero; finite and equal to the limit formula.
        let v = m.log_obs(&th, 0, 0.0, &[-800.0]);
        assert!((v - (-0.5 * (LN_2PI - 800.0))).abs() < 1e-9);
        // Huge negative log-volatility with y != 0 must be impossible.
        assert_eq!(m.log_obs(&th, 0, 0.1, &[-800.0]), f64::NEG_INFINITY);
        // Ordinary point agrees with the plain formula.
        let v = m.log_obs(&th, 0, 0.3, &[0.7]);
        assert!((v - normal_logpdf(0.3, 0.0, 0.7f64.exp())).abs() < 1e-12);
    }

    #[test]
    fn mu_conditional_matches_exact_gaussian() {
        let path = sim_path(30, 5);
        let (rho, sigma2) = (0.9, 0.12);
        let (mean, var) = StochVol::mu_conditional(&path, rho, sigma2);
        let mut rng = ReplayRng::spawn_stream(6, 0, 0);
        let draws: Vec<f64> = (0..20_000)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                mean + var.sqrt() * z
            })
            .collect();
        // Direct quadrature of the unnormalized conditional as an independent
        // oracle for the (mean, var) algebra.
        let lo = mean - 8.0 * var.sqrt();
        let hi = mean + 8.0 * var.sqrt();
        let n = 4001;
        let h = (hi - lo) / (n - 1) as f64;
        let t = path.n_rows() - 1;
        let logd = |mu: f64| {
            let mut l = normal_logpdf(mu, 0.0, MU_PRIOR_VAR);
            l += normal_logpdf(path.row(0)[0], mu, sigma2 / (1.0 - rho * rho));
            for s in 1..=t {
                l += normal_logpdf(
                    path.row(s)[0],
                    mu + rho * (path.row(s - 1)[0] - mu),
                    sigma2,
                );
            }
            l
        };
        let grid: Vec<f64> = (0..n).map(|i| lo + h * i as f64).collect();
        let lvals: Vec<f64> = grid.iter().map(|&g| logd(g)).collect();
        let peak = lvals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut cum = vec![0.0];
        for i in 1..n {
            let a = (lvals[i - 1] - peak).exp();
            let b = (lvals[i] - peak).exp();
            cum.push(cum[i - 1] + 0.5 * (a + b) * h);
        }
        let total = *cum.last().unwrap();
        let cdf = move |x: f64| {
            if x <= lo {
                return 0.0;
            }
            if x >= hi {
                return 1.0;
            }
            let pos = (x - lo) / h;
            let i = (pos.floor() as usize).min(n - 2);
            let frac = pos - i as f64;
            ((cum[i] + frac * (cum[i + 1] - cum[i])) / total).clamp(0.0, 1.0)
        };
        let (_, p) = ks_one_sample(&draws, cdf);
        assert!(p > 1e-3, "mu conditional KS p = {p}");
    }

    #[test]
    fn sigma2_conditional_matches_inverse_gamma_oracle() {
        let path = sim_path(30, 7);
        let (mu, rho) = (0.1, 0.85);
        let (shape, scale) = StochVol::sigma2_conditional(&path, mu, rho);
        // Sanity on the hyperparameters themselves.
        assert!((shape - (3.0 + 31.0 / 2.0)).abs() < 1e-12);
        assert!(scale > SIGMA2_PRIOR_SCALE);
        let mut rng = ReplayRng::spawn_stream(8, 0, 0);
        let g = Gamma::new(shape, 1.0 / scale).unwrap();
        let draws: Vec<f64> = (0..20_000).map(|_| 1.0 / rng.sample::<f64, _>(g)).collect();
        let (_, p) = ks_one_sample(&draws, |x| {
            if x <= 0.0 {
                0.0
            } else {
                gamma_cdf_upper(shape, scale / x)
            }
        });
        assert!(p > 1e-3, "sigma2 conditional KS p = {p}");
        // Cross-check the inverse-gamma density integrates against ln_gamma.
        let _ = ln_gamma(shape);
    }

    #[test]
    fn rho_conditional_matches_grid_oracle() {
        let path = sim_path(30, 9);
        let (mu, sigma2) = (0.05, 0.11);
        let (lambda, b, c) = StochVol::rho_conditional_coeffs(&path, mu, sigma2);
        let m = b / lambda;
        let mut rng = ReplayRng::spawn_stream(10, 0, 0);
        let draws: Vec<f64> = (0..20_000)
            .map(|_| StochVol::sample_rho_conditional(&path, mu, sigma2, &mut rng))
            .collect();
        // Exact (up to dense-grid quadrature) CDF of the conditional.
        let n = 8001;
        let h = 2.0 / (n - 1) as f64;
        let logd = |rho: f64| {
            let u = 1.0 - rho * rho;
            if u <= 0.0 {
                return f64::NEG_INFINITY;
            }
            -0.5 * lambda * (rho - m) * (rho - m) + 0.5 * u.ln() - c * u
        };
        let lvals: Vec<f64> = (0..n).map(|i| logd(-1.0 + h * i as f64)).collect();
        let peak = lvals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut cum = vec![0.0];
        for i in 1..n {
            let a = (lvals[i - 1] - peak).exp();
            let bb = (lvals[i] - peak).exp();
            cum.push(cum[i - 1] + 0.5 * (a + bb) * h);
        }
        let total = *cum.last().unwrap();
        let cdf = move |x: f64| {
            if x <= -1.0 {
                return 0.0;
            }
            if x >= 1.0 {
                return 1.0;
            }
            let pos = (x + 1.0) / h;
            let i = (pos.floor() as usize).min(n - 2);
            let frac = pos - i as f64;
            ((cum[i] + frac * (cum[i + 1] - cum[i])) / total).clamp(0.0, 1.0)
        };
        let (_, p) = ks_one_sample(&draws, cdf);
        assert!(p > 1e-3, "rho conditional KS p = {p}");
    }

    #[test]
    fn gibbs_sweep_returns_in_support_parameters() {
        let m = StochVol::new();
        let path = sim_path(50, 11);
        let data = Dataset::new(vec![0.0; 51]).unwrap();
        let mut rng = ReplayRng::spawn_stream(12, 0, 0);
        let mut th = truth();
        for _ in 0..500 {
            th = m.gibbs_theta(&path, &data, &th, &mut rng).unwrap();
            assert!(m.in_support(&th), "sweep left support: {:?}", th);
        }
    }
}
