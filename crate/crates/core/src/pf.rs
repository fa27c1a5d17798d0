//! Bootstrap-style particle filter building blocks.
//!
//! The filter follows the textbook sequential-importance-resampling scheme
//! with multinomial resampling at every step (no ESS-triggered skipping
//! inside the filter): resampling first, then propagation through the
//! proposal, then reweighting by model/proposal density ratios times the
//! observation density. The per-step normalizing constant
//! `log_increment = log( N^{-1} sum_n w_t^n )` makes the running product an
//! unbiased estimate of the marginal likelihood.
//!
//! Reproducibility contract: each function here consumes generator draws in a
//! frozen, documented order and reduces weights in a fixed left-to-right
//! order. Replay reconstructs histories by re-running these exact functions
//! from journaled generator snapshots, so any change to consumption or
//! summation order is a format-breaking change.

use crate::error::{Error, Result};
use crate::math::log_sum_exp;
use crate::models::Model;
use crate::rng::ReplayRng;
use crate::state::{Dataset, StateMat, Theta};

/// One produced filter generation.
#[derive(Clone, Debug, PartialEq)]
pub struct PfStep {
    /// Resampled ancestor indices (empty for the initialization step).
    pub ancestors: Vec<u32>,
    /// Particle states after propagation.
    pub states: StateMat,
    /// Normalized importance weights.
    pub norm_weights: Vec<f64>,
    /// log of the average unnormalized weight: the likelihood increment.
    pub log_increment: f64,
}

/// The live head of a particle filter: the most recent generation plus the
/// accumulated log likelihood. This is all an island retains between steps.
#[derive(Clone, Debug)]
pub struct PfFrontier {
    pub states: StateMat,
    pub norm_weights: Vec<f64>,
    pub log_increment: f64,
    pub cum_loglik: f64,
    pub t: usize,
}

impl PfFrontier {
    pub fn from_init(step: PfStep) -> Self {
        PfFrontier {
            states: step.states,
            norm_weights: step.norm_weights,
            log_increment: step.log_increment,
            cum_loglik: step.log_increment,
            t: 0,
        }
    }

    pub fn advance(&mut self, step: PfStep) {
        self.states = step.states;
        self.norm_weights = step.norm_weights;
        self.log_increment = step.log_increment;
        self.cum_loglik += step.log_increment;
        self.t += 1;
    }

    pub fn n_x(&self) -> usize {
        self.states.n_rows()
    }

    pub fn approx_bytes(&self) -> usize {
        std::mem::size_of::<Self>()
            + self.states.approx_bytes()
            + self.norm_weights.len() * std::mem::size_of::<f64>()
    }
}

/// A fully retained filter history: every generation's states, ancestors,
/// and weights. Produced either eagerly (for tests and trajectory selection
/// after replay) or by replaying a journal.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleHistory {
    /// states[s]: particle matrix at time s, for s = 0..=t.
    pub states: Vec<StateMat>,
    /// ancestors[s-1]: ancestor indices used when producing time s (len t).
    pub ancestors: Vec<Vec<u32>>,
    /// norm_weights[s]: normalized weights at time s.
    pub norm_weights: Vec<Vec<f64>>,
    /// log_increments[s]: likelihood increment at time s.
    pub log_increments: Vec<f64>,
}

impl ParticleHistory {
    pub fn from_init(step: PfStep) -> Self {
        ParticleHistory {
            states: vec![step.states],
            ancestors: Vec::new(),
            norm_weights: vec![step.norm_weights],
            log_increments: vec![step.log_increment],
        }
    }

    pub fn push_step(&mut self, step: PfStep) {
        self.ancestors.push(step.ancestors);
        self.states.push(step.states);
        self.norm_weights.push(step.norm_weights);
        self.log_increments.push(step.log_increment);
    }

    /// Final time index covered.
    pub fn t(&self) -> usize {
        self.states.len() - 1
    }

    pub fn n_x(&self) -> usize {
        self.states[0].n_rows()
    }

    /// Accumulates increments in step order, matching the live filter's
    /// running sum bit for bit.
    pub fn cum_loglik(&self) -> f64 {
        let mut acc = 0.0;
        for &inc in &self.log_increments {
            acc += inc;
        }
        acc
    }

    /// The frontier this history ends in.
    pub fn frontier(&self) -> PfFrontier {
        PfFrontier {
            states: self.states.last().unwrap().clone(),
            norm_weights: self.norm_weights.last().unwrap().clone(),
            log_increment: *self.log_increments.last().unwrap(),
            cum_loglik: self.cum_loglik(),
            t: self.t(),
        }
    }

    pub fn approx_bytes(&self) -> usize {
        let mut total = std::mem::size_of::<Self>();
        for s in &self.states {
            total += s.approx_bytes();
        }
        for a in &self.ancestors {
            total += a.len() * std::mem::size_of::<u32>() + std::mem::size_of::<Vec<u32>>();
        }
        for w in &self.norm_weights {
            total += w.len() * std::mem::size_of::<f64>() + std::mem::size_of::<Vec<f64>>();
        }
        total += self.log_increments.len() * std::mem::size_of::<f64>();
        total
    }
}

/// Effective sample size of nonnegative weights: (sum w)^2 / sum w^2.
pub fn ess(weights: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for &w in weights {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::InvalidInput(
                "weights must be finite and nonnegative".into(),
            ));
        }
        sum += w;
        sumsq += w * w;
    }
    if !(sum > 0.0) {
        return Err(Error::InvalidInput("weights sum to zero".into()));
    }
    Ok(sum * sum / sumsq)
}

/// Effective sample size computed from log weights without leaving log space
/// until the final exponential; `-inf` entries are legitimate (dead members).
pub fn ess_log(log_weights: &[f64]) -> Result<f64> {
    let l1 = log_sum_exp(log_weights);
    if l1 == f64::NEG_INFINITY {
        return Err(Error::InvalidInput("all log-weights are -inf".into()));
    }
    if log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
        return Err(Error::InvalidInput("non-finite log-weight".into()));
    }
    let doubled: Vec<f64> = log_weights.iter().map(|&w| w + w).collect();
    let l2 = log_sum_exp(&doubled);
    Ok((2.0 * l1 - l2).exp())
}

/// Draws `n_draws` ancestor indices by multinomial resampling.
///
/// Implementation: draw all uniforms first, sort them, and merge against the
/// running cumulative sum of the weights, which is O(n log n) with a single
/// pass over the weights. The returned ancestors are therefore sorted; since
/// particle labels are exchangeable this changes nothing distributionally.
///
/// Consumes exactly `n_draws` uniforms, in draw order before the sort.
pub fn multinomial_resample(
    weights: &[f64],
    n_draws: usize,
    rng: &mut ReplayRng,
) -> Result<Vec<u32>> {
    if weights.is_empty() {
        return Err(Error::InvalidInput("no weights to resample".into()));
    }
    let mut total = 0.0;
    for &w in weights {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::InvalidInput(
                "weights must be finite and nonnegative".into(),
            ));
        }
        total += w;
    }
    if !(total > 0.0) {
        return Err(Error::InvalidInput("weights sum to zero".into()));
    }
    let mut us: Vec<f64> = (0..n_draws).map(|_| rng.next_f64()).collect();
    us.sort_unstable_by(f64::total_cmp);
    let mut out = Vec::with_capacity(n_draws);
    let mut acc = 0.0;
    let mut j = 0usize;
    for &u in &us {
        let target = u * total; // u < 1 strictly, so target < total
        while j + 1 < weights.len() && target >= acc + weights[j] {
            acc += weights[j];
            j += 1;
        }
        out.push(j as u32);
    }
    Ok(out)
}

/// Draws a single index proportional to `weights`. Consumes one uniform.
pub fn categorical_draw(weights: &[f64], rng: &mut ReplayRng) -> Result<usize> {
    let mut total = 0.0;
    for &w in weights {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::InvalidInput(
                "weights must be finite and nonnegative".into(),
            ));
        }
        total += w;
    }
    if !(total > 0.0) {
        return Err(Error::InvalidInput("weights sum to zero".into()));
    }
    let target = rng.next_f64() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return Ok(i);
        }
    }
    // Only reachable through rounding at the top end.
    Ok(weights.len() - 1)
}

/// Normalizes log weights. Returns the normalized weights and the log of the
/// mean unnormalized weight, or `None` when every weight underflowed.
fn normalize_log_weights(logw: &[f64]) -> Result<Option<(Vec<f64>, f64)>> {
    let mut m = f64::NEG_INFINITY;
    for &l in logw {
        if l.is_nan() || l == f64::INFINITY {
            return Err(Error::InvalidInput(
                "log-weight is NaN or +inf; model densities are inconsistent".into(),
            ));
        }
        if l > m {
            m = l;
        }
    }
    if m == f64::NEG_INFINITY {
        return Ok(None);
    }
    let mut v: Vec<f64> = logw.iter().map(|&l| (l - m).exp()).collect();
    let mut s = 0.0;
    for &x in &v {
        s += x;
    }
    for x in &mut v {
        *x /= s;
    }
    let log_mean = m + s.ln() - (logw.len() as f64).ln();
    Ok(Some((v, log_mean)))
}

/// Weight for a propagated particle. Computed as
/// (model density - proposal density) + observation density, in that order,
/// so that a bootstrap proposal cancels its model term exactly.
#[inline]
fn init_weight(model: &dyn Model, theta: &Theta, y0: f64, x: &[f64]) -> f64 {
    (model.log_init(theta, x) - model.log_init_proposal(theta, x))
        + model.log_obs(theta, 0, y0, x)
}

#[inline]
fn step_weight(
    model: &dyn Model,
    theta: &Theta,
    t: usize,
    y: f64,
    x_prev: &[f64],
    x: &[f64],
) -> f64 {
    (model.log_trans(theta, t, x_prev, x) - model.log_step_proposal(theta, t, x_prev, x))
        + model.log_obs(theta, t, y, x)
}

/// Initializes a filter at time 0.
///
/// Draw order: proposals for particles 0..n_x in index order.
pub fn pf_init(
    model: &dyn Model,
    theta: &Theta,
    n_x: usize,
    y0: f64,
    rng: &mut ReplayRng,
) -> Result<PfStep> {
    if n_x == 0 {
        return Err(Error::InvalidParameter("particle count must be positive".into()));
    }
    let dim = model.state_dim();
    let mut states = StateMat::zeros(n_x, dim);
    for n in 0..n_x {
        model.sample_init_proposal(theta, rng, states.row_mut(n));
    }
    let mut logw = Vec::with_capacity(n_x);
    for n in 0..n_x {
        logw.push(init_weight(model, theta, y0, states.row(n)));
    }
    match normalize_log_weights(&logw)? {
        Some((norm_weights, log_increment)) => Ok(PfStep {
            ancestors: Vec::new(),
            states,
            norm_weights,
            log_increment,
        }),
        None => Err(Error::DegenerateWeights { t: 0 }),
    }
}

/// Advances a filter one step: multinomial resampling, proposal propagation,
/// reweighting.
///
/// Draw order: `n_x` resampling uniforms (before their sort), then proposals
/// for particles 0..n_x in index order.
pub fn pf_step(
    model: &dyn Model,
    theta: &Theta,
    t: usize,
    prev_states: &StateMat,
    prev_weights: &[f64],
    y: f64,
    rng: &mut ReplayRng,
) -> Result<PfStep> {
    let n_x = prev_states.n_rows();
    let ancestors = multinomial_resample(prev_weights, n_x, rng)?;
    let dim = prev_states.dim();
    let mut states = StateMat::zeros(n_x, dim);
    for (n, &a) in ancestors.iter().enumerate() {
        let parent = prev_states.row(a as usize);
        model.sample_step_proposal(theta, t, parent, rng, states.row_mut(n));
    }
    let mut logw = Vec::with_capacity(n_x);
    for (n, &a) in ancestors.iter().enumerate() {
        let parent = prev_states.row(a as usize);
        logw.push(step_weight(model, theta, t, y, parent, states.row(n)));
    }
    match normalize_log_weights(&logw)? {
        Some((norm_weights, log_increment)) => Ok(PfStep {
            ancestors,
            states,
            norm_weights,
            log_increment,
        }),
        None => Err(Error::DegenerateWeights { t }),
    }
}

/// Initializes a conditional filter at time 0 with particle 0 pinned to
/// `pinned_x0`.
///
/// Draw order: proposals for the free particles 1..n_x in index order.
pub fn csmc_init(
    model: &dyn Model,
    theta: &Theta,
    n_x: usize,
    y0: f64,
    pinned_x0: &[f64],
    rng: &mut ReplayRng,
) -> Result<PfStep> {
    if n_x < 2 {
        return Err(Error::InvalidParameter(
            "conditional filter needs at least two particles".into(),
        ));
    }
    let dim = model.state_dim();
    let mut states = StateMat::zeros(n_x, dim);
    states.row_mut(0).copy_from_slice(pinned_x0);
    for n in 1..n_x {
        model.sample_init_proposal(theta, rng, states.row_mut(n));
    }
    let mut logw = Vec::with_capacity(n_x);
    for n in 0..n_x {
        logw.push(init_weight(model, theta, y0, states.row(n)));
    }
    match normalize_log_weights(&logw)? {
        Some((norm_weights, log_increment)) => Ok(PfStep {
            ancestors: Vec::new(),
            states,
            norm_weights,
            log_increment,
        }),
        None => Err(Error::DegenerateWeights { t: 0 }),
    }
}

/// Advances a conditional filter one step: particle 0 keeps ancestor 0 and
/// state `pinned_x`, the free particles resample and propagate normally.
///
/// Draw order: `n_x - 1` resampling uniforms for the free particles (before
/// their sort), then proposals for particles 1..n_x in index order.
#[allow(clippy::too_many_arguments)]
pub fn csmc_step(
    model: &dyn Model,
    theta: &Theta,
    t: usize,
    prev_states: &StateMat,
    prev_weights: &[f64],
    pinned_x: &[f64],
    y: f64,
    rng: &mut ReplayRng,
) -> Result<PfStep> {
    let n_x = prev_states.n_rows();
    if n_x < 2 {
        return Err(Error::InvalidParameter(
            "conditional filter needs at least two particles".into(),
        ));
    }
    let free = multinomial_resample(prev_weights, n_x - 1, rng)?;
    let mut ancestors = Vec::with_capacity(n_x);
    ancestors.push(0u32);
    ancestors.extend_from_slice(&free);
    let dim = prev_states.dim();
    let mut states = StateMat::zeros(n_x, dim);
    states.row_mut(0).copy_from_slice(pinned_x);
    for (n, &a) in ancestors.iter().enumerate().skip(1) {
        let parent = prev_states.row(a as usize);
        model.sample_step_proposal(theta, t, parent, rng, states.row_mut(n));
    }
    let mut logw = Vec::with_capacity(n_x);
    for (n, &a) in ancestors.iter().enumerate() {
        let parent = prev_states.row(a as usize);
        logw.push(step_weight(model, theta, t, y, parent, states.row(n)));
    }
    match normalize_log_weights(&logw)? {
        Some((norm_weights, log_increment)) => Ok(PfStep {
            ancestors,
            states,
            norm_weights,
            log_increment,
        }),
        None => Err(Error::DegenerateWeights { t }),
    }
}

/// Runs a complete filter pass over times 0..=t_end. Returns the final
/// frontier and, when `retain_history` is set, the full history.
pub fn run_pf_pass(
    model: &dyn Model,
    theta: &Theta,
    data: &Dataset,
    t_end: usize,
    n_x: usize,
    rng: &mut ReplayRng,
    retain_history: bool,
) -> Result<(PfFrontier, Option<ParticleHistory>)> {
    if t_end > data.t_max() {
        return Err(Error::InvalidInput(format!(
            "pass to time {t_end} but data ends at {}",
            data.t_max()
        )));
    }
    let init = pf_init(model, theta, n_x, data.obs()[0], rng)?;
    let mut history = retain_history.then(|| ParticleHistory::from_init(init.clone()));
    let mut frontier = PfFrontier::from_init(init);
    for t in 1..=t_end {
        let step = pf_step(
            model,
            theta,
            t,
            &frontier.states,
            &frontier.norm_weights,
            data.obs()[t],
            rng,
        )?;
        if let Some(h) = history.as_mut() {
            h.push_step(step.clone());
        }
        frontier.advance(step);
    }
    Ok((frontier, history))
}

/// Runs a complete conditional filter pass over times 0..=t_end, pinned to
/// `pinned` (one row per time).
pub fn run_csmc_pass(
    model: &dyn Model,
    theta: &Theta,
    data: &Dataset,
    n_x: usize,
    pinned: &StateMat,
    rng: &mut ReplayRng,
    retain_history: bool,
) -> Result<(PfFrontier, Option<ParticleHistory>)> {
    let t_end = pinned.n_rows().checked_sub(1).ok_or_else(|| {
        Error::InvalidInput("pinned trajectory must be non-empty".into())
    })?;
    if t_end > data.t_max() {
        return Err(Error::InvalidInput(format!(
            "pass to time {t_end} but data ends at {}",
            data.t_max()
        )));
    }
    let init = csmc_init(model, theta, n_x, data.obs()[0], pinned.row(0), rng)?;
    let mut history = retain_history.then(|| ParticleHistory::from_init(init.clone()));
    let mut frontier = PfFrontier::from_init(init);
    for t in 1..=t_end {
        let step = csmc_step(
            model,
            theta,
            t,
            &frontier.states,
            &frontier.norm_weights,
            pinned.row(t),
            data.obs()[t],
            rng,
        )?;
        if let Some(h) = history.as_mut() {
            h.push_step(step.clone());
        }
        frontier.advance(step);
    }
    Ok((frontier, history))
}
