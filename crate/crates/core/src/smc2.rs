//! The parameter-level sequential sampler.
//!
//! A population of islands tracks the parameter posterior as observations
//! arrive: each step extends every island's filter by one observation,
//! multiplies island weights by the likelihood increments, accumulates the
//! evidence, and — when the effective sample size drops below its threshold
//! — resamples the islands and rejuvenates them with one of four move
//! strategies:
//!
//! * `StandardExchange`: a Metropolis pass per island; when the pass's mean
//!   acceptance falls below a threshold, every island's filter is exchanged
//!   for one with twice the particles (capped).
//! * `ExchangeCalibrated`: a Metropolis pass, then an exchange every move to
//!   the particle count chosen by the variance calibration.
//! * `FullGibbs`: calibration, then a conditional-filter Gibbs move per
//!   island with a full parameter refresh — island weights stay uniform.
//! * `PartialGibbsPmmh`: calibration, a parameter-preserving Gibbs move to
//!   adopt the calibrated size, then a few Metropolis passes to move the
//!   parameters.
//!
//! Island weights change only through likelihood increments, the reset at
//! resampling, and exchange increments; the Gibbs and Metropolis kernels
//! never touch them.
//!
//! Determinism: islands own generator streams keyed by (seed, island index,
//! resample epoch) and the coordinator draws from a reserved stream, so a
//! run's outputs are identical for any worker count. Streams are re-keyed
//! with a fresh epoch at every resample so duplicated islands separate
//! immediately.

use crate::calibrate::{calibrate, Calibration};
use crate::error::{Error, Result};
use crate::kernels::{
    fresh_pf_pass, particle_gibbs, pmmh_step, proposal_covariance, Island, ThetaUpdate,
};
use crate::math::log_sum_exp;
use crate::models::Model;
use crate::pf::ess_log;
use crate::rng::ReplayRng;
use crate::state::{Dataset, Theta};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Move strategy applied at each resample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    StandardExchange,
    ExchangeCalibrated,
    FullGibbs,
    PartialGibbsPmmh,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::StandardExchange => "standard_exchange",
            Variant::ExchangeCalibrated => "exchange_calibrated",
            Variant::FullGibbs => "full_gibbs",
            Variant::PartialGibbsPmmh => "partial_gibbs_pmmh",
        }
    }

    /// Whether the variant consumes the variance calibration (and hence
    /// `tau`).
    pub fn uses_calibration(self) -> bool {
        !matches!(self, Variant::StandardExchange)
    }

    pub const ALL: [Variant; 4] = [
        Variant::StandardExchange,
        Variant::ExchangeCalibrated,
        Variant::FullGibbs,
        Variant::PartialGibbsPmmh,
    ];
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Smc2Config {
    /// Number of islands.
    pub n_theta: usize,
    /// Inner particle count until the first size change.
    pub n_x_init: usize,
    /// Clamp for calibrated particle counts and the doubling cap.
    pub n_x_bounds: (usize, usize),
    /// Resample when ESS falls to this fraction of `n_theta` (floored at an
    /// ESS of one — a fully degenerate population always moves); `0` disables
    /// resampling entirely, leaving pure importance sampling.
    pub ess_min_frac: f64,
    pub variant: Variant,
    /// Target variance of the log-likelihood estimates for calibration.
    pub tau: f64,
    /// Metropolis passes per island per move (exchange variants).
    pub pmmh_passes: usize,
    /// Metropolis passes per island after each partial Gibbs move.
    pub pmmh_after_gibbs: usize,
    /// Parameter full-conditional sweeps inside each full Gibbs move.
    pub gibbs_sweeps: usize,
    /// `StandardExchange`: double the particle count when a move's mean
    /// acceptance falls below this.
    pub accept_doubling_threshold: f64,
    /// Scale multiplying the empirical parameter covariance in the
    /// random-walk proposal; `None` means 2.38^2 / dim.
    pub proposal_scale: Option<f64>,
    pub seed: u64,
    /// Record wall-clock per step in the trace. Off by default so traces are
    /// byte-identical across runs and worker counts.
    pub record_timing: bool,
}

impl Default for Smc2Config {
    fn default() -> Self {
        Smc2Config {
            n_theta: 500,
            n_x_init: 100,
            n_x_bounds: (10, 10_000),
            ess_min_frac: 0.5,
            variant: Variant::FullGibbs,
            tau: 1.0,
            pmmh_passes: 1,
            pmmh_after_gibbs: 3,
            gibbs_sweeps: 1,
            accept_doubling_threshold: 0.2,
            proposal_scale: None,
            seed: 0,
            record_timing: false,
        }
    }
}

impl Smc2Config {
    pub fn validate(&self) -> Result<()> {
        if self.n_theta == 0 {
            return Err(Error::InvalidParameter("n_theta must be at least 1".into()));
        }
        if self.n_x_init == 0 {
            return Err(Error::InvalidParameter("n_x_init must be at least 1".into()));
        }
        let (lo, hi) = self.n_x_bounds;
        if !(2 <= lo && lo <= hi) {
            return Err(Error::InvalidParameter(
                "n_x_bounds need 2 <= min <= max".into(),
            ));
        }
        if self.n_x_init > hi {
            return Err(Error::InvalidParameter(
                "n_x_init exceeds the particle-count cap".into(),
            ));
        }
        if !(self.ess_min_frac >= 0.0 && self.ess_min_frac <= 1.0) {
            return Err(Error::InvalidParameter(
                "ess_min_frac must lie in [0, 1]".into(),
            ));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidParameter("tau must be positive and finite".into()));
        }
        if !(self.accept_doubling_threshold >= 0.0 && self.accept_doubling_threshold <= 1.0) {
            return Err(Error::InvalidParameter(
                "accept_doubling_threshold must lie in [0, 1]".into(),
            ));
        }
        if let Some(s) = self.proposal_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidParameter(
                    "proposal_scale must be positive and finite".into(),
                ));
            }
        }
        Ok(())
    }

    fn scale_for(&self, dim: usize) -> f64 {
        self.proposal_scale
            .unwrap_or(2.38 * 2.38 / dim.max(1) as f64)
    }
}

/// One per-observation diagnostics record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    /// Effective sample size after the weight update (the trigger value).
    pub ess: f64,
    /// Engine-wide inner particle count after any move at this step.
    pub n_x: usize,
    pub resampled: bool,
    pub pg_applied: bool,
    pub pmmh_attempts: u64,
    pub pmmh_accepts: u64,
    /// Residual-variance estimate when this step calibrated.
    pub sigma2_hat: Option<f64>,
    pub log_evidence: f64,
    /// Zero unless timing recording is enabled.
    pub elapsed_s: f64,
}

#[derive(Clone, Debug, Default)]
struct MoveStats {
    pg_applied: bool,
    pmmh_attempts: u64,
    pmmh_accepts: u64,
    sigma2_hat: Option<f64>,
}

/// The sampler population and its running outputs.
#[derive(Clone, Debug)]
pub struct Smc2State {
    pub islands: Vec<Island>,
    /// Next observation index to process.
    pub t_next: usize,
    /// Resample count; keys the island generator streams.
    pub epoch: u64,
    /// Engine-wide inner particle count (all islands share it).
    pub current_n_x: usize,
    pub log_evidence: f64,
    pub trace: Vec<TraceRow>,
    coord_rng: ReplayRng,
    seed: u64,
}

/// Reserved stream index for coordinator draws (resampling).
const COORDINATOR_STREAM: u64 = u64::MAX;

impl Smc2State {
    /// Effective sample size of the current island weights.
    pub fn ess(&self) -> f64 {
        let w: Vec<f64> = self.islands.iter().map(|i| i.log_weight).collect();
        ess_log(&w).unwrap_or(0.0)
    }

    /// Island weights normalized to sum to one.
    pub fn normalized_weights(&self) -> Vec<f64> {
        let w: Vec<f64> = self.islands.iter().map(|i| i.log_weight).collect();
        let z = log_sum_exp(&w);
        w.iter().map(|v| (v - z).exp()).collect()
    }

    /// Weighted posterior mean of each parameter coordinate.
    pub fn posterior_mean(&self) -> Vec<f64> {
        let weights = self.normalized_weights();
        let d = self.islands.first().map_or(0, |i| i.theta.dim());
        let mut out = vec![0.0; d];
        for (isl, w) in self.islands.iter().zip(&weights) {
            for (o, &v) in out.iter_mut().zip(isl.theta.values()) {
                *o += w * v;
            }
        }
        out
    }

    /// Total bytes retained across islands (journals plus frontiers).
    pub fn approx_bytes(&self) -> usize {
        self.islands.iter().map(Island::approx_bytes).sum()
    }
}

/// Builds the initial population: prior parameter draws, unit weights, empty
/// journals, one generator stream per island.
pub fn smc2_init(config: &Smc2Config, model: &dyn Model) -> Result<Smc2State> {
    config.validate()?;
    let mut islands = Vec::with_capacity(config.n_theta);
    for m in 0..config.n_theta {
        let mut rng = ReplayRng::spawn_stream(config.seed, m as u64, 0);
        let theta = model.sample_prior(&mut rng);
        if !model.in_support(&theta) {
            return Err(Error::InvalidParameter(
                "prior sampler produced a point outside its own support".into(),
            ));
        }
        islands.push(Island::new(theta, rng));
    }
    Ok(Smc2State {
        islands,
        t_next: 0,
        epoch: 0,
        current_n_x: config.n_x_init,
        log_evidence: 0.0,
        trace: Vec::new(),
        coord_rng: ReplayRng::spawn_stream(config.seed, COORDINATOR_STREAM, 0),
        seed: config.seed,
    })
}

/// Log of the weighted mean likelihood increment,
/// `LSE(pre + inc) - LSE(pre)`, with dead islands contributing nothing.
fn evidence_increment(pre: &[f64], post: &[f64]) -> f64 {
    log_sum_exp(post) - log_sum_exp(pre)
}

/// Processes observation `t_next`: extend filters, update weights and
/// evidence, move the population if the ESS trigger fires, append the trace
/// row.
pub fn smc2_step(
    state: &mut Smc2State,
    config: &Smc2Config,
    model: &dyn Model,
    data: &Dataset,
) -> Result<()> {
    let t = state.t_next;
    if t > data.t_max() {
        return Err(Error::InvalidInput(format!(
            "no observation at time {t} (dataset ends at {})",
            data.t_max()
        )));
    }
    let timer = if config.record_timing { Some(Instant::now()) } else { None };
    // Weights before the update: the evidence denominator, captured before
    // any island can die at this step.
    let pre: Vec<f64> = state.islands.iter().map(|i| i.log_weight).collect();
    let n_x_init = state.current_n_x;
    let outcomes: Vec<Option<f64>> = state
        .islands
        .par_iter_mut()
        .map(|isl| -> Result<Option<f64>> {
            if isl.log_weight == f64::NEG_INFINITY {
                // Written-off island: frozen until resampling replaces it.
                return Ok(None);
            }
            match isl.extend(model, data, t, n_x_init) {
                Ok(inc) => Ok(Some(inc)),
                Err(Error::DegenerateWeights { .. }) => {
                    isl.log_weight = f64::NEG_INFINITY;
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let post: Vec<f64> = pre
        .iter()
        .zip(&outcomes)
        .map(|(&w, o)| match o {
            Some(inc) => w + inc,
            None => f64::NEG_INFINITY,
        })
        .collect();
    let increment = evidence_increment(&pre, &post);
    if !increment.is_finite() {
        return Err(Error::FatalDegeneracy { t });
    }
    state.log_evidence += increment;
    for (isl, &w) in state.islands.iter_mut().zip(&post) {
        isl.log_weight = w;
    }
    let ess = ess_log(&post)?;
    // An ESS of one (a single effective island) always warrants a move; a
    // zero fraction disables moves entirely.
    let threshold = if config.ess_min_frac == 0.0 {
        f64::NEG_INFINITY
    } else {
        (config.ess_min_frac * config.n_theta as f64).max(1.0)
    };
    let triggered = ess <= threshold;
    let stats = if triggered {
        resample_move(state, config, model, data, t)?
    } else {
        MoveStats::default()
    };
    state.trace.push(TraceRow {
        t,
        ess,
        n_x: state.current_n_x,
        resampled: triggered,
        pg_applied: stats.pg_applied,
        pmmh_attempts: stats.pmmh_attempts,
        pmmh_accepts: stats.pmmh_accepts,
        sigma2_hat: stats.sigma2_hat,
        log_evidence: state.log_evidence,
        elapsed_s: timer.map_or(0.0, |s| s.elapsed().as_secs_f64()),
    });
    state.t_next = t + 1;
    Ok(())
}

/// Resamples the population and applies the variant's rejuvenation, leaving
/// weights uniform except for exchange increments.
fn resample_move(
    state: &mut Smc2State,
    config: &Smc2Config,
    model: &dyn Model,
    data: &Dataset,
    t: usize,
) -> Result<MoveStats> {
    let n = state.islands.len();
    let logw: Vec<f64> = state.islands.iter().map(|i| i.log_weight).collect();
    let z = log_sum_exp(&logw);
    let probs: Vec<f64> = logw.iter().map(|w| (w - z).exp()).collect();
    let ancestors = crate::pf::multinomial_resample(&probs, n, &mut state.coord_rng)?;
    let mut resampled = Vec::with_capacity(n);
    for &a in &ancestors {
        let mut isl = state.islands[a as usize].clone();
        isl.log_weight = 0.0;
        resampled.push(isl);
    }
    state.islands = resampled;
    // Fresh epoch: duplicated islands must diverge immediately, and stream
    // keys must not depend on who processed what before the resample.
    state.epoch += 1;
    for (m, isl) in state.islands.iter_mut().enumerate() {
        isl.rng = ReplayRng::spawn_stream(state.seed, m as u64, state.epoch);
    }
    // Snapshot for covariance estimation and calibration: the resampled,
    // equal-weight population before any kernel perturbs it.
    let thetas: Vec<Theta> = state.islands.iter().map(|i| i.theta.clone()).collect();
    let responses: Vec<f64> = state
        .islands
        .iter()
        .map(|i| {
            i.frontier
                .as_ref()
                .expect("resampled island carries a filter")
                .cum_loglik
        })
        .collect();
    let scale = config.scale_for(model.theta_dim());
    let (lo_nx, hi_nx) = config.n_x_bounds;
    let current_n_x = state.current_n_x;
    let mut stats = MoveStats::default();
    let run_calibration = |stats: &mut MoveStats| -> Result<Calibration> {
        if thetas.len() < 2 {
            // A lone island offers no response surface to fit; keep its
            // current filter size and report no variance estimate.
            return Ok(Calibration {
                n_x_new: current_n_x,
                sigma2_hat: f64::NAN,
                explained_variances: Vec::new(),
                backfit_iters: 0,
                fallback_linear: true,
                n_obs: thetas.len(),
            });
        }
        let cal = calibrate(&thetas, &responses, config.tau, lo_nx, hi_nx)?;
        stats.sigma2_hat = Some(cal.sigma2_hat);
        Ok(cal)
    };
    match config.variant {
        Variant::StandardExchange | Variant::ExchangeCalibrated => {
            let cov = proposal_covariance(&thetas, scale)?;
            let accepts: Vec<u64> = state
                .islands
                .par_iter_mut()
                .map(|isl| -> Result<u64> {
                    let mut acc = 0;
                    for _ in 0..config.pmmh_passes {
                        let n_x_prop = isl
                            .frontier
                            .as_ref()
                            .expect("resampled island carries a filter")
                            .n_x();
                        if pmmh_step(isl, model, data, t, &cov, n_x_prop)? {
                            acc += 1;
                        }
                    }
                    Ok(acc)
                })
                .collect::<Result<_>>()?;
            stats.pmmh_attempts = (n * config.pmmh_passes) as u64;
            stats.pmmh_accepts = accepts.iter().sum();
            let n_x_new = match config.variant {
                Variant::ExchangeCalibrated => Some(run_calibration(&mut stats)?.n_x_new),
                _ => {
                    let mean_accept = if stats.pmmh_attempts > 0 {
                        stats.pmmh_accepts as f64 / stats.pmmh_attempts as f64
                    } else {
                        1.0
                    };
                    if mean_accept < config.accept_doubling_threshold {
                        let doubled = state.current_n_x.saturating_mul(2).min(hi_nx);
                        // Already at the cap: nothing to exchange for.
                        (doubled > state.current_n_x).then_some(doubled)
                    } else {
                        None
                    }
                }
            };
            if let Some(nx) = n_x_new {
                state
                    .islands
                    .par_iter_mut()
                    .map(|isl| exchange_step(isl, model, data, t, nx))
                    .collect::<Result<Vec<()>>>()?;
                state.current_n_x = nx;
            }
        }
        Variant::FullGibbs => {
            let cal = run_calibration(&mut stats)?;
            state
                .islands
                .par_iter_mut()
                .map(|isl| {
                    particle_gibbs(
                        isl,
                        model,
                        data,
                        ThetaUpdate::Full { sweeps: config.gibbs_sweeps },
                        cal.n_x_new,
                    )
                })
                .collect::<Result<Vec<()>>>()?;
            state.current_n_x = cal.n_x_new;
            stats.pg_applied = true;
        }
        Variant::PartialGibbsPmmh => {
            let cal = run_calibration(&mut stats)?;
            state
                .islands
                .par_iter_mut()
                .map(|isl| particle_gibbs(isl, model, data, ThetaUpdate::Partial, cal.n_x_new))
                .collect::<Result<Vec<()>>>()?;
            state.current_n_x = cal.n_x_new;
            stats.pg_applied = true;
            let cov = proposal_covariance(&thetas, scale)?;
            let accepts: Vec<u64> = state
                .islands
                .par_iter_mut()
                .map(|isl| -> Result<u64> {
                    let mut acc = 0;
                    for _ in 0..config.pmmh_after_gibbs {
                        if pmmh_step(isl, model, data, t, &cov, cal.n_x_new)? {
                            acc += 1;
                        }
                    }
                    Ok(acc)
                })
                .collect::<Result<_>>()?;
            stats.pmmh_attempts = (n * config.pmmh_after_gibbs) as u64;
            stats.pmmh_accepts = accepts.iter().sum();
        }
    }
    Ok(stats)
}

/// Replaces an island's filter with a fresh one of size `n_x_new` run over
/// the full data so far, adjusting the island weight by the difference in
/// cumulative log-likelihood estimates. This is the move that perturbs
/// weights; a collapsed replacement filter writes the island off.
pub fn exchange_step(
    island: &mut Island,
    model: &dyn Model,
    data: &Dataset,
    t: usize,
    n_x_new: usize,
) -> Result<()> {
    let old = island
        .frontier
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("island filter not initialized".into()))?;
    if old.t != t {
        return Err(Error::InvalidInput(format!(
            "island is at time {} but the exchange targets time {t}",
            old.t
        )));
    }
    let old_cum = old.cum_loglik;
    match fresh_pf_pass(model, &island.theta, data, t, n_x_new, &mut island.rng) {
        Ok((frontier, journal)) => {
            island.log_weight += frontier.cum_loglik - old_cum;
            island.frontier = Some(frontier);
            island.journal = journal;
            Ok(())
        }
        Err(Error::DegenerateWeights { .. }) => {
            island.log_weight = f64::NEG_INFINITY;
            Ok(())
        }
        Err(e) => Err(e),
    }
}

/// A finished (or aborted) run.
#[derive(Debug)]
pub struct RunOutput {
    pub state: Smc2State,
    /// `Some` when the run aborted on total filter collapse; the state then
    /// holds the partial trace up to the failing step.
    pub failure: Option<Error>,
}

/// Runs the sampler over the whole dataset. Total filter collapse ends the
/// run early but still returns the partial state; other errors propagate.
pub fn run(config: &Smc2Config, model: &dyn Model, data: &Dataset) -> Result<RunOutput> {
    let mut state = smc2_init(config, model)?;
    for _ in 0..data.len() {
        match smc2_step(&mut state, config, model, data) {
            Ok(()) => {}
            Err(e @ Error::FatalDegeneracy { .. }) => {
                return Ok(RunOutput { state, failure: Some(e) });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(RunOutput { state, failure: None })
}

/// Stable trace header (column order is part of the output contract).
pub const TRACE_HEADER: &str =
    "t,ess,n_x,resampled,pg_applied,pmmh_attempts,pmmh_accepts,sigma2_hat,log_evidence,elapsed_s";
const TRACE_FORMAT_COMMENT: &str = "# smc2-trace-v1";

/// Renders trace rows as CSV (format comment, header, one row per step).
pub fn trace_to_csv(rows: &[TraceRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 2));
    out.push_str(TRACE_FORMAT_COMMENT);
    out.push('\n');
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        let sigma2 = r.sigma2_hat.map_or(String::new(), |v| v.to_string());
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.t,
            r.ess,
            r.n_x,
            u8::from(r.resampled),
            u8::from(r.pg_applied),
            r.pmmh_attempts,
            r.pmmh_accepts,
            sigma2,
            r.log_evidence,
            r.elapsed_s
        ));
    }
    out
}

/// Parses a trace CSV produced by [`trace_to_csv`].
pub fn trace_from_csv(text: &str) -> Result<Vec<TraceRow>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.starts_with('#'));
    match lines.next() {
        Some((_, header)) if header.trim() == TRACE_HEADER => {}
        Some((i, header)) => {
            return Err(Error::Serialization(format!(
                "line {}: unexpected trace header {header:?}",
                i + 1
            )))
        }
        None => return Err(Error::Serialization("empty trace".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(Error::Serialization(format!(
                "line {}: expected 10 fields, found {}",
                i + 1,
                fields.len()
            )));
        }
        let bad = |what: &str| Error::Serialization(format!("line {}: bad {what}", i + 1));
        let flag = |s: &str, what: &str| match s {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(bad(what)),
        };
        rows.push(TraceRow {
            t: fields[0].parse().map_err(|_| bad("t"))?,
            ess: fields[1].parse().map_err(|_| bad("ess"))?,
            n_x: fields[2].parse().map_err(|_| bad("n_x"))?,
            resampled: flag(fields[3], "resampled")?,
            pg_applied: flag(fields[4], "pg_applied")?,
            pmmh_attempts: fields[5].parse().map_err(|_| bad("pmmh_attempts"))?,
            pmmh_accepts: fields[6].parse().map_err(|_| bad("pmmh_accepts"))?,
            sigma2_hat: if fields[7].is_empty() {
                None
            } else {
                Some(fields[7].parse().map_err(|_| bad("sigma2_hat"))?)
            },
            log_evidence: fields[8].parse().map_err(|_| bad("log_evidence"))?,
            elapsed_s: fields[9].parse().map_err(|_| bad("elapsed_s"))?,
        });
    }
    Ok(rows)
}
