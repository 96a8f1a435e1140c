//! Metropolis-Hastings over the kernel bandwidth (and optionally the noise
//! variance), plus an exhaustive grid posterior used as a validation oracle.

use std::io::Write;

use faer::MatRef;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{invalid_input, invalid_param, Result};
use crate::kernel_gp::{log_likelihood_from_gram, SqDistances};
use crate::priors::{BandwidthLogDensity, Support};
use crate::rng::{rng_from_seed, Rng};

/// Starting bandwidth of a chain.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialBandwidth {
    /// Median pairwise squared distance, projected into the prior support.
    #[default]
    MedianHeuristic,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct MHConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    /// Standard deviation of the random walk on `log t`.
    pub proposal_step: f64,
    pub seed: u64,
    pub initial_t: InitialBandwidth,
    /// Standard deviation of the random walk on `log σ²`; `0` clamps `σ²`.
    pub sigma2_step: f64,
    pub initial_sigma2: Option<f64>,
}

impl Default for MHConfig {
    fn default() -> Self {
        MHConfig {
            n_iter: 3000,
            burn_in: 1000,
            proposal_step: 0.3,
            seed: 0,
            initial_t: InitialBandwidth::MedianHeuristic,
            sigma2_step: 0.3,
            initial_sigma2: None,
        }
    }
}

impl MHConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter < 2 {
            return invalid_param("n_iter must be at least 2");
        }
        if self.burn_in >= self.n_iter {
            return invalid_param(format!("burn_in {} must be below n_iter {}", self.burn_in, self.n_iter));
        }
        if !(self.proposal_step >= 0.0 && self.sigma2_step >= 0.0) {
            return invalid_param("proposal steps must be nonnegative");
        }
        Ok(())
    }
}

/// Proposal mechanism of the generic sampler.
pub trait Proposal<S> {
    /// Returns the proposed state and `log q(current | new) − log q(new | current)`
    /// plus any Jacobian term of the sampling parametrization.
    fn propose(&self, current: &S, rng: &mut Rng) -> (S, f64);
}

/// Gaussian random walk on `log t` with the Jacobian term for a target density in `t`.
#[derive(Debug, Clone, Copy)]
pub struct LogRandomWalk {
    pub step: f64,
}

impl Proposal<f64> for LogRandomWalk {
    fn propose(&self, current: &f64, rng: &mut Rng) -> (f64, f64) {
        let z: f64 = rng.sample(StandardNormal);
        let log_new = current.ln() + self.step * z;
        (log_new.exp(), log_new - current.ln())
    }
}

/// States, targets and accept flags of a raw chain; `states[0]` is the initial state.
#[derive(Debug, Clone)]
pub struct MhRun<S> {
    pub states: Vec<S>,
    pub log_targets: Vec<f64>,
    pub accepted: Vec<bool>,
}

impl<S> MhRun<S> {
    pub fn acceptance_rate(&self) -> f64 {
        let moves = self.states.len().saturating_sub(1);
        if moves == 0 {
            return 0.0;
        }
        self.accepted.iter().skip(1).filter(|&&a| a).count() as f64 / moves as f64
    }
}

/// One Metropolis-Hastings transition; returns whether the proposal was accepted.
pub fn mh_step<S, P, F>(state: &mut S, log_target: &mut f64, target: &mut F, proposal: &P, rng: &mut Rng) -> Result<bool>
where
    P: Proposal<S>,
    F: FnMut(&S) -> Result<f64>,
{
    let (cand, log_correction) = proposal.propose(state, rng);
    let u: f64 = rng.gen();
    let cand_target = target(&cand)?;
    let log_ratio = cand_target - *log_target + log_correction;
    if cand_target > f64::NEG_INFINITY && u.ln() < log_ratio {
        *state = cand;
        *log_target = cand_target;
        return Ok(true);
    }
    Ok(false)
}

/// Generic Metropolis-Hastings producing `n_iter` states including the initial one.
pub fn metropolis_hastings<S, P, F>(init: S, mut target: F, proposal: &P, n_iter: usize, rng: &mut Rng) -> Result<MhRun<S>>
where
    S: Clone,
    P: Proposal<S>,
    F: FnMut(&S) -> Result<f64>,
{
    let mut state = init;
    let mut log_target = target(&state)?;
    if log_target == f64::NEG_INFINITY {
        return invalid_param("initial state has zero target density");
    }
    let mut run = MhRun { states: vec![state.clone()], log_targets: vec![log_target], accepted: vec![false] };
    for _ in 1..n_iter {
        let acc = mh_step(&mut state, &mut log_target, &mut target, proposal, rng)?;
        run.states.push(state.clone());
        run.log_targets.push(log_target);
        run.accepted.push(acc);
    }
    Ok(run)
}

/// One iteration of a posterior chain, as written to chain dumps.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ChainRecord {
    pub iter: usize,
    pub t: f64,
    pub sigma2: Option<f64>,
    pub log_posterior: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorChain {
    /// Post-burn-in bandwidth samples.
    pub samples: Vec<f64>,
    pub sigma2_samples: Option<Vec<f64>>,
    /// Accepted bandwidth moves over `n_iter − 1`.
    pub acceptance_rate: f64,
    pub sigma2_acceptance_rate: Option<f64>,
    /// Full trace, burn-in included.
    pub trace: Vec<ChainRecord>,
    pub burn_in: usize,
}

impl PosteriorChain {
    pub fn log_posterior(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.log_posterior).collect()
    }

    /// Writes `iter,t[,sigma2],log_posterior,accepted` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let joint = self.sigma2_samples.is_some();
        if joint {
            w.write_record(["iter", "t", "sigma2", "log_posterior", "accepted"])?;
        } else {
            w.write_record(["iter", "t", "log_posterior", "accepted"])?;
        }
        for r in &self.trace {
            let mut row = vec![r.iter.to_string(), format!("{:e}", r.t)];
            if joint {
                row.push(format!("{:e}", r.sigma2.unwrap_or(f64::NAN)));
            }
            row.push(format!("{:e}", r.log_posterior));
            row.push((r.accepted as u8).to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Posterior mean of the bandwidth samples.
    pub fn mean_t(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    pub fn median_t(&self) -> f64 {
        crate::eval::median(&self.samples)
    }
}

/// Median of pairwise squared distances; `0` signals a degenerate sample.
pub fn median_heuristic(dists: &SqDistances) -> f64 {
    crate::eval::median(&dists.condensed())
}

fn initial_bandwidth(dists: &SqDistances, support: Support, init: InitialBandwidth) -> Result<f64> {
    match init {
        InitialBandwidth::Value(t) => {
            if !support.contains(t) {
                return invalid_param(format!("initial bandwidth {t} outside the prior support ({}, {}]", support.lower, support.upper));
            }
            Ok(t)
        }
        InitialBandwidth::MedianHeuristic => {
            let m = median_heuristic(dists);
            let m = if m > 0.0 { m } else { 1.0 };
            Ok(support.project(m))
        }
    }
}

fn check_data(x: MatRef<'_, f64>, y: &[f64], sigma2: f64) -> Result<()> {
    if x.nrows() == 0 || x.nrows() != y.len() {
        return invalid_input(format!("{} rows but {} targets", x.nrows(), y.len()));
    }
    if !(sigma2 > 0.0) {
        return invalid_param(format!("noise variance must be positive, got {sigma2}"));
    }
    Ok(())
}

/// `log L(Y|X,t) + log p(t)`, skipping the factorization when the prior vanishes.
fn log_posterior<P: BandwidthLogDensity + ?Sized>(dists: &SqDistances, y: &[f64], prior: &P, t: f64, sigma2: f64) -> Result<f64> {
    let lp = prior.log_density(t);
    if lp == f64::NEG_INFINITY || !t.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(log_likelihood_from_gram(dists.gram(t).as_ref(), y, sigma2)? + lp)
}

/// Random-walk MH on `log t` targeting `L(Y|X,t)·p(t)` at fixed `σ²`.
pub fn mh_sample_bandwidth<P: BandwidthLogDensity + ?Sized>(
    x: MatRef<'_, f64>,
    y: &[f64],
    prior: &P,
    sigma2: f64,
    config: &MHConfig,
) -> Result<PosteriorChain> {
    check_data(x, y, sigma2)?;
    let dists = SqDistances::new(x)?;
    mh_sample_bandwidth_cached(&dists, y, prior, sigma2, config)
}

pub fn mh_sample_bandwidth_cached<P: BandwidthLogDensity + ?Sized>(
    dists: &SqDistances,
    y: &[f64],
    prior: &P,
    sigma2: f64,
    config: &MHConfig,
) -> Result<PosteriorChain> {
    config.validate()?;
    if dists.n() != y.len() {
        return invalid_input("distance cache does not match the targets");
    }
    let t0 = initial_bandwidth(dists, prior.support(), config.initial_t)?;
    let mut rng = rng_from_seed(config.seed);
    let proposal = LogRandomWalk { step: config.proposal_step };
    let run = metropolis_hastings(t0, |&t| log_posterior(dists, y, prior, t, sigma2), &proposal, config.n_iter, &mut rng)?;
    let acceptance_rate = run.acceptance_rate();
    let trace = run
        .states
        .iter()
        .zip(&run.log_targets)
        .zip(&run.accepted)
        .enumerate()
        .map(|(iter, ((&t, &lp), &accepted))| ChainRecord { iter, t, sigma2: None, log_posterior: lp, accepted })
        .collect();
    Ok(PosteriorChain {
        samples: run.states[config.burn_in..].to_vec(),
        sigma2_samples: None,
        acceptance_rate,
        sigma2_acceptance_rate: None,
        trace,
        burn_in: config.burn_in,
    })
}

/// Support of the uniform prior on `σ²`.
pub const SIGMA2_PRIOR_RANGE: (f64, f64) = (1e-4, 1.0);

/// Blockwise MH alternating `log t` and `log σ²` updates, `σ² ~ Unif[1e-4, 1]`.
///
/// With `sigma2_step = 0` the noise block is skipped entirely and the chain
/// coincides with [`mh_sample_bandwidth`] at the initial `σ²`.
pub fn mh_sample_joint<P: BandwidthLogDensity + ?Sized>(
    x: MatRef<'_, f64>,
    y: &[f64],
    prior_t: &P,
    config: &MHConfig,
) -> Result<PosteriorChain> {
    if x.nrows() == 0 || x.nrows() != y.len() {
        return invalid_input(format!("{} rows but {} targets", x.nrows(), y.len()));
    }
    let dists = SqDistances::new(x)?;
    mh_sample_joint_cached(&dists, y, prior_t, config)
}

pub fn mh_sample_joint_cached<P: BandwidthLogDensity + ?Sized>(
    dists: &SqDistances,
    y: &[f64],
    prior_t: &P,
    config: &MHConfig,
) -> Result<PosteriorChain> {
    config.validate()?;
    let (s_lo, s_hi) = SIGMA2_PRIOR_RANGE;
    let sigma2_0 = config.initial_sigma2.unwrap_or((s_lo * s_hi).sqrt());
    if !(sigma2_0 >= s_lo && sigma2_0 <= s_hi) {
        return invalid_param(format!("initial sigma2 {sigma2_0} outside [{s_lo}, {s_hi}]"));
    }
    let sigma2_log_prior = |s2: f64| if (s_lo..=s_hi).contains(&s2) { 0.0 } else { f64::NEG_INFINITY };

    let mut t = initial_bandwidth(dists, prior_t.support(), config.initial_t)?;
    let mut sigma2 = sigma2_0;
    let mut rng = rng_from_seed(config.seed);
    let t_walk = LogRandomWalk { step: config.proposal_step };
    let s_walk = LogRandomWalk { step: config.sigma2_step };

    let mut lp = log_posterior(dists, y, prior_t, t, sigma2)?;
    if lp == f64::NEG_INFINITY {
        return invalid_param("initial state has zero posterior density");
    }
    let mut trace = vec![ChainRecord { iter: 0, t, sigma2: Some(sigma2), log_posterior: lp, accepted: false }];
    let (mut acc_t, mut acc_s) = (0usize, 0usize);
    for iter in 1..config.n_iter {
        let cur_s2 = sigma2;
        let accepted = mh_step(&mut t, &mut lp, &mut |&tc: &f64| log_posterior(dists, y, prior_t, tc, cur_s2), &t_walk, &mut rng)?;
        acc_t += accepted as usize;
        if config.sigma2_step > 0.0 {
            let cur_t = t;
            let moved = mh_step(
                &mut sigma2,
                &mut lp,
                &mut |&s2: &f64| {
                    let p = sigma2_log_prior(s2);
                    if p == f64::NEG_INFINITY {
                        return Ok(p);
                    }
                    Ok(log_posterior(dists, y, prior_t, cur_t, s2)? + p)
                },
                &s_walk,
                &mut rng,
            )?;
            acc_s += moved as usize;
        }
        trace.push(ChainRecord { iter, t, sigma2: Some(sigma2), log_posterior: lp, accepted });
    }
    let moves = (config.n_iter - 1) as f64;
    let post = &trace[config.burn_in..];
    Ok(PosteriorChain {
        samples: post.iter().map(|r| r.t).collect(),
        sigma2_samples: Some(post.iter().map(|r| r.sigma2.unwrap_or(sigma2_0)).collect()),
        acceptance_rate: acc_t as f64 / moves,
        sigma2_acceptance_rate: Some(if config.sigma2_step > 0.0 { acc_s as f64 / moves } else { 0.0 }),
        trace,
        burn_in: config.burn_in,
    })
}

/// Softmax of log-weights with log-sum-exp stabilization.
pub fn softmax_log(log_weights: &[f64]) -> Result<Vec<f64>> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return invalid_input("all log-weights are -inf");
    }
    let w: Vec<f64> = log_weights.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / total).collect())
}

/// Normalized posterior over a bandwidth grid at fixed `σ²`.
pub fn grid_posterior<P: BandwidthLogDensity + ?Sized>(
    x: MatRef<'_, f64>,
    y: &[f64],
    prior: &P,
    sigma2: f64,
    t_grid: &[f64],
) -> Result<Vec<f64>> {
    check_data(x, y, sigma2)?;
    if t_grid.len() < 2 {
        return invalid_input("grid posterior needs at least two grid points");
    }
    let dists = SqDistances::new(x)?;
    let logs = t_grid
        .iter()
        .map(|&t| log_posterior(&dists, y, prior, t, sigma2))
        .collect::<Result<Vec<_>>>()?;
    softmax_log(&logs)
}
