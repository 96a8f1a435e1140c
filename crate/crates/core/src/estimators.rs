//! End-to-end regression estimators: the empirical-Bayes GP, the rescaled-Gamma
//! GP, GPs with marginal-likelihood or median-heuristic bandwidths, kernel ridge
//! with a validation-selected bandwidth, and the `single-point` baseline.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use faer::{Mat, MatRef};

use crate::error::{invalid_input, invalid_param, Error, Result};
use crate::kernel_gp::{log_likelihood_from_gram, posterior_predict, GPFit, KernelParams, SqDistances};
use crate::manifold_stats::{dimension_k, estimate_dimension, AffinityStatistic};
use crate::priors::{log_grid, BandwidthLogDensity, EbSettings, EmpiricalBayesPrior, RescaledGammaPrior};
use crate::rng::{derive_seed, label_hash, rng_from_seed};
use crate::sampler::{mh_sample_bandwidth_cached, mh_sample_joint_cached, MHConfig, PosteriorChain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    EbGp,
    GammaGp,
    GpMle,
    GpMedian,
    KernelRidgeCv,
    SinglePoint,
}

impl Method {
    pub const ALL: [Method; 6] =
        [Method::EbGp, Method::GammaGp, Method::GpMle, Method::GpMedian, Method::KernelRidgeCv, Method::SinglePoint];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::EbGp => "eb-gp",
            Method::GammaGp => "gamma-gp",
            Method::GpMle => "gp-mle",
            Method::GpMedian => "gp-median",
            Method::KernelRidgeCv => "kernel-ridge-cv",
            Method::SinglePoint => "single-point",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown method {s:?}")))
    }
}

/// Noise variance: known, or sampled jointly with the bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(untagged)]
pub enum NoiseVariance {
    Known(f64),
    Infer(InferTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferTag {
    Infer,
}

impl NoiseVariance {
    pub const INFER: NoiseVariance = NoiseVariance::Infer(InferTag::Infer);

    pub fn known(self) -> Option<f64> {
        match self {
            NoiseVariance::Known(s) => Some(s),
            NoiseVariance::Infer(_) => None,
        }
    }
}

/// Smoothness exponent used by the rescaled-Gamma prior.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RhoSpec {
    Value(f64),
    /// Plug in the kNN dimension estimate of the training predictors.
    #[default]
    Estimate,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub method: Method,
    pub sigma2: NoiseVariance,
    pub prior: EbSettings,
    pub mh: MHConfig,
    pub rho: RhoSpec,
    /// Bandwidth grid for kernel-ridge-cv.
    pub cv_grid: Vec<f64>,
    pub cv_fraction: f64,
    /// Bandwidth grid for gp-mle.
    pub mle_grid: Vec<f64>,
    pub truncation: Option<f64>,
    /// Seed for splits and dimension estimation; the chain uses `mh.seed`.
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            method: Method::EbGp,
            sigma2: NoiseVariance::Known(0.01),
            prior: EbSettings::default(),
            mh: MHConfig::default(),
            rho: RhoSpec::Estimate,
            cv_grid: default_bandwidth_grid(),
            cv_fraction: 0.1,
            mle_grid: default_bandwidth_grid(),
            truncation: None,
            seed: 0,
        }
    }
}

/// 60 log-spaced bandwidths on `[1e-4, 1]`.
pub fn default_bandwidth_grid() -> Vec<f64> {
    log_grid(1e-4, 1.0, 60)
}

impl EstimatorConfig {
    pub fn with_method(method: Method) -> Self {
        EstimatorConfig { method, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if let NoiseVariance::Known(s) = self.sigma2 {
            if !(s > 0.0 && s.is_finite()) {
                return invalid_param(format!("sigma2 must be positive, got {s}"));
            }
        } else if self.method != Method::EbGp {
            return invalid_param(format!("sigma2 = \"infer\" is only supported by eb-gp, not {}", self.method));
        }
        if let Some(m) = self.truncation {
            if !(m > 0.0) {
                return invalid_param(format!("truncation level must be positive, got {m}"));
            }
        }
        match self.method {
            Method::EbGp | Method::GammaGp => self.mh.validate()?,
            Method::KernelRidgeCv => {
                if self.cv_grid.is_empty() || self.cv_grid.iter().any(|&t| !(t > 0.0)) {
                    return invalid_param("cv_grid must be a nonempty list of positive bandwidths");
                }
                if !(self.cv_fraction > 0.0 && self.cv_fraction < 1.0) {
                    return invalid_param(format!("cv_fraction must lie in (0,1), got {}", self.cv_fraction));
                }
            }
            Method::GpMle => {
                if self.mle_grid.is_empty() || self.mle_grid.iter().any(|&t| !(t > 0.0)) {
                    return invalid_param("mle_grid must be a nonempty list of positive bandwidths");
                }
            }
            Method::GpMedian | Method::SinglePoint => {}
        }
        if let (Method::GammaGp, RhoSpec::Value(r)) = (self.method, self.rho) {
            if !(r > 0.0) {
                return invalid_param(format!("rho must be positive, got {r}"));
            }
        }
        Ok(())
    }

    fn sigma2_known(&self) -> Result<f64> {
        self.sigma2
            .known()
            .ok_or_else(|| Error::InvalidParameter(format!("{} needs a known sigma2", self.method)))
    }
}

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize)]
pub struct Prediction {
    /// Posterior mean at the training inputs.
    pub train: Vec<f64>,
    /// Posterior mean at the test inputs; `None` for `single-point`.
    pub test: Option<Vec<f64>>,
    /// Test means clamped to `[−M, M]` when truncation is active.
    pub truncated: Option<Vec<f64>>,
    /// Bandwidth used at every averaged draw (a single entry for plug-in methods).
    pub bandwidths: Vec<f64>,
    pub sigma2_samples: Option<Vec<f64>>,
    pub acceptance_rate: Option<f64>,
    pub rho: Option<f64>,
    #[serde(skip)]
    pub chain: Option<PosteriorChain>,
}

/// Fills `truncated` with the test means clamped to `[−M, M]`.
pub fn truncate_prediction(pred: Prediction, m: f64) -> Result<Prediction> {
    if !(m > 0.0) {
        return invalid_param(format!("truncation level must be positive, got {m}"));
    }
    let clamp = |v: &[f64]| v.iter().map(|x| x.clamp(-m, m)).collect::<Vec<_>>();
    Ok(Prediction { truncated: pred.test.as_deref().map(clamp), ..pred })
}

fn check_train(x: MatRef<'_, f64>, y: &[f64], x_test: MatRef<'_, f64>) -> Result<()> {
    if x.nrows() != y.len() {
        return invalid_input(format!("{} rows but {} targets", x.nrows(), y.len()));
    }
    if x.nrows() < 2 {
        return invalid_input("need at least two training points");
    }
    if x_test.ncols() != x.ncols() && x_test.nrows() > 0 {
        return invalid_input(format!("test dimension {} differs from training dimension {}", x_test.ncols(), x.ncols()));
    }
    Ok(())
}

fn finish(mut pred: Prediction, config: &EstimatorConfig) -> Result<Prediction> {
    if let Some(m) = config.truncation {
        pred = truncate_prediction(pred, m)?;
    }
    Ok(pred)
}

/// Averages posterior means over chain draws, one factorization per distinct `(t, σ²)`.
pub fn average_over_chain(
    x: MatRef<'_, f64>,
    dists: &SqDistances,
    y: &[f64],
    x_test: MatRef<'_, f64>,
    draws: &[(f64, f64)],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if draws.is_empty() {
        return invalid_input("no posterior draws to average");
    }
    let mut counts: BTreeMap<(u64, u64), usize> = BTreeMap::new();
    for &(t, s2) in draws {
        *counts.entry((t.to_bits(), s2.to_bits())).or_default() += 1;
    }
    let mut train = vec![0.0; x.nrows()];
    let mut test = vec![0.0; x_test.nrows()];
    let total = draws.len() as f64;
    for (&(tb, sb), &c) in &counts {
        let params = KernelParams::new(f64::from_bits(tb), f64::from_bits(sb))?;
        let fit = GPFit::with_distances(x, dists, y, params)?;
        let w = c as f64 / total;
        for (a, b) in train.iter_mut().zip(fit.in_sample_mean()) {
            *a += w * b;
        }
        if x_test.nrows() > 0 {
            for (a, b) in test.iter_mut().zip(posterior_predict(&fit, x_test)?) {
                *a += w * b;
            }
        }
    }
    Ok((train, test))
}

fn chain_prediction(
    x: MatRef<'_, f64>,
    dists: &SqDistances,
    y: &[f64],
    x_test: MatRef<'_, f64>,
    chain: &PosteriorChain,
    sigma2: Option<f64>,
) -> Result<Prediction> {
    let draws: Vec<(f64, f64)> = match (&chain.sigma2_samples, sigma2) {
        (Some(s2), _) => chain.samples.iter().copied().zip(s2.iter().copied()).collect(),
        (None, Some(s2)) => chain.samples.iter().map(|&t| (t, s2)).collect(),
        (None, None) => return invalid_param("noise variance missing"),
    };
    let (train, test) = average_over_chain(x, dists, y, x_test, &draws)?;
    Ok(Prediction {
        train,
        test: Some(test),
        truncated: None,
        bandwidths: chain.samples.clone(),
        sigma2_samples: chain.sigma2_samples.clone(),
        acceptance_rate: Some(chain.acceptance_rate),
        rho: None,
        chain: Some(chain.clone()),
    })
}

fn run_chain<P: BandwidthLogDensity + ?Sized>(
    dists: &SqDistances,
    y: &[f64],
    prior: &P,
    config: &EstimatorConfig,
) -> Result<PosteriorChain> {
    match config.sigma2 {
        NoiseVariance::Known(s2) => mh_sample_bandwidth_cached(dists, y, prior, s2, &config.mh),
        NoiseVariance::Infer(_) => mh_sample_joint_cached(dists, y, prior, &config.mh),
    }
}

/// Builds the empirical-Bayes prior from the training predictors.
pub fn build_eb_prior(x: MatRef<'_, f64>, dists: &SqDistances, config: &EstimatorConfig) -> Result<EmpiricalBayesPrior> {
    let affinity = Arc::new(AffinityStatistic::from_distances(dists, config.prior.variant));
    EmpiricalBayesPrior::from_data_with_affinity(x, &config.prior, affinity, derive_seed(config.seed, &[label_hash("subset")]))
}

/// EB prior, MH over the bandwidth, and the chain-averaged posterior mean.
pub fn fit_predict_eb_gp(x: MatRef<'_, f64>, y: &[f64], x_test: MatRef<'_, f64>, config: &EstimatorConfig) -> Result<Prediction> {
    check_train(x, y, x_test)?;
    config.validate()?;
    let dists = SqDistances::new(x)?;
    let prior = build_eb_prior(x, &dists, config)?;
    let chain = run_chain(&dists, y, &prior, config)?;
    let pred = chain_prediction(x, &dists, y, x_test, &chain, config.sigma2.known())?;
    finish(pred, config)
}

/// `ϱ` from the config, or the kNN dimension estimate of `x`.
pub fn resolve_rho(x: MatRef<'_, f64>, config: &EstimatorConfig) -> Result<f64> {
    match config.rho {
        RhoSpec::Value(r) => Ok(r),
        RhoSpec::Estimate => {
            let n = x.nrows();
            Ok(estimate_dimension(x, dimension_k(n), derive_seed(config.seed, &[label_hash("dimension")]))? as f64)
        }
    }
}

/// As [`fit_predict_eb_gp`] with the rescaled-Gamma prior `t^{−ϱ/2} ~ Gamma(a0, b0)`.
pub fn fit_predict_gamma_gp(x: MatRef<'_, f64>, y: &[f64], x_test: MatRef<'_, f64>, config: &EstimatorConfig) -> Result<Prediction> {
    check_train(x, y, x_test)?;
    config.validate()?;
    let sigma2 = config.sigma2_known()?;
    let rho = resolve_rho(x, config)?;
    let prior = RescaledGammaPrior::new(config.prior.a0, config.prior.b0, rho)?;
    let dists = SqDistances::new(x)?;
    let chain = mh_sample_bandwidth_cached(&dists, y, &prior, sigma2, &config.mh)?;
    let mut pred = chain_prediction(x, &dists, y, x_test, &chain, Some(sigma2))?;
    pred.rho = Some(rho);
    finish(pred, config)
}

/// Grid maximizer of the marginal likelihood; ties go to the smallest `t`.
pub fn select_bandwidth_mle(x: MatRef<'_, f64>, y: &[f64], sigma2: f64, grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return invalid_param("bandwidth grid is empty");
    }
    if x.nrows() != y.len() || x.nrows() == 0 {
        return invalid_input(format!("{} rows but {} targets", x.nrows(), y.len()));
    }
    let dists = SqDistances::new(x)?;
    select_bandwidth_mle_cached(&dists, y, sigma2, grid)
}

fn select_bandwidth_mle_cached(dists: &SqDistances, y: &[f64], sigma2: f64, grid: &[f64]) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    for &t in grid {
        KernelParams::new(t, sigma2)?;
        let ll = log_likelihood_from_gram(dists.gram(t).as_ref(), y, sigma2)?;
        best = match best {
            Some((bt, bl)) if bl > ll || (bl == ll && bt <= t) => Some((bt, bl)),
            _ => Some((t, ll)),
        };
    }
    Ok(best.expect("nonempty grid").0)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MedianBandwidth {
    pub t: f64,
    /// All pairwise distances vanish.
    pub degenerate: bool,
}

/// Median of the pairwise squared distances.
pub fn select_bandwidth_median(x: MatRef<'_, f64>) -> Result<MedianBandwidth> {
    if x.nrows() < 2 {
        return invalid_input("median heuristic needs at least two points");
    }
    let t = crate::sampler::median_heuristic(&SqDistances::new(x)?);
    Ok(MedianBandwidth { t, degenerate: t == 0.0 })
}

fn plug_in(x: MatRef<'_, f64>, y: &[f64], x_test: MatRef<'_, f64>, t: f64, sigma2: f64) -> Result<Prediction> {
    let fit = GPFit::new(x, y, KernelParams::new(t, sigma2)?)?;
    Ok(Prediction {
        train: fit.in_sample_mean(),
        test: Some(if x_test.nrows() > 0 { posterior_predict(&fit, x_test)? } else { vec![] }),
        bandwidths: vec![t],
        ..Default::default()
    })
}

pub fn fit_predict_gp_mle(x: MatRef<'_, f64>, y: &[f64], x_test: MatRef<'_, f64>, config: &EstimatorConfig) -> Result<Prediction> {
    check_train(x, y, x_test)?;
    config.validate()?;
    let sigma2 = config.sigma2_known()?;
    let t = select_bandwidth_mle(x, y, sigma2, &config.mle_grid)?;
    finish(plug_in(x, y, x_test, t, sigma2)?, config)
}

pub fn fit_predict_gp_median(x: MatRef<'_, f64>, y: &[f64], x_test: MatRef<'_, f64>, config: &EstimatorConfig) -> Result<Prediction> {
    check_train(x, y, x_test)?;
    config.validate()?;
    let sigma2 = config.sigma2_known()?;
    let m = select_bandwidth_median(x)?;
    if m.degenerate {
        return invalid_input("median heuristic is degenerate: all training points coincide");
    }
    finish(plug_in(x, y, x_test, m.t, sigma2)?, config)
}

/// Random validation split: `(train_idx, val_idx)` with `⌈fraction·n⌉` validation points.
pub fn validation_split(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_val = (fraction * n as f64).ceil() as usize;
    if n_val == 0 || n_val >= n {
        return invalid_param(format!("validation split of {n_val} out of {n} points leaves an empty side"));
    }
    let mut rng = rng_from_seed(seed);
    let mut val = rand::seq::index::sample(&mut rng, n, n_val).into_vec();
    val.sort_unstable();
    let mut is_val = vec![false; n];
    for &i in &val {
        is_val[i] = true;
    }
    let train = (0..n).filter(|&i| !is_val[i]).collect();
    Ok((train, val))
}

fn rows(x: MatRef<'_, f64>, idx: &[usize]) -> Mat<f64> {
    Mat::from_fn(idx.len(), x.ncols(), |i, j| x[(idx[i], j)])
}

/// Kernel ridge regression with ridge `σ²`, bandwidth chosen on a held-out split.
pub fn fit_predict_kernel_ridge_cv(
    x: MatRef<'_, f64>,
    y: &[f64],
    x_test: MatRef<'_, f64>,
    config: &EstimatorConfig,
) -> Result<Prediction> {
    check_train(x, y, x_test)?;
    config.validate()?;
    let sigma2 = config.sigma2_known()?;
    let (tr, val) = validation_split(x.nrows(), config.cv_fraction, derive_seed(config.seed, &[label_hash("cv")]))?;
    let x_tr = rows(x, &tr);
    let y_tr: Vec<f64> = tr.iter().map(|&i| y[i]).collect();
    let x_val = rows(x, &val);
    let y_val: Vec<f64> = val.iter().map(|&i| y[i]).collect();
    let dists = SqDistances::new(x_tr.as_ref())?;
    let mut best: Option<(f64, f64)> = None;
    for &t in &config.cv_grid {
        let fit = GPFit::with_distances(x_tr.as_ref(), &dists, &y_tr, KernelParams::new(t, sigma2)?)?;
        let pred = posterior_predict(&fit, x_val.as_ref())?;
        let err: f64 = pred.iter().zip(&y_val).map(|(a, b)| (a - b) * (a - b)).sum();
        best = match best {
            Some((bt, be)) if be < err || (be == err && bt <= t) => Some((bt, be)),
            _ => Some((t, err)),
        };
    }
    let t = best.expect("validated nonempty grid").0;
    finish(plug_in(x, y, x_test, t, sigma2)?, config)
}

/// Predicts the observed responses in-sample; no out-of-sample prediction.
pub fn fit_predict_single_point(y: &[f64]) -> Prediction {
    Prediction { train: y.to_vec(), ..Default::default() }
}

/// Dispatches on `config.method`.
pub fn fit_predict(x: MatRef<'_, f64>, y: &[f64], x_test: MatRef<'_, f64>, config: &EstimatorConfig) -> Result<Prediction> {
    match config.method {
        Method::EbGp => fit_predict_eb_gp(x, y, x_test, config),
        Method::GammaGp => fit_predict_gamma_gp(x, y, x_test, config),
        Method::GpMle => fit_predict_gp_mle(x, y, x_test, config),
        Method::GpMedian => fit_predict_gp_median(x, y, x_test, config),
        Method::KernelRidgeCv => fit_predict_kernel_ridge_cv(x, y, x_test, config),
        Method::SinglePoint => {
            if x.nrows() != y.len() {
                return invalid_input(format!("{} rows but {} targets", x.nrows(), y.len()));
            }
            Ok(fit_predict_single_point(y))
        }
    }
}
