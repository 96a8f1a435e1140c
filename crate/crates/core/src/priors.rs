//! Bandwidth priors, normalization by quadrature, (A3) bound diagnostics and
//! contraction-rate exponents.

use std::sync::Arc;

use faer::MatRef;
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid_input, invalid_param, Error, Result};
use crate::manifold_stats::{select_subset, tn_statistic, AffinityStatistic, AffinityVariant, KnnConfig};

/// Open-closed support interval `(lower, upper]` of a bandwidth prior.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Support {
    pub lower: f64,
    pub upper: f64,
}

impl Support {
    pub const POSITIVE: Support = Support { lower: 0.0, upper: f64::INFINITY };

    pub fn contains(&self, t: f64) -> bool {
        t > self.lower && t <= self.upper
    }

    /// Nearest point of the support to `t`, pulled strictly inside the open end.
    pub fn project(&self, t: f64) -> f64 {
        if self.contains(t) {
            return t;
        }
        if t <= self.lower {
            if self.upper.is_finite() {
                (self.lower * self.upper).sqrt().min(self.lower * 1.01 + f64::MIN_POSITIVE).min(self.upper)
            } else {
                self.lower * 1.01 + f64::MIN_POSITIVE
            }
        } else {
            self.upper
        }
    }
}

/// Log-density of a bandwidth prior, possibly unnormalized.
pub trait BandwidthLogDensity: Send + Sync {
    fn log_density(&self, t: f64) -> f64;

    fn support(&self) -> Support {
        Support::POSITIVE
    }
}

impl<F: Fn(f64) -> f64 + Send + Sync> BandwidthLogDensity for F {
    fn log_density(&self, t: f64) -> f64 {
        self(t)
    }
}

/// Hyperparameters of the empirical-Bayes prior.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct EbSettings {
    pub a0: f64,
    pub b0: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub variant: AffinityVariant,
}

impl Default for EbSettings {
    fn default() -> Self {
        EbSettings { a0: 1.0, b0: 1.0, gamma1: 0.25, gamma2: 0.25, variant: AffinityVariant::Arithmetic }
    }
}

/// `p(t) ∝ t^{−a0} exp(−b0 / v̂_n(t))` on `(γ₁T_n², 1]`.
#[derive(Debug, Clone)]
pub struct EmpiricalBayesPrior {
    pub a0: f64,
    pub b0: f64,
    pub gamma1: f64,
    pub tn: f64,
    affinity: Arc<AffinityStatistic>,
}

impl EmpiricalBayesPrior {
    pub fn new(a0: f64, b0: f64, gamma1: f64, tn: f64, affinity: Arc<AffinityStatistic>) -> Result<Self> {
        if !(a0 > 0.0 && b0 > 0.0 && gamma1 > 0.0) {
            return invalid_param("a0, b0 and gamma1 must be positive");
        }
        if !(tn >= 0.0 && tn.is_finite()) {
            return invalid_param(format!("T_n must be finite and nonnegative, got {tn}"));
        }
        let prior = EmpiricalBayesPrior { a0, b0, gamma1, tn, affinity };
        if prior.support().lower >= 1.0 {
            return invalid_param(format!("empty support: gamma1·T_n² = {} >= 1", prior.support().lower));
        }
        Ok(prior)
    }

    /// Computes `T_n` and `v̂_n` from the predictors.
    ///
    /// The harmonic variant averages the kNN radius over all points.
    pub fn from_data(x: MatRef<'_, f64>, settings: &EbSettings, seed: u64) -> Result<Self> {
        let affinity = Arc::new(AffinityStatistic::new(x, settings.variant)?);
        Self::from_data_with_affinity(x, settings, affinity, seed)
    }

    pub fn from_data_with_affinity(
        x: MatRef<'_, f64>,
        settings: &EbSettings,
        affinity: Arc<AffinityStatistic>,
        seed: u64,
    ) -> Result<Self> {
        let n = x.nrows();
        let cfg = KnnConfig::for_sample_size(n, settings.gamma2)?;
        let subset = match settings.variant {
            AffinityVariant::Arithmetic => select_subset(n, cfg.subset_size, seed)?,
            AffinityVariant::Harmonic => (0..n).collect(),
        };
        let tn = tn_statistic(x, &subset, cfg.k)?;
        Self::new(settings.a0, settings.b0, settings.gamma1, tn, affinity)
    }

    pub fn affinity(&self) -> &AffinityStatistic {
        &self.affinity
    }
}

impl BandwidthLogDensity for EmpiricalBayesPrior {
    fn log_density(&self, t: f64) -> f64 {
        eb_log_prior(t, self)
    }

    fn support(&self) -> Support {
        Support { lower: self.gamma1 * self.tn * self.tn, upper: 1.0 }
    }
}

/// Unnormalized empirical-Bayes log-prior; `−∞` outside `(γ₁T_n², 1]`.
pub fn eb_log_prior(t: f64, prior: &EmpiricalBayesPrior) -> f64 {
    if !prior.support().contains(t) {
        return f64::NEG_INFINITY;
    }
    -prior.a0 * t.ln() - prior.b0 / prior.affinity.eval(t)
}

/// Prior under which `t^{−ϱ/2} ~ Gamma(shape a0, rate b0)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RescaledGammaPrior {
    pub a0: f64,
    pub b0: f64,
    pub rho: f64,
    /// Include the Gamma normalizing constant.
    pub normalized: bool,
}

impl RescaledGammaPrior {
    pub fn new(a0: f64, b0: f64, rho: f64) -> Result<Self> {
        if !(a0 > 0.0 && b0 > 0.0 && rho > 0.0) {
            return invalid_param("a0, b0 and rho must be positive");
        }
        Ok(RescaledGammaPrior { a0, b0, rho, normalized: true })
    }

    pub fn unnormalized(mut self) -> Self {
        self.normalized = false;
        self
    }
}

impl BandwidthLogDensity for RescaledGammaPrior {
    fn log_density(&self, t: f64) -> f64 {
        rescaled_gamma_log_prior(t, self)
    }
}

/// Change-of-variables log-density of the rescaled-Gamma prior; `−∞` for `t ≤ 0`.
pub fn rescaled_gamma_log_prior(t: f64, prior: &RescaledGammaPrior) -> f64 {
    if !(t > 0.0) {
        return f64::NEG_INFINITY;
    }
    let half = prior.rho / 2.0;
    let ln_t = t.ln();
    let u = (-half * ln_t).exp();
    let mut lp = half.ln() + (prior.a0 - 1.0) * (-half * ln_t) - prior.b0 * u - (half + 1.0) * ln_t;
    if prior.normalized {
        lp += prior.a0 * prior.b0.ln() - ln_gamma(prior.a0);
    }
    lp
}

/// `p(t) ∝ 1/t` on `[lower, upper]`, normalized.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LogUniformPrior {
    pub lower: f64,
    pub upper: f64,
}

impl LogUniformPrior {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower > 0.0 && upper > lower && upper.is_finite()) {
            return invalid_param("log-uniform prior needs 0 < lower < upper < inf");
        }
        Ok(LogUniformPrior { lower, upper })
    }
}

impl BandwidthLogDensity for LogUniformPrior {
    fn log_density(&self, t: f64) -> f64 {
        if t < self.lower || t > self.upper {
            return f64::NEG_INFINITY;
        }
        -t.ln() - (self.upper / self.lower).ln().ln()
    }

    fn support(&self) -> Support {
        // closed at the lower end; the open-interval bound just below it is equivalent here
        Support { lower: self.lower * (1.0 - f64::EPSILON), upper: self.upper }
    }
}

/// Tagged prior descriptor used by configs and the CLI.
#[derive(Debug, Clone)]
pub enum BandwidthPrior {
    EmpiricalBayes(EmpiricalBayesPrior),
    RescaledGamma(RescaledGammaPrior),
    LogUniform(LogUniformPrior),
}

impl BandwidthLogDensity for BandwidthPrior {
    fn log_density(&self, t: f64) -> f64 {
        match self {
            BandwidthPrior::EmpiricalBayes(p) => p.log_density(t),
            BandwidthPrior::RescaledGamma(p) => p.log_density(t),
            BandwidthPrior::LogUniform(p) => p.log_density(t),
        }
    }

    fn support(&self) -> Support {
        match self {
            BandwidthPrior::EmpiricalBayes(p) => p.support(),
            BandwidthPrior::RescaledGamma(p) => p.support(),
            BandwidthPrior::LogUniform(p) => p.support(),
        }
    }
}

// ---------------------------------------------------------------------------
// quadrature

/// Relative tolerance of the normalization quadrature.
pub const QUAD_REL_TOL: f64 = 1e-6;
const QUAD_MAX_DEPTH: u32 = 48;
const QUAD_INITIAL_PANELS: usize = 64;

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_panel<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::Quadrature(format!("adaptive Simpson did not converge on [{a}, {b}]")));
    }
    Ok(adaptive_panel(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)?
        + adaptive_panel(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)?)
}

/// Adaptive composite Simpson rule with a relative tolerance.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    if !(b > a) {
        return invalid_input(format!("empty integration interval [{a}, {b}]"));
    }
    let h = (b - a) / QUAD_INITIAL_PANELS as f64;
    let nodes: Vec<f64> = (0..=2 * QUAD_INITIAL_PANELS).map(|i| f(a + 0.5 * h * i as f64)).collect();
    if nodes.iter().any(|v| !v.is_finite()) {
        return Err(Error::Quadrature("integrand is not finite on the initial grid".into()));
    }
    let coarse: f64 = (0..QUAD_INITIAL_PANELS).map(|p| simpson(nodes[2 * p], nodes[2 * p + 1], nodes[2 * p + 2], h)).sum();
    let scale = coarse.abs().max(f64::MIN_POSITIVE);
    let panel_tol = rel_tol * scale / QUAD_INITIAL_PANELS as f64;
    let mut total = 0.0;
    for p in 0..QUAD_INITIAL_PANELS {
        let lo = a + h * p as f64;
        let whole = simpson(nodes[2 * p], nodes[2 * p + 1], nodes[2 * p + 2], h);
        total += adaptive_panel(&f, lo, lo + h, nodes[2 * p], nodes[2 * p + 1], nodes[2 * p + 2], whole, panel_tol, QUAD_MAX_DEPTH)?;
    }
    Ok(total)
}

/// `log ∫ exp(log_density(t)) dt` over `[lo, hi]`, integrating in `log t`.
pub fn log_normalizer<P: BandwidthLogDensity + ?Sized>(prior: &P, lo: f64, hi: f64) -> Result<f64> {
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return invalid_input("normalization range must satisfy 0 < lo < hi < inf");
    }
    let (slo, shi) = (lo.ln(), hi.ln());
    let g = |s: f64| {
        let v = prior.log_density(s.exp()) + s;
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let shift = (0..=512)
        .map(|i| g(slo + (shi - slo) * i as f64 / 512.0))
        .fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return Err(Error::Quadrature("log-density is -inf or +inf across the range".into()));
    }
    let integral = adaptive_simpson(|s| (g(s) - shift).exp(), slo, shi, QUAD_REL_TOL)?;
    if !(integral > 0.0) {
        return Err(Error::Quadrature("non-positive normalizing integral".into()));
    }
    Ok(integral.ln() + shift)
}

/// A prior with its log-normalizer subtracted.
#[derive(Debug, Clone)]
pub struct Normalized<P> {
    pub prior: P,
    pub log_z: f64,
}

impl<P: BandwidthLogDensity> Normalized<P> {
    pub fn over(prior: P, lo: f64, hi: f64) -> Result<Self> {
        let log_z = log_normalizer(&prior, lo, hi)?;
        Ok(Normalized { prior, log_z })
    }
}

impl Normalized<EmpiricalBayesPrior> {
    /// Normalizes the empirical-Bayes prior over its full support.
    pub fn empirical_bayes(prior: EmpiricalBayesPrior) -> Result<Self> {
        let s = prior.support();
        let lo = if s.lower > 0.0 { s.lower } else { 1e-300 };
        Self::over(prior, lo, s.upper)
    }
}

impl<P: BandwidthLogDensity> BandwidthLogDensity for Normalized<P> {
    fn log_density(&self, t: f64) -> f64 {
        self.prior.log_density(t) - self.log_z
    }

    fn support(&self) -> Support {
        self.prior.support()
    }
}

// ---------------------------------------------------------------------------
// (A3) diagnostics

/// Fitted constants of `C·t^{−a}·exp(−K/t^{ϱ/2})`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct BoundConstants {
    pub a: f64,
    pub k: f64,
    pub c: f64,
}

/// Outcome of one side of the (A3) check.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BoundCheck {
    pub interval: (f64, f64),
    pub grid: Vec<f64>,
    pub log_density: Vec<f64>,
    pub constants: BoundConstants,
    /// Largest absolute log-deviation of the fitted shape before the shift that makes it a bound.
    pub max_log_deviation: f64,
    pub point_pass: Vec<bool>,
    pub pass: bool,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct A3Report {
    pub rho: f64,
    pub s: Option<f64>,
    pub lower: BoundCheck,
    pub upper: BoundCheck,
}

impl A3Report {
    pub fn pass(&self) -> bool {
        self.lower.pass && self.upper.pass
    }
}

/// `n^{−2/(2s+ϱ)} (log n)^{2(1+D)/(2s+ϱ)}`, the scale of the lower-bound band.
pub fn a3_lower_scale(s: f64, rho: f64, n: usize, ambient_dim: usize) -> f64 {
    let n = n as f64;
    let denom = 2.0 * s + rho;
    n.powf(-2.0 / denom) * n.ln().powf(2.0 * (1.0 + ambient_dim as f64) / denom)
}

/// `n^{−2/(2s+ϱ)} (log n)^{−4(1+D)/((2+ϱ/s)ϱ)}`, the right end of the upper-bound band.
pub fn a3_upper_scale(s: f64, rho: f64, n: usize, ambient_dim: usize) -> f64 {
    let n = n as f64;
    n.powf(-2.0 / (2.0 * s + rho)) * n.ln().powf(-4.0 * (1.0 + ambient_dim as f64) / ((2.0 + rho / s) * rho))
}

/// Band multipliers `c₁`, `c₂` of the lower band and `c₃` of the upper band.
pub const A3_C1: f64 = 1.0;
pub const A3_C2: f64 = 2.0;
pub const A3_C3: f64 = 1.0;
/// The upper band `(0, c₃·scale]` is sampled down to `scale·A3_UPPER_SPAN`.
pub const A3_UPPER_SPAN: f64 = 1e-6;

pub fn log_grid(lo: f64, hi: f64, size: usize) -> Vec<f64> {
    if size == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..size)
        .map(|i| match i {
            0 => lo,
            _ if i == size - 1 => hi,
            _ => (a + (b - a) * i as f64 / (size - 1) as f64).exp(),
        })
        .collect()
}

/// Evaluates (A3) on the prescribed bands for `(s, ϱ, n, D)`.
///
/// `log_density` should be normalized (see [`Normalized`]).
pub fn check_a3_bounds<P: BandwidthLogDensity + ?Sized>(
    log_density: &P,
    s: f64,
    rho: f64,
    n: usize,
    ambient_dim: usize,
    grid_size: usize,
) -> Result<A3Report> {
    if !(s > 0.0 && rho > 0.0) || n < 2 || grid_size < 4 {
        return invalid_param("check_a3_bounds needs s, rho > 0, n >= 2 and grid_size >= 4");
    }
    let lo_scale = a3_lower_scale(s, rho, n, ambient_dim);
    let up_scale = a3_upper_scale(s, rho, n, ambient_dim);
    let lower_grid = log_grid(A3_C1 * lo_scale, A3_C2 * lo_scale, grid_size);
    let upper_grid = log_grid(A3_C3 * up_scale * A3_UPPER_SPAN, A3_C3 * up_scale, grid_size);
    let mut report = check_a3_on_grids(log_density, rho, &lower_grid, &upper_grid)?;
    report.s = Some(s);
    Ok(report)
}

/// Evaluates both inequalities over one explicit range `[t_min, t_max]`.
pub fn check_a3_on_range<P: BandwidthLogDensity + ?Sized>(
    log_density: &P,
    rho: f64,
    t_min: f64,
    t_max: f64,
    grid_size: usize,
) -> Result<A3Report> {
    if !(t_min > 0.0 && t_max > t_min) || grid_size < 4 {
        return invalid_param("range must satisfy 0 < t_min < t_max and grid_size >= 4");
    }
    let grid = log_grid(t_min, t_max, grid_size);
    check_a3_on_grids(log_density, rho, &grid, &grid)
}

pub fn check_a3_on_grids<P: BandwidthLogDensity + ?Sized>(
    log_density: &P,
    rho: f64,
    lower_grid: &[f64],
    upper_grid: &[f64],
) -> Result<A3Report> {
    if !(rho > 0.0) {
        return invalid_param("rho must be positive");
    }
    Ok(A3Report {
        rho,
        s: None,
        lower: bound_check(log_density, rho, lower_grid, Side::Lower),
        upper: bound_check(log_density, rho, upper_grid, Side::Upper),
    })
}

#[derive(Clone, Copy, PartialEq)]
enum Side {
    Lower,
    Upper,
}

fn bound_check<P: BandwidthLogDensity + ?Sized>(p: &P, rho: f64, grid: &[f64], side: Side) -> BoundCheck {
    let log_density: Vec<f64> = grid.iter().map(|&t| p.log_density(t)).collect();
    let interval = (grid[0], grid[grid.len() - 1]);
    let finite: Vec<(f64, f64)> =
        grid.iter().zip(&log_density).filter(|(_, v)| v.is_finite()).map(|(&t, &v)| (t, v)).collect();

    if side == Side::Lower && finite.len() < grid.len() {
        let fitted = chebyshev_fit(&finite, rho);
        let (constants, dev) = match fitted {
            Some((a, k, c, dev)) => (BoundConstants { a, k, c: (c - dev).exp() }, dev),
            None => (BoundConstants { a: f64::NAN, k: f64::NAN, c: f64::NAN }, f64::NAN),
        };
        return BoundCheck {
            interval,
            grid: grid.to_vec(),
            point_pass: log_density.iter().map(|v| v.is_finite()).collect(),
            log_density,
            constants,
            max_log_deviation: dev,
            pass: false,
            note: format!("density vanishes at {} of {} grid points", grid.len() - finite.len(), grid.len()),
        };
    }
    if finite.is_empty() {
        // p = 0 on the whole band satisfies any upper bound
        return BoundCheck {
            interval,
            grid: grid.to_vec(),
            point_pass: vec![true; grid.len()],
            log_density,
            constants: BoundConstants { a: 1.0, k: 1.0, c: 1.0 },
            max_log_deviation: 0.0,
            pass: true,
            note: "density vanishes on the whole band".into(),
        };
    }
    let (a_fit, k_fit, _, dev) = chebyshev_fit(&finite, rho).expect("nonempty fit set");
    // On a finite grid any positive (a, K) can be turned into a valid lower bound by
    // lowering C, so only the upper side needs a genuinely positive fitted decay.
    let a = a_fit.max(MIN_POSITIVE_CONSTANT);
    let k = match side {
        Side::Lower => k_fit.max(MIN_POSITIVE_CONSTANT),
        Side::Upper => k_fit,
    };
    let residuals = finite.iter().map(|&(t, y)| y + a * t.ln() + k * t.powf(-rho / 2.0));
    let ln_c = match side {
        Side::Lower => residuals.fold(f64::INFINITY, f64::min),
        Side::Upper => residuals.fold(f64::NEG_INFINITY, f64::max),
    };
    let constants = BoundConstants { a, k, c: ln_c.exp() };
    let slack = 1e-9 * (1.0 + ln_c.abs());
    let point_pass: Vec<bool> = grid
        .iter()
        .zip(&log_density)
        .map(|(&t, &v)| {
            let shape = ln_c - a * t.ln() - k * t.powf(-rho / 2.0);
            match side {
                Side::Lower => v >= shape - slack,
                Side::Upper => !v.is_finite() || v <= shape + slack,
            }
        })
        .collect();
    let decays = side == Side::Lower || k > K_FLOOR;
    let finite_c = constants.c > 0.0 && constants.c.is_finite();
    let mut note = String::new();
    if !decays {
        note = format!("no exp(-K/t^(rho/2)) decay: fitted K = {k:.3e}");
    } else if !finite_c {
        note = "fitted C is not a positive finite number".into();
    }
    BoundCheck {
        interval,
        grid: grid.to_vec(),
        pass: decays && finite_c && point_pass.iter().all(|&b| b),
        point_pass,
        log_density,
        constants,
        max_log_deviation: dev,
        note,
    }
}

/// Floor applied to fitted `a` (both sides) and `K` (lower side).
pub const MIN_POSITIVE_CONSTANT: f64 = 1e-6;

/// Fitted decay constants at or below this value count as "no decay".
pub const K_FLOOR: f64 = 1e-9;

/// Minimax fit of `y ≈ c − a·log t − K·t^{−ϱ/2}` over `(t, y)` pairs.
///
/// For fixed `(a, K)` the optimal `c` is the mid-range of the residuals, and the
/// remaining half-range is jointly convex in `(a, K)`; nested golden-section
/// searches over `a ∈ [0, A]` and `K ∈ [0, K_max]` minimize it. Returns
/// `(a, K, c, max deviation)`.
fn chebyshev_fit(points: &[(f64, f64)], rho: f64) -> Option<(f64, f64, f64, f64)> {
    if points.is_empty() {
        return None;
    }
    let feats: Vec<(f64, f64, f64)> = points.iter().map(|&(t, y)| (t.ln(), t.powf(-rho / 2.0), y)).collect();
    let half_range = |a: f64, k: f64| -> (f64, f64) {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &(lt, u, y) in &feats {
            let r = y + a * lt + k * u;
            lo = lo.min(r);
            hi = hi.max(r);
        }
        (0.5 * (hi - lo), 0.5 * (hi + lo))
    };
    let y_span = feats.iter().map(|f| f.2).fold(f64::NEG_INFINITY, f64::max)
        - feats.iter().map(|f| f.2).fold(f64::INFINITY, f64::min);
    let u_span = feats.iter().map(|f| f.1).fold(f64::NEG_INFINITY, f64::max)
        - feats.iter().map(|f| f.1).fold(f64::INFINITY, f64::min);
    let lt_span = feats.iter().map(|f| f.0).fold(f64::NEG_INFINITY, f64::max)
        - feats.iter().map(|f| f.0).fold(f64::INFINITY, f64::min);
    let k_max = if u_span > 0.0 { 100.0 * (y_span + 1.0) / u_span } else { 0.0 };
    let a_max = if lt_span > 0.0 { 100.0 * (y_span + 1.0) / lt_span } else { 0.0 };

    let best_k = |a: f64| golden_min(|k| half_range(a, k).0, 0.0, k_max);
    let a = golden_min(|a| half_range(a, best_k(a)).0, 0.0, a_max);
    let k = best_k(a);
    let (dev, mid) = half_range(a, k);
    Some((a, k, mid, dev))
}

fn golden_min<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if hi - lo <= 1e-13 * (1.0 + hi.abs()) {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = f(x2);
        }
    }
    let mid = 0.5 * (lo + hi);
    // the boundary itself may be the minimizer of a piecewise-linear function
    [lo, mid, hi].into_iter().min_by(|&a, &b| f(a).total_cmp(&f(b))).unwrap_or(mid)
}

// ---------------------------------------------------------------------------
// rate exponents

/// `s / (2s + ϱ)`.
pub fn rate_exponent(s: f64, rho: f64) -> Result<f64> {
    if !(s > 0.0 && rho > 0.0) {
        return invalid_param("s and rho must be positive");
    }
    Ok(s / (2.0 * s + rho))
}

/// `½ (1 − ϱ₊/(ϱ₋ ∧ ϱ) · ϱ/(2s + ϱ₊))`, defined when `ϱ₊ ≥ ϱ₋ > ϱ₊ϱ/(2s+ϱ₊)`.
pub fn misspecified_rate_exponent(rho: f64, rho_minus: f64, rho_plus: f64, s: f64) -> Result<f64> {
    if !(rho > 0.0 && rho_minus > 0.0 && rho_plus > 0.0 && s > 0.0) {
        return invalid_param("all arguments must be positive");
    }
    if rho_plus < rho_minus {
        return invalid_param(format!("rho_plus = {rho_plus} < rho_minus = {rho_minus}"));
    }
    let floor = rho_plus * rho / (2.0 * s + rho_plus);
    if rho_minus <= floor {
        return invalid_param(format!("rho_minus = {rho_minus} must exceed {floor}"));
    }
    Ok(0.5 * (1.0 - rho_plus / rho_minus.min(rho) * rho / (2.0 * s + rho_plus)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use faer::Mat;

    fn two_point_prior(d: f64) -> EmpiricalBayesPrior {
        let x = Mat::from_fn(2, 1, |i, _| i as f64 * d);
        let aff = Arc::new(AffinityStatistic::new(x.as_ref(), AffinityVariant::Arithmetic).unwrap());
        EmpiricalBayesPrior::new(1.5, 0.7, 0.25, 0.2, aff).unwrap()
    }

    #[test]
    fn eb_prior_support_and_values() {
        let d = 0.3;
        let p = two_point_prior(d);
        let lower = 0.25 * 0.04;
        assert_eq!(eb_log_prior(lower, &p), f64::NEG_INFINITY);
        assert_eq!(eb_log_prior(lower * 0.5, &p), f64::NEG_INFINITY);
        assert_eq!(eb_log_prior(1.0 + 1e-12, &p), f64::NEG_INFINITY);
        let t: f64 = 0.05;
        let expected = -1.5 * t.ln() - 0.7 * (d * d / (2.0 * t)).exp();
        assert!((eb_log_prior(t, &p) - expected).abs() < 1e-12 * expected.abs());

        let v = p.affinity().eval(1.0);
        let unit = EmpiricalBayesPrior { a0: 1.0, b0: 1.0, ..p.clone() };
        assert!((eb_log_prior(1.0, &unit) + 1.0 / v).abs() < 1e-15);
    }

    #[test]
    fn eb_prior_rejects_empty_support() {
        let x = Mat::from_fn(2, 1, |i, _| i as f64);
        let aff = Arc::new(AffinityStatistic::new(x.as_ref(), AffinityVariant::Arithmetic).unwrap());
        assert!(EmpiricalBayesPrior::new(1.0, 1.0, 0.25, 2.0, aff).is_err());
    }

    #[test]
    fn rescaled_gamma_symbolic_case() {
        let p = RescaledGammaPrior::new(1.0, 1.0, 2.0).unwrap();
        for &t in &[0.01, 0.3, 1.0, 7.0] {
            let expected = -2.0 * f64::ln(t) - 1.0 / t;
            assert!((rescaled_gamma_log_prior(t, &p) - expected).abs() < 1e-12);
        }
        assert_eq!(rescaled_gamma_log_prior(0.0, &p), f64::NEG_INFINITY);
        assert_eq!(rescaled_gamma_log_prior(-1.0, &p), f64::NEG_INFINITY);
    }

    #[test]
    fn rescaled_gamma_integrates_to_one() {
        for &(a0, b0, rho) in &[(1.0, 1.0, 2.0), (2.5, 0.4, 1.0), (0.8, 3.0, 3.0)] {
            let p = RescaledGammaPrior::new(a0, b0, rho).unwrap();
            let z = log_normalizer(&p, 1e-12, 1e12).unwrap().exp();
            assert!((z - 1.0).abs() < 1e-4, "a0={a0} b0={b0} rho={rho}: {z}");
        }
    }

    #[test]
    fn simpson_exact_on_cubics_and_accurate_on_exp() {
        let v = adaptive_simpson(|x| x * x * x - x, 0.0, 2.0, 1e-10).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
        let v = adaptive_simpson(f64::exp, 0.0, 1.0, 1e-8).unwrap();
        assert!((v - (std::f64::consts::E - 1.0)).abs() < 1e-8);
    }

    #[test]
    fn rate_examples() {
        assert!((rate_exponent(2.0, 2.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let r = misspecified_rate_exponent(1.5, 1.5, 1.5, 2.0).unwrap();
        assert!((r - rate_exponent(2.0, 1.5).unwrap()).abs() < 1e-15);
        let (rho, rp, s) = (2.0, 3.0, 1.0);
        let floor = rp * rho / (2.0 * s + rp);
        let r = misspecified_rate_exponent(rho, floor * (1.0 + 1e-9), rp, s).unwrap();
        assert!(r > 0.0 && r < 1e-8);
        assert!(misspecified_rate_exponent(rho, floor, rp, s).is_err());
        assert!(misspecified_rate_exponent(rho, 2.0, 1.0, s).is_err());
        assert!(rate_exponent(0.0, 1.0).is_err());
    }

    #[test]
    fn a3_rescaled_gamma_passes_and_constant_fails() {
        let g = RescaledGammaPrior::new(1.0, 1.0, 1.0).unwrap();
        let rep = check_a3_on_range(&g, 1.0, 1e-6, 10.0, 60).unwrap();
        assert!(rep.pass(), "{:?} {:?}", rep.lower.note, rep.upper.note);
        assert!((rep.upper.constants.k - 1.0).abs() < 1e-6);
        assert!((rep.upper.constants.a - 1.5).abs() < 1e-6);

        let flat = |t: f64| if t > 0.0 && t <= 1.0 { 0.0 } else { f64::NEG_INFINITY };
        let rep = check_a3_on_range(&flat, 1.0, 1e-6, 1.0, 60).unwrap();
        assert!(rep.lower.pass, "{:?} {:?} {:?}", rep.lower.note, rep.lower.constants, rep.lower.point_pass);
        assert!(!rep.upper.pass);
    }
}
