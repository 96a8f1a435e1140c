//! Nearest-neighbor radii, averaged kernel affinities and intrinsic-dimension
//! estimators computed from the predictors alone.

use std::collections::HashSet;

use faer::MatRef;
use rand::seq::index::sample;
use rand::Rng as _;

use crate::error::{invalid_input, invalid_param, Error, Result};
use crate::kernel_gp::{sq_dist, Kernel, RowMajor, SqDistances, SquaredExponential};
use crate::rng::rng_from_seed;

/// Neighbor count and subset size for the kNN bandwidth floor `T_n`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    pub subset_size: usize,
    pub gamma2: f64,
}

/// Below this sample size `k = 2` and the subset is the whole sample.
pub const SMALL_SAMPLE: usize = 200;

impl KnnConfig {
    /// `k = ⌈γ₂ log²n⌉` and `|S| = ⌈(log n)³⌉`, with `k = 2`, `S = [n]` when `n < 200`.
    pub fn for_sample_size(n: usize, gamma2: f64) -> Result<Self> {
        if n == 0 {
            return invalid_input("empty sample");
        }
        if !(gamma2 > 0.0) {
            return invalid_param(format!("gamma2 must be positive, got {gamma2}"));
        }
        let cfg = if n < SMALL_SAMPLE {
            KnnConfig { k: 2.min(n), subset_size: n, gamma2 }
        } else {
            let ln = (n as f64).ln();
            let k = ((gamma2 * ln * ln).ceil() as usize).clamp(1, n);
            let subset_size = ((ln.powi(3)).ceil() as usize).clamp(1, n);
            KnnConfig { k, subset_size, gamma2 }
        };
        cfg.validate(n)?;
        Ok(cfg)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.k == 0 || self.k > n {
            return invalid_param(format!("k = {} outside [1, {n}]", self.k));
        }
        if self.subset_size == 0 || self.subset_size > n {
            return invalid_param(format!("subset size {} outside [1, {n}]", self.subset_size));
        }
        Ok(())
    }
}

fn sorted_distances_from(rows: &RowMajor, i: usize) -> Vec<f64> {
    let xi = rows.row(i);
    let mut d: Vec<(f64, usize)> = (0..rows.len()).map(|j| (sq_dist(rows.row(j), xi).sqrt(), j)).collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().map(|(r, _)| r).collect()
}

/// Distance from `X_i` to its k-th nearest sample, the point itself being the first.
pub fn knn_distance(x: MatRef<'_, f64>, i: usize, k: usize) -> Result<f64> {
    let n = x.nrows();
    if i >= n {
        return invalid_input(format!("index {i} out of range for {n} points"));
    }
    if k == 0 || k > n {
        return invalid_param(format!("k = {k} outside [1, {n}]"));
    }
    let rows = RowMajor::from_mat(x);
    Ok(sorted_distances_from(&rows, i)[k - 1])
}

/// `R̂_k(X_i)` for every `i` in `indices`.
pub fn knn_distances(x: MatRef<'_, f64>, indices: &[usize], k: usize) -> Result<Vec<f64>> {
    let n = x.nrows();
    if k == 0 || k > n {
        return invalid_param(format!("k = {k} outside [1, {n}]"));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
        return invalid_input(format!("index {bad} out of range for {n} points"));
    }
    let rows = RowMajor::from_mat(x);
    Ok(indices.iter().map(|&i| sorted_distances_from(&rows, i)[k - 1]).collect())
}

/// `T_n`: mean kNN radius over the index subset `s`.
pub fn tn_statistic(x: MatRef<'_, f64>, s: &[usize], k: usize) -> Result<f64> {
    if s.is_empty() {
        return invalid_input("empty index subset");
    }
    let radii = knn_distances(x, s, k)?;
    Ok(radii.iter().sum::<f64>() / s.len() as f64)
}

/// Seeded subset of `[n]` of the requested size, drawn without replacement and sorted.
pub fn select_subset(n: usize, size: usize, seed: u64) -> Result<Vec<usize>> {
    if size == 0 || size > n {
        return invalid_param(format!("subset size {size} outside [1, {n}]"));
    }
    if size == n {
        return Ok((0..n).collect());
    }
    let mut rng = rng_from_seed(seed);
    let mut idx = sample(&mut rng, n, size).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// `T_n` with the default `k`, `|S|` rule of [`KnnConfig::for_sample_size`].
pub fn default_tn(x: MatRef<'_, f64>, gamma2: f64, seed: u64) -> Result<(f64, KnnConfig)> {
    let cfg = KnnConfig::for_sample_size(x.nrows(), gamma2)?;
    let s = select_subset(x.nrows(), cfg.subset_size, seed)?;
    Ok((tn_statistic(x, &s, cfg.k)?, cfg))
}

/// Arithmetic or harmonic averaging of per-point kernel affinities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AffinityVariant {
    #[default]
    Arithmetic,
    Harmonic,
}

/// The statistic `t ↦ v̂_n(t)` over a fixed sample, with pairwise distances cached.
#[derive(Debug, Clone)]
pub struct AffinityStatistic {
    n: usize,
    pairs: Vec<(usize, usize, f64)>,
    variant: AffinityVariant,
}

impl AffinityStatistic {
    pub fn new(x: MatRef<'_, f64>, variant: AffinityVariant) -> Result<Self> {
        if x.nrows() < 2 {
            return invalid_input("affinity statistic needs at least two points");
        }
        Ok(Self::from_distances(&SqDistances::new(x)?, variant))
    }

    pub fn from_distances(d: &SqDistances, variant: AffinityVariant) -> Self {
        let n = d.n();
        let mut pairs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for j in 0..n {
            for i in (j + 1)..n {
                pairs.push((i, j, d.get(i, j)));
            }
        }
        AffinityStatistic { n, pairs, variant }
    }

    pub fn variant(&self) -> AffinityVariant {
        self.variant
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Per-point affinities `V̂_i(t) = (1/(n−1)) Σ_{j≠i} h_t(X_i, X_j)`.
    pub fn per_point(&self, t: f64) -> Vec<f64> {
        let k = SquaredExponential;
        let mut v = vec![0.0; self.n];
        for &(i, j, d) in &self.pairs {
            let h = k.eval_sq(d, t);
            v[i] += h;
            v[j] += h;
        }
        let denom = (self.n - 1) as f64;
        v.iter_mut().for_each(|x| *x /= denom);
        v
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self.variant {
            AffinityVariant::Arithmetic => {
                let k = SquaredExponential;
                let s: f64 = self.pairs.iter().map(|&(_, _, d)| k.eval_sq(d, t)).sum();
                s / self.pairs.len() as f64
            }
            AffinityVariant::Harmonic => {
                let v = self.per_point(t);
                let inv_mean = v.iter().map(|x| 1.0 / x).sum::<f64>() / self.n as f64;
                1.0 / inv_mean
            }
        }
    }

    pub fn curve(&self, grid: &[f64]) -> Result<AffinityCurve> {
        AffinityCurve::tabulate(self, grid)
    }
}

fn check_affinity_args(n: usize, t: f64) -> Result<()> {
    if n < 2 {
        return invalid_input("affinity statistic needs at least two points");
    }
    if !(t > 0.0) {
        return invalid_param(format!("bandwidth must be positive, got {t}"));
    }
    Ok(())
}

/// `v̂_n(t)`: mean off-diagonal kernel affinity.
pub fn kernel_affinity_stat(x: MatRef<'_, f64>, t: f64) -> Result<f64> {
    check_affinity_args(x.nrows(), t)?;
    Ok(AffinityStatistic::new(x, AffinityVariant::Arithmetic)?.eval(t))
}

/// Harmonic mean of the per-point affinities `V̂_i(t)`.
pub fn harmonic_affinity_stat(x: MatRef<'_, f64>, t: f64) -> Result<f64> {
    check_affinity_args(x.nrows(), t)?;
    Ok(AffinityStatistic::new(x, AffinityVariant::Harmonic)?.eval(t))
}

/// `v̂_n` tabulated on an ascending bandwidth grid.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AffinityCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl AffinityCurve {
    pub fn tabulate(stat: &AffinityStatistic, grid: &[f64]) -> Result<Self> {
        if grid.is_empty() || grid[0] <= 0.0 || grid.windows(2).any(|w| w[1] <= w[0]) {
            return invalid_input("bandwidth grid must be positive and strictly ascending");
        }
        Ok(AffinityCurve { grid: grid.to_vec(), values: grid.iter().map(|&t| stat.eval(t)).collect() })
    }
}

/// Neighbor count `⌈√n⌉` used by [`estimate_dimension`].
pub fn dimension_k(n: usize) -> usize {
    (n as f64).sqrt().ceil() as usize
}

/// Result of the two-radius dimension estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimensionEstimate {
    pub dimension: usize,
    pub raw_ratio: f64,
    pub anchor: usize,
}

/// Integer dimension from `log 2 / (log R̂_k − log R̂_{⌈k/2⌉})` at a seeded random anchor.
///
/// The ratio is clamped to `[1, D]` before rounding.
pub fn estimate_dimension(x: MatRef<'_, f64>, k: usize, seed: u64) -> Result<usize> {
    estimate_dimension_detailed(x, k, seed).map(|e| e.dimension)
}

pub fn estimate_dimension_detailed(x: MatRef<'_, f64>, k: usize, seed: u64) -> Result<DimensionEstimate> {
    let n = x.nrows();
    if n < 4 {
        return invalid_input(format!("dimension estimate needs n >= 4, got {n}"));
    }
    if k < 2 || k > n {
        return invalid_param(format!("k = {k} outside [2, {n}]"));
    }
    let mut rng = rng_from_seed(seed);
    let anchor = rng.gen_range(0..n);
    let rows = RowMajor::from_mat(x);
    let d = sorted_distances_from(&rows, anchor);
    let r_full = d[k - 1];
    let r_half = d[k.div_ceil(2) - 1];
    if r_full == r_half {
        return Err(Error::DegenerateRatio);
    }
    let raw_ratio = std::f64::consts::LN_2 / (r_full.ln() - r_half.ln());
    let ambient = x.ncols().max(1) as f64;
    let dimension = raw_ratio.clamp(1.0, ambient).round() as usize;
    Ok(DimensionEstimate { dimension, raw_ratio, anchor })
}

/// Box counts and fitted slope of `log N(r)` against `log(1/r)`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BoxCounting {
    pub slope: f64,
    pub radii: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Counts occupied ∞-norm boxes of side `2r` at each radius.
///
/// Points on the upper face of the unit cube join the last box of the cover.
pub fn box_counting_dimension(x: MatRef<'_, f64>, radii: &[f64]) -> Result<BoxCounting> {
    if radii.len() < 3 {
        return invalid_input("box counting needs at least three radii");
    }
    if radii.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
        return invalid_input("radii must lie in (0, 1)");
    }
    if radii.windows(2).any(|w| w[1] >= w[0]) {
        return invalid_input("radii must be strictly descending");
    }
    if x.nrows() == 0 {
        return invalid_input("empty predictor matrix");
    }
    let rows = RowMajor::from_mat(x);
    let counts: Vec<usize> = radii
        .iter()
        .map(|&r| {
            let side = 2.0 * r;
            let last = ((1.0 / side).ceil() as i64 - 1).max(0);
            let boxes: HashSet<Vec<i64>> = (0..rows.len())
                .map(|i| {
                    rows.row(i)
                        .iter()
                        .map(|&c| {
                            let b = (c / side).floor() as i64;
                            if (0.0..=1.0).contains(&c) {
                                b.min(last)
                            } else {
                                b
                            }
                        })
                        .collect()
                })
                .collect();
            boxes.len()
        })
        .collect();
    let xs: Vec<f64> = radii.iter().map(|r| (1.0 / r).ln()).collect();
    let ys: Vec<f64> = counts.iter().map(|&c| (c as f64).ln()).collect();
    Ok(BoxCounting { slope: ols_slope(&xs, &ys), radii: radii.to_vec(), counts })
}

pub(crate) fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Volume of the unit `d`-ball, `π^{d/2} / Γ(d/2 + 1)`.
pub fn unit_ball_volume(d: usize) -> f64 {
    // Γ(d/2+1) via the recurrence from Γ(1) = 1 and Γ(3/2) = √π/2.
    let mut gamma = if d % 2 == 0 { 1.0 } else { std::f64::consts::PI.sqrt() / 2.0 };
    let mut arg = if d % 2 == 0 { 1.0 } else { 1.5 };
    let target = d as f64 / 2.0 + 1.0;
    while arg < target - 1e-9 {
        gamma *= arg;
        arg += 1.0;
    }
    std::f64::consts::PI.powf(d as f64 / 2.0) / gamma
}
