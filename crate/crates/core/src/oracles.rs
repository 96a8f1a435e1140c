//! Quadrature oracles on parametrized curves: the on-manifold smoothing
//! operator `G_ε`, the kernel bilinear form, and concentration bands for the
//! affinity statistic and kNN radii.

use std::f64::consts::PI;
use std::sync::Arc;

use faer::MatRef;
use rayon::prelude::*;

use crate::error::{invalid_param, Result};
use crate::kernel_gp::sq_dist;
use crate::manifold_stats::{knn_distances, unit_ball_volume, AffinityStatistic, AffinityVariant, SMALL_SAMPLE};

type CurveFn = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;
type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A one-parameter manifold `u ↦ φ(u)`, `u ∈ [a, b]`, with arc-length speed `|φ'(u)|`.
#[derive(Clone)]
pub struct ParamManifold {
    pub domain: (f64, f64),
    /// Closed curves identify `a` with `b`.
    pub periodic: bool,
    embed: CurveFn,
    speed: ScalarFn,
    /// Upper bound of the speed, used to convert arc-length spacing into nodes.
    max_speed: f64,
    /// Density of the sampling law with respect to arc length.
    pub density: f64,
}

impl std::fmt::Debug for ParamManifold {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamManifold")
            .field("domain", &self.domain)
            .field("periodic", &self.periodic)
            .field("max_speed", &self.max_speed)
            .field("density", &self.density)
            .finish()
    }
}

/// Trapezoid nodes per `√ε` of arc length.
pub const NODES_PER_SCALE: f64 = 10.0;

impl ParamManifold {
    /// Circle of radius `r` centred at the origin of `R²`, parametrized by angle.
    pub fn circle(radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return invalid_param(format!("radius must be positive, got {radius}"));
        }
        Ok(ParamManifold {
            domain: (0.0, 2.0 * PI),
            periodic: true,
            embed: Arc::new(move |u| vec![radius * u.cos(), radius * u.sin()]),
            speed: Arc::new(move |_| radius),
            max_speed: radius,
            density: 1.0 / (2.0 * PI * radius),
        })
    }

    /// Segment `[0, L]` on the real line.
    pub fn segment(length: f64) -> Result<Self> {
        if !(length > 0.0) {
            return invalid_param(format!("length must be positive, got {length}"));
        }
        Ok(ParamManifold {
            domain: (0.0, length),
            periodic: false,
            embed: Arc::new(|u| vec![u]),
            speed: Arc::new(|_| 1.0),
            max_speed: 1.0,
            density: 1.0 / length,
        })
    }

    /// Generic curve; `max_speed` must bound `speed` on the domain.
    pub fn curve(
        domain: (f64, f64),
        periodic: bool,
        embed: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static,
        speed: impl Fn(f64) -> f64 + Send + Sync + 'static,
        max_speed: f64,
        density: f64,
    ) -> Result<Self> {
        if !(domain.1 > domain.0) || !(max_speed > 0.0) || !(density > 0.0) {
            return invalid_param("curve needs a nonempty domain, positive max_speed and density");
        }
        Ok(ParamManifold { domain, periodic, embed: Arc::new(embed), speed: Arc::new(speed), max_speed, density })
    }

    pub fn intrinsic_dim(&self) -> usize {
        1
    }

    pub fn point(&self, u: f64) -> Vec<f64> {
        (self.embed)(u)
    }

    /// Node count giving arc-length spacing at most `√ε / 10`.
    pub fn required_nodes(&self, eps: f64) -> usize {
        let span = (self.domain.1 - self.domain.0) * self.max_speed;
        ((span * NODES_PER_SCALE / eps.sqrt()).ceil() as usize).max(2)
    }

    /// Composite trapezoid nodes and volume weights `w_i = h·|φ'(u_i)|` (halved at open ends).
    pub fn quadrature(&self, nodes: usize) -> (Vec<f64>, Vec<f64>) {
        let (a, b) = self.domain;
        if self.periodic {
            let h = (b - a) / nodes as f64;
            let u: Vec<f64> = (0..nodes).map(|i| a + h * i as f64).collect();
            let w = u.iter().map(|&x| h * (self.speed)(x)).collect();
            (u, w)
        } else {
            let m = nodes.max(2);
            let h = (b - a) / (m - 1) as f64;
            let u: Vec<f64> = (0..m).map(|i| if i == m - 1 { b } else { a + h * i as f64 }).collect();
            let w = u
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let end = i == 0 || i == m - 1;
                    h * (self.speed)(x) * if end { 0.5 } else { 1.0 }
                })
                .collect();
            (u, w)
        }
    }

    /// Total arc length by quadrature.
    pub fn volume(&self, nodes: usize) -> f64 {
        self.quadrature(nodes).1.iter().sum()
    }
}

/// Quadrature resolution: the minimal admissible count, or an explicit one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Resolution {
    #[default]
    Auto,
    Nodes(usize),
}

fn resolve(m: &ParamManifold, eps: f64, res: Resolution) -> Result<usize> {
    if !(eps > 0.0 && eps.is_finite()) {
        return invalid_param(format!("epsilon must be positive, got {eps}"));
    }
    let need = m.required_nodes(eps);
    match res {
        Resolution::Auto => Ok(need),
        Resolution::Nodes(k) if k >= need => Ok(k),
        Resolution::Nodes(k) => invalid_param(format!("{k} quadrature nodes are too coarse for epsilon = {eps}; need at least {need}")),
    }
}

/// `G_ε(f)(φ(u₀)) = (2πε)^{−d/2} ∫ exp(−‖φ(u₀) − φ(u)‖²/(2ε)) f(u) dV(u)`.
pub fn g_epsilon_apply(m: &ParamManifold, f: &dyn Fn(f64) -> f64, u0: f64, eps: f64, res: Resolution) -> Result<f64> {
    let nodes = resolve(m, eps, res)?;
    let (u, w) = m.quadrature(nodes);
    let x = m.point(u0);
    let s: f64 = u.iter().zip(&w).map(|(&ui, &wi)| wi * (-sq_dist(&x, &m.point(ui)) / (2.0 * eps)).exp() * f(ui)).sum();
    Ok(s * (2.0 * PI * eps).powf(-(m.intrinsic_dim() as f64) / 2.0))
}

/// `∫∫ exp(−‖φ(u) − φ(v)‖²/(2ε)) g(u) g(v) dV(u) dV(v)`.
pub fn rkhs_norm_squared(m: &ParamManifold, g: &dyn Fn(f64) -> f64, eps: f64, res: Resolution) -> Result<f64> {
    let nodes = resolve(m, eps, res)?;
    let (u, w) = m.quadrature(nodes);
    let pts: Vec<Vec<f64>> = u.iter().map(|&x| m.point(x)).collect();
    let gw: Vec<f64> = u.iter().zip(&w).map(|(&x, &wi)| g(x) * wi).collect();
    let rows: Vec<f64> = (0..pts.len())
        .into_par_iter()
        .map(|i| {
            if gw[i] == 0.0 {
                return 0.0;
            }
            let inner: f64 = (0..pts.len()).map(|j| gw[j] * (-sq_dist(&pts[i], &pts[j]) / (2.0 * eps)).exp()).sum();
            gw[i] * inner
        })
        .collect();
    Ok(rows.iter().sum::<f64>().max(0.0))
}

/// Upper end `t₀` of the affinity-band range.
pub const DEFAULT_T0: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AffinityBandRow {
    pub t: f64,
    pub v_hat: f64,
    /// `v̂_n(t) / t^{d/2}`.
    pub ratio: f64,
    pub lower: f64,
    pub upper: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AffinityBandReport {
    pub range: (f64, f64),
    pub rows: Vec<AffinityBandRow>,
}

impl AffinityBandReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// `¼(2π)^{d/2} p ≤ v̂_n(t)/t^{d/2} ≤ 7/4 (2π)^{d/2} p` on each grid bandwidth.
///
/// The grid must lie in `[n^{−2/d}(log n)^{3/d}, t₀]`.
pub fn affinity_band_check(x: MatRef<'_, f64>, p: f64, d: usize, t_grid: &[f64], t0: f64) -> Result<AffinityBandReport> {
    if !(p > 0.0) || d == 0 || t_grid.is_empty() {
        return invalid_param("affinity band check needs p > 0, d >= 1 and a nonempty grid");
    }
    let n = x.nrows() as f64;
    let df = d as f64;
    let t_lo = n.powf(-2.0 / df) * n.ln().powf(3.0 / df);
    if let Some(&t) = t_grid.iter().find(|&&t| !(t >= t_lo && t <= t0)) {
        return invalid_param(format!("bandwidth {t} outside the admissible range [{t_lo:.3e}, {t0}]"));
    }
    let stat = AffinityStatistic::new(x, AffinityVariant::Arithmetic)?;
    let scale = (2.0 * PI).powf(df / 2.0) * p;
    let rows = t_grid
        .iter()
        .map(|&t| {
            let v_hat = stat.eval(t);
            let ratio = v_hat / t.powf(df / 2.0);
            let (lower, upper) = (0.25 * scale, 1.75 * scale);
            AffinityBandRow { t, v_hat, ratio, lower, upper, pass: ratio >= lower && ratio <= upper }
        })
        .collect();
    Ok(AffinityBandReport { range: (t_lo, t0), rows })
}

pub const KNN_BAND: (f64, f64) = (0.9, 1.2);

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct KnnBandReport {
    pub k: usize,
    /// `(γ₂/(p ν_d))^{1/d} (log²n / n)^{1/d}`.
    pub base: f64,
    pub radii: Vec<f64>,
    pub point_pass: Vec<bool>,
    pub pass_fraction: f64,
    /// `n` is below the regime where the band is expected to hold.
    pub small_n: bool,
}

/// Per-point check `R̂_k(X_i) ∈ [0.9, 1.2]·base` with `k = ⌈γ₂ log²n⌉`.
pub fn knn_band_check(x: MatRef<'_, f64>, p: f64, d: usize, gamma2: f64) -> Result<KnnBandReport> {
    if !(p > 0.0 && gamma2 > 0.0) || d == 0 {
        return invalid_param("knn band check needs p > 0, gamma2 > 0 and d >= 1");
    }
    let n = x.nrows();
    let ln = (n as f64).ln();
    let k = ((gamma2 * ln * ln).ceil() as usize).clamp(1, n.saturating_sub(1).max(1));
    let df = d as f64;
    let base = (gamma2 / (p * unit_ball_volume(d))).powf(1.0 / df) * (ln * ln / n as f64).powf(1.0 / df);
    let all: Vec<usize> = (0..n).collect();
    let radii = knn_distances(x, &all, k)?;
    let point_pass: Vec<bool> = radii.iter().map(|&r| r >= KNN_BAND.0 * base && r <= KNN_BAND.1 * base).collect();
    let pass_fraction = point_pass.iter().filter(|&&b| b).count() as f64 / n as f64;
    Ok(KnnBandReport { k, base, radii, point_pass, pass_fraction, small_n: n < SMALL_SAMPLE })
}
