//! Squared-exponential kernel, Gram matrices and closed-form GP posterior quantities.
//!
//! All solves go through a lower Cholesky factor of `K_t + σ²I`. When the
//! factorization fails, diagonal jitter is escalated through [`JITTER_LEVELS`]
//! before giving up with [`Error::NumericalFailure`].

use faer::linalg::solvers::{Llt, Solve};
use faer::{Mat, MatRef, Side};

use crate::error::{invalid_input, invalid_param, Error, Result};

/// Diagonal jitter tried, in order, after a failed factorization.
pub const JITTER_LEVELS: [f64; 3] = [1e-12, 1e-10, 1e-8];

/// Radial profile `h` of a kernel `h_t(x, y) = h(‖x − y‖² / t)`.
pub trait Kernel: Send + Sync {
    fn profile(&self, r: f64) -> f64;

    fn eval_sq(&self, sq_dist: f64, t: f64) -> f64 {
        self.profile(sq_dist / t)
    }
}

/// `h(r) = exp(−r/2)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SquaredExponential;

impl Kernel for SquaredExponential {
    #[inline]
    fn profile(&self, r: f64) -> f64 {
        (-0.5 * r).exp()
    }
}

/// Bandwidth `t` and noise variance `σ²` of the GP model.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KernelParams {
    pub bandwidth: f64,
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn new(bandwidth: f64, noise_variance: f64) -> Result<Self> {
        let p = KernelParams { bandwidth, noise_variance };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return invalid_param(format!("bandwidth must be positive, got {}", self.bandwidth));
        }
        if !(self.noise_variance > 0.0 && self.noise_variance.is_finite()) {
            return invalid_param(format!("noise variance must be positive, got {}", self.noise_variance));
        }
        Ok(())
    }
}

#[inline]
pub fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `exp(−‖x−y‖²/(2t))`.
pub fn kernel_eval(x: &[f64], y: &[f64], t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return invalid_param(format!("bandwidth must be positive, got {t}"));
    }
    if x.len() != y.len() {
        return invalid_input(format!("point dimensions differ: {} vs {}", x.len(), y.len()));
    }
    Ok(SquaredExponential.eval_sq(sq_dist(x, y), t))
}

/// Row-major copy of an `n × D` matrix, one contiguous slice per point.
#[derive(Debug, Clone)]
pub struct RowMajor {
    data: Vec<f64>,
    dim: usize,
}

impl RowMajor {
    pub fn from_mat(x: MatRef<'_, f64>) -> Self {
        let (n, dim) = (x.nrows(), x.ncols());
        let mut data = Vec::with_capacity(n * dim);
        for i in 0..n {
            for j in 0..dim {
                data.push(x[(i, j)]);
            }
        }
        RowMajor { data, dim }
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Dense matrix of pairwise squared Euclidean distances.
///
/// Kernel matrices at any bandwidth are elementwise functions of this matrix,
/// so samplers compute it once per dataset.
#[derive(Debug, Clone)]
pub struct SqDistances {
    sq: Mat<f64>,
}

impl SqDistances {
    pub fn new(x: MatRef<'_, f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return invalid_input("empty predictor matrix");
        }
        let rows = RowMajor::from_mat(x);
        let n = rows.len();
        let mut sq = Mat::<f64>::zeros(n, n);
        for j in 0..n {
            for i in (j + 1)..n {
                let d = sq_dist(rows.row(i), rows.row(j));
                sq[(i, j)] = d;
                sq[(j, i)] = d;
            }
        }
        Ok(SqDistances { sq })
    }

    pub fn n(&self) -> usize {
        self.sq.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.sq[(i, j)]
    }

    pub fn as_mat(&self) -> MatRef<'_, f64> {
        self.sq.as_ref()
    }

    /// Squared distances of the strict upper triangle, `n(n−1)/2` values.
    pub fn condensed(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for j in 0..n {
            for i in (j + 1)..n {
                out.push(self.sq[(i, j)]);
            }
        }
        out
    }

    /// `K_t`, entrywise `h(d²/t)`.
    pub fn gram(&self, t: f64) -> Mat<f64> {
        let n = self.n();
        let k = SquaredExponential;
        let mut g = Mat::<f64>::zeros(n, n);
        for j in 0..n {
            g[(j, j)] = 1.0;
            for i in (j + 1)..n {
                let v = k.eval_sq(self.sq[(i, j)], t);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }
}

/// `n × n` Gram matrix `K_t` of the squared-exponential kernel.
pub fn gram_matrix(x: MatRef<'_, f64>, t: f64) -> Result<Mat<f64>> {
    gram_matrix_with(&SquaredExponential, x, t)
}

pub fn gram_matrix_with<K: Kernel>(kernel: &K, x: MatRef<'_, f64>, t: f64) -> Result<Mat<f64>> {
    if !(t > 0.0) {
        return invalid_param(format!("bandwidth must be positive, got {t}"));
    }
    if x.nrows() == 0 {
        return invalid_input("empty predictor matrix");
    }
    let rows = RowMajor::from_mat(x);
    let n = rows.len();
    let mut g = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        g[(j, j)] = kernel.profile(0.0);
        for i in (j + 1)..n {
            let v = kernel.eval_sq(sq_dist(rows.row(i), rows.row(j)), t);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

/// Cholesky factor of `gram + noise·I` with jitter escalation.
///
/// Returns the factor and the jitter that was actually added (0 on first success).
pub fn factor_with_jitter(gram: MatRef<'_, f64>, noise: f64) -> Result<(Llt<f64>, f64)> {
    let n = gram.nrows();
    let mut a = gram.to_owned();
    for i in 0..n {
        a[(i, i)] += noise;
    }
    if let Ok(llt) = a.llt(Side::Lower) {
        if factor_is_finite(&llt) {
            return Ok((llt, 0.0));
        }
    }
    let mut added = 0.0;
    for &jitter in &JITTER_LEVELS {
        for i in 0..n {
            a[(i, i)] += jitter - added;
        }
        added = jitter;
        if let Ok(llt) = a.llt(Side::Lower) {
            if factor_is_finite(&llt) {
                return Ok((llt, jitter));
            }
        }
    }
    Err(Error::NumericalFailure { jitters: JITTER_LEVELS.to_vec() })
}

fn factor_is_finite(llt: &Llt<f64>) -> bool {
    let l = llt.L();
    (0..l.nrows()).all(|i| {
        let d = l[(i, i)];
        d.is_finite() && d > 0.0
    })
}

fn column(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

/// Log-likelihood pieces from a factor: `(Yᵀ A⁻¹ Y, log|A|)`.
fn quad_and_logdet(llt: &Llt<f64>, y: &[f64]) -> (f64, f64) {
    let l = llt.L();
    let mut z = column(y);
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, z.as_mut(), faer::Par::Seq);
    let quad: f64 = (0..y.len()).map(|i| z[(i, 0)] * z[(i, 0)]).sum();
    let logdet: f64 = 2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
    (quad, logdet)
}

fn assemble_loglik(n: usize, quad: f64, logdet: f64) -> f64 {
    -0.5 * quad - 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
}

fn check_targets(n: usize, y: &[f64]) -> Result<()> {
    if n == 0 {
        return invalid_input("empty predictor matrix");
    }
    if y.len() != n {
        return invalid_input(format!("{} rows but {} targets", n, y.len()));
    }
    Ok(())
}

/// `−½ Yᵀ(K_t+σ²I)⁻¹Y − ½ log|K_t+σ²I| − (n/2) log 2π`.
pub fn marginal_log_likelihood(x: MatRef<'_, f64>, y: &[f64], params: KernelParams) -> Result<f64> {
    params.validate()?;
    check_targets(x.nrows(), y)?;
    let gram = gram_matrix(x, params.bandwidth)?;
    log_likelihood_from_gram(gram.as_ref(), y, params.noise_variance)
}

/// Same as [`marginal_log_likelihood`] for a precomputed Gram matrix.
pub fn log_likelihood_from_gram(gram: MatRef<'_, f64>, y: &[f64], noise: f64) -> Result<f64> {
    check_targets(gram.nrows(), y)?;
    let (llt, _) = factor_with_jitter(gram, noise)?;
    let (quad, logdet) = quad_and_logdet(&llt, y);
    Ok(assemble_loglik(y.len(), quad, logdet))
}

/// Factorized GP at a fixed bandwidth.
///
/// Immutable after construction; `alpha` solves `(K_t + σ²I)·alpha = Y`.
#[derive(Debug)]
pub struct GPFit {
    train_inputs: RowMajor,
    train_targets: Vec<f64>,
    params: KernelParams,
    gram: Mat<f64>,
    factor: Llt<f64>,
    jitter: f64,
    alpha: Vec<f64>,
    log_likelihood: f64,
}

impl GPFit {
    pub fn new(x: MatRef<'_, f64>, y: &[f64], params: KernelParams) -> Result<Self> {
        params.validate()?;
        check_targets(x.nrows(), y)?;
        let gram = gram_matrix(x, params.bandwidth)?;
        Self::from_parts(RowMajor::from_mat(x), y, params, gram)
    }

    /// Builds the fit from cached pairwise distances of `x`.
    pub fn with_distances(x: MatRef<'_, f64>, dists: &SqDistances, y: &[f64], params: KernelParams) -> Result<Self> {
        params.validate()?;
        check_targets(x.nrows(), y)?;
        if dists.n() != x.nrows() {
            return invalid_input("distance cache does not match the predictor matrix");
        }
        let gram = dists.gram(params.bandwidth);
        Self::from_parts(RowMajor::from_mat(x), y, params, gram)
    }

    fn from_parts(train_inputs: RowMajor, y: &[f64], params: KernelParams, gram: Mat<f64>) -> Result<Self> {
        let (factor, jitter) = factor_with_jitter(gram.as_ref(), params.noise_variance)?;
        let (quad, logdet) = quad_and_logdet(&factor, y);
        let sol = factor.solve(column(y));
        let alpha = (0..y.len()).map(|i| sol[(i, 0)]).collect();
        Ok(GPFit {
            train_inputs,
            train_targets: y.to_vec(),
            params,
            gram,
            factor,
            jitter,
            alpha,
            log_likelihood: assemble_loglik(y.len(), quad, logdet),
        })
    }

    pub fn params(&self) -> KernelParams {
        self.params
    }

    pub fn n(&self) -> usize {
        self.train_targets.len()
    }

    pub fn dim(&self) -> usize {
        self.train_inputs.dim()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn train_targets(&self) -> &[f64] {
        &self.train_targets
    }

    /// Jitter added on top of `σ²` to obtain a valid factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Lower-triangular factor of `K_t + (σ² + jitter)I`.
    pub fn factor(&self) -> MatRef<'_, f64> {
        self.factor.L()
    }

    pub fn gram(&self) -> MatRef<'_, f64> {
        self.gram.as_ref()
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// Solves `(K_t + σ²I) z = rhs` with the stored factor.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.n() {
            return invalid_input("right-hand side length does not match the fit");
        }
        let sol = self.factor.solve(column(rhs));
        Ok((0..rhs.len()).map(|i| sol[(i, 0)]).collect())
    }

    /// Posterior mean at the training inputs, `K_t·alpha`.
    pub fn in_sample_mean(&self) -> Vec<f64> {
        let noise = self.params.noise_variance + self.jitter;
        self.train_targets.iter().zip(&self.alpha).map(|(y, a)| y - noise * a).collect()
    }

    pub fn predict(&self, x_test: MatRef<'_, f64>) -> Result<Vec<f64>> {
        posterior_predict(self, x_test)
    }
}

/// `h_t(X, x*)ᵀ·alpha` for every test row.
pub fn posterior_predict(fit: &GPFit, x_test: MatRef<'_, f64>) -> Result<Vec<f64>> {
    if x_test.nrows() == 0 {
        return invalid_input("empty test matrix");
    }
    if x_test.ncols() != fit.dim() {
        return invalid_input(format!("test points have dimension {}, fit has {}", x_test.ncols(), fit.dim()));
    }
    let test = RowMajor::from_mat(x_test);
    let kernel = SquaredExponential;
    let t = fit.params.bandwidth;
    let out = (0..test.len())
        .map(|j| {
            let xs = test.row(j);
            (0..fit.n())
                .map(|i| kernel.eval_sq(sq_dist(fit.train_inputs.row(i), xs), t) * fit.alpha[i])
                .sum()
        })
        .collect();
    Ok(out)
}

/// `(μ̂_t, Σ̂_t)` with `μ̂_t = K_t(K_t+σ²I)⁻¹Y` and `Σ̂_t = K_t − K_t(K_t+σ²I)⁻¹K_t`.
pub fn posterior_node_moments(fit: &GPFit) -> (Vec<f64>, Mat<f64>) {
    let n = fit.n();
    let k = fit.gram.as_ref();
    let mean = (0..n).map(|i| (0..n).map(|j| k[(i, j)] * fit.alpha[j]).sum()).collect();
    let solved = fit.factor.solve(k);
    let mut cov = k.to_owned() - k * &solved;
    // restore exact symmetry lost to rounding
    for j in 0..n {
        for i in (j + 1)..n {
            let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = s;
            cov[(j, i)] = s;
        }
    }
    (mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Mat<f64> {
        Mat::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    }

    #[test]
    fn kernel_values() {
        assert_eq!(kernel_eval(&[0.3, 0.1], &[0.3, 0.1], 0.7).unwrap(), 1.0);
        let v = kernel_eval(&[0.0, 0.0], &[1.0, 1.0], 1.0).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        let v = kernel_eval(&[0.0], &[1.0], 0.5).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!(matches!(kernel_eval(&[0.0], &[1.0], 0.0), Err(Error::InvalidParameter(_))));
        assert!(matches!(kernel_eval(&[0.0], &[1.0], -1.0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn gram_small_cases() {
        let g = gram_matrix(mat(&[&[0.2, 0.4]]).as_ref(), 0.3).unwrap();
        assert_eq!((g.nrows(), g[(0, 0)]), (1, 1.0));

        let g = gram_matrix(mat(&[&[0.5], &[0.5]]).as_ref(), 0.1).unwrap();
        assert!((0..2).all(|i| (0..2).all(|j| g[(i, j)] == 1.0)));

        let g = gram_matrix(mat(&[&[0.0], &[1.0], &[3.0]]).as_ref(), 1.0).unwrap();
        assert!((g[(0, 1)] - (-0.5f64).exp()).abs() < 1e-15);
        assert!((g[(1, 2)] - (-2.0f64).exp()).abs() < 1e-15);
        assert!((g[(0, 2)] - (-4.5f64).exp()).abs() < 1e-15);

        assert!(matches!(gram_matrix(Mat::<f64>::zeros(0, 2).as_ref(), 1.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn scalar_log_likelihood() {
        let x = mat(&[&[0.4]]);
        let y = 1.7;
        let ll = marginal_log_likelihood(x.as_ref(), &[y], KernelParams::new(0.2, 1.0).unwrap()).unwrap();
        let expected = -y * y / 4.0 - 0.5 * 2f64.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((ll - expected).abs() < 1e-14);

        let s2 = 0.37;
        let ll = marginal_log_likelihood(x.as_ref(), &[0.0], KernelParams::new(5.0, s2).unwrap()).unwrap();
        let expected = -0.5 * (1.0 + s2).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((ll - expected).abs() < 1e-14);
    }

    #[test]
    fn scalar_prediction_and_moments() {
        let x = mat(&[&[0.25, 0.75]]);
        let s2 = 0.5;
        let fit = GPFit::new(x.as_ref(), &[2.0], KernelParams::new(0.1, s2).unwrap()).unwrap();
        let p = fit.predict(x.as_ref()).unwrap();
        assert!((p[0] - 2.0 / (1.0 + s2)).abs() < 1e-14);

        let (mu, cov) = posterior_node_moments(&fit);
        assert!((mu[0] - 2.0 / (1.0 + s2)).abs() < 1e-14);
        assert!((cov[(0, 0)] - s2 / (1.0 + s2)).abs() < 1e-14);

        let far = mat(&[&[1e6, -1e6]]);
        assert_eq!(fit.predict(far.as_ref()).unwrap()[0], 0.0);
        let wrong = mat(&[&[0.0, 0.0, 0.0]]);
        assert!(matches!(fit.predict(wrong.as_ref()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn zero_targets_give_zero_mean() {
        let x = mat(&[&[0.1], &[0.2], &[0.9]]);
        let fit = GPFit::new(x.as_ref(), &[0.0; 3], KernelParams::new(0.05, 0.01).unwrap()).unwrap();
        assert!(posterior_node_moments(&fit).0.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn jitter_rescues_duplicates_with_tiny_noise() {
        let x = mat(&[&[0.5], &[0.5], &[0.5]]);
        let fit = GPFit::new(x.as_ref(), &[1.0, 1.0, 1.0], KernelParams::new(1.0, 1e-300).unwrap()).unwrap();
        assert!(fit.jitter() > 0.0);
        assert!(fit.jitter() <= 1e-8);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(KernelParams::new(0.0, 1.0).is_err());
        assert!(KernelParams::new(1.0, 0.0).is_err());
        assert!(KernelParams::new(f64::NAN, 1.0).is_err());
    }
}
