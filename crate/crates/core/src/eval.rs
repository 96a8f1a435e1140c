//! Error metrics, the repeated-run benchmark and log-log rate fitting.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use faer::Mat;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::datagen::{add_noise, gen_circle, gen_mixed_union, gen_swiss_roll, load_image_manifold, CircleSpec, Dataset, ResponseSpec};
use crate::error::{invalid_input, invalid_param, Error, Result};
use crate::estimators::{fit_predict, EstimatorConfig, Method};
use crate::rng::{derive_seed, label_hash, rng_from_seed};

/// Median; the mean of the central pair for even lengths, `NaN` when empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// `√((1/n) Σ (f̂_i − f*_i)²)`.
pub fn error_n(f_hat: &[f64], f_star: &[f64]) -> Result<f64> {
    if f_hat.len() != f_star.len() {
        return invalid_input(format!("length mismatch: {} vs {}", f_hat.len(), f_star.len()));
    }
    if f_hat.is_empty() {
        return invalid_input("error of an empty vector");
    }
    let ss: f64 = f_hat.iter().zip(f_star).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / f_hat.len() as f64).sqrt())
}

/// Test-set estimate of `‖f̂ − f*‖₂`; same formula as [`error_n`].
pub fn error_2_empirical(f_hat: &[f64], f_star: &[f64]) -> Result<f64> {
    error_n(f_hat, f_star)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
}

/// OLS of `ln error` on `ln n`.
pub fn fit_rate_slope(ns: &[f64], errors: &[f64]) -> Result<RateFit> {
    if ns.len() != errors.len() {
        return invalid_input("n values and errors differ in length");
    }
    if ns.len() < 3 {
        return invalid_input("rate fit needs at least three points");
    }
    if errors.iter().any(|&e| !(e > 0.0)) || ns.iter().any(|&n| !(n > 0.0)) {
        return invalid_input("rate fit needs positive n values and errors");
    }
    let lx: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return invalid_input("rate fit needs at least two distinct n values");
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let stderr = (ssr / (m - 2.0) / sxx).sqrt();
    Ok(RateFit { slope, intercept, stderr })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Generator {
    SwissRoll,
    MixedUnion,
    Circle(CircleSpec),
    /// Random train/test partitions of an image directory, noise redrawn per repeat.
    ImageDir { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub generator: Generator,
    pub methods: Vec<Method>,
    pub n_list: Vec<usize>,
    pub repeats: usize,
    pub n_test: usize,
    pub sigma: f64,
    pub master_seed: u64,
    /// Shared settings; `method` and seeds are overwritten per cell.
    pub estimator: EstimatorConfig,
    /// Wall times make reports differ between runs.
    pub record_wall_time: bool,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            generator: Generator::SwissRoll,
            methods: vec![Method::EbGp],
            n_list: vec![100],
            repeats: 1,
            n_test: 1000,
            sigma: crate::datagen::DEFAULT_SIGMA,
            master_seed: 0,
            estimator: EstimatorConfig::default(),
            record_wall_time: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BenchmarkRow {
    pub method: Method,
    pub n: usize,
    pub seed: u64,
    pub in_sample_error: Option<f64>,
    pub out_sample_error: Option<f64>,
    pub wall_time: Option<f64>,
    pub chain_acceptance: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation over runs.
    pub std: f64,
    /// `std / √count`.
    pub std_error: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let c = values.len() as f64;
        let mean = values.iter().sum::<f64>() / c;
        let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (c - 1.0) } else { 0.0 };
        Some(Summary { count: values.len(), mean, std: var.sqrt(), std_error: (var / c).sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Aggregate {
    pub method: Method,
    pub n: usize,
    pub in_sample: Option<Summary>,
    pub out_sample: Option<Summary>,
    pub mean_acceptance: Option<f64>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SlopeFit {
    pub method: Method,
    /// `out-sample`, or `in-sample` for methods without test predictions.
    pub metric: String,
    pub fit: RateFit,
    /// 95% Student-t half-width of the slope.
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BenchmarkReport {
    pub schema: u32,
    pub scenario: Scenario,
    pub rows: Vec<BenchmarkRow>,
    pub aggregates: Vec<Aggregate>,
    pub slopes: Vec<SlopeFit>,
}

pub const REPORT_SCHEMA: u32 = 1;
pub const REPORT_CSV_COLUMNS: [&str; 8] =
    ["method", "n", "seed", "in_sample_error", "out_sample_error", "wall_time", "chain_acceptance", "failure"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl BenchmarkReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(REPORT_CSV_COLUMNS)?;
        for r in &self.rows {
            w.write_record([
                r.method.as_str().to_string(),
                r.n.to_string(),
                r.seed.to_string(),
                opt(r.in_sample_error),
                opt(r.out_sample_error),
                opt(r.wall_time),
                opt(r.chain_acceptance),
                r.failure.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    pub fn aggregate(&self, method: Method, n: usize) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.method == method && a.n == n)
    }

    pub fn slope(&self, method: Method) -> Option<&SlopeFit> {
        self.slopes.iter().find(|s| s.method == method)
    }
}

/// Groups rows by `(method, n)` in sorted order.
pub fn aggregate_rows(rows: &[BenchmarkRow]) -> Vec<Aggregate> {
    let mut keys: Vec<(Method, usize)> = rows.iter().map(|r| (r.method, r.n)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(method, n)| {
            let cell: Vec<&BenchmarkRow> = rows.iter().filter(|r| r.method == method && r.n == n).collect();
            let ok: Vec<&&BenchmarkRow> = cell.iter().filter(|r| r.failure.is_none()).collect();
            let ins: Vec<f64> = ok.iter().filter_map(|r| r.in_sample_error).collect();
            let outs: Vec<f64> = ok.iter().filter_map(|r| r.out_sample_error).collect();
            let acc: Vec<f64> = ok.iter().filter_map(|r| r.chain_acceptance).collect();
            Aggregate {
                method,
                n,
                in_sample: Summary::of(&ins),
                out_sample: Summary::of(&outs),
                mean_acceptance: Summary::of(&acc).map(|s| s.mean),
                failures: cell.len() - ok.len(),
            }
        })
        .collect()
}

/// Log-log slope of mean error against `n` for every method with three or more sizes.
pub fn rate_slopes(aggregates: &[Aggregate]) -> Vec<SlopeFit> {
    let mut methods: Vec<Method> = aggregates.iter().map(|a| a.method).collect();
    methods.dedup();
    let mut out = Vec::new();
    for method in methods {
        let cells: Vec<&Aggregate> = aggregates.iter().filter(|a| a.method == method).collect();
        let use_out = cells.iter().any(|a| a.out_sample.is_some());
        let (metric, pts): (&str, Vec<(f64, f64)>) = if use_out {
            ("out-sample", cells.iter().filter_map(|a| a.out_sample.map(|s| (a.n as f64, s.mean))).collect())
        } else {
            ("in-sample", cells.iter().filter_map(|a| a.in_sample.map(|s| (a.n as f64, s.mean))).collect())
        };
        let (ns, es): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        if let Ok(fit) = fit_rate_slope(&ns, &es) {
            let df = ns.len() as f64 - 2.0;
            let q = StudentsT::new(0.0, 1.0, df).map(|t| t.inverse_cdf(0.975)).unwrap_or(f64::NAN);
            out.push(SlopeFit { method, metric: metric.into(), fit, half_width: q * fit.stderr });
        }
    }
    out
}

/// Seed of the training/test draw for `(n, repeat)`, shared by all methods.
pub fn data_seed(master: u64, n: usize, repeat: usize) -> u64 {
    derive_seed(master, &[label_hash("data"), n as u64, repeat as u64])
}

/// Seed of a method's own randomness (chain, splits) in one cell.
pub fn cell_seed(master: u64, method: Method, n: usize, repeat: usize) -> u64 {
    derive_seed(master, &[label_hash(method.as_str()), n as u64, repeat as u64])
}

fn draw(generator: &Generator, images: Option<&Dataset>, n: usize, n_test: usize, sigma: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let test_seed = derive_seed(seed, &[label_hash("test")]);
    let make = |m: usize, s: u64| -> Result<Dataset> {
        match generator {
            Generator::SwissRoll => gen_swiss_roll(m, sigma, s),
            Generator::MixedUnion => gen_mixed_union(m, sigma, s),
            Generator::Circle(spec) => gen_circle(m, *spec, sigma, s, None),
            Generator::ImageDir { .. } => unreachable!(),
        }
    };
    match generator {
        Generator::ImageDir { .. } => {
            let all = images.expect("image data loaded");
            if n >= all.n() {
                return invalid_param(format!("n = {n} leaves no test images out of {}", all.n()));
            }
            let mut rng = rng_from_seed(seed);
            let perm = rand::seq::index::sample(&mut rng, all.n(), all.n()).into_vec();
            let mut train = all.subset(&perm[..n]);
            train.y = add_noise(&train.f_star, sigma, derive_seed(seed, &[label_hash("noise")]))?;
            train.sigma = sigma;
            Ok((train, all.subset(&perm[n..])))
        }
        _ => Ok((make(n, seed)?, if n_test > 0 { make(n_test, test_seed)? } else { make(1, test_seed)?.subset(&[]) })),
    }
}

/// Trains and scores one method on one draw.
pub fn run_cell(train: &Dataset, test: &Dataset, config: &EstimatorConfig) -> Result<(f64, Option<f64>, Option<f64>)> {
    let pred = fit_predict(train.x.as_ref(), &train.y, test.x.as_ref(), config)?;
    let ins = error_n(&pred.train, &train.f_star)?;
    let outs = match (&pred.test, test.n()) {
        (Some(t), m) if m > 0 => Some(error_2_empirical(pred.truncated.as_ref().unwrap_or(t), &test.f_star)?),
        _ => None,
    };
    Ok((ins, outs, pred.acceptance_rate))
}

/// Runs every `(method, n, repeat)` cell; `threads = 0` uses the rayon default.
pub fn run_benchmark(scenario: &Scenario, threads: usize) -> Result<BenchmarkReport> {
    if scenario.methods.is_empty() || scenario.n_list.is_empty() {
        return invalid_param("benchmark needs at least one method and one sample size");
    }
    if scenario.repeats == 0 {
        return invalid_param("repeats must be positive");
    }
    let images = match &scenario.generator {
        Generator::ImageDir { path } => Some(load_image_manifold(path, ResponseSpec { sigma: scenario.sigma, seed: scenario.master_seed })?),
        _ => None,
    };
    let mut jobs = Vec::new();
    for &n in &scenario.n_list {
        for repeat in 0..scenario.repeats {
            jobs.push((n, repeat));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let per_job: Vec<Result<Vec<BenchmarkRow>>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(n, repeat)| {
                let seed = data_seed(scenario.master_seed, n, repeat);
                let data = draw(&scenario.generator, images.as_ref(), n, scenario.n_test, scenario.sigma, seed);
                let rows = scenario
                    .methods
                    .iter()
                    .map(|&method| {
                        let mut cfg = scenario.estimator.clone();
                        cfg.method = method;
                        let cs = cell_seed(scenario.master_seed, method, n, repeat);
                        cfg.seed = cs;
                        cfg.mh.seed = derive_seed(cs, &[label_hash("chain")]);
                        let start = Instant::now();
                        let res = data.as_ref().map_err(|e| Error::InvalidInput(e.to_string())).and_then(|(tr, te)| run_cell(tr, te, &cfg));
                        let wall = scenario.record_wall_time.then(|| start.elapsed().as_secs_f64());
                        match res {
                            Ok((ins, outs, acc)) => BenchmarkRow {
                                method,
                                n,
                                seed,
                                in_sample_error: Some(ins),
                                out_sample_error: outs,
                                wall_time: wall,
                                chain_acceptance: acc,
                                failure: None,
                            },
                            Err(e) => BenchmarkRow {
                                method,
                                n,
                                seed,
                                in_sample_error: None,
                                out_sample_error: None,
                                wall_time: wall,
                                chain_acceptance: None,
                                failure: Some(e.to_string()),
                            },
                        }
                    })
                    .collect();
                Ok(rows)
            })
            .collect()
    });
    let mut rows = Vec::new();
    for r in per_job {
        rows.extend(r?);
    }
    let aggregates = aggregate_rows(&rows);
    let slopes = rate_slopes(&aggregates);
    Ok(BenchmarkReport { schema: REPORT_SCHEMA, scenario: scenario.clone(), rows, aggregates, slopes })
}

/// Stacks the rows of `x` selected by `idx`.
pub fn select_rows(x: &Mat<f64>, idx: &[usize]) -> Mat<f64> {
    Mat::from_fn(idx.len(), x.ncols(), |i, j| x[(idx[i], j)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 9.0, 2.0]), 3.0);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn error_examples() {
        assert_eq!(error_n(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((error_n(&[1.5, 2.5, 0.5], &[1.0, 2.0, 0.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!((error_n(&[3.0, 4.0], &[0.0, 0.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(error_n(&[1.0], &[1.0, 2.0]).is_err());
        assert!(error_2_empirical(&[], &[]).is_err());
    }

    #[test]
    fn slope_examples() {
        let ns = [100.0, 200.0, 400.0, 800.0];
        let e: Vec<f64> = ns.iter().map(|n: &f64| 2.0 * n.powf(-1.0 / 3.0)).collect();
        assert!((fit_rate_slope(&ns, &e).unwrap().slope + 1.0 / 3.0).abs() < 1e-10);
        assert!(fit_rate_slope(&ns, &[0.5; 4]).unwrap().slope.abs() < 1e-12);
        let f = fit_rate_slope(&[100.0, 100.0, 200.0], &[1.0, 2.0, 1.0]).unwrap();
        assert!(f.stderr > 0.0);
        assert!(fit_rate_slope(&[1.0, 2.0, 3.0], &[1.0, 0.0, 1.0]).is_err());
        assert!(fit_rate_slope(&[1.0, 2.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn summary_of_rows() {
        let s = Summary::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
        assert!((s.std_error - 1.0 / 3f64.sqrt()).abs() < 1e-15);
    }
}
