use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ebgp::datagen::{gen_circle, gen_mixed_union, gen_swiss_roll, load_image_manifold, CircleSampling, CircleSpec, Dataset, ResponseSpec};
use ebgp::estimators::{fit_predict, Method, NoiseVariance, RhoSpec};
use ebgp::eval::{aggregate_rows, rate_slopes, run_benchmark, BenchmarkReport, Generator, Scenario};
use ebgp::oracles::{affinity_band_check, g_epsilon_apply, knn_band_check, rkhs_norm_squared, ParamManifold, Resolution, DEFAULT_T0};
use ebgp::priors::{check_a3_bounds, check_a3_on_range, log_grid, EmpiricalBayesPrior, Normalized, RescaledGammaPrior};
use ebgp::priors::BandwidthLogDensity;
use ebgp::{Error, Result};

#[derive(Parser)]
#[command(name = "ebgp", version, about = "GP regression with an empirical-Bayes bandwidth prior")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON scenario/estimator configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output path; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for benchmark cells (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Emit a dataset CSV.
    Gen(GenArgs),
    /// Fit one estimator and write predictions.
    Fit(FitArgs),
    /// Run the repeated-run benchmark.
    Benchmark(BenchArgs),
    /// Fit log-log rate slopes from a JSON report.
    Rates { report: PathBuf },
    /// Tabulate bandwidth log-priors and run the (A3) check.
    PriorScan(PriorScanArgs),
    /// Run one quadrature or concentration oracle.
    Oracle(OracleArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    SwissRoll,
    MixedUnion,
    Circle,
    ImageDir,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "swiss-roll")]
    generator: GenKind,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 0.4)]
    radius: f64,
    #[arg(long, default_value_t = 2)]
    ambient_dim: usize,
    #[arg(long)]
    equispaced: bool,
    /// Directory of images for `image-dir`.
    #[arg(long)]
    images: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    /// Noise variance or `infer`.
    #[arg(long)]
    sigma2: Option<String>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    n_iter: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    truncation: Option<f64>,
    /// Also dump the MH chain as CSV.
    #[arg(long)]
    chain_out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long, value_enum)]
    generator: Option<GenKind>,
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Also write the rows as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Omit wall times so reports are reproducible byte for byte.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct PriorScanArgs {
    /// Dataset CSV for the empirical-Bayes prior.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    #[arg(long, default_value_t = 2.0)]
    s: f64,
    #[arg(long, default_value_t = 1e-6)]
    t_min: f64,
    #[arg(long, default_value_t = 10.0)]
    t_max: f64,
    #[arg(long, default_value_t = 100)]
    grid: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleKind {
    GEpsilon,
    RkhsNorm,
    AffinityBand,
    KnnBand,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(value_enum)]
    which: OracleKind,
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    /// Samples for the band checks.
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 20)]
    grid: usize,
}

fn writer(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn load_scenario(g: &Global) -> Result<Scenario> {
    let mut sc = match &g.config {
        Some(p) => serde_json::from_reader(File::open(p)?)?,
        None => Scenario::default(),
    };
    if let Some(s) = g.seed {
        sc.master_seed = s;
    }
    Ok(sc)
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    Dataset::read_csv(File::open(path)?, f64::NAN)
}

fn generator(kind: GenKind, images: Option<PathBuf>, radius: f64, ambient_dim: usize, equispaced: bool) -> Result<Generator> {
    Ok(match kind {
        GenKind::SwissRoll => Generator::SwissRoll,
        GenKind::MixedUnion => Generator::MixedUnion,
        GenKind::Circle => Generator::Circle(CircleSpec {
            radius,
            ambient_dim,
            sampling: if equispaced { CircleSampling::Equispaced } else { CircleSampling::Uniform },
        }),
        GenKind::ImageDir => Generator::ImageDir {
            path: images.ok_or_else(|| Error::InvalidInput("--images is required for image-dir".into()))?,
        },
    })
}

fn cmd_gen(g: &Global, a: GenArgs) -> Result<()> {
    let sc = load_scenario(g)?;
    let sigma = a.sigma.unwrap_or(sc.sigma);
    let seed = sc.master_seed;
    let ds = match generator(a.generator, a.images, a.radius, a.ambient_dim, a.equispaced)? {
        Generator::SwissRoll => gen_swiss_roll(a.n, sigma, seed)?,
        Generator::MixedUnion => gen_mixed_union(a.n, sigma, seed)?,
        Generator::Circle(spec) => gen_circle(a.n, spec, sigma, seed, None)?,
        Generator::ImageDir { path } => load_image_manifold(&path, ResponseSpec { sigma, seed })?,
    };
    ds.write_csv(writer(&g.out)?)?;
    eprintln!("{}", serde_json::to_string(&ds.meta)?);
    Ok(())
}

fn cmd_fit(g: &Global, a: FitArgs) -> Result<()> {
    let sc = load_scenario(g)?;
    let mut cfg = sc.estimator;
    if let Some(m) = &a.method {
        cfg.method = m.parse::<Method>()?;
    }
    if let Some(s) = &a.sigma2 {
        cfg.sigma2 = if s == "infer" {
            NoiseVariance::INFER
        } else {
            NoiseVariance::Known(s.parse().map_err(|_| Error::InvalidInput(format!("bad --sigma2 {s:?}")))?)
        };
    }
    if let Some(r) = a.rho {
        cfg.rho = RhoSpec::Value(r);
    }
    if let Some(v) = a.n_iter {
        cfg.mh.n_iter = v;
    }
    if let Some(v) = a.burn_in {
        cfg.mh.burn_in = v;
    }
    if a.truncation.is_some() {
        cfg.truncation = a.truncation;
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
        cfg.mh.seed = s;
    }
    let train = read_dataset(&a.train)?;
    let test = match &a.test {
        Some(p) => Some(read_dataset(p)?),
        None => None,
    };
    let x_test = test.as_ref().map(|t| t.x.clone()).unwrap_or_else(|| ebgp::Mat::zeros(0, train.dim()));
    let pred = fit_predict(train.x.as_ref(), &train.y, x_test.as_ref(), &cfg)?;

    let mut w = csv::Writer::from_writer(writer(&g.out)?);
    w.write_record(["set", "index", "prediction", "truncated"])?;
    for (i, v) in pred.train.iter().enumerate() {
        w.write_record(["train".to_string(), i.to_string(), format!("{v:e}"), String::new()])?;
    }
    if let Some(t) = &pred.test {
        for (i, v) in t.iter().enumerate() {
            let tr = pred.truncated.as_ref().map(|tr| format!("{:e}", tr[i])).unwrap_or_default();
            w.write_record(["test".to_string(), i.to_string(), format!("{v:e}"), tr])?;
        }
    }
    w.flush()?;
    if let (Some(p), Some(chain)) = (&a.chain_out, &pred.chain) {
        chain.write_csv(BufWriter::new(File::create(p)?))?;
    }
    if let Some(acc) = pred.acceptance_rate {
        eprintln!("acceptance rate {acc:.3}");
    }
    Ok(())
}

fn cmd_benchmark(g: &Global, a: BenchArgs) -> Result<()> {
    let mut sc = load_scenario(g)?;
    if let Some(ms) = &a.methods {
        sc.methods = ms.iter().map(|m| m.parse()).collect::<Result<_>>()?;
    }
    if let Some(n) = a.n {
        sc.n_list = n;
    }
    if let Some(r) = a.repeats {
        sc.repeats = r;
    }
    if let Some(t) = a.n_test {
        sc.n_test = t;
    }
    if let Some(s) = a.sigma {
        sc.sigma = s;
    }
    if let Some(kind) = a.generator {
        sc.generator = generator(kind, a.images.clone(), 0.4, 2, false)?;
    }
    if a.no_timing {
        sc.record_wall_time = false;
    }
    let report = run_benchmark(&sc, g.threads)?;
    report.write_json(writer(&g.out)?)?;
    if let Some(p) = &a.csv {
        report.write_csv(BufWriter::new(File::create(p)?))?;
    }
    for agg in &report.aggregates {
        let fmt = |s: Option<ebgp::eval::Summary>| s.map(|s| format!("{:.4} ({:.4})", s.mean, s.std)).unwrap_or("-".into());
        eprintln!("{:>16} n={:<6} in={:<18} out={:<18} failures={}", agg.method, agg.n, fmt(agg.in_sample), fmt(agg.out_sample), agg.failures);
    }
    Ok(())
}

fn cmd_rates(g: &Global, report: &Path) -> Result<()> {
    let rep: BenchmarkReport = serde_json::from_reader(File::open(report)?)?;
    let slopes = rate_slopes(&aggregate_rows(&rep.rows));
    serde_json::to_writer_pretty(writer(&g.out)?, &slopes)?;
    Ok(())
}

fn cmd_prior_scan(g: &Global, a: PriorScanArgs) -> Result<()> {
    let sc = load_scenario(g)?;
    let ds = read_dataset(&a.data)?;
    let eb = Normalized::empirical_bayes(EmpiricalBayesPrior::from_data(ds.x.as_ref(), &sc.estimator.prior, sc.master_seed)?)?;
    let gamma = RescaledGammaPrior::new(sc.estimator.prior.a0, sc.estimator.prior.b0, a.rho)?;
    let mut w = csv::Writer::from_writer(writer(&g.out)?);
    w.write_record(["t", "eb_log_prior", "gamma_log_prior"])?;
    for t in log_grid(a.t_min, a.t_max, a.grid) {
        w.write_record([format!("{t:e}"), format!("{:e}", eb.log_density(t)), format!("{:e}", gamma.log_density(t))])?;
    }
    w.flush()?;
    let eb_a3 = check_a3_bounds(&eb, a.s, a.rho, ds.n(), ds.dim(), 60)?;
    let gamma_a3 = check_a3_on_range(&gamma, a.rho, a.t_min, a.t_max, a.grid.max(4))?;
    eprintln!("eb prior (A3): lower {} upper {}", verdict(eb_a3.lower.pass), verdict(eb_a3.upper.pass));
    eprintln!("rescaled gamma (A3) on [{:e}, {:e}]: {}", a.t_min, a.t_max, verdict(gamma_a3.pass()));
    Ok(())
}

fn verdict(b: bool) -> &'static str {
    if b {
        "satisfied"
    } else {
        "violated"
    }
}

fn cmd_oracle(g: &Global, a: OracleArgs) -> Result<()> {
    let sc = load_scenario(g)?;
    let value = match a.which {
        OracleKind::GEpsilon => {
            let m = ParamManifold::circle(a.radius)?;
            let v = g_epsilon_apply(&m, &|_| 1.0, 0.0, a.eps, Resolution::Auto)?;
            serde_json::json!({ "oracle": "g-epsilon", "eps": a.eps, "value": v, "deviation": (v - 1.0).abs() })
        }
        OracleKind::RkhsNorm => {
            let m = ParamManifold::circle(a.radius)?;
            let v = rkhs_norm_squared(&m, &|_| 1.0, a.eps, Resolution::Auto)?;
            serde_json::json!({ "oracle": "rkhs-norm", "eps": a.eps, "value": v })
        }
        OracleKind::AffinityBand | OracleKind::KnnBand => {
            let spec = CircleSpec { radius: a.radius.min(0.5), ..CircleSpec::default() };
            let ds = gen_circle(a.n, spec, 0.0, sc.master_seed, None)?;
            if matches!(a.which, OracleKind::AffinityBand) {
                let grid = log_grid(1e-3, DEFAULT_T0, a.grid);
                serde_json::to_value(affinity_band_check(ds.x.as_ref(), spec.density(), 1, &grid, DEFAULT_T0)?)?
            } else {
                let rep = knn_band_check(ds.x.as_ref(), spec.density(), 1, sc.estimator.prior.gamma2)?;
                serde_json::json!({ "k": rep.k, "base": rep.base, "pass_fraction": rep.pass_fraction, "small_n": rep.small_n })
            }
        }
    };
    let mut w = writer(&g.out)?;
    serde_json::to_writer_pretty(&mut w, &value)?;
    writeln!(w)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    match cli.command {
        Command::Gen(a) => cmd_gen(&g, a),
        Command::Fit(a) => cmd_fit(&g, a),
        Command::Benchmark(a) => cmd_benchmark(&g, a),
        Command::Rates { report } => cmd_rates(&g, &report),
        Command::PriorScan(a) => cmd_prior_scan(&g, a),
        Command::Oracle(a) => cmd_oracle(&g, a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
