//! The `fflqr` command-line tool.

mod manifest;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::error::{ErrorKind, FflqrError, Result};
use crate::fdata::FunctionalSample;
use crate::io::{
    read_sample_csv, summarize, write_long_csv, write_results_csv, write_sample_csv, write_summary_csv,
    write_trace_csv,
};
use crate::model::{load_model, save_model, Family, FittedModel};
use crate::selection::{forward_select, select_truncation, ForwardOptions};
use crate::sim::{generate_dataset, run_monte_carlo, ErrorDist, Method, ModelVariant, SimConfig};
use crate::uncertainty::{bootstrap_replicates, direct_band, BootstrapConfig};

pub use manifest::{RunManifest, MANIFEST_FILE};

/// Environment variable holding the default worker thread count.
pub const THREADS_ENV: &str = "FFLQR_THREADS";

#[derive(Debug, Parser)]
#[command(name = "fflqr", version, about = "Function-on-function linear quantile regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate one synthetic train/test data set.
    Simulate(SimulateArgs),
    /// Fit a model to CSV data, optionally tuning truncation or selecting predictors.
    Fit(FitArgs),
    /// Predict response curves from a saved model.
    Predict(PredictArgs),
    /// Pointwise prediction bands from a saved model.
    Interval(IntervalArgs),
    /// Monte Carlo comparison of methods over simulated replicates.
    Benchmark(BenchmarkArgs),
}

/// Flags that override fields of a scenario config.
#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct SimOverrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "mc")]
    pub n_replicates: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, value_enum)]
    pub error_dist: Option<ErrorDistArg>,
    #[arg(long = "contamination")]
    pub contamination_rate: Option<f64>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum ErrorDistArg {
    Normal,
    Chisq1,
}

impl SimOverrides {
    fn apply(&self, cfg: &mut SimConfig) {
        if let Some(v) = self.seed {
            cfg.master_seed = v;
        }
        if let Some(v) = self.n_replicates {
            cfg.n_replicates = v;
        }
        if let Some(v) = self.sigma {
            cfg.sigma = v;
        }
        if let Some(v) = self.error_dist {
            cfg.error_dist = match v {
                ErrorDistArg::Normal => ErrorDist::Normal,
                ErrorDistArg::Chisq1 => ErrorDist::Chisq1,
            };
        }
        if let Some(v) = self.contamination_rate {
            cfg.contamination_rate = v;
        }
        if let Some(v) = self.n_train {
            cfg.n_train = v;
        }
        if let Some(v) = self.n_test {
            cfg.n_test = v;
        }
        if let Some(v) = self.tau {
            cfg.tau = v;
        }
    }
}

#[derive(Debug, clap::Args, Serialize)]
pub struct SimulateArgs {
    /// Scenario config JSON; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: SimOverrides,
    /// Replicate index whose data stream is generated.
    #[arg(long, default_value_t = 0)]
    pub replicate: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum MethodArg {
    Fflqr,
    FpcLs,
    BsplineLs,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct FitArgs {
    /// Response curves (wide CSV).
    #[arg(long)]
    pub y: PathBuf,
    /// Predictor curves, one file per predictor, in predictor order.
    #[arg(long = "x", required = true, num_args = 1..)]
    pub xs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = MethodArg::Fflqr)]
    pub method: MethodArg,
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    #[arg(long)]
    pub ky: Option<usize>,
    #[arg(long)]
    pub kx: Option<usize>,
    /// Choose (K_Y, K_X) by exhaustive BIC search.
    #[arg(long)]
    pub tune: bool,
    /// Choose predictors by forward selection, then tune (K_Y, K_X).
    #[arg(long)]
    pub select: bool,
    #[arg(long, default_value_t = 5)]
    pub ky_max: usize,
    #[arg(long, default_value_t = 5)]
    pub kx_max: usize,
    #[arg(long, default_value_t = 0.95)]
    pub ratio: f64,
    #[arg(long, default_value_t = 2)]
    pub fixed_k: usize,
    #[arg(long, default_value_t = crate::model::bspline::DEFAULT_N_BASIS)]
    pub n_basis: usize,
    #[arg(long, default_value_t = crate::model::bspline::DEFAULT_ORDER)]
    pub order: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Predictor curves in the order used at fit time.
    #[arg(long = "x", required = true, num_args = 1..)]
    pub xs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum BandMethod {
    Bootstrap,
    Direct,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct IntervalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Training response used to refit the model.
    #[arg(long)]
    pub y: PathBuf,
    /// Training predictors in the order used at fit time.
    #[arg(long = "x", required = true, num_args = 1..)]
    pub xs: Vec<PathBuf>,
    /// Predictors of the curves to cover, same order as `--x`.
    #[arg(long = "x-test", required = true, num_args = 1..)]
    pub xs_test: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = BandMethod::Bootstrap)]
    pub method: BandMethod,
    /// Bootstrap replicates.
    #[arg(long = "R", default_value_t = 100)]
    pub replicates: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: SimOverrides,
    /// Comma-separated subset of fflqr, fpc-ls, bspline-ls.
    #[arg(long, value_delimiter = ',', default_value = "fflqr,fpc-ls,bspline-ls")]
    pub methods: Vec<String>,
    /// Comma-separated subset of full, true, selected.
    #[arg(long, value_delimiter = ',', default_value = "full,true,selected")]
    pub models: Vec<String>,
    /// Also compute bootstrap (and direct, for fflqr) bands and their metrics.
    #[arg(long)]
    pub intervals: bool,
    #[arg(long = "R")]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Process exit code for an error.
pub fn exit_code(err: &FflqrError) -> i32 {
    match err.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}

fn thread_count() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(FflqrError::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
    }
}

/// Parses arguments and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count()? {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| FflqrError::Config(format!("cannot start worker threads: {e}")))?;
    pool.install(|| match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Interval(a) => cmd_interval(&a),
        Command::Benchmark(a) => cmd_benchmark(&a),
    })
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn load_config(path: Option<&Path>, overrides: &SimOverrides) -> Result<SimConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str::<SimConfig>(&text)
                .map_err(|e| FflqrError::Config(format!("{}: {e}", p.display())))?
        }
        None => SimConfig::default(),
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn read_all(paths: &[PathBuf]) -> Result<Vec<FunctionalSample>> {
    paths.iter().map(|p| read_sample_csv(p)).collect()
}

fn check_same_curves(y: &FunctionalSample, xs: &[FunctionalSample], paths: &[PathBuf]) -> Result<()> {
    for (x, p) in xs.iter().zip(paths) {
        if x.n_curves() != y.n_curves() {
            return Err(FflqrError::Parse {
                source_name: p.display().to_string(),
                message: format!("{} curves, but the response has {}", x.n_curves(), y.n_curves()),
            });
        }
    }
    Ok(())
}

/// The model's own predictors out of the full list given at fit time.
fn model_inputs(model: &FittedModel, xs: &[FunctionalSample]) -> Result<Vec<FunctionalSample>> {
    model
        .predictor_indices()
        .iter()
        .map(|&m| {
            xs.get(m).cloned().ok_or_else(|| {
                FflqrError::invalid(
                    "x",
                    format!(
                        "model uses predictor X{} but only {} predictor files were given",
                        m + 1,
                        xs.len()
                    ),
                )
            })
        })
        .collect()
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref(), &args.overrides)?;
    let man = RunManifest::start(
        "simulate",
        json!({ "config": cfg, "replicate": args.replicate }),
        args.config.iter().cloned().collect(),
        Some(cfg.master_seed),
    );
    prepare_out(&args.out)?;
    let data = generate_dataset(&cfg, args.replicate)?;
    let mut outputs = Vec::new();
    let mut write = |name: String, s: &FunctionalSample| -> Result<()> {
        let path = args.out.join(&name);
        write_sample_csv(&path, s)?;
        outputs.push(PathBuf::from(name));
        Ok(())
    };
    write("Y_train.csv".into(), &data.y_train)?;
    write("Y_test.csv".into(), &data.y_test)?;
    for (m, x) in data.xs_train.iter().enumerate() {
        write(format!("X{}_train.csv", m + 1), x)?;
    }
    for (m, x) in data.xs_test.iter().enumerate() {
        write(format!("X{}_test.csv", m + 1), x)?;
    }
    let truth = json!({
        "true_predictors": cfg.true_set().iter().map(|m| m + 1).collect::<Vec<_>>(),
        "surfaces": cfg.true_set().iter().map(|m| format!("beta{}", m + 1)).collect::<Vec<_>>(),
        "master_seed": cfg.master_seed,
        "replicate": args.replicate,
        "replicate_seed": data.seed,
        "contamination_rate": cfg.contamination_rate,
        "contaminated_rows": data.contaminated,
    });
    fs::write(args.out.join("truth.json"), serde_json::to_string_pretty(&truth)?)?;
    outputs.push("truth.json".into());
    man.finish(&args.out, outputs)
}

fn family_for(args: &FitArgs) -> Family {
    match args.method {
        MethodArg::Fflqr => Family::Fflqr { tau: args.tau },
        MethodArg::FpcLs => Family::FpcLs,
        MethodArg::BsplineLs => Family::BsplineLs {
            n_basis: args.n_basis,
            order: args.order,
        },
    }
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let y = read_sample_csv(&args.y)?;
    let xs = read_all(&args.xs)?;
    check_same_curves(&y, &xs, &args.xs)?;
    let family = family_for(args);
    let is_bspline = matches!(family, Family::BsplineLs { .. });
    if args.tune && is_bspline && !args.select {
        return Err(FflqrError::invalid("tune", "the B-spline baseline has no truncation to tune"));
    }
    let mut inputs = vec![args.y.clone()];
    inputs.extend(args.xs.iter().cloned());
    let man = RunManifest::start("fit", serde_json::to_value(args)?, inputs, None);
    prepare_out(&args.out)?;
    let mut outputs = Vec::new();

    let (predictors, k_y, k_x) = if args.select {
        let opts = ForwardOptions {
            ratio_threshold: args.ratio,
            fixed_k: args.fixed_k,
            k_y_max: args.ky_max,
            k_x_max: args.kx_max,
            tune_after: true,
        };
        let sel = forward_select(&y, &xs, &family, &opts)?;
        write_trace_csv(&args.out.join("selection_trace.csv"), &sel.bic_trace)?;
        outputs.push(PathBuf::from("selection_trace.csv"));
        (sel.chosen_predictors, sel.chosen_k_y, sel.chosen_k_x)
    } else if args.tune {
        let choice = select_truncation(&y, &xs, &family, args.ky_max, args.kx_max)?;
        write_trace_csv(&args.out.join("bic_trace.csv"), &choice.trace)?;
        outputs.push(PathBuf::from("bic_trace.csv"));
        ((0..xs.len()).collect(), choice.k_y, choice.k_x)
    } else if is_bspline {
        ((0..xs.len()).collect(), 0, 0)
    } else {
        let k_y = args
            .ky
            .ok_or_else(|| FflqrError::invalid("ky", "--ky is required unless --tune or --select is given"))?;
        let k_x = args
            .kx
            .ok_or_else(|| FflqrError::invalid("kx", "--kx is required unless --tune or --select is given"))?;
        ((0..xs.len()).collect(), k_y, k_x)
    };

    let subset: Vec<FunctionalSample> = predictors.iter().map(|&m| xs[m].clone()).collect();
    let model = family
        .spec(k_y, k_x)
        .fit(&y, &subset)?
        .with_predictor_indices(predictors.clone())?;
    save_model(&model, &args.out.join("model.json"))?;
    outputs.push("model.json".into());

    let fitted = model.predict(&subset)?;
    write_sample_csv(&args.out.join("fitted.csv"), &fitted)?;
    outputs.push("fitted.csv".into());

    let objective = match model.as_fpc() {
        Some(f) => Some(f.score_objective(&y, &subset)?),
        None => None,
    };
    let report = json!({
        "method": model.kind(),
        "tau": model.as_fpc().and_then(|f| f.tau()),
        "k_y": k_y,
        "k_x": k_x,
        "predictors": predictors.iter().map(|m| m + 1).collect::<Vec<_>>(),
        "n_curves": y.n_curves(),
        "rank_deficient": model.rank_deficient(),
        "score_objective": objective,
        "in_sample_mspe": crate::uncertainty::mspe(&y, &fitted)?,
    });
    fs::write(args.out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    outputs.push("report.json".into());
    man.finish(&args.out, outputs)
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let xs = read_all(&args.xs)?;
    let mut inputs = vec![args.model.clone()];
    inputs.extend(args.xs.iter().cloned());
    let man = RunManifest::start("predict", serde_json::to_value(args)?, inputs, None);
    prepare_out(&args.out)?;
    let pred = model.predict(&model_inputs(&model, &xs)?)?;
    write_sample_csv(&args.out.join("Y_pred.csv"), &pred)?;
    man.finish(&args.out, vec!["Y_pred.csv".into()])
}

pub fn cmd_interval(args: &IntervalArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let y = read_sample_csv(&args.y)?;
    let xs_all = read_all(&args.xs)?;
    check_same_curves(&y, &xs_all, &args.xs)?;
    let xs_test_all = read_all(&args.xs_test)?;
    if xs_test_all.len() != xs_all.len() {
        return Err(FflqrError::DimensionMismatch {
            context: "--x-test files vs --x files",
            expected: xs_all.len(),
            found: xs_test_all.len(),
        });
    }
    let xs = model_inputs(&model, &xs_all)?;
    let xs_test = model_inputs(&model, &xs_test_all)?;
    let mut inputs = vec![args.model.clone(), args.y.clone()];
    inputs.extend(args.xs.iter().cloned());
    inputs.extend(args.xs_test.iter().cloned());
    let seed = (args.method == BandMethod::Bootstrap).then_some(args.seed);
    let man = RunManifest::start("interval", serde_json::to_value(args)?, inputs, seed);
    prepare_out(&args.out)?;

    let (band, extra) = match args.method {
        BandMethod::Bootstrap => {
            let cfg = BootstrapConfig {
                replicates: args.replicates,
                seed: args.seed,
            };
            let reps = bootstrap_replicates(&y, &xs, &xs_test, &model.spec(), &cfg)?;
            let band = reps.band(args.alpha)?;
            let extra = json!({
                "R": args.replicates,
                "seed": args.seed,
                "successful_replicates": reps.n_successful(),
                "failed_replicates": reps.n_failed(),
            });
            (band, extra)
        }
        BandMethod::Direct => {
            let fit = model.as_fpc().ok_or_else(|| {
                FflqrError::invalid("method", "direct bands need an FPC model (fflqr or fpc-ls)")
            })?;
            let band = direct_band(&y, &xs, &xs_test, args.alpha, fit.k_y(), fit.k_x())?;
            let extra = json!({
                "crossings": band.crossings(),
                "crossing_rate": band.crossing_rate(),
            });
            (band, extra)
        }
    };
    write_sample_csv(&args.out.join("lower.csv"), &band.lower_sample())?;
    write_sample_csv(&args.out.join("upper.csv"), &band.upper_sample())?;
    let pred = model.predict(&xs_test)?;
    write_sample_csv(&args.out.join("Y_pred.csv"), &pred)?;
    let mut meta = json!({
        "alpha": args.alpha,
        "method": match args.method { BandMethod::Bootstrap => "bootstrap", BandMethod::Direct => "direct" },
    });
    if let (Some(m), Some(e)) = (meta.as_object_mut(), extra.as_object()) {
        m.extend(e.clone());
    }
    fs::write(args.out.join("band.json"), serde_json::to_string_pretty(&meta)?)?;
    man.finish(
        &args.out,
        vec!["lower.csv".into(), "upper.csv".into(), "Y_pred.csv".into(), "band.json".into()],
    )
}

pub fn cmd_benchmark(args: &BenchmarkArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref(), &args.overrides)?;
    if args.intervals {
        cfg.intervals = true;
    }
    if let Some(r) = args.replicates {
        cfg.bootstrap_replicates = r;
    }
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    cfg.validate()?;
    let methods = args.methods.iter().map(|s| Method::parse(s.trim())).collect::<Result<Vec<_>>>()?;
    let variants = args
        .models
        .iter()
        .map(|s| ModelVariant::parse(s.trim()))
        .collect::<Result<Vec<_>>>()?;
    let man = RunManifest::start(
        "benchmark",
        json!({
            "config": cfg,
            "methods": methods.iter().map(|m| m.label()).collect::<Vec<_>>(),
            "models": variants.iter().map(|m| m.label()).collect::<Vec<_>>(),
        }),
        args.config.iter().cloned().collect(),
        Some(cfg.master_seed),
    );
    prepare_out(&args.out)?;
    let outcome = run_monte_carlo(&cfg, &methods, &variants)?;
    for (r, e) in &outcome.failures {
        eprintln!("warning: replicate {r} failed: {e}");
    }
    write_results_csv(&args.out.join("results.csv"), &outcome.reports)?;
    write_summary_csv(&args.out.join("summary.csv"), &summarize(&outcome.reports))?;
    write_long_csv(&args.out.join("long.csv"), &outcome.reports)?;
    man.finish(
        &args.out,
        vec!["results.csv".into(), "summary.csv".into(), "long.csv".into()],
    )
}
