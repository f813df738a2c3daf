use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use calibrax::bench::{
    fit_base, fit_method, gen_distorted_binary, generate, load_csv, rerun_manifest, run_experiment, save_csv,
    thread_budget, AnyModel, AnyRecal, BaseModelSpec, DataSource, Dataset, ExperimentConfig, ExperimentReport,
    GeneratorKind, GeneratorSpec, Method, Metric, MethodSettings,
};
use calibrax::models::{Persist, ProbabilisticModel};
use calibrax::nn::TrainConfig;
use calibrax::online::simulate;
use calibrax::recalibrate::Recalibrator;
use calibrax::{Error, PredictiveDistribution, Result};

/// Distribution recalibration of probabilistic forecasters.
#[derive(Parser, Debug)]
#[command(name = "calibrax", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Seed for every random choice in the run
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory that receives the artifacts
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// JSON experiment config; its values override flags
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a synthetic dataset into <out-dir>/data.csv
    Synth(SynthArgs),
    /// Fit a base model into <out-dir>/model.json
    Fit(FitArgs),
    /// Fit a recalibrator over a base model into <out-dir>/recalibrator.json
    Recalibrate(RecalArgs),
    /// Score a model, optionally recalibrated, into <out-dir>/metrics.json
    Evaluate(EvalArgs),
    /// Run the online recalibrator over a binary forecast stream
    #[command(name = "online-sim")]
    OnlineSim(OnlineArgs),
    /// Run an experiment config or rerun manifests
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// heteroscedastic, variance_misscaled, distorted_binary or distorted_multiclass
    #[arg(long, default_value = "heteroscedastic")]
    kind: String,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Forecast spread factor for variance_misscaled
    #[arg(long, default_value_t = 0.5)]
    shrink: f64,
    /// Class count for distorted_multiclass
    #[arg(long, default_value_t = 3)]
    classes: usize,
    /// Logit multiplier for distorted_multiclass
    #[arg(long, default_value_t = 3.0)]
    distortion: f64,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// CSV file with a header row
    #[arg(long, default_value = "data.csv")]
    data: PathBuf,
    /// Target column
    #[arg(long, default_value = "y")]
    target: String,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    /// bayesian_ridge, gaussian_mlp, softmax, passthrough or misscaled_oracle
    #[arg(long, default_value = "bayesian_ridge")]
    base: String,
    /// Polynomial degree for bayesian_ridge
    #[arg(long, default_value_t = 3)]
    degree: usize,
    /// Hidden widths for the network models, comma separated
    #[arg(long, default_value = "32,32", value_delimiter = ',')]
    hidden: Vec<usize>,
    /// Training epochs for the network models
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    /// Forecast spread factor for misscaled_oracle
    #[arg(long, default_value_t = 0.5)]
    shrink: f64,
}

#[derive(Args, Debug)]
struct RecalArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    /// Base model file
    #[arg(long, default_value = "model.json")]
    model: PathBuf,
    /// uncalibrated, isotonic, quantile, kde, platt, temperature, multiclass_platt or simplex
    #[arg(long, default_value = "quantile")]
    method: String,
    /// Training epochs for the network recalibrators
    #[arg(long, default_value_t = 40)]
    epochs: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    /// Base model file
    #[arg(long, default_value = "model.json")]
    model: PathBuf,
    /// Recalibrator file; omitted means the raw base forecasts
    #[arg(long)]
    recalibrator: Option<PathBuf>,
    /// Metrics, comma separated; empty picks the task defaults
    #[arg(long, value_delimiter = ',', default_value = "")]
    metrics: Vec<String>,
}

#[derive(Args, Debug)]
#[allow(non_snake_case)]
struct OnlineArgs {
    #[command(flatten)]
    common: Common,
    /// Forecaster resolution (grid 0, 1/N, ..., 1)
    #[arg(long = "N", default_value_t = 32)]
    N: usize,
    /// Number of buckets routing the raw forecasts
    #[arg(long = "M", default_value_t = 32)]
    M: usize,
    /// Stream length when generating
    #[arg(long = "T", default_value_t = 50_000)]
    T: usize,
    /// CSV with a score column and a 0/1 label column instead of the
    /// generated distorted binary stream
    #[arg(long)]
    data: Option<PathBuf>,
    /// Label column of --data
    #[arg(long, default_value = "label")]
    target: String,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    /// Manifests to rerun; each goes to <out-dir>/<index>
    #[arg(long)]
    manifest: Vec<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    if e.is_data_error() {
        2
    } else if matches!(e, Error::Numeric(_) | Error::Training(_)) {
        3
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Loads `--config`. Seeds the file leaves out come from `--seed`.
fn load_config(common: &Common) -> Result<Option<ExperimentConfig>> {
    let Some(path) = common.config.as_deref() else {
        return Ok(None);
    };
    let text = std::fs::read_to_string(path)?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    if raw.get("seeds").is_none() {
        cfg.seeds = vec![common.seed];
    }
    Ok(Some(cfg))
}

fn seed_of(common: &Common, cfg: Option<&ExperimentConfig>) -> u64 {
    cfg.and_then(|c| c.seeds.first().copied()).unwrap_or(common.seed)
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Fit(a) => fit(a),
        Command::Recalibrate(a) => recalibrate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::OnlineSim(a) => online(a),
        Command::Report(a) => report(a),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = load_config(&a.common)?;
    let spec = match cfg.as_ref().map(|c| &c.data) {
        Some(DataSource::Generator(g)) => g.clone(),
        Some(DataSource::Csv { .. }) => return Err(Error::Domain("synth needs a generator config".into())),
        None => GeneratorSpec {
            kind: a.kind.parse::<GeneratorKind>()?,
            n: a.n,
            seed: a.common.seed,
            shrink: a.shrink,
            classes: a.classes,
            distortion: a.distortion,
        },
    };
    let ds = generate(&spec)?;
    prepare_out(&a.common.out_dir)?;
    let path = a.common.out_dir.join("data.csv");
    save_csv(&ds, &path)?;
    println!("wrote {} rows to {}", ds.len(), path.display());
    Ok(())
}

fn load_data(d: &DataArgs) -> Result<Dataset> {
    load_csv(&d.data, &d.target)
}

fn fit(a: FitArgs) -> Result<()> {
    let cfg = load_config(&a.common)?;
    let seed = seed_of(&a.common, cfg.as_ref());
    let train = TrainConfig {
        epochs: a.epochs,
        ..TrainConfig::default()
    };
    let spec = match cfg.as_ref().and_then(|c| c.base.clone()) {
        Some(s) => s,
        None => match a.base.as_str() {
            "bayesian_ridge" => BaseModelSpec::BayesianRidge { degree: a.degree },
            "gaussian_mlp" => BaseModelSpec::GaussianMlp {
                hidden: a.hidden.clone(),
                train,
            },
            "softmax" => BaseModelSpec::Softmax {
                hidden: a.hidden.clone(),
                train,
            },
            "passthrough" => BaseModelSpec::Passthrough,
            "misscaled_oracle" => BaseModelSpec::MisscaledOracle,
            other => return Err(Error::Domain(format!("unknown base model `{other}`"))),
        },
    };
    let shrink = match cfg.as_ref().map(|c| &c.data) {
        Some(DataSource::Generator(g)) => g.shrink,
        _ => a.shrink,
    };
    let ds = load_data(&a.data)?;
    let model = fit_base(&spec, &ds, Some(shrink), seed)?;
    prepare_out(&a.common.out_dir)?;
    let path = a.common.out_dir.join("model.json");
    model.save(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn check_schema(model: &AnyModel, ds: &Dataset) -> Result<()> {
    if ds.feature_names.len() != model.num_features() {
        return Err(Error::Row {
            row: 1,
            msg: format!(
                "header has {} feature columns ({}) but the model expects {}",
                ds.feature_names.len(),
                ds.feature_names.join(","),
                model.num_features()
            ),
        });
    }
    Ok(())
}

fn forecasts(model: &AnyModel, ds: &Dataset) -> Result<Vec<PredictiveDistribution>> {
    check_schema(model, ds)?;
    ds.x
        .iter()
        .enumerate()
        .map(|(i, x)| {
            model.predict_dist(x).map_err(|e| match e {
                Error::Schema(msg) => Error::Row { row: i + 2, msg },
                e => e,
            })
        })
        .collect()
}

fn recalibrate(a: RecalArgs) -> Result<()> {
    let cfg = load_config(&a.common)?;
    let seed = seed_of(&a.common, cfg.as_ref());
    let method = match cfg.as_ref().and_then(|c| c.methods.first().copied()) {
        Some(m) => m,
        None => a.method.parse::<Method>()?,
    };
    let mut settings = cfg.as_ref().map(|c| c.settings.clone()).unwrap_or_else(|| {
        let mut s = MethodSettings::default();
        s.quantile.train.epochs = a.epochs;
        s.simplex.train.epochs = a.epochs;
        s
    });
    settings.quantile.train.seed = seed;
    let model = AnyModel::load(&a.model)?;
    let ds = load_data(&a.data)?;
    let f = forecasts(&model, &ds)?;
    let r = fit_method(method, &f, &ds.y, &settings, seed)?;
    prepare_out(&a.common.out_dir)?;
    let path = a.common.out_dir.join("recalibrator.json");
    r.save(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn evaluate(a: EvalArgs) -> Result<()> {
    let cfg = load_config(&a.common)?;
    let model = AnyModel::load(&a.model)?;
    let recal = a.recalibrator.as_deref().map(AnyRecal::load).transpose()?;
    let ds = load_data(&a.data)?;
    let mut f = forecasts(&model, &ds)?;
    if let Some(r) = &recal {
        f = f.iter().map(|d| r.recalibrate(d)).collect::<Result<Vec<_>>>()?;
    }
    let mut metrics: Vec<Metric> = match cfg.as_ref().filter(|c| !c.metrics.is_empty()) {
        Some(c) => c.metrics.clone(),
        None => a
            .metrics
            .iter()
            .filter(|m| !m.is_empty())
            .map(|m| m.parse())
            .collect::<Result<Vec<_>>>()?,
    };
    if metrics.is_empty() {
        metrics = match &f[0] {
            PredictiveDistribution::Categorical(c) => {
                Metric::defaults(calibrax::bench::Task::Classification { classes: c.num_classes() })
            }
            _ => Metric::defaults(calibrax::bench::Task::Regression),
        };
    }
    let mut out = serde_json::Map::new();
    for m in metrics {
        let v = calibrax::bench::evaluate_metric(m, &f, &ds.y)?;
        println!("{}\t{}", m.name(), calibrax::data::format_f64(v));
        out.insert(m.name().to_string(), serde_json::json!(v));
    }
    prepare_out(&a.common.out_dir)?;
    std::fs::write(
        a.common.out_dir.join("metrics.json"),
        serde_json::to_string_pretty(&serde_json::Value::Object(out))?,
    )?;
    Ok(())
}

fn online(a: OnlineArgs) -> Result<()> {
    let cfg = load_config(&a.common)?;
    let seed = seed_of(&a.common, cfg.as_ref());
    let ds = match (&a.data, cfg.as_ref().map(|c| &c.data)) {
        (_, Some(DataSource::Csv { path, target })) => load_csv(path, target)?,
        (_, Some(DataSource::Generator(g))) => generate(g)?,
        (Some(p), None) => load_csv(p, &a.target)?,
        (None, None) => gen_distorted_binary(a.T, seed)?,
    };
    if ds.feature_names.len() != 1 {
        return Err(Error::Schema(format!(
            "online stream needs one score column, found {}",
            ds.feature_names.len()
        )));
    }
    let mut stream = Vec::with_capacity(ds.len());
    for (i, (x, &y)) in ds.x.iter().zip(&ds.y).enumerate() {
        if !(0.0..=1.0).contains(&x[0]) || !(y == 0.0 || y == 1.0) {
            return Err(Error::Row {
                row: i + 2,
                msg: "scores must lie in [0, 1] and labels be 0 or 1".into(),
            });
        }
        stream.push((x[0], y == 1.0));
    }
    let (ledger, fallbacks) = simulate(stream, a.N, a.M, seed)?;
    prepare_out(&a.common.out_dir)?;
    ledger.write_trace_csv(&a.common.out_dir.join("trace.csv"))?;
    let summary = ledger.summary(a.M, fallbacks)?;
    summary.write_json(&a.common.out_dir.join("ledger.json"))?;
    println!(
        "T={} C_l1={:.6} internal_l2={:.6} external_mc={:.6}",
        summary.t, summary.c_l1, summary.internal_regret_l2, summary.external_regret_mc
    );
    Ok(())
}

fn print_report(r: &ExperimentReport) {
    for row in &r.rows {
        println!("{}\t{}\t{}\t{}\t{:.6}", row.dataset, row.seed, row.method, row.metric, row.value);
    }
}

fn report(a: ReportArgs) -> Result<()> {
    let cfg = load_config(&a.common)?;
    if cfg.is_none() && a.manifest.is_empty() {
        return Err(Error::Domain("report needs --config or --manifest".into()));
    }
    if let Some(c) = cfg {
        print_report(&run_experiment(&c, &a.common.out_dir)?);
    }
    if a.manifest.len() == 1 {
        print_report(&rerun_manifest(&a.manifest[0], &a.common.out_dir)?);
    } else if !a.manifest.is_empty() {
        let threads = thread_budget();
        let jobs: Vec<(usize, &PathBuf)> = a.manifest.iter().enumerate().collect();
        for chunk in jobs.chunks(threads) {
            let results: Vec<Result<ExperimentReport>> = std::thread::scope(|s| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|&(i, m)| {
                        let dir = a.common.out_dir.join(i.to_string());
                        s.spawn(move || rerun_manifest(m, &dir))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Err(Error::Training("report worker panicked".into()))))
                    .collect()
            });
            for r in results {
                print_report(&r?);
            }
        }
    }
    Ok(())
}
