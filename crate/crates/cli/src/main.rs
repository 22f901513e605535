//! `protomil` command-line front end.
//!
//! Exit codes: 0 success, 1 data or training failure, 2 usage or
//! configuration error. Failures print one line to stderr of the form
//! `protomil: error[<code>]: <message>`.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use protomil::dataset::{
    build_digit_bags, gen_synthetic, load_csv, load_idx_images, write_csv, Dataset, DigitBagConfig, Standardizer,
    SynthConfig,
};
use protomil::model::{grad_check, init_prototypes, predict_proba, Checkpoint, Hyperparams, InitStrategy, ModelParams};
use protomil::rng::{substream, tag};
use protomil::trainer::{cross_validate, export_prototypes, train, CvOptions, ExportMeta};
use serde::Serialize;

use crate::config::{env_seed, ModelArgs};

pub struct CliError {
    exit: u8,
    code: String,
    message: String,
}

impl CliError {
    pub fn usage(code: &str, message: impl Into<String>) -> Self {
        CliError {
            exit: 2,
            code: code.into(),
            message: message.into(),
        }
    }

    fn runtime(code: &str, message: impl Into<String>) -> Self {
        CliError {
            exit: 1,
            code: code.into(),
            message: message.into(),
        }
    }
}

impl From<protomil::Error> for CliError {
    fn from(e: protomil::Error) -> Self {
        CliError {
            exit: if e.is_usage() { 2 } else { 1 },
            code: e.code().into(),
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "protomil", version, about = "Prototype-based multiple instance learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a bag CSV and write a checkpoint plus training history
    Train(TrainArgs),
    /// Repeated stratified k-fold cross-validation; prints a JSON report
    Cv(CvArgs),
    /// Score bags with a trained checkpoint
    Predict(PredictArgs),
    /// Write a synthetic witness-bag dataset
    GenSynth(GenSynthArgs),
    /// Export prototypes (CSV, optional PGM images) and classifier weights (JSON)
    Export(ExportArgs),
    /// Compare analytic gradients with central finite differences
    Gradcheck(GradcheckArgs),
    /// Build digit bags from an IDX image/label pair
    DigitBags(DigitBagsArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Bag CSV (bag_id,label,f0..f{L-1})
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    /// Output directory for model.ckpt, history.json and standardizer.json
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct CvArgs {
    /// Bag CSV (bag_id,label,f0..f{L-1})
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    /// Also write the report to this file
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Folds per repeat [default: 10]
    #[arg(long)]
    k: Option<usize>,
    /// Repeats of the k-fold split [default: 5]
    #[arg(long)]
    repeats: Option<usize>,
    /// Worker threads for folds; the report does not depend on it [default: 1]
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct PredictArgs {
    /// Checkpoint written by `train`
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Bag CSV to score; labels are read but not used
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    /// Standardizer written by `train --standardize`
    #[arg(long, value_name = "FILE")]
    standardizer: Option<PathBuf>,
    /// Output CSV [default: stdout]
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenSynthArgs {
    /// Output CSV
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Random seed [default: $PROTOMIL_SEED, else 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Number of bags; half (rounded down) are positive
    #[arg(long, default_value_t = 100)]
    n_bags: usize,
    /// Minimum instances per bag
    #[arg(long, default_value_t = 5)]
    instances_min: usize,
    /// Maximum instances per bag
    #[arg(long, default_value_t = 10)]
    instances_max: usize,
    /// Features per instance L
    #[arg(long, default_value_t = 10)]
    features: usize,
    /// Fraction of a positive bag's instances that are witnesses
    #[arg(long, default_value_t = 0.2)]
    witness_rate: f64,
    /// Offset of the witness distribution along the first feature
    #[arg(long, default_value_t = 8.0)]
    separation: f64,
}

#[derive(Args)]
struct ExportArgs {
    /// Checkpoint written by `train`
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Also write each prototype as a SIDE x SIDE grayscale PGM
    #[arg(long, value_name = "SIDE")]
    image_side: Option<usize>,
    /// Name recorded as the data source in weights.json [default: checkpoint path]
    #[arg(long)]
    source: Option<String>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Bag CSV; every bag is checked
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    /// Check at these parameters instead of a random draw
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Finite-difference step
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    /// Largest accepted relative error
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct DigitBagsArgs {
    /// IDX image file (e.g. train-images-idx3-ubyte)
    #[arg(long, value_name = "FILE")]
    images: PathBuf,
    /// IDX label file (e.g. train-labels-idx1-ubyte)
    #[arg(long, value_name = "FILE")]
    labels: PathBuf,
    /// Output bag CSV
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Random seed [default: $PROTOMIL_SEED, else 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Digit that makes a bag positive
    #[arg(long, default_value_t = 9)]
    target: u8,
    /// Number of bags
    #[arg(long, default_value_t = 100)]
    n_bags: usize,
    /// Minimum images per bag
    #[arg(long, default_value_t = 5)]
    bag_min: usize,
    /// Maximum images per bag
    #[arg(long, default_value_t = 15)]
    bag_max: usize,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::runtime("io", format!("cannot write {}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn json_line<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(protomil::Error::from)?;
    s.push('\n');
    Ok(s)
}

fn seed_or_env(flag: Option<u64>) -> CliResult<u64> {
    Ok(match flag {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    })
}

#[derive(Serialize)]
struct HistoryDoc<'a> {
    seed: u64,
    init: InitStrategy,
    standardize: bool,
    hyperparams: &'a Hyperparams,
    objective: &'a [f64],
    accuracy: &'a [f64],
}

fn cmd_train(args: TrainArgs) -> CliResult {
    let r = args.model.resolve()?;
    let out = r
        .out(&args.out)
        .ok_or_else(|| CliError::usage("missing-argument", "no output directory (--out)"))?;
    let mut data = load_csv(r.data(&args.data)?)?;
    if r.standardize {
        let z = Standardizer::fit(&data);
        data = z.apply(&data)?;
        write_file(&out.join("standardizer.json"), json_line(&z)?.as_bytes())?;
    }
    let result = train(&data, &r.hyper, r.init, r.seed)?;
    let ckpt = Checkpoint {
        params: result.params,
        optimizer: Some(result.optimizer),
    };
    fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    ckpt.save(out.join("model.ckpt"))?;
    let doc = HistoryDoc {
        seed: r.seed,
        init: r.init,
        standardize: r.standardize,
        hyperparams: &r.hyper,
        objective: &result.history.objective,
        accuracy: &result.history.accuracy,
    };
    write_file(&out.join("history.json"), json_line(&doc)?.as_bytes())?;
    let last = result.history.len() - 1;
    println!(
        "trained {} bags for {} epochs: objective={:.6} train_accuracy={:.4}",
        data.len(),
        r.hyper.epochs,
        result.history.objective[last],
        result.history.accuracy[last]
    );
    Ok(())
}

fn cmd_cv(args: CvArgs) -> CliResult {
    let r = args.model.resolve()?;
    let data = load_csv(r.data(&args.data)?)?;
    let defaults = CvOptions::default();
    let opts = CvOptions {
        k: args.k.or(r.config.k).unwrap_or(defaults.k),
        repeats: args.repeats.or(r.config.repeats).unwrap_or(defaults.repeats),
        seed: r.seed,
        standardize: r.standardize,
        init: r.init,
        jobs: args.jobs.or(r.config.jobs).unwrap_or(defaults.jobs),
    };
    let report = cross_validate(&data, &r.hyper, &opts)?;
    let mut json = report.to_json()?;
    json.push('\n');
    if let Some(path) = r.out(&args.out) {
        write_file(&path, json.as_bytes())?;
    }
    print!("{json}");
    Ok(())
}

fn load_scoring_data(path: &Path, standardizer: Option<&Path>, params: &ModelParams) -> CliResult<Dataset> {
    let mut data = load_csv(path)?;
    if let Some(zpath) = standardizer {
        let text = fs::read_to_string(zpath).map_err(|e| {
            CliError::from(protomil::Error::Io {
                path: zpath.to_path_buf(),
                source: e,
            })
        })?;
        let z: Standardizer = serde_json::from_str(&text).map_err(protomil::Error::from)?;
        data = z.apply(&data)?;
    }
    if data.feature_count() != params.prototypes.width() {
        return Err(protomil::Error::WidthMismatch {
            expected: params.prototypes.width(),
            got: data.feature_count(),
        }
        .into());
    }
    Ok(data)
}

/// Hyperparameters that match a loaded model; only the shape and the
/// layer-norm stabilizer matter for scoring.
fn scoring_hyper(params: &ModelParams) -> Hyperparams {
    Hyperparams {
        prototypes: params.prototypes.count(),
        aggregators: params.aggregators,
        ..Hyperparams::default()
    }
}

fn cmd_predict(args: PredictArgs) -> CliResult {
    let params = Checkpoint::load(&args.checkpoint)?.params;
    let data = load_scoring_data(&args.data, args.standardizer.as_deref(), &params)?;
    let probs = predict_proba(data.bags(), &params, &scoring_hyper(&params))?;
    let mut csv = String::from("bag_id,probability,predicted_label\n");
    for (bag, p) in data.bags().iter().zip(probs) {
        writeln!(csv, "{},{p},{}", bag.id(), u8::from(p >= 0.5)).expect("writing to a String");
    }
    match args.out {
        Some(path) => write_file(&path, csv.as_bytes()),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn write_dataset(data: &Dataset, path: &Path) -> CliResult {
    let mut buf = Vec::new();
    write_csv(data, &mut buf)?;
    write_file(path, &buf)
}

fn cmd_gen_synth(args: GenSynthArgs) -> CliResult {
    let cfg = SynthConfig {
        n_bags: args.n_bags,
        instances_min: args.instances_min,
        instances_max: args.instances_max,
        features: args.features,
        witness_rate: args.witness_rate,
        separation: args.separation,
        seed: seed_or_env(args.seed)?,
    };
    let data = gen_synthetic(&cfg)?;
    write_dataset(&data, &args.out)?;
    println!(
        "wrote {} bags ({} positive) to {}",
        data.len(),
        data.positive_count(),
        args.out.display()
    );
    Ok(())
}

fn cmd_export(args: ExportArgs) -> CliResult {
    let params = Checkpoint::load(&args.checkpoint)?.params;
    let meta = ExportMeta {
        source: args.source.unwrap_or_else(|| args.checkpoint.display().to_string()),
    };
    let files = export_prototypes(&params, &meta, &args.out, args.image_side)?;
    println!("{}", files.prototypes_csv.display());
    println!("{}", files.weights_json.display());
    for img in &files.images {
        println!("{}", img.display());
    }
    Ok(())
}

/// Random parameters away from the kinks: Gaussian prototypes fitted to the
/// data and classifier weights bounded away from zero.
fn random_params(data: &Dataset, hyper: &Hyperparams, seed: u64) -> CliResult<ModelParams> {
    use rand::Rng;
    let protos = init_prototypes(data, hyper.prototypes, InitStrategy::Gaussian, seed)?;
    let mut params = ModelParams::new(protos, hyper.aggregators);
    let mut rng = substream(seed, &[tag::GRADCHECK]);
    for b in params.beta.iter_mut() {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        *b = sign * rng.random_range(0.1..1.0);
    }
    params.beta0 = rng.random_range(-0.5..0.5);
    Ok(params)
}

fn cmd_gradcheck(args: GradcheckArgs) -> CliResult {
    let r = args.model.resolve()?;
    let mut data = load_csv(r.data(&args.data)?)?;
    if r.standardize {
        data = Standardizer::fit(&data).apply(&data)?;
    }
    let (params, hyper) = match &args.checkpoint {
        Some(path) => {
            let params = Checkpoint::load(path)?.params;
            let hyper = Hyperparams {
                prototypes: params.prototypes.count(),
                aggregators: params.aggregators,
                ..r.hyper
            };
            (params, hyper)
        }
        None => (random_params(&data, &r.hyper, r.seed)?, r.hyper),
    };
    if data.feature_count() != params.prototypes.width() {
        return Err(protomil::Error::WidthMismatch {
            expected: params.prototypes.width(),
            got: data.feature_count(),
        }
        .into());
    }
    let mut total = None;
    for bag in data.bags() {
        let report = grad_check(&params, bag, &hyper, args.h, args.tol)?;
        match total.as_mut() {
            None => total = Some(report),
            Some(t) => t.merge(report)?,
        }
    }
    let total = total.expect("datasets are never empty");
    println!("{total}");
    if total.passed() {
        Ok(())
    } else {
        Err(CliError::runtime(
            "gradient-mismatch",
            format!("gradient check failed, max relative error {:e}", total.max_rel_error()),
        ))
    }
}

fn cmd_digit_bags(args: DigitBagsArgs) -> CliResult {
    let pool = load_idx_images(&args.images, &args.labels)?;
    let cfg = DigitBagConfig {
        target_digit: args.target,
        bag_size_min: args.bag_min,
        bag_size_max: args.bag_max,
        n_bags: args.n_bags,
        seed: seed_or_env(args.seed)?,
    };
    let data = build_digit_bags(&pool, &cfg)?;
    write_dataset(&data, &args.out)?;
    println!(
        "wrote {} bags ({} positive) to {}",
        data.len(),
        data.positive_count(),
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Cv(a) => cmd_cv(a),
        Command::Predict(a) => cmd_predict(a),
        Command::GenSynth(a) => cmd_gen_synth(a),
        Command::Export(a) => cmd_export(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::DigitBags(a) => cmd_digit_bags(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.message.replace('\n', " ");
            eprintln!("protomil: error[{}]: {message}", e.code);
            ExitCode::from(e.exit)
        }
    }
}
