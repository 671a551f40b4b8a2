//! `uavtraj` command line: dataset generation, model training, window
//! forecasting and the FDE benchmark.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use uavtraj::baselines::LinearFit;
use uavtraj::datagen;
use uavtraj::harness::{
    self, EvalConfig, FieldMapping, KalmanPredictor, LinearPredictor, MdnPredictor,
    ObservationNoise, Predictor, SequenceData,
};
use uavtraj::seqmodel;
use uavtraj::util::stream_rng;
use uavtraj::{GenConfig, TrainConfig};

#[derive(Parser)]
#[command(
    name = "uavtraj",
    about = "Synthetic UAV trajectory datasets and image-space prediction benchmarks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trajectory dataset (one JSON record per line).
    Generate(GenerateArgs),
    /// Train the mixture-density predictor on a dataset.
    Train(TrainArgs),
    /// Forecast every evaluation window of a dataset with one method.
    Predict(PredictArgs),
    /// Compare methods on a dataset or annotation files and write a report.
    Evaluate(EvaluateArgs),
    /// Re-render a report CSV as CSV or a markdown table.
    ExportReport(ExportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Generation config file (flat key = value). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured track count.
    #[arg(long)]
    count: Option<usize>,
    /// Output dataset path.
    #[arg(long)]
    out: PathBuf,
    /// Add observation noise to the persisted pixels (conditioning-ready
    /// copies; ground truth stays clean in `points_world`).
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Print per-reason rejection statistics.
    #[arg(long)]
    dump_rejections: bool,
    /// Worker threads (the dataset is identical for any value).
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Debug: write the cost matrix Q, constraints A and right-hand side b
    /// of run index 0 as plain-text matrices into this directory.
    #[arg(long)]
    dump_qp: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset (JSON lines).
    #[arg(long)]
    data: PathBuf,
    /// Training config file (flat key = value). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output model path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Kalman,
    Linear,
    Mdn,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Kalman => "kalman",
            Method::Linear => "linear",
            Method::Mdn => "mdn",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LinearFitArg {
    Ols,
    Endpoint,
}

#[derive(Args)]
struct PredictArgs {
    /// Prediction method.
    #[arg(long)]
    method: Method,
    /// Trained model file (required for --method mdn).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Observed window length.
    #[arg(long, default_value_t = 8)]
    obs: usize,
    /// Forecast horizon in frames.
    #[arg(long)]
    horizon: usize,
    /// Input dataset (JSON lines).
    #[arg(long = "in")]
    input: PathBuf,
    /// Output forecasts (JSON lines).
    #[arg(long)]
    out: PathBuf,
    /// Stride between evaluation windows.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Velocity fit of the linear method.
    #[arg(long, value_enum, default_value_t = LinearFitArg::Ols)]
    linear_fit: LinearFitArg,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Dataset (.jsonl) or an annotation JSON file / directory of them.
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated methods to compare.
    #[arg(long, value_delimiter = ',', default_value = "mdn,kalman,linear")]
    methods: Vec<Method>,
    /// Trained model file (required when methods include mdn).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Comma-separated forecast horizons.
    #[arg(long, value_delimiter = ',', default_value = "8,10,12")]
    horizons: Vec<usize>,
    /// Observed window length.
    #[arg(long, default_value_t = 8)]
    obs: usize,
    /// Stride between evaluation windows.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Observation noise added to conditioning windows.
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
    /// JSON file remapping annotation field names.
    #[arg(long)]
    schema_map: Option<PathBuf>,
    /// Restrict annotation files to one modality (eo or ir).
    #[arg(long)]
    modality: Option<String>,
    /// Output report CSV.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Csv,
    Md,
}

#[derive(Args)]
struct ExportArgs {
    /// Input report CSV.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output format.
    #[arg(long, value_enum)]
    format: ReportFormat,
    /// Output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate(args) => generate(args),
        Command::Train(args) => train(args),
        Command::Predict(args) => predict(args),
        Command::Evaluate(args) => evaluate(args),
        Command::ExportReport(args) => export_report(args),
    }
}

fn generate(args: GenerateArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => GenConfig::load(path).context("loading generation config")?,
        None => GenConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(count) = args.count {
        config.track_count = count;
    }

    if let Some(dir) = &args.dump_qp {
        dump_qp(&config, dir)?;
    }

    let dataset = if args.threads > 1 {
        datagen::generate_dataset_parallel(&config, args.threads)?
    } else {
        datagen::generate_dataset(&config)?
    };

    let tracks = match args.noise_sigma {
        None => dataset.tracks,
        Some(sigma) => {
            let mut rng = stream_rng(config.seed ^ 0x6e6f_6973, 0);
            dataset
                .tracks
                .iter()
                .map(|t| datagen::add_observation_noise(t, sigma, &mut rng))
                .collect()
        }
    };
    datagen::save_tracks(&args.out, &tracks)?;
    eprintln!("wrote {} tracks to {}", tracks.len(), args.out.display());
    if args.dump_rejections {
        eprintln!("{}", dataset.stats);
    }
    Ok(())
}

fn dump_qp(config: &GenConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let qp = datagen::qp_for_run(config, 0)?;
    let write_matrix = |name: &str, rows: usize, cols: usize, get: &dyn Fn(usize, usize) -> f64| {
        let mut text = String::new();
        for r in 0..rows {
            let row: Vec<String> = (0..cols).map(|c| format!("{:.17e}", get(r, c))).collect();
            text.push_str(&row.join(" "));
            text.push('\n');
        }
        std::fs::write(dir.join(name), text)
    };
    write_matrix("Q.txt", qp.cost.nrows(), qp.cost.ncols(), &|r, c| {
        qp.cost[(r, c)]
    })?;
    write_matrix(
        "A.txt",
        qp.constraints.nrows(),
        qp.constraints.ncols(),
        &|r, c| qp.constraints[(r, c)],
    )?;
    write_matrix("b.txt", qp.rhs.len(), 1, &|r, _| qp.rhs[r])?;
    eprintln!("wrote QP of run 0 to {}", dir.display());
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => TrainConfig::load(path).context("loading training config")?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let tracks = datagen::load_tracks(&args.data)?;
    eprintln!(
        "training on {} tracks ({} epochs, hidden {})",
        tracks.len(),
        config.epochs,
        config.hidden_dim
    );
    let outcome = seqmodel::train(&tracks, &config)?;
    seqmodel::save_model(&args.out, &outcome.model, Some(&config))?;
    let first = outcome.loss_curve.first().copied().unwrap_or(f64::NAN);
    let last = outcome.loss_curve.last().copied().unwrap_or(f64::NAN);
    eprintln!(
        "wrote model to {} (epoch losses {first:.4} -> {last:.4})",
        args.out.display()
    );
    Ok(())
}

fn build_predictor(
    method: Method,
    model_path: Option<&PathBuf>,
    fit: LinearFit,
) -> Result<Box<dyn Predictor>> {
    Ok(match method {
        Method::Kalman => Box::new(KalmanPredictor::default()),
        Method::Linear => Box::new(LinearPredictor { fit }),
        Method::Mdn => {
            let path = model_path
                .with_context(|| "--model is required for the mdn method".to_string())?;
            let (model, _) = seqmodel::load_model(path)?;
            Box::new(MdnPredictor { model })
        }
    })
}

fn predict(args: PredictArgs) -> Result<()> {
    let fit = match args.linear_fit {
        LinearFitArg::Ols => LinearFit::LeastSquares,
        LinearFitArg::Endpoint => LinearFit::EndpointDifference,
    };
    let predictor = build_predictor(args.method, args.model.as_ref(), fit)?;
    let tracks = datagen::load_tracks(&args.input)?;

    let mut out = String::new();
    let mut windows = 0usize;
    for track in &tracks {
        let seq = SequenceData::from(track);
        for window in harness::extract_windows(&seq.points, args.obs, args.horizon, args.stride) {
            let forecast = predictor
                .forecast(&window.observed, args.horizon)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            let record = serde_json::json!({
                "track_id": track.id,
                "window_start": window.start,
                "method": args.method.name(),
                "horizon": args.horizon,
                "mean": forecast,
            });
            out.push_str(&record.to_string());
            out.push('\n');
            windows += 1;
        }
    }
    if windows == 0 {
        bail!("no windows of length {} + {}", args.obs, args.horizon);
    }
    std::fs::write(&args.out, out)?;
    eprintln!("wrote {windows} forecasts to {}", args.out.display());
    Ok(())
}

fn load_sequences(args: &EvaluateArgs) -> Result<Vec<SequenceData>> {
    let mapping = match &args.schema_map {
        Some(path) => FieldMapping::load(path)?,
        None => FieldMapping::default(),
    };
    let modality = args
        .modality
        .as_deref()
        .map(|m| m.parse::<harness::Modality>().map_err(anyhow::Error::msg))
        .transpose()?;

    if args.data.is_dir() {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&args.data)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut sequences = Vec::new();
        for path in paths {
            let seq = harness::ingest_annotations(&path, &mapping)?;
            if modality.is_none() || seq.modality == modality {
                sequences.push(SequenceData::from(&seq));
            }
        }
        Ok(sequences)
    } else if args.data.extension().is_some_and(|x| x == "json") {
        let seq = harness::ingest_annotations(&args.data, &mapping)?;
        Ok(vec![SequenceData::from(&seq)])
    } else {
        let tracks = datagen::load_tracks(&args.data)?;
        Ok(tracks.iter().map(SequenceData::from).collect())
    }
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let sequences = load_sequences(&args)?;
    if sequences.is_empty() {
        bail!("no sequences found under {}", args.data.display());
    }
    let mut predictors: Vec<Box<dyn Predictor>> = Vec::new();
    for method in &args.methods {
        predictors.push(build_predictor(*method, args.model.as_ref(), LinearFit::default())?);
    }
    let refs: Vec<&dyn Predictor> = predictors.iter().map(|p| p.as_ref()).collect();
    let config = EvalConfig {
        horizons: args.horizons.clone(),
        observed_len: args.obs,
        stride: args.stride,
        noise: args.noise_sigma.map(|sigma| ObservationNoise {
            sigma,
            seed: args.noise_seed,
        }),
    };
    let report = harness::evaluate(&refs, &sequences, &config)?;
    harness::save_report(&args.report, &report)?;
    print!("{}", harness::report_to_markdown(&report));
    eprintln!("wrote report to {}", args.report.display());
    Ok(())
}

fn export_report(args: ExportArgs) -> Result<()> {
    let report = harness::load_report(&args.input)?;
    let rendered = match args.format {
        ReportFormat::Csv => harness::report_to_csv(&report),
        ReportFormat::Md => harness::report_to_markdown(&report),
    };
    match &args.out {
        Some(path) => std::fs::write(path, rendered)?,
        None => print!("{rendered}"),
    }
    Ok(())
}
