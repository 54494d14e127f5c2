//! Command-line interface: one subcommand per pipeline stage plus the
//! end-to-end `reproduce` run. Every artifact-producing command writes a
//! `<artifact>.manifest.json` next to its output; `replay` re-executes the
//! command recorded in a manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::channel_markov::{self, ElevationParams, TraceDataset, EXPERIMENT_ANGLES};
use crate::dataio::{self, ReportFormat};
use crate::error::{Error, ErrorClass, Result};
use crate::gen_models::{self, GenerativeModel, ModelFamily, TrainingConfig};
use crate::metrics::{self, MarkovSource, Metric, MetricCurve, MetricReport, DEFAULT_KL_EPSILON};
use crate::rng;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SATLOS_OUT_DIR";

/// KL threshold for the convergence comparison of the two model families.
pub const CONVERGENCE_KL_THRESHOLD: f64 = 0.05;

/// Angle whose training curves are recorded by `reproduce`.
pub const CURVE_ANGLE: u32 = 70;

#[derive(Debug, Parser)]
#[command(name = "satlos", version, about = "LOS/NLOS satellite channel traces and tabular generative models")]
pub struct Cli {
    /// Directory for outputs whose path is not given explicitly.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = ".")]
    pub out_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate Markov LOS/NLOS traces, one column per elevation angle.
    GenTraces(GenTracesArgs),
    /// Train a GAN or VAE on a trace table and save the model.
    Train(TrainArgs),
    /// Draw synthetic rows from a saved model.
    Sample(SampleArgs),
    /// Compare a real and a synthetic table column by column.
    Evaluate(EvaluateArgs),
    /// Generate data, train both models and run the repeated evaluation.
    Reproduce(ReproduceArgs),
    /// Print the stationary LOS probability of every built-in angle.
    Stationary,
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct GenTracesArgs {
    #[arg(long, value_delimiter = ',', default_values_t = EXPERIMENT_ANGLES.to_vec())]
    pub angles: Vec<u32>,
    #[arg(long, default_value_t = 100_000)]
    pub rows: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV [default: <out-dir>/traces.csv]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Gan,
    Vae,
}

impl From<FamilyArg> for ModelFamily {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Gan => ModelFamily::Gan,
            FamilyArg::Vae => ModelFamily::Vae,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long = "model", value_enum)]
    pub family: FamilyArg,
    /// Training table (CSV).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 50)]
    pub batch: usize,
    #[arg(long, default_value_t = 2e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Record per-epoch KL and Wasserstein distance at this angle.
    #[arg(long)]
    pub track_angle: Option<u32>,
    /// Reference table for the per-epoch curve [default: the training data]
    #[arg(long, requires = "track_angle")]
    pub holdout: Option<PathBuf>,
    /// Model file [default: <out-dir>/<model>.model]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Curve CSV [default: <model file>.curve.csv]
    #[arg(long, requires = "track_angle")]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Model file.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    pub rows: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV [default: <out-dir>/synthetic.csv]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Table,
    Json,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Table => ReportFormat::HumanTable,
            FormatArg::Json => ReportFormat::Machine,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub real: PathBuf,
    #[arg(long)]
    pub synth: PathBuf,
    /// KL smoothing constant.
    #[arg(long, default_value_t = DEFAULT_KL_EPSILON)]
    pub epsilon: f64,
    #[arg(long, value_enum, default_value_t = FormatArg::Table)]
    pub format: FormatArg,
    /// Report file [default: <out-dir>/report.txt or report.json]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 100k rows, 50 repetitions, 100 epochs.
    Full,
    /// 10k rows, 10 repetitions, 50 epochs.
    Desk,
}

impl Preset {
    /// `(rows, reps, epochs)`
    pub fn scale(self) -> (usize, usize, usize) {
        match self {
            Preset::Full => (100_000, 50, 100),
            Preset::Desk => (10_000, 10, 50),
        }
    }
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    #[arg(long, value_enum, default_value_t = Preset::Full)]
    pub preset: Preset,
    /// Rows of the training table and of every evaluation draw.
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory [default: <out-dir>]
    #[arg(long)]
    pub outdir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

/// Provenance of one artifact-producing command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments with every default resolved; `satlos <argv...>` reproduces
    /// the outputs.
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub version: String,
    pub duration_secs: f64,
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}

struct ManifestBuilder {
    command: &'static str,
    argv: Vec<String>,
    config: serde_json::Value,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<PathBuf>,
    started: Instant,
}

impl ManifestBuilder {
    fn new(command: &'static str) -> Self {
        ManifestBuilder {
            command,
            argv: vec![command.to_string()],
            config: serde_json::Value::Null,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            started: Instant::now(),
        }
    }

    fn arg(mut self, flag: &str, value: impl ToString) -> Self {
        self.argv.push(format!("--{flag}"));
        self.argv.push(value.to_string());
        self
    }

    fn seed(mut self, name: &str, seed: u64) -> Self {
        self.seeds.insert(name.to_string(), seed);
        self
    }

    fn input(mut self, path: &Path) -> Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    fn config<T: Serialize>(mut self, config: &T) -> Self {
        self.config = serde_json::to_value(config).expect("config serializes");
        self
    }

    /// Write the manifest next to `primary`.
    fn finish(self, primary: &Path, outputs: Vec<PathBuf>) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            argv: self.argv,
            config: self.config,
            seeds: self.seeds,
            inputs: self.inputs,
            outputs,
            version: env!("CARGO_PKG_VERSION").to_string(),
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        dataio::write_json(&manifest, manifest_path(primary))?;
        Ok(manifest)
    }
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn path_arg(p: &Path) -> String {
    p.display().to_string()
}

/// Exit status for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err.class() {
        ErrorClass::Usage => 2,
        ErrorClass::Validation => 3,
        ErrorClass::Runtime => 4,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let out_dir = cli.out_dir;
    match cli.command {
        Command::GenTraces(a) => cmd_gen_traces(&a, &out_dir).map(drop),
        Command::Train(a) => cmd_train(&a, &out_dir).map(drop),
        Command::Sample(a) => cmd_sample(&a, &out_dir).map(drop),
        Command::Evaluate(a) => {
            let report = cmd_evaluate(&a, &out_dir)?;
            print!("{}", dataio::report_to_table(&report, ""));
            Ok(())
        }
        Command::Reproduce(a) => {
            let outcome = cmd_reproduce(&ReproduceConfig::from_args(&a, &out_dir))?;
            print!("{}", outcome.summary());
            Ok(())
        }
        Command::Stationary => {
            print!("{}", stationary_table()?);
            Ok(())
        }
        Command::Replay(a) => cmd_replay(&a.manifest, &out_dir),
    }
}

pub fn cmd_gen_traces(args: &GenTracesArgs, out_dir: &Path) -> Result<PathBuf> {
    let out = args.out.clone().unwrap_or_else(|| out_dir.join("traces.csv"));
    let manifest = ManifestBuilder::new("gen-traces")
        .arg("angles", join(&args.angles))
        .arg("rows", args.rows)
        .arg("seed", args.seed)
        .arg("out", path_arg(&out))
        .seed("traces", args.seed)
        .config(&serde_json::json!({ "angles": args.angles, "rows": args.rows }));
    let data = channel_markov::generate_dataset(&args.angles, args.rows, args.seed)?;
    dataio::write_dataset(&data, &out)?;
    log::info!("wrote {} rows to {}", data.rows(), out.display());
    manifest.finish(&out, vec![out.clone()])?;
    Ok(out)
}

fn training_config(args: &TrainArgs) -> TrainingConfig {
    TrainingConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        learning_rate: args.lr,
        seed: args.seed,
        track_angle: args.track_angle,
        ..TrainingConfig::default()
    }
}

fn train_family(
    family: ModelFamily,
    data: &TraceDataset,
    config: &TrainingConfig,
    holdout: Option<&TraceDataset>,
) -> Result<(GenerativeModel, MetricCurve)> {
    Ok(match family {
        ModelFamily::Gan => {
            let out = gen_models::train_gan_with_holdout(data, config, holdout)?;
            (GenerativeModel::Gan(out.model), out.curve)
        }
        ModelFamily::Vae => {
            let out = gen_models::train_vae_with_holdout(data, config, holdout)?;
            (GenerativeModel::Vae(out.model), out.curve)
        }
    })
}

pub fn cmd_train(args: &TrainArgs, out_dir: &Path) -> Result<PathBuf> {
    let family = ModelFamily::from(args.family);
    let config = training_config(args);
    config.validate()?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| out_dir.join(format!("{}.model", family.key())));
    let curve_path = args.track_angle.map(|_| {
        args.curve.clone().unwrap_or_else(|| {
            let mut name = out.file_name().unwrap_or_default().to_os_string();
            name.push(".curve.csv");
            out.with_file_name(name)
        })
    });

    let mut manifest = ManifestBuilder::new("train")
        .arg("model", family.key())
        .arg("data", path_arg(&args.data))
        .arg("epochs", args.epochs)
        .arg("batch", args.batch)
        .arg("lr", args.lr)
        .arg("seed", args.seed)
        .arg("out", path_arg(&out))
        .input(&args.data)
        .seed("training", args.seed)
        .config(&config);
    if let Some(angle) = args.track_angle {
        manifest = manifest.arg("track-angle", angle);
    }
    if let Some(h) = &args.holdout {
        manifest = manifest.arg("holdout", path_arg(h)).input(h);
    }
    if let Some(c) = &curve_path {
        manifest = manifest.arg("curve", path_arg(c));
    }

    let data = dataio::read_dataset(&args.data)?;
    let holdout = args.holdout.as_ref().map(dataio::read_dataset).transpose()?;
    let (model, curve) = train_family(family, &data, &config, holdout.as_ref())?;
    gen_models::save_model(&model, &out)?;
    let mut outputs = vec![out.clone()];
    if let Some(c) = curve_path {
        dataio::write_curve(&curve, &c)?;
        outputs.push(c);
    }
    log::info!("saved {} model to {}", family.key(), out.display());
    manifest.finish(&out, outputs)?;
    Ok(out)
}

pub fn cmd_sample(args: &SampleArgs, out_dir: &Path) -> Result<PathBuf> {
    let out = args.out.clone().unwrap_or_else(|| out_dir.join("synthetic.csv"));
    let manifest = ManifestBuilder::new("sample")
        .arg("model", path_arg(&args.model))
        .arg("rows", args.rows)
        .arg("seed", args.seed)
        .arg("out", path_arg(&out))
        .input(&args.model)
        .seed("sampling", args.seed)
        .config(&serde_json::json!({ "rows": args.rows }));
    let model = gen_models::load_model(&args.model)?;
    let data = model.sample(args.rows, args.seed)?;
    dataio::write_dataset(&data, &out)?;
    manifest.finish(&out, vec![out.clone()])?;
    Ok(out)
}

pub fn cmd_evaluate(args: &EvaluateArgs, out_dir: &Path) -> Result<MetricReport> {
    let default_name = match args.format {
        FormatArg::Table => "report.txt",
        FormatArg::Json => "report.json",
    };
    let out = args.out.clone().unwrap_or_else(|| out_dir.join(default_name));
    let format_key = match args.format {
        FormatArg::Table => "table",
        FormatArg::Json => "json",
    };
    let manifest = ManifestBuilder::new("evaluate")
        .arg("real", path_arg(&args.real))
        .arg("synth", path_arg(&args.synth))
        .arg("epsilon", args.epsilon)
        .arg("format", format_key)
        .arg("out", path_arg(&out))
        .input(&args.real)
        .input(&args.synth)
        .config(&serde_json::json!({ "epsilon": args.epsilon }));
    if !(args.epsilon >= 0.0) {
        return Err(Error::InvalidParameter("epsilon must be non-negative".into()));
    }
    let real = dataio::read_dataset(&args.real)?;
    let synth = dataio::read_dataset(&args.synth)?;
    let report = metrics::compare_datasets(&real, &synth, args.epsilon)?;
    dataio::emit_report(&report, args.format.into(), &out)?;
    manifest.finish(&out, vec![out.clone()])?;
    Ok(report)
}

/// Stationary LOS probability per built-in angle, one row each.
pub fn stationary_table() -> Result<String> {
    let mut out = format!("{:>6}  {:>14}  {:>14}  {:>8}\n", "angle", "g", "b", "P(LOS)");
    for p in channel_markov::builtin_table() {
        let pi = channel_markov::stationary_los_probability(&p)?;
        let _ = writeln!(out, "{:>6}  {:>14}  {:>14}  {:>8.5}", format!("{}°", p.angle_deg), p.g, p.b, pi);
    }
    Ok(out)
}

pub fn cmd_replay(manifest: &Path, out_dir: &Path) -> Result<()> {
    let m: RunManifest = dataio::read_json(manifest)?;
    let mut argv = vec!["satlos".to_string(), "--out-dir".to_string(), path_arg(out_dir)];
    argv.extend(m.argv);
    let cli = Cli::try_parse_from(&argv).map_err(|e| Error::Malformed {
        path: manifest.to_path_buf(),
        reason: e.to_string(),
    })?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(Error::Malformed {
            path: manifest.to_path_buf(),
            reason: "a manifest cannot replay another manifest".into(),
        });
    }
    run(cli)
}

/// Settings of an end-to-end run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproduceConfig {
    pub rows: usize,
    pub reps: usize,
    pub epochs: usize,
    pub seed: u64,
    pub outdir: PathBuf,
}

impl ReproduceConfig {
    pub fn preset(preset: Preset, seed: u64, outdir: PathBuf) -> Self {
        let (rows, reps, epochs) = preset.scale();
        ReproduceConfig {
            rows,
            reps,
            epochs,
            seed,
            outdir,
        }
    }

    pub fn from_args(args: &ReproduceArgs, out_dir: &Path) -> Self {
        let mut c = Self::preset(args.preset, args.seed, args.outdir.clone().unwrap_or_else(|| out_dir.to_path_buf()));
        c.rows = args.rows.unwrap_or(c.rows);
        c.reps = args.reps.unwrap_or(c.reps);
        c.epochs = args.epochs.unwrap_or(c.epochs);
        c
    }

    pub fn training_config(&self, family: ModelFamily) -> TrainingConfig {
        TrainingConfig {
            epochs: self.epochs,
            seed: rng::derive_seed(self.seed, family.key(), 0),
            track_angle: Some(CURVE_ANGLE),
            ..TrainingConfig::default()
        }
    }
}

/// Whether the VAE reaches the KL threshold no later than the GAN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceComparison {
    pub angle: u32,
    pub threshold: f64,
    pub gan_epoch: Option<usize>,
    pub vae_epoch: Option<usize>,
}

impl ConvergenceComparison {
    pub fn from_curves(gan: &MetricCurve, vae: &MetricCurve) -> Self {
        ConvergenceComparison {
            angle: CURVE_ANGLE,
            threshold: CONVERGENCE_KL_THRESHOLD,
            gan_epoch: gan.first_epoch_at_or_below(Metric::Kl, CONVERGENCE_KL_THRESHOLD),
            vae_epoch: vae.first_epoch_at_or_below(Metric::Kl, CONVERGENCE_KL_THRESHOLD),
        }
    }

    pub fn vae_no_later(&self) -> bool {
        match (self.vae_epoch, self.gan_epoch) {
            (Some(v), Some(g)) => v <= g,
            (Some(_), None) => true,
            (None, _) => false,
        }
    }

    pub fn verdict(&self) -> &'static str {
        if self.vae_no_later() {
            "PASS"
        } else {
            "WARN"
        }
    }

    pub fn describe(&self) -> String {
        let show = |e: Option<usize>| e.map_or_else(|| "never".to_string(), |e| e.to_string());
        format!(
            "first epoch with KL <= {} at {}°: gan={} vae={}\nVAE reaches the threshold no later than the GAN: {}\n",
            self.threshold,
            self.angle,
            show(self.gan_epoch),
            show(self.vae_epoch),
            self.verdict()
        )
    }
}

/// Everything an end-to-end run produced.
#[derive(Debug, Clone)]
pub struct ReproduceOutcome {
    pub config: ReproduceConfig,
    pub training_data: TraceDataset,
    pub gan: GenerativeModel,
    pub vae: GenerativeModel,
    pub gan_report: MetricReport,
    pub vae_report: MetricReport,
    pub gan_curve: MetricCurve,
    pub vae_curve: MetricCurve,
    pub convergence: ConvergenceComparison,
    pub outputs: Vec<PathBuf>,
}

impl ReproduceOutcome {
    pub fn summary(&self) -> String {
        let mut s = dataio::report_to_table(&self.gan_report, "GAN");
        s.push('\n');
        s.push_str(&dataio::report_to_table(&self.vae_report, "VAE"));
        s.push('\n');
        s.push_str(&self.convergence.describe());
        s
    }
}

/// Per-angle LOS/NLOS shares: theory, training data, and both models.
fn los_fraction_csv(params: &[ElevationParams], outcome_parts: (&TraceDataset, &MetricReport, &MetricReport)) -> Result<String> {
    let (data, gan, vae) = outcome_parts;
    let mut out = String::from("angle,source,los,nlos\n");
    let real = data.los_fractions();
    for (i, p) in params.iter().enumerate() {
        let pi = channel_markov::stationary_los_probability(p)?;
        let angle = p.angle_deg;
        let synth = |r: &MetricReport| {
            r.los_fractions
                .iter()
                .find(|f| f.angle == angle)
                .map_or(f64::NAN, |f| f.synthetic)
        };
        for (source, v) in [
            ("stationary", pi),
            ("training", real[i]),
            ("gan", synth(gan)),
            ("vae", synth(vae)),
        ] {
            let _ = writeln!(out, "{angle},{source},{v},{}", 1.0 - v);
        }
    }
    Ok(out)
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

/// Generate training data, train both families with a 70° curve, evaluate
/// each against fresh Markov draws, and write all reports under
/// `config.outdir`.
pub fn cmd_reproduce(config: &ReproduceConfig) -> Result<ReproduceOutcome> {
    let manifest = ManifestBuilder::new("reproduce")
        .arg("rows", config.rows)
        .arg("reps", config.reps)
        .arg("epochs", config.epochs)
        .arg("seed", config.seed)
        .arg("outdir", path_arg(&config.outdir))
        .seed("master", config.seed)
        .config(config);
    let dir = &config.outdir;
    let params: Vec<ElevationParams> = EXPERIMENT_ANGLES
        .iter()
        .map(|&a| channel_markov::lookup(a))
        .collect::<Result<_>>()?;
    let mut outputs = Vec::new();

    let data_seed = rng::derive_seed(config.seed, "training-data", 0);
    let holdout_seed = rng::derive_seed(config.seed, "holdout", 0);
    let eval_seed = rng::derive_seed(config.seed, "evaluation", 0);
    let (data, holdout) = stage("generate", (|| {
        let data = channel_markov::generate_dataset_from(&params, config.rows, data_seed)?;
        let holdout = channel_markov::generate_dataset_from(&params, config.rows, holdout_seed)?;
        outputs.push(dataio::write_dataset(&data, dir.join("training.csv"))?.path);
        outputs.push(dataio::write_dataset(&holdout, dir.join("holdout.csv"))?.path);
        Ok((data, holdout))
    })())?;

    let mut trained = Vec::new();
    for (family, name) in [(ModelFamily::Gan, "train-gan"), (ModelFamily::Vae, "train-vae")] {
        let tc = config.training_config(family);
        log::info!("training {} for {} epochs on {} rows", family.key(), tc.epochs, data.rows());
        let (model, curve) = stage(name, (|| {
            let (model, curve) = train_family(family, &data, &tc, Some(&holdout))?;
            let model_path = dir.join(format!("{}.model", family.key()));
            gen_models::save_model(&model, &model_path)?;
            let curve_path = dir.join(format!("{}_curve_{}.csv", family.key(), CURVE_ANGLE));
            dataio::write_curve(&curve, &curve_path)?;
            outputs.push(model_path);
            outputs.push(curve_path);
            Ok((model, curve))
        })())?;
        trained.push((model, curve));
    }
    let (vae, vae_curve) = trained.pop().expect("two models");
    let (gan, gan_curve) = trained.pop().expect("two models");

    let real_source = MarkovSource::new(params.clone());
    let mut reports = Vec::new();
    for (model, name) in [(&gan, "evaluate-gan"), (&vae, "evaluate-vae")] {
        let key = model.family().key();
        log::info!("evaluating {key}: {} repetitions of {} rows", config.reps, config.rows);
        let report = stage(name, (|| {
            let report = metrics::evaluate_repeated(&real_source, model, config.reps, config.rows, eval_seed, DEFAULT_KL_EPSILON)?;
            let title = key.to_uppercase();
            let table = dir.join(format!("{key}_report.txt"));
            let json = dir.join(format!("{key}_report.json"));
            dataio::write_text(&table, &dataio::report_to_table(&report, &title))?;
            dataio::emit_report(&report, ReportFormat::Machine, &json)?;
            outputs.push(table);
            outputs.push(json);
            Ok(report)
        })())?;
        reports.push(report);
    }
    let vae_report = reports.pop().expect("two reports");
    let gan_report = reports.pop().expect("two reports");

    let convergence = ConvergenceComparison::from_curves(&gan_curve, &vae_curve);
    stage("summarize", (|| {
        let fractions = dir.join("los_fractions.csv");
        dataio::write_text(&fractions, &los_fraction_csv(&params, (&data, &gan_report, &vae_report))?)?;
        let conv = dir.join("convergence.txt");
        dataio::write_text(&conv, &convergence.describe())?;
        let stat = dir.join("stationary.txt");
        dataio::write_text(&stat, &stationary_table()?)?;
        outputs.extend([fractions, conv, stat]);
        Ok(())
    })())?;

    manifest
        .seed("training-data", data_seed)
        .seed("holdout", holdout_seed)
        .seed("evaluation", eval_seed)
        .seed("gan", config.training_config(ModelFamily::Gan).seed)
        .seed("vae", config.training_config(ModelFamily::Vae).seed)
        .finish(&dir.join("reproduce"), outputs.clone())?;

    Ok(ReproduceOutcome {
        config: config.clone(),
        training_data: data,
        gan,
        vae,
        gan_report,
        vae_report,
        gan_curve,
        vae_curve,
        convergence,
        outputs,
    })
}
