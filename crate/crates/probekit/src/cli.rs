// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage errors (bad flags, unknown
//! subcommands), 2 for anything caused by input data or the file system.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{ArgGroup, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use probekit_core::alignment::SubspacePair;
use probekit_core::pca::explained_variance_report;
use probekit_core::pipeline::{
    normalized_layer, rank_report, EvalReport, PipelineConfig, Setting, DEFAULT_BOOTSTRAP,
    DEFAULT_TAIL_P, RANK_LENGTH_PS,
};
use probekit_core::probes::{diffmean, score_labeled, train_hinge, train_logistic, train_tuned};
use probekit_core::steering::{
    aggregate_scores, build_steering_vector, GenerationRow, JudgeRow, Normalization,
};
use probekit_core::{
    fit_pca, map_back, metrics, pool, ActivationFile, ActivationKind, DirectionSpace, Label,
    PcaModel, PoolingSpec, ProbeDirection, ProbeKind, Split, TrainConfig,
};
use serde_json::Value;

use crate::error::{Error, Result, WithPath};
use crate::experiment::{self, Experiment};
use crate::model_io::{
    read_direction, read_pca, write_direction, write_pca, write_steering, PcaDescriptor,
    TrainingInfo,
};
use crate::report::{align_csv, read_report, render_svg, write_csv, write_report_json, AlignRow};
use crate::store::{
    check_output, encode_activation, hash_file, read_activation_file, read_json, read_meta,
    write_activation_file, write_bytes, write_json,
};
use crate::synth::{generate, write_synthetic, DeltaMu, SyntheticSpec};
use crate::workspace::DataSource;

#[derive(Debug, Parser)]
#[command(
    name = "probekit",
    version,
    about = "Linear probes, PCA subspaces and transfer reports over hidden-state activations",
    subcommand_required = true,
    arg_required_else_help = true
)]
pub struct Cli {
    /// JSON file of flag defaults keyed by subcommand (`{"sweep": {"k": 16}}`).
    /// Flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pool a token-level activation file into one vector per example.
    Pool(PoolArgs),
    /// Fit, apply and inspect PCA models.
    #[command(subcommand)]
    Pca(PcaCommand),
    /// Train one probe on one layer.
    Train(TrainArgs),
    /// Test AUROC of every probe across layers.
    Sweep(ExperimentArgs),
    /// Cosine, Spearman and tail Jaccard between the three probes, per layer.
    Agree(ExperimentArgs),
    /// Apply directions learned on one dataset to another.
    Transfer(TransferArgs),
    /// Principal angles and mean PC cosine between PCA subspaces.
    Align(AlignArgs),
    /// Rank examples by a direction's score.
    Rank(RankArgs),
    /// Build steering vectors and aggregate judge scores.
    #[command(subcommand)]
    Steer(SteerCommand),
    /// Write a synthetic two-class dataset.
    Synth(SynthArgs),
    /// Merge reports and render CSV, JSON or SVG.
    Report(ReportArgs),
}

#[derive(Debug, Subcommand)]
pub enum PcaCommand {
    /// Fit a PCA model on one layer's training split.
    Fit(PcaFitArgs),
    /// Project an example-level activation file onto a model's components.
    Transform(PcaTransformArgs),
    /// Explained-variance table of a model.
    Report(PcaReportArgs),
}

#[derive(Debug, Subcommand)]
pub enum SteerCommand {
    /// Turn a probe direction into a steering vector.
    Build(SteerBuildArgs),
    /// Mean judge score per (layer, alpha, context label).
    Aggregate(SteerAggregateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Directory holding `<dataset>__<split>__L<layer>.rqac` files.
    #[arg(long, value_name = "DIR")]
    pub dir: PathBuf,
    #[arg(long)]
    pub dataset: String,
    /// Metadata file [default: <dir>/<dataset>__meta.json]
    #[arg(long, value_name = "FILE")]
    pub meta: Option<PathBuf>,
}

impl DataArgs {
    fn open(&self) -> Result<DataSource> {
        DataSource::open(&self.dir, &self.dataset, self.meta.as_deref())
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainFlags {
    #[arg(long, default_value_t = 1e-2)]
    pub l2_lambda: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = 1.0)]
    pub step_size: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Pick the L2 strength from {1e-3, 1e-2, 1e-1} by validation AUROC.
    #[arg(long)]
    pub tune: bool,
}

impl TrainFlags {
    fn config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            l2_lambda: self.l2_lambda,
            max_iters: self.max_iters,
            tol: self.tol,
            step_size: self.step_size,
            seed: self.seed,
            ..TrainConfig::default()
        };
        cfg.validate().map_err(|e| Error::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct PoolArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub meta: PathBuf,
    /// last | mean | lastk | span
    #[arg(long, default_value = "last")]
    pub strategy: String,
    /// Token count for `--strategy lastk`.
    #[arg(long)]
    pub k: Option<usize>,
    /// Split held by the file when it is not the whole dataset
    /// [default: taken from the file name]
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct PcaFitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub layer: u32,
    #[arg(long, default_value_t = 64)]
    pub k: usize,
    #[arg(long, default_value = "last", value_parser = parse_pooling)]
    pub pooling: PoolingSpec,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct PcaTransformArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct PcaReportArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// `.json` for JSON, anything else for CSV [default: CSV on stdout]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("space").args(["pca", "raw"]).required(true)))]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub layer: u32,
    #[arg(long, value_parser = parse_probe)]
    pub probe: ProbeKind,
    /// Train in the coordinates of this PCA model.
    #[arg(long, value_name = "FILE", overrides_with = "raw")]
    pub pca: Option<PathBuf>,
    /// Train in the hidden space.
    #[arg(long, overrides_with = "pca")]
    pub raw: bool,
    #[arg(long, default_value = "last", value_parser = parse_pooling)]
    pub pooling: PoolingSpec,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentFlags {
    /// `all` or a comma-separated list.
    #[arg(long, default_value = "all")]
    pub layers: String,
    /// PCA components fitted per layer.
    #[arg(long, default_value_t = 64, overrides_with = "raw")]
    pub k: usize,
    /// Probe the hidden space without PCA.
    #[arg(long, overrides_with = "k")]
    pub raw: bool,
    #[arg(long, default_value = "last", value_parser = parse_pooling)]
    pub pooling: PoolingSpec,
    /// Tail fraction for Jaccard.
    #[arg(long, default_value_t = DEFAULT_TAIL_P)]
    pub tail_p: f64,
    /// Bootstrap resamples for Spearman bands (0 disables).
    #[arg(long, default_value_t = DEFAULT_BOOTSTRAP)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    pub bootstrap_seed: u64,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Output files; `.csv` or `.json`. Comma-separated or repeated.
    #[arg(long, value_name = "FILE", required = true, value_delimiter = ',')]
    pub out: Vec<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

impl ExperimentFlags {
    fn experiment(&self) -> Result<Experiment> {
        if !(self.tail_p > 0.0 && self.tail_p <= 1.0) {
            return Err(Error::Usage("--tail-p must be in (0, 1]".into()));
        }
        Ok(Experiment {
            pooling: self.pooling,
            pca_k: if self.raw { 0 } else { self.k },
            cfg: PipelineConfig {
                train: self.train.config()?,
                tune: self.train.tune,
                tail_p: self.tail_p,
                bootstrap_resamples: self.bootstrap,
                bootstrap_seed: self.bootstrap_seed,
            },
        })
    }

    fn requested_layers(&self) -> Result<Option<Vec<u32>>> {
        parse_layers(&self.layers)
    }
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub flags: ExperimentFlags,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[arg(long, value_name = "DIR")]
    pub source_dir: PathBuf,
    /// Source dataset name.
    #[arg(long)]
    pub source: String,
    #[arg(long, value_name = "FILE")]
    pub source_meta: Option<PathBuf>,
    /// [default: --source-dir]
    #[arg(long, value_name = "DIR")]
    pub target_dir: Option<PathBuf>,
    /// Target dataset name.
    #[arg(long)]
    pub target: String,
    #[arg(long, value_name = "FILE")]
    pub target_meta: Option<PathBuf>,
    #[command(flatten)]
    pub flags: ExperimentFlags,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// PCA models, paired position by position with `--b`.
    #[arg(long, value_name = "FILE", required = true, value_delimiter = ',')]
    pub a: Vec<PathBuf>,
    #[arg(long, value_name = "FILE", required = true, value_delimiter = ',')]
    pub b: Vec<PathBuf>,
    /// Model column [default: from the first model's setting]
    #[arg(long)]
    pub model: Option<String>,
    /// CSV output [default: stdout]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long, value_name = "FILE")]
    pub direction: PathBuf,
    /// Model used to map a PCA-space direction back to the hidden space.
    #[arg(long, value_name = "FILE")]
    pub pca: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// [default: the direction's layer]
    #[arg(long)]
    pub layer: Option<u32>,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    #[arg(long, default_value = "last", value_parser = parse_pooling)]
    pub pooling: PoolingSpec,
    /// Top fractions for the length statistics.
    #[arg(long, value_delimiter = ',', default_values_t = RANK_LENGTH_PS)]
    pub p: Vec<f64>,
    /// JSON output [default: stdout]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SteerBuildArgs {
    #[arg(long, value_name = "FILE")]
    pub direction: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub pca: Option<PathBuf>,
    /// Injection layer [default: the direction's layer]
    #[arg(long)]
    pub layer: Option<u32>,
    /// raw | unit
    #[arg(long, default_value = "raw", value_parser = parse_normalization)]
    pub normalization: Normalization,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SteerAggregateArgs {
    /// CSV with columns `id,alpha,layer,score`.
    #[arg(long, value_name = "FILE")]
    pub judge: PathBuf,
    /// JSON lines `{id, context, alpha, layer, question}`, optionally with `label`.
    #[arg(long, value_name = "FILE")]
    pub generations: PathBuf,
    /// Dataset metadata used to label generations without a `label` field.
    #[arg(long, value_name = "FILE")]
    pub meta: Option<PathBuf>,
    /// JSON output [default: stdout]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "synth")]
    pub dataset: String,
    #[arg(long, default_value = "synthetic")]
    pub model_id: String,
    #[arg(long, default_value_t = 64)]
    pub d: usize,
    #[arg(long, default_value_t = 2000)]
    pub n_per_class: usize,
    /// Norm of the class-mean difference along a random direction.
    #[arg(long, default_value_t = 2.0, overrides_with = "delta_mu_vector")]
    pub delta_mu: f64,
    /// Explicit class-mean difference (comma-separated, length d).
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        overrides_with = "delta_mu"
    )]
    pub delta_mu_vector: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Extra high-variance directions unrelated to the label.
    #[arg(long, default_value_t = 0)]
    pub nuisance_dims: usize,
    /// Standard deviation of nuisance directions, in units of sigma.
    #[arg(long, default_value_t = 3.0)]
    pub nuisance_scale: f64,
    #[arg(long, default_value_t = 1)]
    pub n_layers: usize,
    /// Layers carrying the signal [default: all]
    #[arg(long, value_delimiter = ',')]
    pub signal_layers: Option<Vec<u32>>,
    /// Seed of the signal direction; datasets sharing it share directions.
    #[arg(long, default_value_t = 0)]
    pub direction_seed: u64,
    /// Picks the n-th of a set of mutually orthogonal directions.
    #[arg(long, default_value_t = 0)]
    pub direction_index: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Reports to merge (`.csv` or `.json`).
    #[arg(
        long = "in",
        value_name = "FILE",
        required = true,
        value_delimiter = ','
    )]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub json: Option<PathBuf>,
    /// Line chart of `--metric` against normalized layer.
    #[arg(long, value_name = "FILE")]
    pub svg: Option<PathBuf>,
    #[arg(long, default_value = "test_auroc")]
    pub metric: String,
    /// Restrict the chart to one setting.
    #[arg(long)]
    pub setting: Option<String>,
    #[arg(long)]
    pub force: bool,
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    s.parse().map_err(|e: probekit_core::Error| e.to_string())
}

fn parse_pooling(s: &str) -> std::result::Result<PoolingSpec, String> {
    s.parse().map_err(|e: probekit_core::Error| e.to_string())
}

fn parse_probe(s: &str) -> std::result::Result<ProbeKind, String> {
    s.parse().map_err(|e: probekit_core::Error| e.to_string())
}

fn parse_normalization(s: &str) -> std::result::Result<Normalization, String> {
    s.parse().map_err(|e: probekit_core::Error| e.to_string())
}

fn parse_layers(s: &str) -> Result<Option<Vec<u32>>> {
    if s.trim() == "all" {
        return Ok(None);
    }
    let layers = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<u32>()
                .map_err(|_| Error::Usage(format!("--layers: bad layer {t:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if layers.is_empty() {
        return Err(Error::Usage("--layers is empty".into()));
    }
    Ok(Some(layers))
}

/// Parses, applies `--config` defaults, runs, and returns the exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match parse(&argv) {
        Ok(Ok(cli)) => cli,
        Ok(Err(e)) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn command() -> clap::Command {
    fn override_self(cmd: clap::Command) -> clap::Command {
        cmd.args_override_self(true).mut_subcommands(override_self)
    }
    override_self(Cli::command())
}

fn try_parse(argv: &[OsString]) -> std::result::Result<Cli, clap::Error> {
    let mut cmd = command();
    let matches = cmd.try_get_matches_from_mut(argv.iter().cloned())?;
    Cli::from_arg_matches(&matches).map_err(|e| e.format(&mut cmd))
}

/// Outer error: the config file could not be read. Inner error: clap.
fn parse(argv: &[OsString]) -> Result<std::result::Result<Cli, clap::Error>> {
    let cli = match try_parse(argv) {
        Ok(cli) => cli,
        Err(e) => return Ok(Err(e)),
    };
    let Some(path) = cli.config.clone() else {
        return Ok(Ok(cli));
    };
    let config: Value = read_json(&path)?;
    let names = command_path(&cli.command);
    let mut section = &config;
    for n in &names {
        section = match section.get(n) {
            Some(v) => v,
            None => return Ok(Ok(cli)),
        };
    }
    let injected = config_flags(section, &path)?;
    if injected.is_empty() {
        return Ok(Ok(cli));
    }
    let at = path_end(argv, &names);
    let mut full = argv[..at].to_vec();
    full.extend(injected);
    full.extend_from_slice(&argv[at..]);
    Ok(try_parse(&full))
}

fn command_path(c: &Command) -> Vec<&'static str> {
    match c {
        Command::Pool(_) => vec!["pool"],
        Command::Pca(PcaCommand::Fit(_)) => vec!["pca", "fit"],
        Command::Pca(PcaCommand::Transform(_)) => vec!["pca", "transform"],
        Command::Pca(PcaCommand::Report(_)) => vec!["pca", "report"],
        Command::Train(_) => vec!["train"],
        Command::Sweep(_) => vec!["sweep"],
        Command::Agree(_) => vec!["agree"],
        Command::Transfer(_) => vec!["transfer"],
        Command::Align(_) => vec!["align"],
        Command::Rank(_) => vec!["rank"],
        Command::Steer(SteerCommand::Build(_)) => vec!["steer", "build"],
        Command::Steer(SteerCommand::Aggregate(_)) => vec!["steer", "aggregate"],
        Command::Synth(_) => vec!["synth"],
        Command::Report(_) => vec!["report"],
    }
}

/// Index just past the subcommand names in `argv`.
fn path_end(argv: &[OsString], names: &[&str]) -> usize {
    let mut want = names.iter().peekable();
    let mut i = 1;
    while i < argv.len() {
        let Some(&&next) = want.peek() else { break };
        let a = argv[i].to_string_lossy();
        if a == "--config" {
            i += 2;
            continue;
        }
        if a == next {
            want.next();
        }
        i += 1;
    }
    i.min(argv.len())
}

/// `{"tail_p": 0.1, "raw": true}` -> `--tail-p 0.1 --raw`.
fn config_flags(section: &Value, path: &Path) -> Result<Vec<OsString>> {
    let Value::Object(map) = section else {
        return Err(Error::parse(path, "config sections must be objects"));
    };
    let mut out = Vec::new();
    for (key, v) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        let value = match v {
            Value::Null | Value::Bool(false) => continue,
            Value::Bool(true) => {
                out.push(flag.into());
                continue;
            }
            Value::Number(n) => n.to_string(),
            Value::String(s) => s.clone(),
            Value::Array(items) => items
                .iter()
                .map(|item| match item {
                    Value::String(s) => Ok(s.clone()),
                    Value::Number(n) => Ok(n.to_string()),
                    _ => Err(Error::parse(
                        path,
                        format!("{key}: list items must be scalars"),
                    )),
                })
                .collect::<Result<Vec<_>>>()?
                .join(","),
            Value::Object(_) => {
                return Err(Error::parse(
                    path,
                    format!("{key}: nested objects are not flags"),
                ))
            }
        };
        out.push(format!("{flag}={value}").into());
    }
    Ok(out)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pool(a) => cmd_pool(a),
        Command::Pca(PcaCommand::Fit(a)) => cmd_pca_fit(a),
        Command::Pca(PcaCommand::Transform(a)) => cmd_pca_transform(a),
        Command::Pca(PcaCommand::Report(a)) => cmd_pca_report(a),
        Command::Train(a) => cmd_train(a),
        Command::Sweep(a) => cmd_experiment(a, experiment::sweep),
        Command::Agree(a) => cmd_experiment(a, experiment::agree),
        Command::Transfer(a) => cmd_transfer(a),
        Command::Align(a) => cmd_align(a),
        Command::Rank(a) => cmd_rank(a),
        Command::Steer(SteerCommand::Build(a)) => cmd_steer_build(a),
        Command::Steer(SteerCommand::Aggregate(a)) => cmd_steer_aggregate(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_bytes(p, text.as_bytes()),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| Error::io(Path::new("<stdout>"), e))
        }
    }
}

fn check_all<'a>(paths: impl IntoIterator<Item = &'a Path>, force: bool) -> Result<()> {
    for p in paths {
        check_output(p, force)?;
    }
    Ok(())
}

/// `<dataset>__<split>__L<layer>.rqac` -> split.
fn split_from_name(path: &Path) -> Option<Split> {
    let name = path.file_name()?.to_str()?;
    name.split("__").nth(1)?.parse().ok()
}

fn cmd_pool(a: PoolArgs) -> Result<()> {
    check_output(&a.out, a.force)?;
    let spec = match (a.strategy.as_str(), a.k) {
        ("lastk", Some(k)) => PoolingSpec::LastK(k),
        ("lastk", None) => return Err(Error::Usage("--strategy lastk needs --k".into())),
        (s, _) => parse_pooling(s).map_err(|e| Error::Usage(format!("--strategy: {e}")))?,
    };
    spec.validate().map_err(|e| Error::Usage(e.to_string()))?;
    let file = read_activation_file(&a.input)?;
    let meta = read_meta(&a.meta)?;
    let pooled = match file.kind {
        // Already one row per example.
        ActivationKind::ExampleLevel => file,
        ActivationKind::TokenLevel => {
            let split = a.split.or_else(|| split_from_name(&a.input));
            pool(&file, &meta, split, spec).at(&a.input)?
        }
    };
    let bytes = encode_activation(&pooled).at(&a.input)?;
    write_bytes(&a.out, &bytes)
}

fn cmd_pca_fit(a: PcaFitArgs) -> Result<()> {
    check_output(&a.out, a.force)?;
    if a.k == 0 {
        return Err(Error::Usage("--k must be >= 1".into()));
    }
    let src = a.data.open()?;
    src.layers(Some(&[a.layer]))?;
    let train = src.load_split(a.layer, Split::Train, a.pooling)?;
    let train_path = src.path(Split::Train, a.layer);
    let fit = fit_pca(&train, a.k).at(&train_path)?;
    let setting = Setting {
        dataset: src.dataset.clone(),
        model_id: src.meta.model_id.clone(),
        pooling: a.pooling,
        pca_k: a.k,
        layers: vec![a.layer],
        n_layers: src.meta.n_layers,
    };
    let mut desc = PcaDescriptor::for_fit(
        &fit,
        &setting.name(),
        Some(a.layer),
        Some(src.meta.n_layers),
    );
    desc.inputs
        .insert("sha256:meta".into(), hash_file(&src.meta_path)?);
    desc.inputs
        .insert("sha256:train".into(), hash_file(&train_path)?);
    if let Some(req) = fit.requested_k {
        eprintln!(
            "warning: rank limits k to {} (requested {req})",
            fit.model.k()
        );
    }
    write_pca(&a.out, &fit.model, &desc)
}

fn cmd_pca_transform(a: PcaTransformArgs) -> Result<()> {
    check_output(&a.out, a.force)?;
    let (model, _) = read_pca(&a.model)?;
    let file = read_activation_file(&a.input)?;
    let x = file.to_matrix().at(&a.input)?;
    let z = model.transform(&x).at(&a.input)?;
    let data: Vec<f32> = z.as_slice().iter().map(|&v| v as f32).collect();
    let out = ActivationFile::example_level(file.layer, model.k() as u32, data).at(&a.input)?;
    write_activation_file(&a.out, &out)
}

fn cmd_pca_report(a: PcaReportArgs) -> Result<()> {
    if let Some(p) = &a.out {
        check_output(p, a.force)?;
    }
    let (model, desc) = read_pca(&a.model)?;
    let rep = explained_variance_report(&model);
    let json = a
        .out
        .as_deref()
        .is_some_and(|p| p.extension().is_some_and(|e| e == "json"));
    let text = if json {
        let rows: Vec<Value> = rep
            .rows
            .iter()
            .map(|r| serde_json::json!({"component": r.component, "evr": r.evr, "cumulative": r.cumulative}))
            .collect();
        let v = serde_json::json!({
            "k": model.k(),
            "d": model.d(),
            "requested_k": desc.requested_k,
            "tied_components": desc.tied_components,
            "last_below_one_percent": rep.last_below_one_percent,
            "leading_dominant": rep.leading_dominant,
            "rows": rows,
        });
        let mut s = serde_json::to_string_pretty(&v).map_err(|e| Error::json(&a.model, e))?;
        s.push('\n');
        s
    } else {
        let mut s = String::from("component,evr,cumulative\n");
        for r in &rep.rows {
            s.push_str(&format!("{},{},{}\n", r.component, r.evr, r.cumulative));
        }
        if a.out.is_none() {
            eprintln!(
                "last component below 1%: {}; first component >= 99%: {}",
                rep.last_below_one_percent, rep.leading_dominant
            );
        }
        s
    };
    emit(a.out.as_deref(), &text)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    check_output(&a.out, a.force)?;
    let cfg = a.train.config()?;
    let src = a.data.open()?;
    src.layers(Some(&[a.layer]))?;
    let mut train = src.load_split(a.layer, Split::Train, a.pooling)?;
    let mut val = src.load_split(a.layer, Split::Validation, a.pooling)?;
    let (space, pca_k, pca_sha) = match &a.pca {
        Some(p) if !a.raw => {
            let (model, _) = read_pca(p)?;
            if model.d() != train.dim() {
                return Err(Error::parse(
                    p,
                    format!(
                        "model dimension {} but layer {} has {}",
                        model.d(),
                        a.layer,
                        train.dim()
                    ),
                ));
            }
            train = model.transform_labeled(&train).at(p)?;
            val = model.transform_labeled(&val).at(p)?;
            (
                DirectionSpace::Pca(model.k()),
                model.k(),
                Some(hash_file(p)?),
            )
        }
        _ => (DirectionSpace::Embedding(train.dim()), 0, None),
    };
    let setting = Setting {
        dataset: src.dataset.clone(),
        model_id: src.meta.model_id.clone(),
        pooling: a.pooling,
        pca_k,
        layers: vec![a.layer],
        n_layers: src.meta.n_layers,
    };
    let train_path = src.path(Split::Train, a.layer);
    let (dir, info) = match a.probe {
        ProbeKind::DiffMean => (diffmean(&train).at(&train_path)?, None),
        kind => {
            let t = if a.train.tune {
                train_tuned(kind, &train, &val, &cfg)
            } else if kind == ProbeKind::Logistic {
                train_logistic(&train, &val, &cfg)
            } else {
                train_hinge(&train, &val, &cfg)
            }
            .at(&train_path)?;
            let info = TrainingInfo::new(&t, &cfg);
            (t.direction, Some(info))
        }
    };
    let dir = dir
        .in_space(space)
        .with_provenance(a.layer, &setting.name());
    let val_path = src.path(Split::Validation, a.layer);
    let s = score_labeled(&dir, &val).at(&val_path)?;
    let val_auroc = metrics::auroc(&s.scores, &val.y).at(&val_path)?;
    if let Some(t) = &info {
        if !t.converged {
            eprintln!(
                "warning: {} stopped at max_iters={}",
                a.probe, cfg.max_iters
            );
        }
    }
    write_direction(&a.out, &dir, info, pca_sha)?;
    println!(
        "{} layer {}: validation AUROC {val_auroc:.4}",
        a.probe, a.layer
    );
    Ok(())
}

fn write_outputs(report: &EvalReport, outs: &[PathBuf]) -> Result<()> {
    for p in outs {
        match p.extension().and_then(|e| e.to_str()) {
            Some("json") => write_report_json(p, report)?,
            Some("csv") => write_csv(p, report)?,
            _ => unreachable!("extensions checked before running"),
        }
    }
    Ok(())
}

fn check_report_outputs(outs: &[PathBuf], force: bool) -> Result<()> {
    for p in outs {
        match p.extension().and_then(|e| e.to_str()) {
            Some("json" | "csv") => {}
            _ => {
                return Err(Error::Usage(format!(
                    "--out {}: expected a .csv or .json file",
                    p.display()
                )))
            }
        }
    }
    check_all(outs.iter().map(PathBuf::as_path), force)
}

fn note_skipped(report: &EvalReport) {
    for (k, v) in report.provenance.range("skipped.".to_string()..) {
        if !k.starts_with("skipped.") {
            break;
        }
        eprintln!("warning: {k}: {v}");
    }
}

fn cmd_experiment(
    a: ExperimentArgs,
    run: fn(&DataSource, &Experiment, &[u32]) -> Result<EvalReport>,
) -> Result<()> {
    check_report_outputs(&a.flags.out, a.flags.force)?;
    let exp = a.flags.experiment()?;
    let src = a.data.open()?;
    let layers = src.layers(a.flags.requested_layers()?.as_deref())?;
    let report = run(&src, &exp, &layers)?;
    note_skipped(&report);
    write_outputs(&report, &a.flags.out)
}

fn cmd_transfer(a: TransferArgs) -> Result<()> {
    check_report_outputs(&a.flags.out, a.flags.force)?;
    let exp = a.flags.experiment()?;
    let source = DataSource::open(&a.source_dir, &a.source, a.source_meta.as_deref())?;
    let target_dir = a.target_dir.as_deref().unwrap_or(&a.source_dir);
    let target = DataSource::open(target_dir, &a.target, a.target_meta.as_deref())?;
    let requested = a.flags.requested_layers()?;
    let layers = source.layers(requested.as_deref())?;
    target.layers(Some(&layers))?;
    let report = experiment::transfer(&source, &target, &exp, &layers)?;
    note_skipped(&report);
    write_outputs(&report, &a.flags.out)
}

/// Second `/`-separated field of a setting name.
fn model_of(setting: &str) -> Option<&str> {
    setting.split('/').nth(1)
}

fn cmd_align(a: AlignArgs) -> Result<()> {
    if a.a.len() != a.b.len() {
        return Err(Error::Usage(format!(
            "--a has {} models but --b has {}",
            a.a.len(),
            a.b.len()
        )));
    }
    if let Some(p) = &a.out {
        check_output(p, a.force)?;
    }
    let mut rows = Vec::with_capacity(a.a.len());
    for (i, (pa, pb)) in a.a.iter().zip(&a.b).enumerate() {
        let (ma, da): (PcaModel, PcaDescriptor) = read_pca(pa)?;
        let (mb, _) = read_pca(pb)?;
        let pair = SubspacePair::new(&ma, &mb).at(pb)?;
        let layer = da.layer.unwrap_or(i as u32);
        rows.push(AlignRow {
            model: a
                .model
                .clone()
                .or_else(|| model_of(&da.setting).map(str::to_string))
                .unwrap_or_default(),
            layer,
            normalized_layer: da.n_layers.map_or(0.0, |n| normalized_layer(layer, n)),
            geodesic: pair.geodesic_distance().at(pb)?,
            mean_cosine: pair.mean_pc_cosine().at(pb)?,
        });
    }
    emit(a.out.as_deref(), &align_csv(&rows)?)
}

/// Loads a direction and maps it to the hidden space if needed.
fn hidden_direction(path: &Path, pca: Option<&Path>) -> Result<ProbeDirection> {
    let (dir, desc) = read_direction(path)?;
    match (dir.space, pca) {
        (DirectionSpace::Embedding(_), None) => Ok(dir),
        (DirectionSpace::Embedding(_), Some(_)) => Err(Error::Usage(format!(
            "{} is already in the hidden space; drop --pca",
            path.display()
        ))),
        (DirectionSpace::Pca(_), None) => Err(Error::Usage(format!(
            "{} is a PCA-space direction; pass the model with --pca",
            path.display()
        ))),
        (DirectionSpace::Pca(_), Some(p)) => {
            let (model, _) = read_pca(p)?;
            if let Some(expected) = &desc.pca_sha256 {
                if *expected != hash_file(p)? {
                    return Err(Error::parse(
                        p,
                        format!("not the PCA model {} was trained with", path.display()),
                    ));
                }
            }
            map_back(&dir, &model).at(p)
        }
    }
}

fn cmd_rank(a: RankArgs) -> Result<()> {
    if let Some(p) = &a.out {
        check_output(p, a.force)?;
    }
    let dir = hidden_direction(&a.direction, a.pca.as_deref())?;
    let layer = a.layer.unwrap_or(dir.layer);
    let src = a.data.open()?;
    src.layers(Some(&[layer]))?;
    let data = src.load_split(layer, a.split, a.pooling)?;
    let tokens: BTreeMap<&str, usize> = src
        .meta
        .examples
        .iter()
        .map(|e| (e.id.as_str(), e.n_tokens))
        .collect();
    let n_tokens: Vec<usize> = data.ids.iter().map(|id| tokens[id.as_str()]).collect();
    let rep = rank_report(&dir, &data, &n_tokens, &a.p).at(&src.path(a.split, layer))?;
    let v = serde_json::json!({
        "direction": a.direction.display().to_string(),
        "kind": dir.kind,
        "source_setting": dir.source_setting,
        "dataset": src.dataset,
        "layer": layer,
        "split": a.split,
        "length_stats": rep.length_stats,
        "entries": rep.entries,
    });
    let mut text = serde_json::to_string_pretty(&v).map_err(|e| Error::json(&a.direction, e))?;
    text.push('\n');
    emit(a.out.as_deref(), &text)
}

fn cmd_steer_build(a: SteerBuildArgs) -> Result<()> {
    check_output(&a.out, a.force)?;
    let dir = hidden_direction(&a.direction, a.pca.as_deref())?;
    let layer = a.layer.unwrap_or(dir.layer);
    let v = build_steering_vector(&dir, layer, a.normalization).at(&a.direction)?;
    write_steering(&a.out, &v, &hash_file(&a.direction)?)
}

fn read_judge(path: &Path) -> Result<Vec<JudgeRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    let headers = r
        .headers()
        .map_err(|e| Error::parse(path, e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::parse(path, format!("missing column {name:?}")))
    };
    let (ci, ca, cl, cs) = (col("id")?, col("alpha")?, col("layer")?, col("score")?);
    let mut rows = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, e.to_string()))?;
        let line = n + 2;
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let alpha: f64 = field(ca)
            .parse()
            .map_err(|_| Error::parse(path, format!("line {line}: bad alpha {:?}", field(ca))))?;
        let layer: u32 = field(cl)
            .parse()
            .map_err(|_| Error::parse(path, format!("line {line}: bad layer {:?}", field(cl))))?;
        // Ratings that are not integers in 1..=10 are kept and counted as dropped.
        let score = field(cs)
            .parse::<u8>()
            .ok()
            .filter(|s| (1..=10).contains(s));
        rows.push(JudgeRow {
            id: field(ci).to_string(),
            alpha,
            layer,
            score,
        });
    }
    Ok(rows)
}

fn read_generations(path: &Path, labels: &BTreeMap<String, Label>) -> Result<Vec<GenerationRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: &str| Error::parse(path, format!("line {}: {m}", n + 1));
        let v: Value = serde_json::from_str(line).map_err(|e| bad(&e.to_string()))?;
        let id = v["id"].as_str().ok_or_else(|| bad("missing string id"))?;
        let alpha = v["alpha"]
            .as_f64()
            .ok_or_else(|| bad("missing numeric alpha"))?;
        let layer = v["layer"]
            .as_u64()
            .and_then(|l| u32::try_from(l).ok())
            .ok_or_else(|| bad("missing integer layer"))?;
        let group = match v.get("label") {
            Some(l) => {
                serde_json::from_value::<Label>(l.clone()).map_err(|e| bad(&e.to_string()))?
            }
            None => *labels
                .get(id)
                .ok_or_else(|| bad(&format!("no label for {id:?} (add `label` or pass --meta)")))?,
        };
        rows.push(GenerationRow {
            id: id.to_string(),
            alpha,
            layer,
            group,
        });
    }
    Ok(rows)
}

fn cmd_steer_aggregate(a: SteerAggregateArgs) -> Result<()> {
    if let Some(p) = &a.out {
        check_output(p, a.force)?;
    }
    let labels: BTreeMap<String, Label> = match &a.meta {
        Some(p) => read_meta(p)?
            .examples
            .into_iter()
            .map(|e| (e.id, e.label))
            .collect(),
        None => BTreeMap::new(),
    };
    let judge = read_judge(&a.judge)?;
    let gens = read_generations(&a.generations, &labels)?;
    let result = aggregate_scores(&judge, &gens).at(&a.judge)?;
    match &a.out {
        Some(p) => write_json(p, &result),
        None => {
            let mut s =
                serde_json::to_string_pretty(&result).map_err(|e| Error::json(&a.judge, e))?;
            s.push('\n');
            emit(None, &s)
        }
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        dataset: a.dataset,
        model_id: a.model_id,
        d: a.d,
        n_per_class: a.n_per_class,
        delta_mu: match a.delta_mu_vector {
            Some(v) => DeltaMu::Vector(v),
            None => DeltaMu::Magnitude(a.delta_mu),
        },
        noise_sigma: a.sigma,
        nuisance_dims: a.nuisance_dims,
        nuisance_scale: a.nuisance_scale,
        n_layers: a.n_layers,
        signal_layers: a.signal_layers,
        direction_seed: a.direction_seed,
        direction_index: a.direction_index,
        seed: a.seed,
    };
    spec.validate()?;
    let data = generate(&spec)?;
    for p in write_synthetic(&a.out_dir, &data, a.force)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let outs: Vec<&Path> = [&a.csv, &a.json, &a.svg]
        .into_iter()
        .flatten()
        .map(PathBuf::as_path)
        .collect();
    if outs.is_empty() {
        return Err(Error::Usage(
            "nothing to write; pass --csv, --json or --svg".into(),
        ));
    }
    check_all(outs, a.force)?;
    let mut report = EvalReport::new();
    for p in &a.inputs {
        report.merge(read_report(p)?).at(p)?;
    }
    if let Some(p) = &a.csv {
        write_csv(p, &report)?;
    }
    if let Some(p) = &a.json {
        write_report_json(p, &report)?;
    }
    if let Some(p) = &a.svg {
        let svg = render_svg(&report, &a.metric, a.setting.as_deref())
            .ok_or_else(|| Error::parse(&a.inputs[0], format!("no {:?} rows to plot", a.metric)))?;
        write_bytes(p, svg.as_bytes())?;
    }
    Ok(())
}
