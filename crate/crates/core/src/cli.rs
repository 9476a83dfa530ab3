//! Command-line front end: `simulate`, `train`, `eval`, `compare`, `sweep`,
//! `report` and `validate-profile`.
//!
//! Settings resolve in the order built-in defaults, `--config` file,
//! `--preset`, then individual flags. Environment variables are not read.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::channel::{load_profile, ChannelError, ChannelProfile, SimConfig};
use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::container::ContainerError;
use crate::dataset::{divisors, generate_dataset, simulate_realizations, DatasetError, DatasetFile, Split};
use crate::eval::{self, ComparisonRow, EvalError, EvalReport, SweepRow};
use crate::nn::{build_model, EstimatorError, ModelSpec, ModelWeights, Real, Variant};
use crate::train::{self, Precision, TrainConfig, TrainError};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Error carrying its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(m: impl std::fmt::Display) -> Self {
        CliError { code: EXIT_CONFIG, message: m.to_string() }
    }
    fn io(m: impl std::fmt::Display) -> Self {
        CliError { code: EXIT_IO, message: m.to_string() }
    }
    fn numeric(m: impl std::fmt::Display) -> Self {
        CliError { code: EXIT_NUMERIC, message: m.to_string() }
    }
}

impl From<ChannelError> for CliError {
    fn from(e: ChannelError) -> Self {
        match e {
            ChannelError::Io(_) => CliError::io(e),
            _ => CliError::config(e),
        }
    }
}

impl From<ContainerError> for CliError {
    fn from(e: ContainerError) -> Self {
        CliError::io(e)
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Container(c) => c.into(),
            DatasetError::Channel(c) => c.into(),
            DatasetError::Bfm(_) => CliError::numeric(e),
            _ => CliError::config(e),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::io(e)
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        match e {
            EstimatorError::NonFinite { .. } => CliError::numeric(e),
            _ => CliError::config(e),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => CliError::numeric(e),
            _ => CliError::config(e),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Estimator(x) => x.into(),
            EvalError::Train(x) => x.into(),
            EvalError::Dataset(x) => x.into(),
            EvalError::Io { .. } => CliError::io(e),
            EvalError::NonFinite(_) => CliError::numeric(e),
            _ => CliError::config(e),
        }
    }
}

fn default_variant() -> Variant {
    Variant::Cnn
}
fn default_base() -> usize {
    32
}
fn default_out() -> PathBuf {
    PathBuf::from("runs")
}
fn default_profile() -> String {
    "model-b".into()
}

/// Experiment manifest read by `--config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    /// Subcarriers per sample for `simulate`; all occupied subcarriers if unset.
    #[serde(default)]
    pub group_size: Option<usize>,
    /// Group sizes for `sweep`; the divisors of the subcarrier count if empty.
    #[serde(default)]
    pub sweep_groups: Vec<usize>,
    #[serde(default = "default_base")]
    pub base_channels: usize,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    /// Built-in profile name or profile file path.
    #[serde(default = "default_profile")]
    pub profile: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 1,000 samples, base channels 8, at most 40 epochs.
    Desk,
    /// 10,000 samples, base channels 32, at most 200 epochs.
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Parser, Debug)]
#[command(name = "bfmlab", version, about = "CSI amplitude recomposition from beamforming feedback matrices")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for simulation and training; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for every output file.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Named bundle of sample count, width and epoch limit.
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Channel realizations to simulate.
    #[arg(long, global = true)]
    n_samples: Option<usize>,
    #[arg(long, global = true)]
    max_epochs: Option<usize>,
    /// Estimator architecture: cnn or cnn-convlstm.
    #[arg(long, global = true)]
    variant: Option<Variant>,
    /// Channels of the first encoder block.
    #[arg(long, global = true)]
    base_channels: Option<usize>,
    /// Built-in profile name (model-b, flat1) or profile file path.
    #[arg(long, global = true)]
    profile: Option<String>,
    /// Floating-point precision of training and inference.
    #[arg(long, global = true, value_enum)]
    precision: Option<PrecisionArg>,
    /// Record zero epoch timings so every output is reproducible byte for byte.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Suppress per-epoch progress on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate channels and write a dataset file.
    Simulate {
        /// Subcarriers per sample; must divide 242.
        #[arg(long)]
        group_size: Option<usize>,
        /// Dataset path; defaults to `<out-dir>/dataset_g<g>.bfmc`.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Train an estimator on a dataset file.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Checkpoint path; defaults to `<out-dir>/model_<variant>_g<g>.bfmw`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score a checkpoint on a dataset split and render its reports.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, required_unless_present = "zero_model")]
        checkpoint: Option<PathBuf>,
        /// Evaluate the all-zero predictor instead of a checkpoint.
        #[arg(long, conflicts_with = "checkpoint")]
        zero_model: bool,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
    },
    /// Train and score the integrated CNN+ConvLSTM, integrated CNN and
    /// individual CNN on shared realizations.
    Compare,
    /// Train and score the CNN for several subcarrier group sizes.
    Sweep {
        /// Comma-separated group sizes; defaults to every divisor of 242.
        #[arg(long, value_delimiter = ',')]
        groups: Option<Vec<usize>>,
    },
    /// Render reports from saved `eval`, `compare` or `sweep` JSON files.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Load a channel profile and print its normalized taps.
    ValidateProfile { source: Option<String> },
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(format!("unknown split `{other}`")),
    }
}

struct Ctx {
    run: RunConfig,
    quiet: bool,
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut run = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    match cli.preset {
        Some(Preset::Desk) => {
            run.sim.n_samples = 1000;
            run.base_channels = 8;
            run.train.max_epochs = 40;
        }
        Some(Preset::Paper) => {
            run.sim.n_samples = 10_000;
            run.base_channels = 32;
            run.train.max_epochs = 200;
        }
        None => {}
    }
    if let Some(s) = cli.seed {
        run.sim.seed = s;
        run.train.seed = s;
    }
    if let Some(d) = &cli.out_dir {
        run.out_dir = d.clone();
    }
    if let Some(n) = cli.n_samples {
        run.sim.n_samples = n;
    }
    if let Some(n) = cli.max_epochs {
        run.train.max_epochs = n;
    }
    if let Some(v) = cli.variant {
        run.variant = v;
    }
    if let Some(b) = cli.base_channels {
        run.base_channels = b;
    }
    if let Some(p) = &cli.profile {
        run.profile = p.clone();
    }
    match cli.precision {
        Some(PrecisionArg::F32) => run.train.precision = Precision::F32,
        Some(PrecisionArg::F64) => run.train.precision = Precision::F64,
        None => {}
    }
    if cli.deterministic {
        run.train.deterministic = true;
    }
    run.sim.validate()?;
    run.train.validate()?;
    if run.sim.n_samples == 0 {
        return Err(CliError::config("n_samples must be at least 1"));
    }
    if run.base_channels == 0 {
        return Err(CliError::config("base_channels must be at least 1"));
    }
    Ok(run)
}

impl Ctx {
    fn profile(&self) -> Result<ChannelProfile, CliError> {
        Ok(load_profile(&self.run.profile)?)
    }

    fn out_dir(&self) -> Result<&Path, CliError> {
        let d = &self.run.out_dir;
        std::fs::create_dir_all(d).map_err(|e| CliError::io(format!("{}: {e}", d.display())))?;
        Ok(d)
    }

    fn say(&self, line: &str) {
        if !self.quiet {
            eprintln!("{line}");
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    write_file(path, s.as_bytes())
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn cmd_simulate(ctx: &Ctx, group_size: Option<usize>, output: Option<PathBuf>) -> Result<(), CliError> {
    let profile = ctx.profile()?;
    let g = group_size.or(ctx.run.group_size).unwrap_or(ctx.run.sim.n_subcarriers());
    let data = generate_dataset(&ctx.run.sim, &profile, g)?;
    let path = match output {
        Some(p) => p,
        None => ctx.out_dir()?.join(format!("dataset_g{g}.bfmc")),
    };
    data.save(&path)?;
    let m = &data.manifest;
    println!(
        "wrote {} ({} realizations, {} samples of {} subcarriers, scale {:.6}, hash {})",
        path.display(),
        m.n_samples,
        m.n_items,
        m.group_size,
        m.scale,
        data.content_hash()
    );
    Ok(())
}

fn train_typed<T: Real>(ctx: &Ctx, data: &DatasetFile, spec: &ModelSpec) -> Result<(ModelWeights<T>, train::TrainRecord), CliError> {
    let init = build_model::<T>(spec, ctx.run.train.seed)?;
    let quiet = ctx.quiet;
    let mut progress = |e: &train::EpochRecord| {
        if !quiet {
            eprintln!("epoch {:>3}  train {:.6e}  val {:.6e}  {:.1}s", e.epoch, e.train_loss, e.val_loss, e.seconds);
        }
    };
    let out = train::train(data, spec, &ctx.run.train, init, &mut progress)?;
    Ok((out.weights, out.record))
}

fn cmd_train(ctx: &Ctx, dataset: &Path, checkpoint: Option<PathBuf>) -> Result<(), CliError> {
    let data = DatasetFile::load(dataset)?;
    let g = data.manifest.group_size;
    let variant = ctx.run.variant;
    let spec = ModelSpec::for_group(variant, g, data.f_pad(), data.n_ant(), ctx.run.base_channels);
    spec.validate()?;
    let extra = |record: &train::TrainRecord| {
        serde_json::json!({
            "dataset_hash": data.content_hash(),
            "train": ctx.run.train,
            "best_epoch": record.best_epoch,
        })
    };
    let (bytes, record) = match ctx.run.train.precision {
        Precision::F32 => {
            let (w, r) = train_typed::<f32>(ctx, &data, &spec)?;
            let mut ck = Checkpoint::new(spec.clone(), w);
            ck.extra = extra(&r);
            (ck.encode(), r)
        }
        Precision::F64 => {
            let (w, r) = train_typed::<f64>(ctx, &data, &spec)?;
            let mut ck = Checkpoint::new(spec.clone(), w);
            ck.extra = extra(&r);
            (ck.encode(), r)
        }
    };
    let ck_path = match checkpoint {
        Some(p) => p,
        None => ctx.out_dir()?.join(format!("model_{variant}_g{g}.bfmw")),
    };
    let rec_path = ck_path.with_file_name(format!("train_{variant}_g{g}.csv"));
    write_file(&ck_path, &bytes)?;
    write_file(&rec_path, record.to_csv().as_bytes())?;
    println!(
        "wrote {} (best epoch {} of {}, val loss {:.6e})",
        ck_path.display(),
        record.best_epoch,
        record.epochs.len(),
        record.best_val_loss()
    );
    println!("wrote {}", rec_path.display());
    Ok(())
}

fn eval_typed<T: Real>(data: &DatasetFile, ck: Option<&Path>, zero: &ModelSpec, split: Split) -> Result<EvalReport, CliError> {
    let (spec, weights) = match ck {
        Some(path) => {
            let c = Checkpoint::<T>::load(path)?;
            (c.spec, c.weights)
        }
        None => (zero.clone(), ModelWeights::<T>::zeros(zero)),
    };
    Ok(eval::evaluate(&weights, &spec, data, split)?)
}

fn cmd_eval(ctx: &Ctx, dataset: &Path, checkpoint: Option<&Path>, split: Split) -> Result<(), CliError> {
    let data = DatasetFile::load(dataset)?;
    let g = data.manifest.group_size;
    let zero = ModelSpec::for_group(ctx.run.variant, g, data.f_pad(), data.n_ant(), ctx.run.base_channels);
    let report = match ctx.run.train.precision {
        Precision::F32 => eval_typed::<f32>(&data, checkpoint, &zero, split)?,
        Precision::F64 => eval_typed::<f64>(&data, checkpoint, &zero, split)?,
    };
    let dir = ctx.out_dir()?;
    let json = dir.join(format!("eval_{}_g{}.json", report.variant, report.group_size));
    write_json(&json, &report)?;
    println!("wrote {}", json.display());
    print_written(&eval::render_report(dir, std::slice::from_ref(&report), &[])?);
    println!("mean frobenius error {:.6} over {} samples", report.mean, report.errors.len());
    Ok(())
}

fn cmd_compare(ctx: &Ctx) -> Result<(), CliError> {
    let profile = ctx.profile()?;
    let set = simulate_realizations(&ctx.run.sim, &profile)?;
    ctx.say(&format!("simulated {} realizations", set.len()));
    let entries = eval::default_entries(set.subcarriers.len());
    let rows = eval::run_comparison(&set, &entries, ctx.run.base_channels, &ctx.run.train)?;
    let dir = ctx.out_dir()?;
    let json = dir.join("comparison.json");
    write_json(&json, &rows)?;
    println!("wrote {}", json.display());
    let reports: Vec<EvalReport> = rows.iter().map(|r| r.trained.report.clone()).collect();
    print_written(&eval::render_report(dir, &reports, &[])?);
    for r in &rows {
        println!(
            "{:<26} mean {:.6}  (published {})",
            r.entry.label,
            r.mean,
            r.entry.reference.map_or("-".into(), |v| v.to_string())
        );
    }
    Ok(())
}

fn cmd_sweep(ctx: &Ctx, groups: Option<Vec<usize>>) -> Result<(), CliError> {
    let profile = ctx.profile()?;
    let k = ctx.run.sim.n_subcarriers();
    let groups = match groups {
        Some(g) => g,
        None if !ctx.run.sweep_groups.is_empty() => ctx.run.sweep_groups.clone(),
        None => divisors(k),
    };
    if let Some(&g) = groups.iter().find(|&&g| g == 0 || k % g != 0) {
        return Err(CliError::config(format!("group size {g} does not divide {k}")));
    }
    let set = simulate_realizations(&ctx.run.sim, &profile)?;
    ctx.say(&format!("simulated {} realizations", set.len()));
    let rows = eval::subcarrier_sweep(&set, &groups, ctx.run.variant, ctx.run.base_channels, &ctx.run.train)?;
    let dir = ctx.out_dir()?;
    let json = dir.join(format!("sweep_{}.json", ctx.run.variant));
    write_json(&json, &rows)?;
    println!("wrote {}", json.display());
    print_written(&eval::render_report(dir, &[], &rows)?);
    for r in &rows {
        println!("g = {:>3}  mean {:.6}  {}", r.group, r.mean, r.label);
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Artifact {
    Eval(Box<EvalReport>),
    Sweep(Vec<SweepRow>),
    Comparison(Vec<ComparisonRow>),
}

fn cmd_report(ctx: &Ctx, inputs: &[PathBuf]) -> Result<(), CliError> {
    let mut reports = Vec::new();
    let mut sweep = Vec::new();
    for path in inputs {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        let artifact: Artifact = serde_json::from_str(&text)
            .map_err(|_| CliError::io(format!("{}: not an eval, compare or sweep result", path.display())))?;
        match artifact {
            Artifact::Eval(r) => reports.push(*r),
            Artifact::Sweep(rows) => sweep.extend(rows),
            Artifact::Comparison(rows) => reports.extend(rows.into_iter().map(|r| r.trained.report)),
        }
    }
    print_written(&eval::render_report(ctx.out_dir()?, &reports, &sweep)?);
    Ok(())
}

fn cmd_validate_profile(ctx: &Ctx, source: Option<String>) -> Result<(), CliError> {
    let profile = load_profile(source.as_deref().unwrap_or(&ctx.run.profile))?;
    println!("profile {} with {} taps", profile.name, profile.taps.len());
    for t in &profile.taps {
        println!("{:>8} ns  {:.9}", t.delay_ns, t.power);
    }
    let total: f64 = profile.taps.iter().map(|t| t.power).sum();
    println!("total power {total:.12}");
    Ok(())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::config("--threads must be at least 1"));
        }
        // Fails only if a pool already exists, in which case it is reused.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let ctx = Ctx { run: resolve(&cli)?, quiet: cli.quiet };
    match cli.command {
        Command::Simulate { group_size, output } => cmd_simulate(&ctx, group_size, output),
        Command::Train { dataset, checkpoint } => cmd_train(&ctx, &dataset, checkpoint),
        Command::Eval { dataset, checkpoint, zero_model: _, split } => cmd_eval(&ctx, &dataset, checkpoint.as_deref(), split),
        Command::Compare => cmd_compare(&ctx),
        Command::Sweep { groups } => cmd_sweep(&ctx, groups),
        Command::Report { inputs } => cmd_report(&ctx, &inputs),
        Command::ValidateProfile { source } => cmd_validate_profile(&ctx, source),
    }
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("bfmlab").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn defaults_and_presets() {
        let run = resolve(&parse(&["validate-profile"])).unwrap();
        assert_eq!(run, RunConfig::default());
        assert_eq!(run.sim.n_samples, 10_000);
        assert_eq!(run.base_channels, 32);
        let desk = resolve(&parse(&["--preset", "desk", "compare"])).unwrap();
        assert_eq!((desk.sim.n_samples, desk.base_channels, desk.train.max_epochs), (1000, 8, 40));
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"sim": {"seed": 5, "n_samples": 30}, "train": {"seed": 6}, "base_channels": 4}"#).unwrap();
        let p = path.to_str().unwrap();
        let run = resolve(&parse(&["--config", p, "compare"])).unwrap();
        assert_eq!((run.sim.seed, run.train.seed, run.sim.n_samples, run.base_channels), (5, 6, 30, 4));
        let run = resolve(&parse(&["--config", p, "--seed", "9", "--n-samples", "12", "--preset", "desk", "compare"])).unwrap();
        assert_eq!((run.sim.seed, run.train.seed, run.sim.n_samples, run.base_channels), (9, 9, 12, 8));
    }

    #[test]
    fn config_errors_map_to_exit_two() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, r#"{"unknown_key": 1}"#).unwrap();
        let e = resolve(&parse(&["--config", path.to_str().unwrap(), "compare"])).unwrap_err();
        assert_eq!(e.code, EXIT_CONFIG);
        let e = resolve(&parse(&["--n-samples", "0", "compare"])).unwrap_err();
        assert_eq!(e.code, EXIT_CONFIG);
        let e = resolve(&parse(&["--config", "/nonexistent/run.json", "compare"])).unwrap_err();
        assert_eq!(e.code, EXIT_IO);
        assert_eq!(run(["bfmlab", "no-such-command"]), EXIT_CONFIG);
    }

    #[test]
    fn error_codes() {
        let diverged = TrainError::Diverged {
            epoch: 1,
            detail: String::new(),
            record: Box::new(train::TrainRecord { epochs: vec![], stop_reason: None, best_epoch: 0 }),
        };
        assert_eq!(CliError::from(diverged).code, EXIT_NUMERIC);
        assert_eq!(CliError::from(DatasetError::Container(ContainerError::Truncated)).code, EXIT_IO);
        assert_eq!(CliError::from(DatasetError::GroupSize { group: 5, total: 242 }).code, EXIT_CONFIG);
        assert_eq!(CliError::from(ChannelError::UnknownProfile("x".into())).code, EXIT_CONFIG);
    }
}
