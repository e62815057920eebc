//! The `heatnet` command line front end.
//!
//! Every subcommand resolves its settings as defaults, then a config file
//! (`--config`, TOML or a previous run's `manifest.json`), then explicit
//! flags. The resolved settings are written to `manifest.json` in the output
//! directory together with the artifacts produced, so a run can be repeated
//! with `--config <out>/manifest.json`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::eval::EvalSet;
use crate::fd::{fd_solve, BoundaryMask, GroundTruthOracle, Method, SolverConfig, GROUND_TRUTH_TOLERANCE};
use crate::field::{make_problem, read_field, sample_boundary, write_field_csv, write_field_pgm};
use crate::kernel_learn::{learn_kernel, KernelConstraint, KernelLearnConfig, KernelReport};
use crate::model::{ModelConfig, UNet};
use crate::stencil::{PyramidSpec, ScheduleKind};
use crate::trainer::{train_with_progress, TrainConfig};
use crate::warmstart::{emit_curves, run_bench, summarize, BenchConfig};

/// Collects the named `Option` fields of a flags struct into a JSON map.
macro_rules! flags {
    ($f:expr; $($field:ident),* $(,)?) => {{
        let mut map = Map::new();
        $( insert(&mut map, stringify!($field), &$f.$field)?; )*
        map
    }};
}

pub const CACHE_ENV: &str = "HEATNET_CACHE_DIR";
pub const THREADS_ENV: &str = "HEATNET_THREADS";
pub const MANIFEST_NAME: &str = "manifest.json";

/// Exit status for invalid input: bad flags, unreadable or malformed files,
/// size mismatches.
pub const EXIT_INPUT: i32 = 2;
/// Exit status for failures while running.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "heatnet", version, about = "Label-free learning of steady-state heat flow")]
pub struct Cli {
    /// TOML settings file, or a manifest.json from an earlier run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory; every artifact and the manifest go here.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Upper bound on worker threads. All work currently runs on one thread.
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,

    /// Ground-truth cache directory [default: ~/.cache/heatnet/ground-truth].
    #[arg(long, global = true, env = CACHE_ENV)]
    pub cache_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample random boundary problems and write them as CSV and PGM.
    Gen(GenFlags),
    /// Solve a problem file with Jacobi or Gauss-Seidel sweeps.
    SolveFd(SolveFlags),
    /// Train a model with the stencil loss alone.
    Train(TrainFlags),
    /// Score a checkpoint against reference solutions.
    Eval(EvalFlags),
    /// Recover the 3x3 stencil from converged solutions.
    LearnKernel(KernelFlags),
    /// Compare solver convergence from model output and from constant fill.
    BenchWarmstart(BenchFlags),
}

#[derive(Debug, Args)]
pub struct GenFlags {
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of problems.
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SolveFlags {
    /// Problem field (.csv or .pgm).
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_sweeps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    problems_per_epoch: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Adam first-moment decay.
    #[arg(long)]
    beta1: Option<f64>,
    /// `progressive` or `finest-only`.
    #[arg(long)]
    curriculum: Option<String>,
    #[arg(long)]
    pyramid_factor: Option<usize>,
    #[arg(long)]
    pyramid_min: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    eval_set_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalFlags {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Number of held-out problems.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Expected grid size; rejected if the checkpoint disagrees.
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct KernelFlags {
    /// `unit-norm`, `fixed-center` or `none`.
    #[arg(long)]
    constraint: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BenchFlags {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated, strictly descending percentages.
    #[arg(long)]
    thresholds: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    sample_every: Option<usize>,
    #[arg(long)]
    max_sweeps: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSettings {
    pub size: usize,
    pub seed: u64,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSettings {
    pub input: Option<PathBuf>,
    pub method: Method,
    pub tol: f64,
    /// Defaults to `10 n^2 + 1000` for an n x n grid.
    pub max_sweeps: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub problems_per_epoch: usize,
    /// Defaults to 16 up to 128x128 and 4 above.
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub curriculum: ScheduleKind,
    pub pyramid_factor: usize,
    pub pyramid_min: usize,
    pub eval_every: usize,
    pub eval_set_size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub checkpoint: Option<PathBuf>,
    pub n: usize,
    pub seed: u64,
    pub size: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSettings {
    pub constraint: KernelConstraint,
    pub steps: usize,
    pub learning_rate: f64,
    pub n_samples: usize,
    pub grid_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSettings {
    pub checkpoint: Option<PathBuf>,
    pub n: usize,
    pub seed: u64,
    pub thresholds: Vec<f64>,
    pub method: Method,
    pub sample_every: usize,
    pub max_sweeps: Option<usize>,
    pub size: Option<usize>,
}

/// What every run leaves behind in `<out>/manifest.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config: Value,
    pub seeds: Map<String, Value>,
    pub threads: usize,
    pub cache_dir: Option<PathBuf>,
    pub out: PathBuf,
    /// Seconds since the Unix epoch; the only field that differs between reruns.
    pub timestamp: u64,
    /// Paths relative to `out`.
    pub artifacts: Vec<String>,
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code. Errors are reported on stderr as one JSON
/// object per line.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            report("usage", first.trim_start_matches("error: "));
            return EXIT_INPUT;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            report(e.kind(), &e.to_string());
            exit_code(&e)
        }
    }
}

fn report(kind: &str, message: &str) {
    let line = serde_json::json!({ "error": kind, "message": message });
    eprintln!("{line}");
}

/// Maps an error to the documented exit status.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidDimension(_)
        | Error::DimensionMismatch(_)
        | Error::ShapeMismatch { .. }
        | Error::Parse { .. }
        | Error::Format(_)
        | Error::Integrity(_)
        | Error::SizeMismatch(_)
        | Error::InvalidArgument(_) => EXIT_INPUT,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => EXIT_INPUT,
        Error::NonFinite(_) | Error::NotConverged { .. } | Error::Io { .. } | Error::Json(_) => EXIT_RUNTIME,
    }
}

/// Context shared by every subcommand.
struct Run<'a> {
    name: &'static str,
    cli: &'a Cli,
    out: PathBuf,
    threads: usize,
    artifacts: Vec<String>,
}

impl Run<'_> {
    fn oracle(&self) -> GroundTruthOracle {
        GroundTruthOracle::with_cache(cache_dir(self.cli))
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.out.join(name)
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))
    }

    fn finish(self, config: &impl Serialize, seeds: &[(&str, u64)]) -> Result<()> {
        let manifest = RunManifest {
            tool: "heatnet".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: self.name.into(),
            config: serde_json::to_value(config)?,
            seeds: seeds.iter().map(|(k, v)| (k.to_string(), Value::from(*v))).collect(),
            threads: self.threads,
            cache_dir: Some(cache_dir(self.cli)),
            out: self.out.clone(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            artifacts: self.artifacts,
        };
        let path = self.out.join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn cache_dir(cli: &Cli) -> PathBuf {
    if let Some(dir) = &cli.cache_dir {
        return dir.clone();
    }
    match std::env::var_os("HOME") {
        Some(home) => Path::new(&home).join(".cache").join("heatnet").join("ground-truth"),
        None => PathBuf::from(".heatnet-cache"),
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let threads = cli.threads.unwrap_or(1);
    if threads == 0 {
        return Err(Error::InvalidArgument("--threads must be at least 1".into()));
    }
    let file = match &cli.config {
        Some(path) => Some(load_config_file(path)?),
        None => None,
    };
    let name = subcommand_name(&cli.command);
    let section = file.as_ref().map(|f| f.section(name)).transpose()?;
    let out = match (cli.out.clone(), file.as_ref().and_then(|f| f.out.clone())) {
        (Some(out), _) | (None, Some(out)) => out,
        (None, None) => return Err(Error::InvalidArgument("--out is required".into())),
    };
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut run = Run {
        name,
        cli,
        out,
        threads,
        artifacts: Vec::new(),
    };
    let section = section.unwrap_or_default();

    match &cli.command {
        Command::Gen(f) => {
            let defaults = GenSettings {
                size: 32,
                seed: 0,
                count: 1,
            };
            let s: GenSettings = resolve(&defaults, section, flags![f; size, seed, count])?;
            cmd_gen(&mut run, &s)?;
            run.finish(&s, &[("seed", s.seed)])
        }
        Command::SolveFd(f) => {
            let defaults = SolveSettings {
                input: None,
                method: Method::GaussSeidel,
                tol: GROUND_TRUTH_TOLERANCE,
                max_sweeps: None,
            };
            let mut flags = flags![f; tol, max_sweeps];
            insert(&mut flags, "input", &f.input)?;
            insert(&mut flags, "method", &f.method)?;
            let s: SolveSettings = resolve(&defaults, section, flags)?;
            cmd_solve(&mut run, &s)?;
            run.finish(&s, &[])
        }
        Command::Train(f) => {
            let defaults = TrainSettings {
                size: 64,
                epochs: 128,
                seed: 0,
                problems_per_epoch: 256,
                batch_size: None,
                learning_rate: crate::trainer::DEFAULT_LEARNING_RATE,
                beta1: crate::trainer::DEFAULT_BETA1,
                curriculum: ScheduleKind::Progressive,
                pyramid_factor: PyramidSpec::default().factor,
                pyramid_min: PyramidSpec::default().min_size,
                eval_every: 8,
                eval_set_size: 32,
            };
            let mut flags = flags![f; size, epochs, seed, problems_per_epoch, batch_size, learning_rate,
                beta1, pyramid_factor, pyramid_min, eval_every, eval_set_size];
            insert(&mut flags, "curriculum", &f.curriculum)?;
            let s: TrainSettings = resolve(&defaults, section, flags)?;
            cmd_train(&mut run, &s)?;
            run.finish(&s, &[("seed", s.seed)])
        }
        Command::Eval(f) => {
            let defaults = EvalSettings {
                checkpoint: None,
                n: 32,
                seed: 0,
                size: None,
            };
            let mut flags = flags![f; n, seed, size];
            insert(&mut flags, "checkpoint", &f.checkpoint)?;
            let s: EvalSettings = resolve(&defaults, section, flags)?;
            cmd_eval(&mut run, &s)?;
            run.finish(&s, &[("seed", s.seed)])
        }
        Command::LearnKernel(f) => {
            let base = KernelLearnConfig::new(0);
            let defaults = KernelSettings {
                constraint: base.constraint,
                steps: base.steps,
                learning_rate: base.learning_rate,
                n_samples: base.n_samples,
                grid_size: base.grid_size,
                seed: 0,
            };
            let mut flags = flags![f; steps, learning_rate, n_samples, grid_size, seed];
            insert(&mut flags, "constraint", &f.constraint)?;
            let s: KernelSettings = resolve(&defaults, section, flags)?;
            cmd_kernel(&mut run, &s)?;
            run.finish(&s, &[("seed", s.seed)])
        }
        Command::BenchWarmstart(f) => {
            let base = BenchConfig::new(0);
            let defaults = BenchSettings {
                checkpoint: None,
                n: 32,
                seed: 0,
                thresholds: base.thresholds,
                method: base.method,
                sample_every: base.sample_every,
                max_sweeps: None,
                size: None,
            };
            let mut flags = flags![f; n, seed, sample_every, max_sweeps, size];
            insert(&mut flags, "checkpoint", &f.checkpoint)?;
            insert(&mut flags, "method", &f.method)?;
            if let Some(list) = &f.thresholds {
                insert(&mut flags, "thresholds", &Some(parse_list(list)?))?;
            }
            let s: BenchSettings = resolve(&defaults, section, flags)?;
            cmd_bench(&mut run, &s)?;
            run.finish(&s, &[("seed", s.seed)])
        }
    }
}

fn insert<T: Serialize>(map: &mut Map<String, Value>, key: &str, value: &Option<T>) -> Result<()> {
    if let Some(v) = value {
        map.insert(key.to_string(), serde_json::to_value(v)?);
    }
    Ok(())
}

fn parse_list(list: &str) -> Result<Vec<f64>> {
    list.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad number {t:?} in list {list:?}")))
        })
        .collect()
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Gen(_) => "gen",
        Command::SolveFd(_) => "solve-fd",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::LearnKernel(_) => "learn-kernel",
        Command::BenchWarmstart(_) => "bench-warmstart",
    }
}

/// Settings read from `--config`.
#[derive(Debug, Default)]
pub struct ConfigFile {
    kind: ConfigKind,
    values: Map<String, Value>,
    out: Option<PathBuf>,
    path: PathBuf,
}

#[derive(Debug, Default)]
enum ConfigKind {
    #[default]
    Toml,
    Manifest(String),
}

impl ConfigFile {
    /// Keys that apply to `subcommand`. For TOML, top-level scalars are
    /// overridden by a `[subcommand]` table.
    fn section(&self, subcommand: &str) -> Result<Map<String, Value>> {
        match &self.kind {
            ConfigKind::Manifest(name) if name != subcommand => Err(Error::InvalidArgument(format!(
                "{} is a manifest for `{name}`, not `{subcommand}`",
                self.path.display()
            ))),
            ConfigKind::Manifest(_) => Ok(self.values.clone()),
            ConfigKind::Toml => {
                let mut merged: Map<String, Value> =
                    self.values.iter().filter(|(_, v)| !v.is_object()).map(|(k, v)| (k.clone(), v.clone())).collect();
                if let Some(Value::Object(table)) = self.values.get(subcommand) {
                    merged.extend(table.clone());
                }
                // keys are written with dashes on the command line; accept both
                Ok(merged.into_iter().map(|(k, v)| (k.replace('-', "_"), v)).collect())
            }
        }
    }
}

pub fn load_config_file(path: &Path) -> Result<ConfigFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        let Value::Object(values) = manifest.config else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: "manifest config is not an object".into(),
            });
        };
        return Ok(ConfigFile {
            kind: ConfigKind::Manifest(manifest.subcommand),
            values,
            out: None,
            path: path.to_path_buf(),
        });
    }
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse {
        path: path.to_path_buf(),
        line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
        msg: e.message().to_string(),
    })?;
    let Value::Object(mut values) = serde_json::to_value(table)? else {
        unreachable!("a TOML table serializes to an object")
    };
    let out = match values.remove("out") {
        Some(Value::String(s)) => Some(PathBuf::from(s)),
        Some(other) => {
            return Err(Error::InvalidArgument(format!("`out` must be a string, got {other}")));
        }
        None => None,
    };
    Ok(ConfigFile {
        kind: ConfigKind::Toml,
        values,
        out,
        path: path.to_path_buf(),
    })
}

/// Overlays `file` and then `flags` on `defaults`. Unknown keys are errors.
pub fn resolve<T: Serialize + DeserializeOwned>(
    defaults: &T,
    file: Map<String, Value>,
    flags: Map<String, Value>,
) -> Result<T> {
    let Value::Object(mut merged) = serde_json::to_value(defaults)? else {
        unreachable!("settings serialize to objects")
    };
    merged.extend(file);
    merged.extend(flags);
    serde_json::from_value(Value::Object(merged)).map_err(|e| Error::InvalidArgument(format!("settings: {e}")))
}

fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf> {
    value
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("--{flag} is required")))
}

fn check_size(model: &UNet, expected: Option<usize>) -> Result<usize> {
    let size = model.config().input_size;
    match expected {
        Some(n) if n != size => Err(Error::SizeMismatch(format!(
            "checkpoint input size {size} does not match requested size {n}"
        ))),
        _ => Ok(size),
    }
}

fn cmd_gen(run: &mut Run<'_>, s: &GenSettings) -> Result<()> {
    if s.count == 0 {
        return Err(Error::InvalidArgument("--count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut index = String::from("problem_id,top,bottom,left,right\n");
    for id in 0..s.count {
        let spec = sample_boundary(&mut rng, s.size)?;
        let problem = make_problem(&spec)?;
        let stem = format!("problem_{id:04}");
        write_field_csv(&problem, &run.path(&format!("{stem}.csv")))?;
        write_field_pgm(&problem, &run.path(&format!("{stem}.pgm")))?;
        let _ = writeln!(index, "{id},{:?},{:?},{:?},{:?}", spec.top, spec.bottom, spec.left, spec.right);
    }
    run.write("boundaries.csv", &index)?;
    println!("wrote {} problems of size {} to {}", s.count, s.size, run.out.display());
    Ok(())
}

fn cmd_solve(run: &mut Run<'_>, s: &SolveSettings) -> Result<()> {
    let input = require(&s.input, "in")?;
    let problem = read_field(input)?;
    let max_sweeps = s
        .max_sweeps
        .unwrap_or_else(|| SolverConfig::for_size(s.method, s.tol, problem.height().max(problem.width())).max_sweeps);
    let config = SolverConfig::new(s.method, s.tol, max_sweeps)?;
    let (solution, trace) = fd_solve(&problem, &BoundaryMask::for_field(&problem), &config)?;
    write_field_csv(&solution, &run.path("solution.csv"))?;
    write_field_pgm(&solution, &run.path("solution.pgm"))?;
    let mut csv = String::from("sweep,max_change\n");
    for (i, c) in trace.residual_history.iter().enumerate() {
        let _ = writeln!(csv, "{},{c:?}", i + 1);
    }
    run.write("trace.csv", &csv)?;
    println!(
        "{} sweeps of {}, converged: {}, last change {:e}",
        trace.sweeps_used,
        s.method,
        trace.converged,
        trace.residual_history.last().copied().unwrap_or(0.0)
    );
    if !trace.converged {
        eprintln!("warning: sweep budget of {max_sweeps} exhausted before reaching tolerance {:e}", s.tol);
    }
    Ok(())
}

fn cmd_train(run: &mut Run<'_>, s: &TrainSettings) -> Result<()> {
    let mut config = TrainConfig::new(s.size, s.seed);
    config.epochs = s.epochs;
    config.problems_per_epoch = s.problems_per_epoch;
    if let Some(b) = s.batch_size {
        config.batch_size = b;
    }
    config.learning_rate = s.learning_rate;
    config.beta1 = s.beta1;
    config.curriculum = s.curriculum.clone();
    config.pyramid = PyramidSpec {
        factor: s.pyramid_factor,
        min_size: s.pyramid_min,
    };
    config.eval_every = s.eval_every;
    config.eval_set_size = s.eval_set_size;
    config.validate()?;

    let model = UNet::new(ModelConfig::new(s.size, s.seed))?;
    let held_out = EvalSet::generate(s.size, s.eval_set_size, s.seed, &run.oracle())?;
    let mut evaluator = |m: &UNet, _epoch: usize| Ok(held_out.evaluate(m)?.aggregate);
    let (model, log) = train_with_progress(model, &config, Some(&mut evaluator), |r| {
        let eval = r
            .eval
            .as_ref()
            .map(|e| format!(" eval_mean_percent={:.4}", e.mean_percent))
            .unwrap_or_default();
        println!(
            "epoch={} loss={:.6e} physics_loss={:.6e}{eval}",
            r.epoch, r.mean_multiscale_loss, r.mean_physics_loss
        );
    })?;
    model.save(&run.path("model.lfck"))?;
    run.write("train_log.csv", &log.to_csv())?;
    Ok(())
}

fn cmd_eval(run: &mut Run<'_>, s: &EvalSettings) -> Result<()> {
    let model = UNet::load(require(&s.checkpoint, "checkpoint")?)?;
    let size = check_size(&model, s.size)?;
    let set = EvalSet::generate(size, s.n, s.seed, &run.oracle())?;
    let outcome = set.evaluate(&model)?;
    let mut csv = String::from("problem_id,top,bottom,left,right,mean_percent,std_percent,max_percent\n");
    for (id, (spec, r)) in set.specs.iter().zip(&outcome.per_problem).enumerate() {
        let _ = writeln!(
            csv,
            "{id},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            spec.top, spec.bottom, spec.left, spec.right, r.mean_percent, r.std_percent, r.max_percent
        );
    }
    run.write("per_problem.csv", &csv)?;
    let report = serde_json::to_string_pretty(&outcome.aggregate)? + "\n";
    run.write("report.json", &report)?;
    print!("{report}");
    Ok(())
}

fn cmd_kernel(run: &mut Run<'_>, s: &KernelSettings) -> Result<()> {
    let config = KernelLearnConfig {
        constraint: s.constraint,
        steps: s.steps,
        learning_rate: s.learning_rate,
        n_samples: s.n_samples,
        grid_size: s.grid_size,
        ..KernelLearnConfig::new(s.seed)
    };
    let (stencil, history) = learn_kernel(&config, &run.oracle())?;
    stencil.write_csv(&run.path("stencil.csv"))?;
    run.write("history.csv", &history.to_csv())?;
    let report = KernelReport::new(&config, &stencil, &history);
    report.write_json(&run.path("kernel.json"))?;
    println!("{}", stencil.to_csv().trim_end());
    if let Some(c) = report.cosine_to_canonical {
        println!("cosine_to_canonical={c:.6}");
    }
    Ok(())
}

fn cmd_bench(run: &mut Run<'_>, s: &BenchSettings) -> Result<()> {
    let model = UNet::load(require(&s.checkpoint, "checkpoint")?)?;
    let size = check_size(&model, s.size)?;
    let mut config = BenchConfig::new(size);
    config.thresholds = s.thresholds.clone();
    config.method = s.method;
    config.sample_every = s.sample_every;
    if let Some(m) = s.max_sweeps {
        config.max_sweeps = m;
    }
    config.validate()?;
    let set = EvalSet::generate(size, s.n, s.seed, &run.oracle())?;
    let started = std::time::Instant::now();
    let results = run_bench(&model, &set, &config)?;
    let [csv, json] = emit_curves(&results, config.method, &run.out)?;
    for p in [csv, json] {
        run.artifacts.push(p.file_name().expect("file").to_string_lossy().into_owned());
    }
    let summary = summarize(&results, config.method)?;
    for t in &summary.thresholds {
        println!(
            "threshold={}% warm_median={:?} constant_median={:?} median_speedup={:?} warm_fewer={:.3}",
            t.threshold_percent,
            t.median_warm_sweeps,
            t.median_constant_sweeps,
            t.median_speedup,
            t.warm_strictly_fewer
        );
    }
    println!("wall_seconds={:.3}", started.elapsed().as_secs_f64());
    Ok(())
}
