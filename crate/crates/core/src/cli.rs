//! Command-line front end.
//!
//! Settings resolve as command-line flag, then `--config` file entry, then
//! built-in default. The config file is flat `key = value` text whose keys
//! are the long flag names; `#` starts a comment and unknown keys are
//! rejected. `NOISY_GPR_SEED` overrides the default seed.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 I/O or parse
//! error, 3 numerical failure, 4 optimizer stopped without converging.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::data::{
    gen_example1, gen_gp_sample, gen_grid, gen_heteroscedastic, inject_noise, read_dataset,
    write_dataset, Dataset, HeteroscedasticSetup, NoiseInjectionSpec,
};
use crate::detect::{
    cv_mae, default_threshold, evaluate_detection, flag_noisy, NoiseMode, DEFAULT_RECALL_LEVELS,
};
use crate::error::{Error, Result};
use crate::gpr::NoiseVector;
use crate::kernel::KernelParams;
use crate::noiseopt::{
    joint_optimize, optimize_sigma, optimize_sigma_uniform, projected_gradient_baseline,
    JointOptConfig, MultUpdateConfig, OptTrace, ProjectedGradientConfig, SigmaInit, StopReason,
};
use crate::report::{
    DatasetInfo, LabelEntry, ModelInfo, ReportDocument, ToolInfo, TraceSummary, SCHEMA_VERSION,
};
use crate::rng::RNG_ALGORITHM;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_NOT_CONVERGED: i32 = 4;

pub const SEED_ENV: &str = "NOISY_GPR_SEED";

const NOTE_TARGET: &str =
    "r2_noise compares learned sigma_i with the squared injected perturbation epsilon_i^2";

#[derive(Debug, Parser)]
#[command(name = "noisy-gpr", version, about = "Detect and quantify noisy labels with heteroscedastic GP regression")]
pub struct Cli {
    /// Flat key=value file supplying defaults for any long flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset CSV.
    Gen(GenArgs),
    /// Fit a noise model and write a JSON report.
    Fit(FitArgs),
    /// Threshold learned noise into flags and score against ground truth.
    Detect(DetectArgs),
    /// Run a noise rate x level grid and write a CSV table.
    Benchmark(BenchmarkArgs),
    /// Write per-iteration traces of the multiplicative and projected-gradient optimizers.
    CompareOptimizers(CompareArgs),
}

#[derive(Debug, Args, Default)]
pub struct GeneratorArgs {
    /// 24-point demo with 10 contaminated labels.
    #[arg(long)]
    pub example1: bool,
    /// Demo function on an n-point grid, optionally with injected noise.
    #[arg(long)]
    pub grid: bool,
    /// Sample from an RBF Gaussian process at uniform random inputs.
    #[arg(long)]
    pub gp: bool,
    /// Heteroscedastic 1-D setup: goldberg or le.
    #[arg(long)]
    pub generator: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Number of contaminated labels for --generator.
    #[arg(long)]
    pub n_corrupt: Option<usize>,
    #[arg(long)]
    pub base_noise: Option<f64>,
    #[arg(long)]
    pub contamination_std: Option<f64>,
    /// Fraction of labels to corrupt (--grid, --gp).
    #[arg(long)]
    pub rate: Option<f64>,
    /// Corruption std relative to the label std (--grid, --gp).
    #[arg(long)]
    pub level: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct KernelArgs {
    #[arg(long)]
    pub signal_variance: Option<f64>,
    #[arg(long)]
    pub length_scale: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct OptimizerArgs {
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol_sigma: Option<f64>,
    #[arg(long)]
    pub tol_nll: Option<f64>,
    /// Initial noise as a fraction of var(y).
    #[arg(long)]
    pub sigma_init: Option<f64>,
    #[arg(long)]
    pub zero_clip: Option<f64>,
    /// Penalty weight lambda.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Penalty exponent p (>= 1).
    #[arg(long)]
    pub p: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    /// plain, basic or full.
    #[arg(long)]
    pub mode: Option<String>,
    /// Also optimize kernel hyperparameters.
    #[arg(long)]
    pub joint: bool,
    #[arg(long)]
    pub outer_rounds: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub theta_max_steps: Option<usize>,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub optimizer: OptimizerArgs,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub generator: GeneratorArgs,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Flag threshold on sigma; defaults to median + 3 MAD.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// A report written by `fit`.
    #[arg(long, conflicts_with = "data")]
    pub report: Option<PathBuf>,
    /// A dataset to fit in-line.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Comma-separated recall levels in (0, 1].
    #[arg(long)]
    pub recall_levels: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Pristine dataset; when absent one is generated (--gp by default).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub generator: GeneratorArgs,
    /// Comma-separated noise rates.
    #[arg(long)]
    pub rates: Option<String>,
    /// Comma-separated noise levels.
    #[arg(long)]
    pub levels: Option<String>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub recall_levels: Option<String>,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub optimizer: OptimizerArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub optimizer: OptimizerArgs,
    /// First projected-gradient step; defaults to var(y)^2.
    #[arg(long)]
    pub pg_step: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Keys accepted in a config file.
pub const CONFIG_KEYS: &[&str] = &[
    "base-noise",
    "contamination-std",
    "data",
    "dim",
    "folds",
    "generator",
    "lambda",
    "learning-rate",
    "length-scale",
    "levels",
    "max-iters",
    "mode",
    "n",
    "n-corrupt",
    "outer-rounds",
    "out",
    "p",
    "pg-step",
    "rate",
    "rates",
    "recall-levels",
    "report",
    "level",
    "restarts",
    "seed",
    "sigma-init",
    "signal-variance",
    "theta-max-steps",
    "threshold",
    "tol-nll",
    "tol-sigma",
    "zero-clip",
    "joint",
];

/// Parsed `key = value` config file.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
    origin: Option<PathBuf>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line: i as u64 + 1,
                message: format!("expected key=value, found '{line}'"),
            })?;
            let key = key.trim().replace('_', "-");
            if !CONFIG_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!(
                    "{}:{}: unknown config key '{key}'",
                    origin.display(),
                    i + 1
                )));
            }
            entries.insert(key, value.trim().to_string());
        }
        Ok(ConfigFile {
            entries,
            origin: Some(origin.to_path_buf()),
        })
    }
}

/// Resolves settings and records every resolved value for the report.
struct Resolver<'a> {
    file: &'a ConfigFile,
    echo: BTreeMap<String, String>,
}

impl<'a> Resolver<'a> {
    fn new(file: &'a ConfigFile) -> Self {
        Resolver {
            file,
            echo: BTreeMap::new(),
        }
    }

    fn file_value<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.file
            .entries
            .get(key)
            .map(|v| {
                v.parse::<T>().map_err(|e| {
                    Error::Config(format!(
                        "{}: bad value '{v}' for '{key}': {e}",
                        self.file
                            .origin
                            .as_deref()
                            .map_or_else(String::new, |p| p.display().to_string())
                    ))
                })
            })
            .transpose()
    }

    fn opt<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.file_value(key)?,
        };
        if let Some(v) = &v {
            self.echo.insert(key.into(), v.to_string());
        }
        Ok(v)
    }

    fn get<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.opt(key, flag)?.unwrap_or_else(|| {
            self.echo.insert(key.into(), default.to_string());
            default
        }))
    }

    fn switch(&mut self, key: &str, flag: bool) -> Result<bool> {
        let v = flag || self.file_value::<bool>(key)?.unwrap_or(false);
        self.echo.insert(key.into(), v.to_string());
        Ok(v)
    }

    fn path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>> {
        let v = flag.or_else(|| self.file.entries.get(key).map(PathBuf::from));
        if let Some(p) = &v {
            self.echo.insert(key.into(), p.display().to_string());
        }
        Ok(v)
    }

    fn required_path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf> {
        self.path(key, flag)?
            .ok_or_else(|| Error::Config(format!("--{key} is required")))
    }

    fn seed(&mut self, flag: Option<u64>) -> Result<u64> {
        let default = match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}='{v}' is not an integer")))?,
            Err(_) => 0,
        };
        self.get("seed", flag, default)
    }

    fn floats(&mut self, key: &str, flag: Option<String>, default: &[f64]) -> Result<Vec<f64>> {
        let raw = match flag {
            Some(v) => Some(v),
            None => self.file.entries.get(key).cloned(),
        };
        let values = match raw {
            Some(s) => parse_float_list(&s, key)?,
            None => default.to_vec(),
        };
        self.echo.insert(
            key.into(),
            values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(","),
        );
        Ok(values)
    }
}

fn parse_float_list(s: &str, key: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number '{t}' in --{key}")))
        })
        .collect()
}

fn resolve_kernel(r: &mut Resolver, args: &KernelArgs, data: &Dataset) -> Result<KernelParams> {
    let heuristic = KernelParams::heuristic(data.inputs(), data.labels());
    let s = r.get("signal-variance", args.signal_variance, heuristic.signal_variance)?;
    let l = r.get("length-scale", args.length_scale, heuristic.length_scale)?;
    KernelParams::new(s, l).map_err(|e| Error::Config(e.to_string()))
}

fn resolve_mult(r: &mut Resolver, args: &OptimizerArgs) -> Result<MultUpdateConfig> {
    let d = MultUpdateConfig::default();
    let cfg = MultUpdateConfig {
        max_iters: r.get("max-iters", args.max_iters, d.max_iters)?,
        tol_sigma: r.get("tol-sigma", args.tol_sigma, d.tol_sigma)?,
        tol_nll: r.get("tol-nll", args.tol_nll, d.tol_nll)?,
        sigma_init: SigmaInit::VarianceFraction(r.get("sigma-init", args.sigma_init, 0.1)?),
        penalty_lambda: r.get("lambda", args.lambda, d.penalty_lambda)?,
        penalty_p: r.get("p", args.p, d.penalty_p)?,
        zero_clip: r.opt("zero-clip", args.zero_clip)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_joint(r: &mut Resolver, args: &ModelArgs, seed: u64) -> Result<JointOptConfig> {
    let d = JointOptConfig::default();
    let cfg = JointOptConfig {
        outer_rounds: r.get("outer-rounds", args.outer_rounds, d.outer_rounds)?,
        learning_rate: r.get("learning-rate", args.learning_rate, d.learning_rate)?,
        theta_max_steps: r.get("theta-max-steps", args.theta_max_steps, d.theta_max_steps)?,
        restarts: r.get("restarts", args.restarts, d.restarts)?,
        restart_seed: seed,
        ..d
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_config(path: &Option<PathBuf>) -> Result<ConfigFile> {
    match path {
        Some(p) => ConfigFile::load(p),
        None => Ok(ConfigFile::default()),
    }
}

/// Maps an error to the documented exit code.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        return EXIT_NUMERICAL;
    }
    match e {
        Error::Io { .. } | Error::Parse { .. } | Error::EmptyDataset => EXIT_IO,
        Error::Optimization { source, .. } | Error::Fold { source, .. } => exit_code(source),
        Error::AllRestartsFailed { last, .. } => exit_code(last),
        _ => EXIT_USAGE,
    }
}

/// What a successful command reports back to `main`.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub converged: bool,
    pub summary: String,
}

impl Outcome {
    fn done(summary: String) -> Self {
        Outcome {
            converged: true,
            summary,
        }
    }
}

/// Parses arguments, runs the command, prints its summary line and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(outcome) => {
            let _ = writeln!(std::io::stdout(), "{}", outcome.summary);
            if outcome.converged {
                EXIT_OK
            } else {
                eprintln!("warning: optimizer reached max_iters without converging");
                EXIT_NOT_CONVERGED
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: &Cli) -> Result<Outcome> {
    let file = load_config(&cli.config)?;
    match &cli.command {
        Command::Gen(a) => cmd_gen(a, &file),
        Command::Fit(a) => cmd_fit(a, &file),
        Command::Detect(a) => cmd_detect(a, &file),
        Command::Benchmark(a) => cmd_benchmark(a, &file),
        Command::CompareOptimizers(a) => cmd_compare_optimizers(a, &file),
    }
}

/// Builds the dataset a generator flag set describes.
fn generate(r: &mut Resolver, g: &GeneratorArgs, kernel: &KernelArgs, seed: u64, default_gp: bool) -> Result<Dataset> {
    let generator = r.opt("generator", g.generator.clone())?;
    let chosen = [g.example1, g.grid, g.gp, generator.is_some()]
        .iter()
        .filter(|&&b| b)
        .count();
    if chosen > 1 {
        return Err(Error::Config(
            "choose exactly one of --example1, --grid, --gp, --generator".into(),
        ));
    }
    if g.example1 {
        if g.rate.is_some() || g.level.is_some() || g.n.is_some() || g.n_corrupt.is_some() || g.base_noise.is_some() {
            return Err(Error::Config(
                "--example1 has fixed size and contamination; drop --n/--rate/--level/--n-corrupt/--base-noise".into(),
            ));
        }
        r.echo.insert("generator".into(), "example1".into());
        return Ok(gen_example1(seed));
    }
    if let Some(name) = generator {
        let setup: HeteroscedasticSetup = name.parse()?;
        let (n_default, k_default) = setup.default_size();
        let n = r.get("n", g.n, n_default)?;
        let k = r.get("n-corrupt", g.n_corrupt, k_default)?;
        let mut params = setup.default_params();
        params.contamination_std = r.get("contamination-std", g.contamination_std, params.contamination_std)?;
        return gen_heteroscedastic(setup, n, k, Some(&params), seed);
    }
    let clean = if g.grid {
        r.echo.insert("generator".into(), "grid".into());
        let n = r.get("n", g.n, 30)?;
        let base = r.get("base-noise", g.base_noise, 0.05)?;
        gen_grid(n, base, seed)?
    } else if g.gp || default_gp {
        r.echo.insert("generator".into(), "gp".into());
        let n = r.get("n", g.n, 200)?;
        let dim = r.get("dim", g.dim, 1)?;
        let base = r.get("base-noise", g.base_noise, 0.05)?;
        let s = r.get("signal-variance", kernel.signal_variance, 1.0)?;
        let l = r.get("length-scale", kernel.length_scale, 0.3)?;
        gen_gp_sample(&KernelParams::new(s, l)?, n, dim, base, seed)?
    } else {
        return Err(Error::Config(
            "no generator selected (--example1, --grid, --gp or --generator)".into(),
        ));
    };
    Ok(clean)
}

pub fn cmd_gen(a: &GenArgs, file: &ConfigFile) -> Result<Outcome> {
    let mut r = Resolver::new(file);
    let seed = r.seed(a.seed)?;
    let out = r.required_path("out", a.out.clone())?;
    let mut data = generate(&mut r, &a.generator, &a.kernel, seed, false)?;
    if a.generator.grid || a.generator.gp {
        let rate = r.get("rate", a.generator.rate, 0.0)?;
        let level = r.get("level", a.generator.level, 0.0)?;
        // the injection stream is seeded one past the generator stream
        let spec = NoiseInjectionSpec {
            rate,
            level,
            seed: seed.wrapping_add(1),
        };
        data = inject_noise(&data, &spec)?;
    }
    write_dataset(&data, &out)?;
    let corrupted = data.truth().map_or(0, |t| t.n_corrupted());
    Ok(Outcome::done(format!(
        "wrote {}: N={} d={} corrupted={} seed={} rng={}",
        out.display(),
        data.len(),
        data.dim(),
        corrupted,
        seed,
        RNG_ALGORITHM
    )))
}

/// A fitted model in report-ready form.
struct FittedModel {
    mode: NoiseMode,
    joint: bool,
    kernel: KernelParams,
    sigma: NoiseVector,
    sigma_scalar: Option<f64>,
    trace: OptTrace,
    jitter: f64,
    loocv_errors: Vec<f64>,
    loocv_stds: Vec<f64>,
    mult: MultUpdateConfig,
}

fn trivial_trace(nll: f64) -> OptTrace {
    OptTrace {
        nll_per_iter: vec![nll],
        sigma_change_per_iter: vec![],
        evals_per_iter: vec![1],
        iters: 0,
        converged: true,
        monotone: true,
        stop_reason: StopReason::SigmaTolerance,
    }
}

fn fit_model(r: &mut Resolver, m: &ModelArgs, data: &Dataset, seed: u64) -> Result<FittedModel> {
    let mode: NoiseMode = r.get("mode", m.mode.clone(), "full".to_string())?.parse()?;
    let joint = r.switch("joint", m.joint)?;
    let kernel = resolve_kernel(r, &m.kernel, data)?;
    let mult = resolve_mult(r, &m.optimizer)?;
    let y = data.centered_labels();
    let n = data.len();
    let (kernel, sigma, sigma_scalar, trace, state) = match (mode, joint) {
        (NoiseMode::Full, true) => {
            let jc = resolve_joint(r, m, seed)?;
            let f = joint_optimize(&kernel, data.inputs(), &y, &jc, &mult)?;
            (f.kernel, f.sigma, None, f.trace, f.state)
        }
        (NoiseMode::Full, false) => {
            let f = optimize_sigma(&kernel, data.inputs(), &y, &mult)?;
            (kernel, f.sigma, None, f.trace, f.state)
        }
        (NoiseMode::Basic, false) => {
            let f = optimize_sigma_uniform(&kernel, data.inputs(), &y, &mult)?;
            (kernel, NoiseVector::uniform(n, f.sigma)?, Some(f.sigma), f.trace, f.state)
        }
        (NoiseMode::Plain, false) => {
            let state = crate::gpr::GprState::fit(&kernel, data.inputs(), NoiseVector::zeros(n), &y)?;
            (kernel, NoiseVector::zeros(n), None, trivial_trace(state.nll()), state)
        }
        (_, true) => {
            return Err(Error::Config("--joint is only available with --mode full".into()));
        }
    };
    let loo = state.loocv();
    Ok(FittedModel {
        mode,
        joint,
        kernel,
        sigma,
        sigma_scalar,
        trace,
        jitter: state.jitter(),
        loocv_errors: loo.errors.iter().copied().collect(),
        loocv_stds: loo.stds.iter().copied().collect(),
        mult,
    })
}

fn mode_name(mode: NoiseMode) -> &'static str {
    match mode {
        NoiseMode::Plain => "plain",
        NoiseMode::Basic => "basic",
        NoiseMode::Full => "full",
    }
}

fn build_report(
    command: &str,
    echo: BTreeMap<String, String>,
    data: &Dataset,
    path: Option<&Path>,
    fitted: &FittedModel,
    threshold: Option<f64>,
) -> Result<ReportDocument> {
    let (threshold, rule) = match threshold {
        Some(t) => (t, "explicit"),
        None => (default_threshold(&fitted.sigma), "median+3mad"),
    };
    let detection = flag_noisy(&fitted.sigma, threshold)?;
    let truth = data.truth();
    let per_label = (0..data.len())
        .map(|i| LabelEntry {
            index: i,
            sigma: fitted.sigma.as_slice()[i],
            score: detection.scores[i],
            flag: detection.flags[i],
            loocv_error: fitted.loocv_errors[i],
            loocv_std: fitted.loocv_stds[i],
            epsilon: truth.map(|t| t.epsilon[i]),
            corrupted: truth.map(|t| t.corrupted[i]),
        })
        .collect();
    Ok(ReportDocument {
        schema_version: SCHEMA_VERSION,
        tool: ToolInfo::default(),
        command: command.into(),
        config: echo,
        dataset: DatasetInfo {
            path: path.map(|p| p.display().to_string()),
            n: data.len(),
            dim: data.dim(),
            y_center: data.y_center(),
            has_truth: truth.is_some(),
        },
        model: ModelInfo {
            mode: mode_name(fitted.mode).into(),
            joint: fitted.joint,
            kernel: fitted.kernel,
            penalty_lambda: fitted.mult.penalty_lambda,
            penalty_p: fitted.mult.penalty_p,
            sigma_scalar: fitted.sigma_scalar,
            jitter: fitted.jitter,
            final_nll: fitted.trace.final_nll(),
        },
        threshold,
        threshold_rule: rule.into(),
        per_label,
        metrics: None,
        trace: TraceSummary::from(&fitted.trace),
        notes: vec![NOTE_TARGET.into()],
    })
}

pub fn cmd_fit(a: &FitArgs, file: &ConfigFile) -> Result<Outcome> {
    let mut r = Resolver::new(file);
    let data_path = r.required_path("data", a.data.clone())?;
    let out = r.required_path("out", a.out.clone())?;
    let seed = r.seed(a.seed)?;
    let threshold = r.opt("threshold", a.threshold)?;
    let data = read_dataset(&data_path)?;
    let fitted = fit_model(&mut r, &a.model, &data, seed)?;
    let report = build_report("fit", r.echo, &data, Some(&data_path), &fitted, threshold)?;
    report.write(&out)?;
    Ok(Outcome {
        converged: fitted.trace.converged,
        summary: format!(
            "wrote {}: mode={} iters={} monotone={} final_nll={:.10} flagged={}",
            out.display(),
            report.model.mode,
            report.trace.iters,
            report.trace.monotone,
            report.trace.final_nll,
            report.per_label.iter().filter(|l| l.flag).count()
        ),
    })
}

fn rethreshold(doc: &mut ReportDocument, threshold: Option<f64>) -> Result<()> {
    let sigma = NoiseVector::new(doc.per_label.iter().map(|l| l.sigma).collect())?;
    let (t, rule) = match threshold {
        Some(t) => (t, "explicit"),
        None => (default_threshold(&sigma), "median+3mad"),
    };
    let det = flag_noisy(&sigma, t)?;
    for (l, f) in doc.per_label.iter_mut().zip(det.flags) {
        l.flag = f;
    }
    doc.threshold = t;
    doc.threshold_rule = rule.into();
    Ok(())
}

pub fn cmd_detect(a: &DetectArgs, file: &ConfigFile) -> Result<Outcome> {
    let mut r = Resolver::new(file);
    let out = r.required_path("out", a.out.clone())?;
    let threshold = r.opt("threshold", a.threshold)?;
    let levels = r.floats("recall-levels", a.recall_levels.clone(), &DEFAULT_RECALL_LEVELS)?;
    let report_path = r.path("report", a.report.clone())?;
    let mut doc = match report_path {
        Some(p) => {
            let mut doc = ReportDocument::read(&p)?;
            rethreshold(&mut doc, threshold)?;
            doc
        }
        None => {
            let data_path = r.required_path("data", a.data.clone())?;
            let seed = r.seed(a.seed)?;
            let data = read_dataset(&data_path)?;
            let fitted = fit_model(&mut r, &a.model, &data, seed)?;
            build_report("detect", BTreeMap::new(), &data, Some(&data_path), &fitted, threshold)?
        }
    };
    let truth = doc
        .per_label
        .iter()
        .map(|l| l.epsilon.zip(l.corrupted))
        .collect::<Option<Vec<_>>>();
    doc.metrics = match truth {
        Some(t) if !t.is_empty() => {
            let truth = crate::data::Truth {
                epsilon: t.iter().map(|p| p.0).collect(),
                corrupted: t.iter().map(|p| p.1).collect(),
            };
            let sigma = NoiseVector::new(doc.per_label.iter().map(|l| l.sigma).collect())?;
            Some(evaluate_detection(&sigma, &truth, &levels))
        }
        _ => None,
    };
    doc.command = "detect".into();
    let mut echo = std::mem::take(&mut doc.config);
    echo.extend(r.echo);
    doc.config = echo;
    doc.write(&out)?;
    let flagged = doc.per_label.iter().filter(|l| l.flag).count();
    let auc = doc
        .metrics
        .as_ref()
        .and_then(|m| m.auc.value)
        .map_or("NA".to_string(), |v| format!("{v:.4}"));
    Ok(Outcome {
        converged: doc.trace.converged,
        summary: format!(
            "wrote {}: flagged={} threshold={:e} auc={}",
            out.display(),
            flagged,
            doc.threshold,
            auc
        ),
    })
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:?}"))
}

fn level_label(level: f64) -> String {
    let pct = level * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("p_at_{}", pct.round() as i64)
    } else {
        format!("p_at_{pct}")
    }
}

/// One grid cell: inject, score detection on the full dataset, and
/// cross-validate the three noise models.
fn benchmark_cell(
    clean: &Dataset,
    kernel: &KernelParams,
    mult: &MultUpdateConfig,
    spec: &NoiseInjectionSpec,
    folds: usize,
    fold_seed: u64,
    levels: &[f64],
) -> (Vec<String>, Vec<String>) {
    let mut errors = Vec::new();
    let mut cells = Vec::new();
    let noisy = match inject_noise(clean, spec) {
        Ok(d) => d,
        Err(e) => {
            errors.push(e.to_string());
            return (vec!["NA".into(); 4 + levels.len() + 1], errors);
        }
    };
    match optimize_sigma(kernel, noisy.inputs(), &noisy.centered_labels(), mult) {
        Ok(fit) => {
            let m = evaluate_detection(&fit.sigma, noisy.truth().expect("injected"), levels);
            cells.push(fmt_cell(m.r2_noise.value));
            cells.push(fmt_cell(m.auc.value));
            for (i, _) in levels.iter().enumerate() {
                cells.push(fmt_cell(m.precision_at_recall.get(i).map(|p| p.precision)));
            }
        }
        Err(e) => {
            errors.push(format!("detection: {e}"));
            cells.extend(std::iter::repeat_n("NA".to_string(), 2 + levels.len()));
        }
    }
    for mode in [NoiseMode::Plain, NoiseMode::Basic, NoiseMode::Full] {
        match cv_mae(&noisy, kernel, mode, folds, fold_seed, mult) {
            Ok(v) => cells.push(fmt_cell(Some(v))),
            Err(e) => {
                errors.push(format!("{}: {e}", mode_name(mode)));
                cells.push("NA".into());
            }
        }
    }
    (cells, errors)
}

/// Renders the benchmark table; exposed for the determinism check.
pub fn benchmark_table(
    clean: &Dataset,
    kernel: &KernelParams,
    mult: &MultUpdateConfig,
    rates: &[f64],
    levels: &[f64],
    folds: usize,
    seed: u64,
    recall_levels: &[f64],
) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = vec!["rate".into(), "level".into(), "r2".into(), "auc".into()];
    header.extend(recall_levels.iter().map(|&l| level_label(l)));
    header.extend(["mae_plain", "mae_basic", "mae_full", "error"].map(String::from));
    let csv_err = |e: csv::Error| Error::InvalidInput(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    let mut cell_index = 0u64;
    for &rate in rates {
        for &level in levels {
            let spec = NoiseInjectionSpec {
                rate,
                level,
                seed: seed.wrapping_add(cell_index),
            };
            cell_index += 1;
            let (cells, errors) = benchmark_cell(clean, kernel, mult, &spec, folds, seed, recall_levels);
            let mut row = vec![format!("{rate:?}"), format!("{level:?}")];
            row.extend(cells);
            row.push(errors.join("; "));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn cmd_benchmark(a: &BenchmarkArgs, file: &ConfigFile) -> Result<Outcome> {
    let mut r = Resolver::new(file);
    let out = r.required_path("out", a.out.clone())?;
    let seed = r.seed(a.seed)?;
    let clean = match r.path("data", a.data.clone())? {
        Some(p) => read_dataset(&p)?.without_truth(),
        None => generate(&mut r, &a.generator, &a.kernel, seed, true)?.without_truth(),
    };
    let kernel = resolve_kernel(&mut r, &a.kernel, &clean)?;
    let mult = resolve_mult(&mut r, &a.optimizer)?;
    let rates = r.floats("rates", a.rates.clone(), &[0.1, 0.3, 0.5])?;
    let levels = r.floats("levels", a.levels.clone(), &[0.5, 1.0])?;
    let recall = r.floats("recall-levels", a.recall_levels.clone(), &DEFAULT_RECALL_LEVELS)?;
    let folds = r.get("folds", a.folds, 5)?;
    let table = benchmark_table(&clean, &kernel, &mult, &rates, &levels, folds, seed, &recall)?;
    std::fs::write(&out, &table).map_err(|e| Error::io(&out, e))?;
    Ok(Outcome::done(format!(
        "wrote {}: {} cells, N={}, seed={}",
        out.display(),
        rates.len() * levels.len(),
        clean.len(),
        seed
    )))
}

/// Both optimizers from the same start; CSV rows
/// `optimizer,iter,nll,evals` with cumulative evaluation counts.
pub fn compare_optimizers_csv(mult_trace: &OptTrace, pg_trace: &OptTrace) -> String {
    let mut s = String::from("optimizer,iter,nll,evals\n");
    for (name, t) in [("multiplicative", mult_trace), ("projected_gradient", pg_trace)] {
        for (i, (nll, evals)) in t.nll_per_iter.iter().zip(&t.evals_per_iter).enumerate() {
            s.push_str(&format!("{name},{i},{nll:?},{evals}\n"));
        }
    }
    s
}

pub fn cmd_compare_optimizers(a: &CompareArgs, file: &ConfigFile) -> Result<Outcome> {
    let mut r = Resolver::new(file);
    let data_path = r.required_path("data", a.data.clone())?;
    let out = r.required_path("out", a.out.clone())?;
    let data = read_dataset(&data_path)?;
    let kernel = resolve_kernel(&mut r, &a.kernel, &data)?;
    let mult = resolve_mult(&mut r, &a.optimizer)?;
    let pg = ProjectedGradientConfig {
        common: mult.clone(),
        initial_step: r.opt("pg-step", a.pg_step)?,
        ..Default::default()
    };
    let y = data.centered_labels();
    let m = optimize_sigma(&kernel, data.inputs(), &y, &mult)?;
    let g = projected_gradient_baseline(&kernel, data.inputs(), &y, &pg)?;
    let csv = compare_optimizers_csv(&m.trace, &g.trace);
    std::fs::write(&out, csv).map_err(|e| Error::io(&out, e))?;
    Ok(Outcome {
        converged: m.trace.converged && g.trace.converged,
        summary: format!(
            "wrote {}: multiplicative nll={:.10} evals={}; projected_gradient nll={:.10} evals={}",
            out.display(),
            m.trace.final_nll(),
            m.trace.evaluations(),
            g.trace.final_nll(),
            g.trace.evaluations()
        ),
    })
}
