//! Command implementations behind the `promptshap` binary.
//!
//! Every command writes its report to the supplied output stream (or to
//! `--out`) and returns an [`ExitCode`]; diagnostics go to the error stream.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use promptshap::analysis::Side;
use promptshap::experiment::{Experiment, ExperimentError, LoadedConfig, RunSidecar};
use promptshap::oracle::{cached_evaluate, parse_model_flag, Query};
use promptshap::report::{comparison_summary, emit_plot_data};
use promptshap::{
    compare_attributions, exact_shapley, mc_shapley, normalize_abs, parse_template, AnalysisError,
    AttributionReport, ChoiceDistribution, ChoiceSpec, Comparison, EstimatorConfig, OracleConfig, OracleError, PromptVector,
    ReferenceVector, ReportError, ResponseCache, ShapleyError, TemplateError, ValueFunctionBinding,
};

/// Process exit status, one per failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Usage = 2,
    Oracle = 3,
    Estimation = 4,
    Io = 5,
}

impl ExitCode {
    pub fn code(self) -> i32 {
        self as i32
    }
}

/// A failure tagged with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub exit: ExitCode,
    pub error: anyhow::Error,
}

impl CliError {
    fn new(exit: ExitCode, error: impl Into<anyhow::Error>) -> Self {
        CliError {
            exit,
            error: error.into(),
        }
    }

    fn usage(msg: impl std::fmt::Display) -> Self {
        CliError::new(ExitCode::Usage, anyhow!("{msg}"))
    }

    fn io(error: impl Into<anyhow::Error>) -> Self {
        CliError::new(ExitCode::Io, error)
    }
}

impl From<TemplateError> for CliError {
    fn from(e: TemplateError) -> Self {
        CliError::new(ExitCode::Usage, e)
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        let exit = match &e {
            OracleError::InvalidConfig(_) | OracleError::InvalidChoiceSpec(_) => ExitCode::Usage,
            OracleError::Cache(_) => ExitCode::Io,
            _ => ExitCode::Oracle,
        };
        CliError::new(exit, e)
    }
}

impl From<ShapleyError> for CliError {
    fn from(e: ShapleyError) -> Self {
        let exit = match &e {
            ShapleyError::Oracle { source, .. } => match source {
                OracleError::Cache(_) => ExitCode::Io,
                _ => ExitCode::Oracle,
            },
            ShapleyError::Template(_) | ShapleyError::InvalidConfig(_) => ExitCode::Usage,
            _ => ExitCode::Estimation,
        };
        CliError::new(exit, e)
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        CliError::new(ExitCode::Usage, e)
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        let exit = match e {
            ReportError::Io { .. } => ExitCode::Io,
            _ => ExitCode::Usage,
        };
        CliError::new(exit, e)
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        let exit = match &e {
            ExperimentError::Io { .. } => ExitCode::Io,
            ExperimentError::Config(_) | ExperimentError::Template { .. } | ExperimentError::Analysis { .. } => {
                ExitCode::Usage
            }
            ExperimentError::Oracle { source, .. } => return CliError::from_oracle_with(source, e.to_string()),
            ExperimentError::Estimation { source, .. } => match source {
                ShapleyError::Oracle { .. } => ExitCode::Oracle,
                ShapleyError::Template(_) | ShapleyError::InvalidConfig(_) => ExitCode::Usage,
                _ => ExitCode::Estimation,
            },
        };
        CliError::new(exit, e)
    }
}

impl CliError {
    fn from_oracle_with(source: &OracleError, msg: String) -> Self {
        let exit = match source {
            OracleError::InvalidConfig(_) | OracleError::InvalidChoiceSpec(_) => ExitCode::Usage,
            OracleError::Cache(_) => ExitCode::Io,
            _ => ExitCode::Oracle,
        };
        CliError::new(exit, anyhow!(msg))
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "promptshap", version, about = "Shapley value attribution for prompt templates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Attribute a prompt with the chosen estimator (Monte Carlo by default)
    Analyze(AnalyzeArgs),
    /// Attribute a prompt with the exact subset-weight estimator
    Exact(AnalyzeArgs),
    /// Compare attribution reports, or the variants of an experiment config
    Compare(CompareArgs),
    /// Print the choice distribution for a single prompt
    Probe(ProbeArgs),
    /// Write tab-separated plot data for a report
    Plot(PlotArgs),
    /// Inspect a response cache file
    Cache(CacheArgs),
    /// Run an experiment config end to end
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Mc,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Plot,
    Text,
}

#[derive(Debug, Clone, Args)]
pub struct ChoiceArgs {
    /// Comma-separated choice labels
    #[arg(long, default_value = "A,B", value_delimiter = ',')]
    pub labels: Vec<String>,
    /// Label whose probability is attributed
    #[arg(long, default_value = "A")]
    pub target_label: String,
}

impl ChoiceArgs {
    fn spec(&self) -> CliResult<ChoiceSpec> {
        Ok(ChoiceSpec::new(self.labels.clone(), self.target_label.clone())?)
    }
}

#[derive(Debug, Clone, Args)]
pub struct CacheFlags {
    /// Response cache file (created if missing)
    #[arg(long, value_name = "PATH")]
    pub cache: Option<PathBuf>,
    /// Disable caching, including the in-memory cache
    #[arg(long, conflicts_with = "cache")]
    pub no_cache: bool,
}

impl CacheFlags {
    fn open(&self) -> CliResult<Option<Arc<ResponseCache>>> {
        if self.no_cache {
            return Ok(None);
        }
        Ok(Some(Arc::new(match &self.cache {
            Some(path) => ResponseCache::open(path).map_err(|e| CliError::io(OracleError::from(e)))?,
            None => ResponseCache::in_memory(),
        })))
    }
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    /// Prompt template with `{{ field }}` markers
    #[arg(long)]
    pub template: PathBuf,
    /// JSON object mapping every field name to its value
    #[arg(long)]
    pub values: PathBuf,
    #[arg(long, default_value = promptshap::template::DEFAULT_REFERENCE_TOKEN)]
    pub reference_token: String,
    /// synthetic:additive:FILE | synthetic:logistic:SEED | synthetic:tabular:SEED | remote:URL:MODEL
    #[arg(long)]
    pub model: String,
    #[command(flatten)]
    pub choice: ChoiceArgs,
    /// Monte Carlo permutations
    #[arg(long, default_value_t = 3000)]
    pub iterations: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "mc")]
    pub method: MethodArg,
    #[arg(long, default_value_t = 1)]
    pub parallelism: usize,
    /// Largest player count the exact estimator accepts
    #[arg(long, default_value_t = 12)]
    pub exact_limit: usize,
    #[command(flatten)]
    pub cache: CacheFlags,
    /// Output file (or file prefix for --format plot)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Report files; the first is compared against each of the others
    pub reports: Vec<PathBuf>,
    /// Experiment config whose variants are compared instead
    #[arg(long, conflicts_with = "reports")]
    pub config: Option<PathBuf>,
    /// Fields left out of the cosine similarity
    #[arg(long, value_delimiter = ',')]
    pub exclude: Vec<String>,
    /// Fields allowed to exist on one side only
    #[arg(long, value_delimiter = ',')]
    pub injected: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct ProbeArgs {
    /// File holding the full prompt text
    #[arg(long)]
    pub prompt: PathBuf,
    #[arg(long)]
    pub model: String,
    #[command(flatten)]
    pub choice: ChoiceArgs,
    #[command(flatten)]
    pub cache: CacheFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PlotArgs {
    /// Attribution report (JSON)
    pub report: PathBuf,
    /// Prefix for the .tsv files written
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CacheArgs {
    #[command(subcommand)]
    pub action: CacheAction,
}

#[derive(Debug, Clone, Subcommand)]
pub enum CacheAction {
    /// Entry count and the oracles recorded
    Stats { path: PathBuf },
    /// Re-read every record and check its key
    Verify { path: PathBuf },
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    pub config: PathBuf,
    /// Replace the configured oracle
    #[arg(long)]
    pub model: Option<String>,
    /// Override the estimator's permutation count
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                let _ = write!(stderr, "{e}");
                ExitCode::Usage.code()
            } else {
                let _ = write!(stdout, "{e}");
                ExitCode::Success.code()
            };
            return code;
        }
    };
    match dispatch(cli.command, stdout, stderr) {
        Ok(()) => ExitCode::Success.code(),
        Err(e) => {
            let _ = writeln!(stderr, "error: {:#}", e.error);
            e.exit.code()
        }
    }
}

fn dispatch(command: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::Analyze(args) => cmd_analyze(&args, stdout, stderr),
        Command::Exact(mut args) => {
            args.method = MethodArg::Exact;
            cmd_analyze(&args, stdout, stderr)
        }
        Command::Compare(args) => cmd_compare(&args, stdout),
        Command::Probe(args) => cmd_probe(&args, stdout),
        Command::Plot(args) => cmd_plot(&args, stderr),
        Command::Cache(args) => cmd_cache(&args, stdout),
        Command::Experiment(args) => cmd_experiment(&args, stdout, stderr),
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(CliError::io)
}

fn write_output(out: Option<&Path>, body: &str, stdout: &mut dyn Write) -> CliResult<()> {
    match out {
        Some(path) => std::fs::write(path, body)
            .with_context(|| format!("cannot write {}", path.display()))
            .map_err(CliError::io),
        None => stdout
            .write_all(body.as_bytes())
            .context("cannot write to stdout")
            .map_err(CliError::io),
    }
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

fn write_sidecar(out: Option<&Path>, sidecar: &RunSidecar) -> CliResult<()> {
    if let Some(out) = out {
        let path = sidecar_path(out);
        let body = serde_json::to_string_pretty(sidecar).expect("sidecar serializes") + "\n";
        std::fs::write(&path, body)
            .with_context(|| format!("cannot write {}", path.display()))
            .map_err(CliError::io)?;
    }
    Ok(())
}

fn sidecar(started: Instant, cache: Option<&ResponseCache>) -> RunSidecar {
    let stats = cache.map(|c| c.stats()).unwrap_or_default();
    RunSidecar {
        wall_time_secs: started.elapsed().as_secs_f64(),
        finished_at_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        cache_hits: stats.hits,
        cache_misses: stats.misses,
    }
}

fn model_config(flag: &str) -> CliResult<OracleConfig> {
    parse_model_flag(flag).map_err(CliError::from)
}

/// Runs one attribution and emits the report in the requested format.
pub fn cmd_analyze(args: &AnalyzeArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<()> {
    let started = Instant::now();
    let template = parse_template(&read_text(&args.template)?)?;
    let named: BTreeMap<String, String> = serde_json::from_str(&read_text(&args.values)?)
        .with_context(|| format!("{} is not a JSON object of strings", args.values.display()))
        .map_err(|e| CliError::new(ExitCode::Usage, e))?;
    let x = PromptVector::from_named(&template, &named)?;
    let r = ReferenceVector::uniform(&template, &args.reference_token);
    let spec = args.choice.spec()?;
    let oracle = model_config(&args.model)?.build(&template)?;
    let cache = args.cache.open()?;
    let config = EstimatorConfig {
        iterations: args.iterations,
        seed: args.seed,
        parallelism: args.parallelism,
        exact_limit: args.exact_limit,
    };
    config.validate()?;
    if args.format == Format::Plot && args.out.is_none() {
        return Err(CliError::usage("--format plot needs --out PREFIX"));
    }

    let binding = ValueFunctionBinding::new(template.clone(), x, r, oracle.clone(), spec.clone(), cache.clone())?;
    let attribution = match args.method {
        MethodArg::Mc => mc_shapley(&binding, &config)?,
        MethodArg::Exact => exact_shapley(&binding, &config)?,
    };
    let report = AttributionReport::build(&template, &attribution, &oracle.identity(), &spec, &BTreeSet::new());
    let _ = writeln!(
        stderr,
        "{} players, {} oracle calls, residual {:e}",
        binding.players().len(),
        attribution.oracle_calls,
        report.efficiency_residual
    );
    emit_report(&report, args.format, args.out.as_deref(), stdout, stderr)?;
    if args.format != Format::Plot {
        write_sidecar(args.out.as_deref(), &sidecar(started, cache.as_deref()))?;
    }
    Ok(())
}

fn emit_report(
    report: &AttributionReport,
    format: Format,
    out: Option<&Path>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> CliResult<()> {
    match format {
        Format::Json => write_output(out, &report.to_json(), stdout),
        Format::Csv => write_output(out, &report.to_csv(), stdout),
        Format::Text => write_output(out, &report.summary(), stdout),
        Format::Plot => {
            let prefix = out.ok_or_else(|| CliError::usage("--format plot needs --out PREFIX"))?;
            for path in emit_plot_data(report, prefix)? {
                let _ = writeln!(stderr, "wrote {}", path.display());
            }
            Ok(())
        }
    }
}

fn report_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Compares the first report against each of the others.
pub fn compare_reports(
    reports: &[(String, AttributionReport)],
    injected: &BTreeSet<String>,
    excluded: &BTreeSet<String>,
) -> CliResult<Vec<Comparison>> {
    if reports.len() < 2 {
        return Err(CliError::usage("compare needs at least two reports"));
    }
    let (first_name, first) = &reports[0];
    let first_attr = first.attribution();
    let first_norm = first.normalized();
    let mut out = Vec::new();
    for (name, report) in &reports[1..] {
        let attr = report.attribution();
        let norm = normalize_abs(&attr);
        let comparison = compare_attributions(
            Side {
                name: first_name,
                attribution: &first_attr,
                normalized: &first_norm,
            },
            Side {
                name,
                attribution: &attr,
                normalized: &norm,
            },
            injected,
            excluded,
        )
        .with_context(|| format!("comparing {first_name} with {name}"))
        .map_err(|e| CliError::new(ExitCode::Usage, e))?;
        out.push(comparison);
    }
    Ok(out)
}

pub fn cmd_compare(args: &CompareArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let comparisons = match &args.config {
        Some(config) => {
            let (report, _) = Experiment::load(config)?.run()?;
            report.comparisons
        }
        None => {
            let reports = args
                .reports
                .iter()
                .map(|p| Ok((report_name(p), AttributionReport::read(p)?)))
                .collect::<CliResult<Vec<_>>>()?;
            let injected = args.injected.iter().cloned().collect();
            let excluded = args.exclude.iter().cloned().collect();
            compare_reports(&reports, &injected, &excluded)?
        }
    };
    let body = match args.format {
        Format::Json => serde_json::to_string_pretty(&comparisons).expect("comparisons serialize") + "\n",
        Format::Text => comparisons.iter().map(comparison_summary).collect::<Vec<_>>().join("\n"),
        other => return Err(CliError::usage(format!("compare does not support --format {other:?}"))),
    };
    write_output(args.out.as_deref(), &body, stdout)
}

#[derive(Serialize)]
struct ProbeOutput<'a> {
    oracle: String,
    labels: &'a [String],
    target: &'a str,
    distribution: promptshap::ChoiceDistribution,
    target_probability: f64,
}

pub fn cmd_probe(args: &ProbeArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let prompt = read_text(&args.prompt)?;
    let spec = args.choice.spec()?;
    let oracle = model_config(&args.model)?.build_untemplated()?;
    let query = Query::text(&prompt);
    let distribution = match args.cache.open()? {
        Some(cache) => cached_evaluate(&cache, oracle.as_ref(), &query, &spec)?,
        None => oracle.evaluate(&query, &spec)?,
    };
    let output = ProbeOutput {
        oracle: oracle.identity(),
        labels: spec.labels(),
        target: spec.target(),
        target_probability: promptshap::choice_probability(&distribution, &spec),
        distribution,
    };
    let body = serde_json::to_string_pretty(&output).expect("probe output serializes") + "\n";
    write_output(args.out.as_deref(), &body, stdout)
}

pub fn cmd_plot(args: &PlotArgs, stderr: &mut dyn Write) -> CliResult<()> {
    let report = AttributionReport::read(&args.report)?;
    for path in emit_plot_data(&report, &args.out)? {
        let _ = writeln!(stderr, "wrote {}", path.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct CacheSummary {
    path: PathBuf,
    entries: u64,
    oracles: BTreeMap<String, u64>,
}

pub fn cmd_cache(args: &CacheArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let (path, verify) = match &args.action {
        CacheAction::Stats { path } => (path, false),
        CacheAction::Verify { path } => (path, true),
    };
    if !path.exists() {
        return Err(CliError::io(anyhow!("no cache file at {}", path.display())));
    }
    let cache = ResponseCache::open(path).map_err(|e| CliError::io(OracleError::from(e)))?;
    let records = cache.records().map_err(|e| CliError::io(OracleError::from(e)))?;
    let mut oracles = BTreeMap::new();
    for record in &records {
        *oracles.entry(record.oracle.clone()).or_insert(0u64) += 1;
        if verify {
            let spec = ChoiceSpec::new(record.labels.clone(), record.target.clone())
                .map_err(|e| CliError::io(anyhow!("record {}: {e}", record.key)))?;
            ChoiceDistribution::new(&spec, record.distribution.probs().clone())
                .map_err(|e| CliError::io(anyhow!("record {}: {e}", record.key)))?;
        }
    }
    let summary = CacheSummary {
        path: path.clone(),
        entries: records.len() as u64,
        oracles,
    };
    let body = serde_json::to_string_pretty(&summary).expect("cache summary serializes") + "\n";
    write_output(None, &body, stdout)
}

pub fn cmd_experiment(args: &ExperimentArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<()> {
    let text = read_text(&args.config)?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("{} is not JSON", args.config.display()))
        .map_err(|e| CliError::new(ExitCode::Usage, e))?;
    if let Some(model) = &args.model {
        value["oracle"] = serde_json::to_value(model_config(model)?).expect("oracle config serializes");
    }
    for (key, v) in [
        ("iterations", args.iterations.map(serde_json::Value::from)),
        ("seed", args.seed.map(serde_json::Value::from)),
        ("parallelism", args.parallelism.map(serde_json::Value::from)),
    ] {
        if let Some(v) = v {
            value["estimator"][key] = v;
        }
    }
    let base_dir = args.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut experiment = Experiment::new(LoadedConfig::from_value(value, base_dir)?);
    if let Some(path) = &args.cache {
        let cache = ResponseCache::open(path).map_err(|e| CliError::io(OracleError::from(e)))?;
        experiment = experiment.with_cache(Arc::new(cache));
    }
    let (report, sidecar) = experiment.run()?;
    let _ = writeln!(
        stderr,
        "{} variant(s) in {:.2}s, {} cache hits",
        report.variants.len(),
        sidecar.wall_time_secs,
        sidecar.cache_hits
    );
    match args.format {
        Format::Json => write_output(args.out.as_deref(), &report.to_json(), stdout)?,
        Format::Text => write_output(args.out.as_deref(), &report.summary(), stdout)?,
        Format::Csv => {
            let body: String = report
                .variants
                .iter()
                .map(|v| format!("# variant {}\n{}", v.name, v.attribution.to_csv()))
                .collect();
            write_output(args.out.as_deref(), &body, stdout)?
        }
        Format::Plot => {
            let prefix = args
                .out
                .as_deref()
                .ok_or_else(|| CliError::usage("--format plot needs --out PREFIX"))?;
            for v in &report.variants {
                let mut attribution = v.attribution.clone();
                if v.name == report.variants[0].name {
                    attribution.comparisons = Some(report.comparisons.clone());
                }
                let mut name = prefix.as_os_str().to_owned();
                name.push(format!(".{}", v.name));
                for path in emit_plot_data(&attribution, Path::new(&name))? {
                    let _ = writeln!(stderr, "wrote {}", path.display());
                }
            }
            return Ok(());
        }
    }
    write_sidecar(args.out.as_deref(), &sidecar)
}
