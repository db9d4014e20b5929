//! `pslab`: simulate cohorts and benchmark propensity-score estimators.
//!
//! A rejected invocation or input file exits with status 1 before anything
//! is computed; a failure during the computation exits with status 2.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pslab::cohort_gen::{self, CohortError, ParameterFile, ScenarioLabel, ScenarioSpec};
use pslab::effect_est::{self, TruthReport};
use pslab::ps_methods::{self, Method};
use pslab::sim_harness::{self, ExperimentConfig, ExperimentSummary, HarnessError, MethodSettings, PsModelChoice};
use pslab::{Cohort, DesignSpec};

#[derive(Parser, Debug)]
#[command(name = "pslab", version, about = "Propensity-score methods on simulated cohorts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one cohort and write it as CSV.
    Generate(GenerateArgs),
    /// Apply the adjustment methods to a cohort CSV.
    Estimate(EstimateArgs),
    /// Run the resampling experiment and write summary artifacts.
    Run(RunArgs),
    /// Compute the true marginal effects by Monte Carlo.
    Oracle(OracleArgs),
}

#[derive(Args, Debug)]
struct ScenarioArgs {
    /// Scenario label, A to G. May be repeated or comma-separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "all_scenarios")]
    scenario: Vec<String>,
    /// Every scenario, A to G.
    #[arg(long)]
    all_scenarios: bool,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Cohort size.
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    /// Master seed.
    #[arg(long, env = "PSLAB_SEED", default_value_t = 1)]
    seed: u64,
    /// Coefficient file; keys it leaves out keep their built-in values.
    #[arg(long)]
    coeffs: Option<PathBuf>,
    /// Correlation file (a `corr =` block).
    #[arg(long)]
    corr: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MethodArgs {
    /// Comma-separated subset of PSM, IPW, IPW-trunc, IPW-stab, IPW-trunc-stab, PSS-quantile, PSS-psvalue.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    /// Propensity model: `main` (W1..W10), `true` (the scenario's own model) or a term file.
    #[arg(long, default_value = "main")]
    ps_model: String,
    /// Lower truncation percentile as a fraction; the upper one mirrors it.
    #[arg(long, default_value_t = 0.01)]
    truncation_pct: f64,
    /// Number of strata.
    #[arg(long, default_value_t = 5)]
    strata: usize,
    /// Keep only one of the two stratification variants.
    #[arg(long, value_enum)]
    strata_method: Option<StrataChoice>,
    /// Caliper width in pooled standard deviations of the score.
    #[arg(long, default_value_t = 0.1)]
    caliper_mult: f64,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Scenario label, A to G.
    #[arg(long)]
    scenario: String,
    #[command(flatten)]
    model: ModelArgs,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Cohort CSV as written by `generate`.
    #[arg(long)]
    cohort: PathBuf,
    /// Scenario of the cohort; needed only for `--ps-model true`.
    #[arg(long)]
    scenario: Option<String>,
    #[command(flatten)]
    methods: MethodArgs,
    /// Seed for the matching order.
    #[arg(long, env = "PSLAB_SEED", default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    scenarios: ScenarioArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    methods: MethodArgs,
    /// Subsampling replicates per scenario.
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    /// Fraction of the cohort drawn in each replicate.
    #[arg(long, default_value_t = 0.7)]
    fraction: f64,
    /// Simulate a fresh cohort for each replicate.
    #[arg(long)]
    regenerate_cohort: bool,
    /// Subject draws for the truth oracle; 0 skips it.
    #[arg(long, default_value_t = 1_000_000)]
    oracle_draws: u64,
    /// Output formats, comma-separated. The plot-data CSV is always written.
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["json", "md"])]
    format: Vec<Format>,
    /// Output directory.
    #[arg(long, default_value = "pslab-out")]
    out: PathBuf,
    /// Worker threads; does not change results.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum, default_value = "f64")]
    precision: Precision,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[command(flatten)]
    scenarios: ScenarioArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Total simulated subjects.
    #[arg(long, default_value_t = 1_000_000)]
    draws: u64,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum StrataChoice {
    Quantile,
    Psvalue,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Json,
    Csv,
    Md,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Precision {
    F64,
    F32,
}

/// Failure split by exit status.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

type Outcome<T> = Result<T, Failure>;

fn invalid<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Config(e.into())
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Generate(args) => generate(args),
        Command::Estimate(args) => estimate(args),
        Command::Run(args) => run(args),
        Command::Oracle(args) => oracle(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn parse_label(s: &str) -> Outcome<ScenarioLabel> {
    s.parse::<ScenarioLabel>().map_err(invalid)
}

impl ScenarioArgs {
    fn labels(&self) -> Outcome<Vec<ScenarioLabel>> {
        if self.all_scenarios {
            return Ok(ScenarioLabel::ALL.to_vec());
        }
        if self.scenario.is_empty() {
            return Err(invalid(anyhow!("give --scenario <A..G> or --all-scenarios")));
        }
        let mut labels = Vec::new();
        for s in &self.scenario {
            let l = parse_label(s)?;
            if !labels.contains(&l) {
                labels.push(l);
            }
        }
        Ok(labels)
    }
}

/// Coefficients and correlations after layering the files over the defaults.
struct Parameters {
    coefficients: pslab::CoefficientSet,
    correlation: pslab::CorrelationMatrix,
    sources: Vec<String>,
}

impl ModelArgs {
    fn parameters(&self) -> Outcome<Parameters> {
        let mut sources = vec!["<built-in defaults>".to_string()];
        let mut coeffs = ParameterFile::defaults();
        let mut corr = ParameterFile::defaults();
        if let Some(path) = &self.coeffs {
            coeffs = coeffs.overlay(&ParameterFile::read(path).map_err(invalid)?);
            sources.push(path.display().to_string());
        }
        if let Some(path) = &self.corr {
            let file = ParameterFile::read(path).map_err(invalid)?;
            if file.corr.is_none() {
                return Err(invalid(anyhow!("{}: field `corr`: missing", path.display())));
            }
            corr = corr.overlay(&file);
            if self.coeffs.as_deref() != Some(path.as_path()) {
                sources.push(path.display().to_string());
            }
        }
        Ok(Parameters {
            coefficients: coeffs.coefficients().map_err(invalid)?,
            correlation: corr.correlation().map_err(invalid)?,
            sources,
        })
    }
}

impl MethodArgs {
    fn settings(&self) -> Outcome<MethodSettings> {
        let mut methods = if self.methods.is_empty() {
            Method::ALL.to_vec()
        } else {
            let mut out = Vec::new();
            for s in &self.methods {
                let m: Method = s.parse().map_err(invalid)?;
                if !out.contains(&m) {
                    out.push(m);
                }
            }
            out
        };
        if let Some(choice) = self.strata_method {
            let drop = match choice {
                StrataChoice::Quantile => Method::PssPsValue,
                StrataChoice::Psvalue => Method::PssQuantile,
            };
            methods.retain(|&m| m != drop);
        }
        Ok(MethodSettings {
            methods,
            truncation_percentile: self.truncation_pct,
            strata: self.strata,
            caliper_multiplier: self.caliper_mult,
        })
    }

    fn ps_model(&self) -> Outcome<PsModelChoice> {
        match self.ps_model.as_str() {
            "main" => Ok(PsModelChoice::MainEffects),
            "true" => Ok(PsModelChoice::TrueDesign),
            path => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("cannot read propensity model file {path}"))
                    .map_err(invalid)?;
                let design = DesignSpec::parse(&text).map_err(|e| invalid(anyhow!("{path}: {e}")))?;
                Ok(PsModelChoice::Custom(design))
            }
        }
    }
}

fn generate(args: GenerateArgs) -> Outcome<()> {
    let label = parse_label(&args.scenario)?;
    let params = args.model.parameters()?;
    if args.model.n == 0 {
        return Err(invalid(anyhow!("--n must be at least 1")));
    }
    let spec = ScenarioSpec::new(label, params.coefficients, params.correlation, args.model.n);
    let cohort: Cohort = cohort_gen::generate_cohort(&spec, args.model.seed).map_err(runtime)?;
    with_output(args.out.as_deref(), |w| cohort_gen::write_cohort_csv(&cohort, w))
}

#[derive(Serialize)]
struct EstimateRow {
    method: Method,
    gamma1_hat: Option<f64>,
    n_used: Option<usize>,
    strata_dropped: Option<usize>,
    error: Option<String>,
}

fn estimate(args: EstimateArgs) -> Outcome<()> {
    let settings = args.methods.settings()?;
    let choice = args.methods.ps_model()?;
    check_settings(&settings)?;
    let design = match (&choice, &args.scenario) {
        (PsModelChoice::TrueDesign, None) => {
            return Err(invalid(anyhow!("--ps-model true needs --scenario")));
        }
        (choice, Some(s)) => {
            let label = parse_label(s)?;
            choice.design_for(&ScenarioSpec::with_defaults(label, 1))
        }
        (choice, None) => choice.design_for(&ScenarioSpec::with_defaults(ScenarioLabel::A, 1)),
    };
    if design.uses_treatment() {
        return Err(invalid(anyhow!("propensity model must not contain the treatment term")));
    }
    let file = File::open(&args.cohort)
        .with_context(|| format!("cannot open {}", args.cohort.display()))
        .map_err(invalid)?;
    let cohort: Cohort = cohort_gen::read_cohort_csv(BufReader::new(file))
        .map_err(|e| invalid(anyhow!("{}: {e}", args.cohort.display())))?;
    let ps = ps_methods::estimate_ps(&cohort, &design).map_err(runtime)?;
    let rows: Vec<EstimateRow> = sim_harness::apply_methods(&cohort, &ps, &settings, args.seed, 0)
        .into_iter()
        .map(|r| match r.outcome {
            Ok(e) => EstimateRow {
                method: r.method,
                gamma1_hat: Some(e.gamma1_hat),
                n_used: Some(e.n_used),
                strata_dropped: r.method.strat_method().map(|_| e.strata_dropped),
                error: None,
            },
            Err(msg) => EstimateRow {
                method: r.method,
                gamma1_hat: None,
                n_used: None,
                strata_dropped: None,
                error: Some(msg),
            },
        })
        .collect();
    let text = match args.format {
        Format::Json => serde_json::to_string_pretty(&rows).map_err(runtime)? + "\n",
        Format::Csv => {
            let mut s = String::from("method,gamma1_hat,n_used,error\n");
            for r in &rows {
                s += &format!(
                    "{},{},{},{}\n",
                    r.method,
                    r.gamma1_hat.map(|v| v.to_string()).unwrap_or_default(),
                    r.n_used.map(|v| v.to_string()).unwrap_or_default(),
                    r.error.as_deref().unwrap_or("").replace(',', ";"),
                );
            }
            s
        }
        Format::Md => {
            let mut s = String::from("| Method | Estimate | Subjects used |\n|---|---|---|\n");
            for r in &rows {
                let est = match (&r.gamma1_hat, &r.error) {
                    (Some(v), _) => format!("{v:.3}"),
                    (None, Some(e)) => format!("failed: {e}"),
                    (None, None) => "failed".into(),
                };
                let used = r.n_used.map(|v| v.to_string()).unwrap_or_else(|| "-".into());
                s += &format!("| {} | {est} | {used} |\n", r.method.display_name());
            }
            s
        }
    };
    with_output(args.out.as_deref(), |w| w.write_all(text.as_bytes()))
}

/// Rejects settings the harness would reject, before reading any data.
fn check_settings(settings: &MethodSettings) -> Outcome<()> {
    let probe = ExperimentConfig {
        settings: settings.clone(),
        ..ExperimentConfig::default()
    };
    probe.validate().map_err(invalid)
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    master_seed: u64,
    precision: &'static str,
    config: &'a ExperimentConfig,
    artifacts: Vec<String>,
}

fn run(args: RunArgs) -> Outcome<()> {
    let params = args.model.parameters()?;
    let config = ExperimentConfig {
        scenarios: args.scenarios.labels()?,
        n: args.model.n,
        reps: args.reps,
        subsample_fraction: args.fraction,
        settings: args.methods.settings()?,
        ps_model: args.methods.ps_model()?,
        master_seed: args.model.seed,
        coefficients: params.coefficients,
        correlation: params.correlation,
        parameter_sources: params.sources,
        regenerate_cohort: args.regenerate_cohort,
        oracle_subject_draws: args.oracle_draws,
    };
    config.validate().map_err(config_or_runtime)?;
    if args.threads == Some(0) {
        return Err(invalid(anyhow!("--threads must be at least 1")));
    }

    let summary = match (args.precision, args.threads) {
        (Precision::F64, Some(t)) => sim_harness::run_experiment_with_threads::<f64>(&config, t),
        (Precision::F64, None) => sim_harness::run_experiment::<f64>(&config),
        (Precision::F32, Some(t)) => sim_harness::run_experiment_with_threads::<f32>(&config, t),
        (Precision::F32, None) => sim_harness::run_experiment::<f32>(&config),
    }
    .map_err(config_or_runtime)?;
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }

    fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))
        .map_err(runtime)?;
    let mut artifacts = Vec::new();
    let mut emit = |name: &str, text: String| -> Outcome<()> {
        let path = args.out.join(name);
        fs::write(&path, text)
            .with_context(|| format!("cannot write {}", path.display()))
            .map_err(runtime)?;
        artifacts.push(name.to_string());
        Ok(())
    };
    for format in dedup(&args.format) {
        match format {
            Format::Json => emit("summary.json", sim_harness::to_json(&summary))?,
            Format::Csv => emit("summary.csv", sim_harness::to_csv(&summary))?,
            Format::Md => emit("summary.md", sim_harness::to_markdown(&summary))?,
        }
    }
    emit("plot_data.csv", sim_harness::to_plot_csv(&summary))?;
    write_manifest(&args.out, &summary, args.precision, artifacts)?;
    if args.format.contains(&Format::Md) {
        print!("{}", sim_harness::to_markdown(&summary));
    }
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn write_manifest(
    dir: &Path,
    summary: &ExperimentSummary,
    precision: Precision,
    artifacts: Vec<String>,
) -> Outcome<()> {
    let manifest = Manifest {
        tool: "pslab",
        version: env!("CARGO_PKG_VERSION"),
        command: "run",
        master_seed: summary.config.master_seed,
        precision: match precision {
            Precision::F64 => "f64",
            Precision::F32 => "f32",
        },
        config: &summary.config,
        artifacts,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(runtime)? + "\n";
    fs::write(&path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(runtime)
}

fn config_or_runtime(e: HarnessError) -> Failure {
    match e {
        HarnessError::InvalidConfig(_) => invalid(e),
        HarnessError::Cohort(CohortError::InvalidCorrelation { .. } | CohortError::NotPositiveDefinite { .. }) => {
            invalid(e)
        }
        other => runtime(other),
    }
}

fn dedup(formats: &[Format]) -> Vec<Format> {
    let mut out = Vec::new();
    for &f in formats {
        if !out.contains(&f) {
            out.push(f);
        }
    }
    out
}

fn oracle(args: OracleArgs) -> Outcome<()> {
    let labels = args.scenarios.labels()?;
    let params = args.model.parameters()?;
    if args.model.n == 0 || args.draws == 0 {
        return Err(invalid(anyhow!("--n and --draws must be at least 1")));
    }
    let cohorts = args.draws.div_ceil(args.model.n as u64) as usize;
    #[derive(Serialize)]
    struct Entry {
        scenario: ScenarioLabel,
        truth: TruthReport,
    }
    let mut out = Vec::new();
    for label in labels {
        let spec = ScenarioSpec::new(
            label,
            params.coefficients.clone(),
            params.correlation.clone(),
            args.model.n,
        );
        let truth = effect_est::true_marginal_effect(&spec, cohorts, args.model.seed).map_err(runtime)?;
        out.push(Entry { scenario: label, truth });
    }
    let text = serde_json::to_string_pretty(&out).map_err(runtime)? + "\n";
    with_output(None, |w| w.write_all(text.as_bytes()))
}

fn with_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Outcome<()> {
    match path {
        Some(p) => {
            let file = File::create(p)
                .with_context(|| format!("cannot create {}", p.display()))
                .map_err(runtime)?;
            let mut w = BufWriter::new(file);
            f(&mut w).and_then(|_| w.flush())
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            f(&mut w).and_then(|_| w.flush())
        }
    }
    .context("write failed")
    .map_err(runtime)
}
