use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use selbench::covariates::{load_covariate_table, CovariateSchema, CovariateTable, TARGET_CORRELATIONS};
use selbench::dgp::{ErrorFamily, VarianceConvention};
use selbench::engine::{
    self, BuildOptions, ChallengeLayout, DgpCode, DgpContext, LayoutOverrides, SettingBits, ZPolicy,
    MANIFEST_FILE,
};
use selbench::evaluation::{self, ScoreSelection};
use selbench::synth::{synthesize_covariates, SyntheticMargins};
use selbench::verify::{self, VerifyOptions};
use selbench::{Error, ErrorClass};

const DEFAULT_SEED: u64 = 2017;
const DEFAULT_OUT: &str = "challenge";
const DEFAULT_VERIFY_UNITS: usize = 1000;

const EXIT_CONFIG: u8 = 2;
const EXIT_VALIDATION: u8 = 3;
const EXIT_IO: u8 = 4;
const EXIT_VERIFY_FAILED: u8 = 5;

/// Generate, verify and score a 32-DGP targeted-selection benchmark.
///
/// Every flag can also be set through the environment variable shown next
/// to it, or through a TOML file passed with --config. Flags and environment
/// variables take precedence over the config file, which takes precedence
/// over built-in defaults.
#[derive(Parser, Debug)]
#[command(name = "selbench", version)]
struct Cli {
    /// TOML config file with keys named like the long flags (underscores for dashes)
    /// and an optional [synthetic] table of covariate margins.
    #[arg(long, global = true, env = "SELBENCH_CONFIG")]
    config: Option<PathBuf>,

    /// Worker threads [default: all cores].
    #[arg(long, global = true, env = "SELBENCH_JOBS")]
    jobs: Option<usize>,

    /// Output format on stdout [default: table].
    #[arg(long, global = true, value_enum, env = "SELBENCH_FORMAT")]
    format: Option<Format>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Table,
    Machine,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
enum Variance {
    Population,
    Sample,
}

impl From<Variance> for VarianceConvention {
    fn from(v: Variance) -> Self {
        match v {
            Variance::Population => VarianceConvention::Population,
            Variance::Sample => VarianceConvention::Sample,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write X.csv, one dgp.csv per DGP, replicate files and manifest.json.
    Generate(GenerateArgs),
    /// Score a submission tree against a generated tree.
    Score(ScoreArgs),
    /// Run the Monte Carlo oracle suite.
    Verify(VerifyArgs),
    /// Print resolved parameters and surface summaries of DGPs.
    Inspect(InspectArgs),
}

#[derive(Args, Debug, Clone, Default)]
struct CovariateArgs {
    /// Covariate CSV with columns x1,x3,x10,x14,x15,x21,x24,x43.
    #[arg(long, env = "SELBENCH_COVARIATES", conflicts_with = "synthetic")]
    covariates: Option<PathBuf>,

    /// Synthesize N covariate rows instead of reading a file
    /// [default: 4302 for generate and inspect, 1000 for verify].
    #[arg(long, value_name = "N", env = "SELBENCH_SYNTHETIC")]
    synthetic: Option<usize>,

    /// Seed for synthetic covariates [default: the master seed].
    #[arg(long, env = "SELBENCH_SYNTHETIC_SEED")]
    synthetic_seed: Option<u64>,

    /// Use a covariate file as is instead of z-scoring its continuous columns.
    #[arg(long, env = "SELBENCH_NO_STANDARDIZE")]
    no_standardize: bool,
}

#[derive(Args, Debug, Clone, Default)]
struct SelectionArgs {
    /// Comma-separated families: group_corr, heteroskedastic, iid, non-additive [default: all].
    #[arg(long, value_delimiter = ',', env = "SELBENCH_FAMILIES")]
    families: Option<Vec<String>>,

    /// Comma-separated 3-bit setting codes, e.g. 000,101 [default: all eight].
    #[arg(long, value_delimiter = ',', env = "SELBENCH_SETTINGS")]
    settings: Option<Vec<String>>,

    /// Inclusive replicate range A-B, or a single id [default: 1-m].
    #[arg(long, env = "SELBENCH_REPLICATE_RANGE")]
    replicate_range: Option<String>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    cov: CovariateArgs,
    #[command(flatten)]
    select: SelectionArgs,

    /// Master seed [default: 2017].
    #[arg(long, env = "SELBENCH_SEED")]
    seed: Option<u64>,

    /// Output root [default: challenge].
    #[arg(long, env = "SELBENCH_OUT")]
    out: Option<PathBuf>,

    /// Replicates per DGP, m [default: 250].
    #[arg(long, env = "SELBENCH_REPLICATES")]
    replicates: Option<u32>,

    /// Treatment vector policy: fixed (one z per DGP) or redraw (per replicate) [default: fixed].
    #[arg(long, env = "SELBENCH_Z_POLICY")]
    z_policy: Option<String>,

    /// Variance denominator for the noise and transform calibration [default: population].
    #[arg(long, value_enum, env = "SELBENCH_VARIANCE")]
    variance: Option<Variance>,

    /// Keep replicate files that already exist under the output root.
    #[arg(long, env = "SELBENCH_RESUME")]
    resume: bool,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[command(flatten)]
    select: SelectionArgs,

    /// Generated tree holding dgp.csv and replicate files [default: challenge].
    #[arg(long, env = "SELBENCH_OUT")]
    out: Option<PathBuf>,

    /// Submission tree with <family>/<bits>/<r>.att.csv and optional <r>.cate.csv.
    #[arg(long, env = "SELBENCH_SUBMISSION")]
    submission: Option<PathBuf>,

    /// Metrics file, one row per DGP [default: <submission>/scores.csv].
    #[arg(long, env = "SELBENCH_REPORT")]
    report: Option<PathBuf>,

    /// Optional per-replicate detail file.
    #[arg(long, env = "SELBENCH_DETAIL")]
    detail: Option<PathBuf>,

    /// Optional long-format (family,bits,metric,value) table for plotting.
    #[arg(long, env = "SELBENCH_LONG")]
    long: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    cov: CovariateArgs,

    /// Master seed [default: 2017].
    #[arg(long, env = "SELBENCH_SEED")]
    seed: Option<u64>,

    /// Monte Carlo draws per CDF grid cell and per sampled unit, at least 100000
    /// [default: 1000000 per cell, 10000000 per unit].
    #[arg(long, env = "SELBENCH_MC_DRAWS")]
    mc_draws: Option<u64>,

    /// Also validate a generated tree: structure and non-additive outcome range.
    #[arg(long, env = "SELBENCH_BUILD")]
    build: Option<PathBuf>,

    /// Variance denominator for the noise and transform calibration [default: population].
    #[arg(long, value_enum, env = "SELBENCH_VARIANCE")]
    variance: Option<Variance>,

    #[arg(long, hide = true, default_value_t = 1.0)]
    debug_b_scale: f64,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[command(flatten)]
    cov: CovariateArgs,
    #[command(flatten)]
    select: SelectionArgs,

    /// Master seed [default: 2017].
    #[arg(long, env = "SELBENCH_SEED")]
    seed: Option<u64>,

    /// Treatment vector policy: fixed or redraw [default: fixed].
    #[arg(long, env = "SELBENCH_Z_POLICY")]
    z_policy: Option<String>,

    /// Variance denominator [default: population].
    #[arg(long, value_enum, env = "SELBENCH_VARIANCE")]
    variance: Option<Variance>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    out: Option<PathBuf>,
    covariates: Option<PathBuf>,
    synthetic_units: Option<usize>,
    synthetic_seed: Option<u64>,
    no_standardize: Option<bool>,
    replicates: Option<u32>,
    families: Option<Vec<String>>,
    settings: Option<Vec<String>>,
    replicate_range: Option<String>,
    z_policy: Option<String>,
    variance: Option<Variance>,
    submission: Option<PathBuf>,
    mc_draws: Option<u64>,
    jobs: Option<usize>,
    format: Option<Format>,
    synthetic: Option<SyntheticMargins>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())).into())
    }
}

/// Covariate source after merging flags and config.
#[derive(Debug, Serialize)]
enum Source {
    File { path: PathBuf, standardize: bool },
    Synthetic { n: usize, seed: u64, margins: SyntheticMargins },
}

fn resolve_source(cov: &CovariateArgs, file: &FileConfig, seed: u64, default_n: usize) -> Source {
    if let Some(n) = cov.synthetic {
        return synthetic_source(n, cov, file, seed);
    }
    if let Some(path) = cov.covariates.clone().or_else(|| file.covariates.clone()) {
        return Source::File {
            path,
            standardize: !(cov.no_standardize || file.no_standardize.unwrap_or(false)),
        };
    }
    synthetic_source(file.synthetic_units.unwrap_or(default_n), cov, file, seed)
}

fn synthetic_source(n: usize, cov: &CovariateArgs, file: &FileConfig, seed: u64) -> Source {
    Source::Synthetic {
        n,
        seed: cov.synthetic_seed.or(file.synthetic_seed).unwrap_or(seed),
        margins: file.synthetic.clone().unwrap_or_default(),
    }
}

fn load_table(source: &Source) -> selbench::Result<CovariateTable> {
    match source {
        Source::File { path, standardize } => {
            let t = load_covariate_table(path, &CovariateSchema::standard())?;
            if *standardize {
                t.standardize_columns()
            } else {
                Ok(t)
            }
        }
        Source::Synthetic { n, seed, margins } => synthesize_covariates(*n, *seed, &TARGET_CORRELATIONS, margins),
    }
}

fn parse_families(v: &[String]) -> selbench::Result<Vec<ErrorFamily>> {
    v.iter().map(|s| s.parse()).collect()
}

fn parse_settings(v: &[String]) -> selbench::Result<Vec<SettingBits>> {
    v.iter().map(|s| s.parse()).collect()
}

fn parse_range(s: &str) -> selbench::Result<(u32, u32)> {
    let bad = || Error::Config(format!("replicate range {s:?} is not of the form A-B"));
    let parse = |t: &str| t.trim().parse::<u32>().map_err(|_| bad());
    match s.split_once(['-', ':']) {
        Some((a, b)) => Ok((parse(a)?, parse(b)?)),
        None => {
            let a = parse(s)?;
            Ok((a, a))
        }
    }
}

struct Selection {
    families: Option<Vec<ErrorFamily>>,
    settings: Option<Vec<SettingBits>>,
    range: Option<(u32, u32)>,
}

fn resolve_selection(a: &SelectionArgs, file: &FileConfig) -> selbench::Result<Selection> {
    Ok(Selection {
        families: a.families.as_ref().or(file.families.as_ref()).map(|v| parse_families(v)).transpose()?,
        settings: a.settings.as_ref().or(file.settings.as_ref()).map(|v| parse_settings(v)).transpose()?,
        range: a
            .replicate_range
            .as_deref()
            .or(file.replicate_range.as_deref())
            .map(parse_range)
            .transpose()?,
    })
}

fn resolve_z_policy(flag: &Option<String>, file: &FileConfig) -> selbench::Result<ZPolicy> {
    flag.as_deref().or(file.z_policy.as_deref()).map(str::parse).transpose().map(Option::unwrap_or_default)
}

fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

#[derive(Serialize)]
struct GenerateSummary<'a> {
    root: &'a Path,
    dgps: usize,
    replicate_files: usize,
    ground_truth_files: usize,
    rows_per_file: usize,
    resumed_files: usize,
    files: usize,
    manifest_digest: &'a str,
    elapsed_secs: f64,
}

fn run_generate(args: GenerateArgs, file: &FileConfig, format: Format) -> anyhow::Result<u8> {
    let seed = args.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
    let out = args.out.clone().or(file.out.clone()).unwrap_or_else(|| DEFAULT_OUT.into());
    let source = resolve_source(&args.cov, file, seed, engine::DEFAULT_N);
    let sel = resolve_selection(&args.select, file)?;
    let table = load_table(&source)?;
    let overrides = LayoutOverrides {
        replicates: args.replicates.or(file.replicates),
        n: Some(table.n()),
        families: sel.families,
        settings: sel.settings,
        z_policy: Some(resolve_z_policy(&args.z_policy, file)?),
        replicate_range: sel.range,
        convention: args.variance.or(file.variance).map(Into::into),
    };
    let layout = engine::plan_challenge(seed, &overrides)?;
    let run_config = serde_json::json!({
        "command": "generate",
        "seed": seed,
        "out": out,
        "covariates": source,
        "layout": layout,
        "resume": args.resume,
    });
    let opts = BuildOptions {
        resume: args.resume,
        run_config: Some(run_config),
    };
    let report = engine::build_challenge(&layout, &table, &out, &opts)?;
    let summary = GenerateSummary {
        root: &report.root,
        dgps: report.dgps,
        replicate_files: report.replicate_files,
        ground_truth_files: report.ground_truth_files,
        rows_per_file: report.rows_per_file,
        resumed_files: report.resumed_files,
        files: report.digests.len() + 1,
        manifest_digest: &report.manifest_digest,
        elapsed_secs: report.elapsed_secs,
    };
    match format {
        Format::Machine => print_json(&summary)?,
        Format::Table => {
            println!(
                "wrote {} DGPs x {} replicates ({} rows each) under {} in {:.2}s",
                report.dgps,
                layout.replicate_ids().count(),
                report.rows_per_file,
                report.root.display(),
                report.elapsed_secs
            );
            if report.resumed_files > 0 {
                println!("kept {} existing replicate files", report.resumed_files);
            }
            println!("manifest digest {}", report.manifest_digest);
        }
    }
    Ok(0)
}

fn write_output(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| {
        Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn run_score(args: ScoreArgs, file: &FileConfig, format: Format) -> anyhow::Result<u8> {
    let truth = args.out.clone().or(file.out.clone()).unwrap_or_else(|| DEFAULT_OUT.into());
    let Some(submission) = args.submission.clone().or(file.submission.clone()) else {
        return Err(Error::Config("score needs --submission".into()).into());
    };
    let sel = resolve_selection(&args.select, file)?;
    let selection = ScoreSelection {
        families: sel.families,
        settings: sel.settings,
        replicate_range: sel.range,
    };
    let report = evaluation::score_tree(&truth, &submission, &selection)?;
    let metrics_path = args.report.clone().unwrap_or_else(|| submission.join("scores.csv"));
    write_output(&metrics_path, &report.metrics_csv())?;
    if let Some(p) = &args.detail {
        write_output(p, &report.detail_csv())?;
    }
    if let Some(p) = &args.long {
        write_output(p, &report.long_csv())?;
    }
    match format {
        Format::Machine => print_json(&report.dgps.iter().map(MachineRow::from).collect::<Vec<_>>())?,
        Format::Table => {
            print!("{}", report.render_table());
            println!("metrics written to {}", metrics_path.display());
        }
    }
    Ok(0)
}

#[derive(Serialize)]
struct MachineRow {
    family: ErrorFamily,
    bits: SettingBits,
    replicates: usize,
    rmse_att: f64,
    rmse_cate: Option<f64>,
    cover_att: f64,
    cover_cate: Option<f64>,
    cover_catt: Option<f64>,
    mean_att_interval_length: f64,
    mean_cate_interval_length: Option<f64>,
    corrected_truth: bool,
}

impl From<&evaluation::DgpReport> for MachineRow {
    fn from(d: &evaluation::DgpReport) -> Self {
        Self {
            family: d.code.family,
            bits: d.code.bits,
            replicates: d.replicates,
            rmse_att: d.rmse_att,
            rmse_cate: d.rmse_cate,
            cover_att: d.cover_att,
            cover_cate: d.cover_cate,
            cover_catt: d.cover_catt,
            mean_att_interval_length: d.mean_att_interval_length,
            mean_cate_interval_length: d.mean_cate_interval_length,
            corrected_truth: d.corrected_truth,
        }
    }
}

#[derive(Deserialize)]
struct ManifestLayout {
    layout: ChallengeLayout,
}

fn run_verify(args: VerifyArgs, file: &FileConfig, format: Format) -> anyhow::Result<u8> {
    let seed = args.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
    let mut opts = VerifyOptions {
        seed,
        convention: args.variance.or(file.variance).map(Into::into).unwrap_or_default(),
        b_scale: args.debug_b_scale,
        ..Default::default()
    };
    if let Some(d) = args.mc_draws.or(file.mc_draws) {
        opts.cdf_draws = d;
        opts.cate_draws = d;
    }
    opts.validate()?;
    let source = resolve_source(&args.cov, file, seed, DEFAULT_VERIFY_UNITS);
    let table = load_table(&source)?;
    let mut report = verify::run_verification(&table, &opts)?;
    if let Some(root) = &args.build {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        let manifest: ManifestLayout = serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        let files = engine::validate_build(root, &manifest.layout)?;
        report.checks.push(verify::CheckResult {
            name: "build_structure".into(),
            passed: true,
            observed: files as f64,
            expected: manifest.layout.planned_files().len() as f64,
            tolerance: 0.0,
            rule: format!("planned files present with {} rows each", manifest.layout.n),
            detail: vec![],
        });
        report.checks.push(verify::check_tree_range(root, &manifest.layout)?);
    }
    match format {
        Format::Machine => print_json(&report)?,
        Format::Table => print!("{}", report.render_table()),
    }
    Ok(if report.all_passed() { 0 } else { EXIT_VERIFY_FAILED })
}

fn run_inspect(args: InspectArgs, file: &FileConfig, format: Format) -> anyhow::Result<u8> {
    let seed = args.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
    let source = resolve_source(&args.cov, file, seed, engine::DEFAULT_N);
    let sel = resolve_selection(&args.select, file)?;
    let policy = resolve_z_policy(&args.z_policy, file)?;
    let convention: VarianceConvention = args.variance.or(file.variance).map(Into::into).unwrap_or_default();
    let table = load_table(&source)?;
    let summaries = DgpCode::all()
        .filter(|c| sel.families.as_ref().is_none_or(|f| f.contains(&c.family)))
        .filter(|c| sel.settings.as_ref().is_none_or(|s| s.contains(&c.bits)))
        .map(|code| Ok(DgpContext::new(&table, code, convention)?.summary(seed, policy)))
        .collect::<selbench::Result<Vec<_>>>()?;
    if summaries.is_empty() {
        bail!(Error::Config("filters select no DGP".into()));
    }
    match format {
        Format::Machine => print_json(&summaries)?,
        Format::Table => {
            println!("covariates: {}", table.provenance());
            for s in &summaries {
                println!(
                    "{}  xi={:.4} eta={} kappa=({}, {}) sigma_y={:.6} treated={:.4}",
                    s.code, s.xi, s.eta, s.kappa.0, s.kappa.1, s.sigma_y, s.treated_fraction
                );
                for (name, st) in [("pi", s.pi), ("mu", s.mu), ("tau", s.tau)] {
                    println!("    {name:<3} min {:>10.5} mean {:>10.5} max {:>10.5}", st.min, st.mean, st.max);
                }
                if let Some((a, b)) = s.transform {
                    println!("    transform a={a:.6} b={b:.6}");
                }
            }
        }
    }
    Ok(0)
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let format = cli.format.or(file.format).unwrap_or(Format::Table);
    if let Some(jobs) = cli.jobs.or(file.jobs) {
        if jobs == 0 {
            bail!(Error::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring worker pool")?;
    }
    match cli.command {
        Command::Generate(a) => run_generate(a, &file, format),
        Command::Score(a) => run_score(a, &file, format),
        Command::Verify(a) => run_verify(a, &file, format),
        Command::Inspect(a) => run_inspect(a, &file, format),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>().map(Error::class) {
        Some(ErrorClass::Config) => EXIT_CONFIG,
        Some(ErrorClass::Validation) => EXIT_VALIDATION,
        Some(ErrorClass::Io) => EXIT_IO,
        None => EXIT_CONFIG,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let machine = cli.format == Some(Format::Machine);
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            let code = exit_code(&err);
            if machine {
                let msg = serde_json::json!({ "error": format!("{err:#}"), "exit_code": code });
                eprintln!("{msg}");
            } else {
                eprintln!("error: {err:#}");
            }
            ExitCode::from(code)
        }
    }
}
