//! `fbms`: fit, evaluate and cross-validate sparse multiscale kernel models.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use fbms::backward::DeletionMode;
use fbms::dataset::{looks_like_header, normalize, parse_csv, parse_table, write_csv, Dataset};
use fbms::driver::{default_delta, fit, read_jsonl, DriverConfig, DEFAULT_RANK_PRECISION, DEFAULT_REF_SCALE};
use fbms::fixtures::{generate, FixtureName, FixtureSpec};
use fbms::model::{load_model, write_atomic};
use fbms::selection::{
    cross_validate, reduction_report, reduction_rows, select_truncation, write_reduction_csv, TruncationPolicy,
    DEFAULT_KNEE_TOL,
};

/// Environment variable that caps the worker thread count.
const THREADS_ENV: &str = "FBMS_THREADS";

#[derive(Parser, Debug)]
#[command(name = "fbms", version, about = "Forward-backward sparse regression in multiscale Gaussian kernel spaces")]
struct Cli {
    /// Seed for every random choice (fold assignment, fixture noise).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// More log output; repeat for debug detail.
    #[arg(long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model to CSV data (coordinates, then observation).
    Fit(FitArgs),
    /// Evaluate a saved model at the points of a CSV file.
    Predict(PredictArgs),
    /// Choose the truncation scale by k-fold cross-validation.
    Cv(CvArgs),
    /// Turn a fit trace into a reduction table.
    Report(ReportArgs),
    /// Synthetic benchmark datasets.
    Fixtures {
        #[command(subcommand)]
        command: FixtureCommand,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum HeaderMode {
    Auto,
    Yes,
    No,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Cumulative,
    PerColumn,
}

impl From<ModeArg> for DeletionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Cumulative => DeletionMode::Cumulative,
            ModeArg::PerColumn => DeletionMode::PerColumn,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PolicyArg {
    MinMse,
    Knee,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FixtureArg {
    Schwefel1d,
    GramacyLeeNoisy,
    Schwefel2d,
    SineSmooth,
}

impl From<FixtureArg> for FixtureName {
    fn from(f: FixtureArg) -> Self {
        match f {
            FixtureArg::Schwefel1d => FixtureName::Schwefel1d,
            FixtureArg::GramacyLeeNoisy => FixtureName::GramacyLeeNoisy,
            FixtureArg::Schwefel2d => FixtureName::Schwefel2d,
            FixtureArg::SineSmooth => FixtureName::SineSmooth,
        }
    }
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Input CSV; the last column is the observation.
    #[arg(long)]
    input: PathBuf,

    /// Whether the first row holds column names.
    #[arg(long, value_enum, default_value_t = HeaderMode::Auto)]
    header: HeaderMode,
}

#[derive(Args, Debug)]
struct TuningArgs {
    /// Tolerance bound; defaults to 1e-3 for 1-d data and 1e-2 otherwise.
    #[arg(long)]
    delta: Option<f64>,

    /// Scale whose minimum column norm sets the initial tolerance.
    #[arg(long, default_value_t = DEFAULT_REF_SCALE)]
    ref_scale: usize,

    #[arg(long, value_enum, default_value_t = ModeArg::Cumulative)]
    deletion_mode: ModeArg,

    /// Initial tolerance, overriding the value derived from --delta.
    #[arg(long)]
    eps0: Option<f64>,

    /// Precision of the numerical-rank diagnostic.
    #[arg(long, default_value_t = DEFAULT_RANK_PRECISION)]
    rank_precision: f64,

    /// Derive T from the bounding-box diagonal instead of the exact diameter.
    #[arg(long)]
    bbox_diameter: bool,
}

impl TuningArgs {
    fn config(&self, d: usize, omega: usize) -> DriverConfig {
        let mut cfg = DriverConfig::for_dimension(d, omega);
        cfg.delta = self.delta.unwrap_or_else(|| default_delta(d));
        cfg.ref_scale = self.ref_scale;
        cfg.deletion_mode = self.deletion_mode.into();
        cfg.eps0_override = self.eps0;
        cfg.rank_precision = self.rank_precision;
        cfg.bbox_diameter = self.bbox_diameter;
        cfg
    }
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("stop").required(true).multiple(true).args(["omega", "mse_budget"])))]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,

    /// Model JSON output.
    #[arg(long)]
    output: PathBuf,

    /// Per-scale trace as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,

    /// Reduction table CSV.
    #[arg(long)]
    report: Option<PathBuf>,

    /// Truncation scale.
    #[arg(long)]
    omega: Option<usize>,

    /// Stop at the first scale whose training MSE (normalized units) is at or below this.
    #[arg(long)]
    mse_budget: Option<f64>,

    #[command(flatten)]
    tuning: TuningArgs,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,

    /// CSV of d coordinates per row; a trailing observation column is ignored.
    #[arg(long)]
    points: PathBuf,

    #[arg(long, value_enum, default_value_t = HeaderMode::Auto)]
    header: HeaderMode,

    /// Only use entries up to this scale.
    #[arg(long)]
    max_scale: Option<usize>,

    /// Predictions CSV: input coordinates plus the predicted value.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct CvArgs {
    #[command(flatten)]
    input: InputArgs,

    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(2..))]
    folds: u64,

    #[arg(long, default_value_t = 15)]
    max_scale: usize,

    #[arg(long, value_enum, default_value_t = PolicyArg::MinMse)]
    policy: PolicyArg,

    /// Relative slack of the knee policy.
    #[arg(long, default_value_t = DEFAULT_KNEE_TOL)]
    knee_tol: f64,

    /// Cross-validation table CSV.
    #[arg(long)]
    output: PathBuf,

    /// Same report as JSON, including the selection.
    #[arg(long)]
    json: Option<PathBuf>,

    #[command(flatten)]
    tuning: TuningArgs,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Trace written by `fit --trace`.
    #[arg(long)]
    trace: PathBuf,

    #[arg(long)]
    output: PathBuf,
}

#[derive(Subcommand, Debug)]
enum FixtureCommand {
    /// Write a fixture as CSV (normalized units).
    Generate {
        #[arg(long, value_enum)]
        name: FixtureArg,

        /// Sample count; defaults to the fixture's standard size.
        #[arg(long)]
        n: Option<usize>,

        /// Noise level in normalized units; defaults per fixture.
        #[arg(long)]
        noise_sd: Option<f64>,

        #[arg(long)]
        out: PathBuf,
    },
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn header_flag(mode: HeaderMode, text: &str) -> bool {
    match mode {
        HeaderMode::Auto => looks_like_header(text),
        HeaderMode::Yes => true,
        HeaderMode::No => false,
    }
}

fn load_normalized(input: &InputArgs) -> Result<Dataset> {
    let text = read_text(&input.input)?;
    let raw = parse_csv(text.as_bytes(), header_flag(input.header, &text))
        .with_context(|| format!("parsing {}", input.input.display()))?;
    Ok(normalize(&raw).0)
}

/// Files are staged in memory and written only once every output is ready.
#[derive(Default)]
struct Outputs(Vec<(PathBuf, Vec<u8>)>);

impl Outputs {
    fn add(&mut self, path: &Path, bytes: Vec<u8>) {
        self.0.push((path.to_path_buf(), bytes));
    }

    fn commit(self) -> Result<()> {
        for (path, bytes) in self.0 {
            write_atomic(&path, &bytes).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let ds = load_normalized(&args.input)?;
    let omega = args.omega.unwrap_or(args.tuning.ref_scale);
    let mut cfg = args.tuning.config(ds.d(), omega);
    cfg.mse_budget = args.mse_budget;
    let res = fit(&ds, &cfg)?;

    let mut out = Outputs::default();
    let mut model = serde_json::to_vec_pretty(&res.model)?;
    model.push(b'\n');
    out.add(&args.output, model);
    if let Some(path) = &args.trace {
        let mut buf = Vec::new();
        res.trace.write_jsonl(&mut buf)?;
        out.add(path, buf);
    }
    if let Some(path) = &args.report {
        let mut buf = Vec::new();
        write_reduction_csv(&reduction_report(&res.trace), &mut buf)?;
        out.add(path, buf);
    }
    out.commit()?;

    let last = res.trace.scales.last().expect("at least one scale");
    println!(
        "fitted scales 0..={}: {} entries ({} distinct points of {}), training MSE {:e}",
        res.model.omega,
        res.model.len(),
        last.unique_cum,
        ds.n(),
        last.mse_post
    );
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let model = load_model(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let text = read_text(&args.points)?;
    let table = parse_table(text.as_bytes(), header_flag(args.header, &text))
        .with_context(|| format!("parsing {}", args.points.display()))?;
    let points: DMatrix<f64> = if table.ncols() == model.d + 1 {
        table.columns(0, model.d).into_owned()
    } else {
        table
    };
    let values = match args.max_scale {
        Some(s) => model.predict_up_to_scale(&points, s)?,
        None => model.predict(&points)?,
    };

    let mut buf = Vec::new();
    let preds = Dataset {
        locations: points,
        observations: values,
        norm: None,
    };
    if preds.n() > 0 {
        write_predictions(&preds, &mut buf)?;
    }
    let mut out = Outputs::default();
    out.add(&args.output, buf);
    out.commit()?;
    println!("wrote {} predictions to {}", preds.n(), args.output.display());
    Ok(())
}

fn write_predictions(preds: &Dataset, buf: &mut Vec<u8>) -> Result<()> {
    use std::io::Write;
    let names: Vec<String> = (1..=preds.d()).map(|k| format!("x{k}")).collect();
    writeln!(buf, "{},prediction", names.join(","))?;
    write_csv(preds, buf, false)?;
    Ok(())
}

fn cmd_cv(args: &CvArgs, seed: u64) -> Result<()> {
    let ds = load_normalized(&args.input)?;
    if args.folds as usize > ds.n() {
        bail!("--folds {} exceeds the sample count {}", args.folds, ds.n());
    }
    if !(args.knee_tol >= 0.0) {
        bail!("--knee-tol must be >= 0");
    }
    let cfg = args.tuning.config(ds.d(), args.max_scale);
    let report = cross_validate(&ds, args.folds as usize, args.max_scale, &cfg, seed)?;
    let policy = match args.policy {
        PolicyArg::MinMse => TruncationPolicy::MinMse,
        PolicyArg::Knee => TruncationPolicy::Knee { tol: args.knee_tol },
    };
    let selected = select_truncation(&report, policy);

    let mut out = Outputs::default();
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    out.add(&args.output, buf);
    if let Some(path) = &args.json {
        let doc = serde_json::json!({
            "policy": policy.to_string(),
            "selected_scale": selected,
            "report": report,
        });
        let mut bytes = serde_json::to_vec_pretty(&doc)?;
        bytes.push(b'\n');
        out.add(path, bytes);
    }
    out.commit()?;

    let row = &report.rows[selected];
    println!(
        "selected scale {selected} ({policy}): mean test MSE {:e}, sparse fraction {:.4}",
        row.mean_test_mse, row.mean_fraction
    );
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let text = read_text(&args.trace)?;
    let records = read_jsonl(&text)?;
    if records.is_empty() {
        bail!("{} holds no trace records", args.trace.display());
    }
    let mut buf = Vec::new();
    write_reduction_csv(&reduction_rows(&records), &mut buf)?;
    let mut out = Outputs::default();
    out.add(&args.output, buf);
    out.commit()
}

fn cmd_fixture(name: FixtureArg, n: Option<usize>, noise: Option<f64>, out_path: &Path, seed: u64) -> Result<()> {
    let name: FixtureName = name.into();
    let mut spec = FixtureSpec::standard(name, seed);
    if let Some(n) = n {
        spec.n = n;
    }
    if let Some(sd) = noise {
        spec.noise_sd = sd;
    }
    let ds = generate(&spec)?;
    let mut buf = Vec::new();
    write_csv(&ds, &mut buf, true)?;
    let mut out = Outputs::default();
    out.add(out_path, buf);
    out.commit()?;
    println!("wrote {} samples of {name} to {}", ds.n(), out_path.display());
    Ok(())
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .with_context(|| format!("{THREADS_ENV} must be a positive integer, got `{v}`"))?;
        if n == 0 {
            bail!("{THREADS_ENV} must be a positive integer, got 0");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Cv(a) => cmd_cv(a, cli.seed),
        Command::Report(a) => cmd_report(a),
        Command::Fixtures {
            command: FixtureCommand::Generate { name, n, noise_sd, out },
        } => cmd_fixture(*name, *n, *noise_sd, out, cli.seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn fit_requires_a_stopping_rule() {
        let err = Cli::try_parse_from(["fbms", "fit", "--input", "a.csv", "--output", "m.json"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(Cli::try_parse_from(["fbms", "fit", "--input", "a.csv", "--output", "m.json", "--mse-budget", "1e-4"]).is_ok());
    }

    #[test]
    fn single_fold_is_rejected() {
        let err = Cli::try_parse_from(["fbms", "cv", "--input", "a.csv", "--output", "c.csv", "--folds", "1"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn header_modes() {
        assert!(header_flag(HeaderMode::Auto, "x,y\n1,2\n"));
        assert!(!header_flag(HeaderMode::Auto, "1,2\n"));
        assert!(header_flag(HeaderMode::Yes, "1,2\n"));
    }
}
