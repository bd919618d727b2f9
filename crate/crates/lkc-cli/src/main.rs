//! Command-line front end for the curvature-regression pipeline: Euler
//! characteristic profiles of field bundles, GLS curvature fits with
//! thresholds, direct threshold inversion from known curvatures, Gaussian
//! field simulation, factorial experiments, and plot-ready table export.
//!
//! stdout carries data only; diagnostics go to stderr. Exit codes: 0 on
//! success, 2 for input/validation errors, 3 for compute failures.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::exit;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lkc::{
    default_alpha_cov, design_levels, ec_profile, run_experiment, simulate, truth_lkcs,
    Connectivity, CovMethod, DomainKind, Error, ExperimentConfig, FieldBundle, FitOptions,
    GridDomain, GrfSpec, LevelSpacing, LkcVector, RhoFamily,
};

#[derive(Parser)]
#[command(name = "lkc", version, about = "Lipschitz-Killing curvature regression toolkit")]
struct Cli {
    /// Worker threads for parallel stages (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Print progress diagnostics to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the empirical EC profile of a field bundle (CSV).
    Ec(EcArgs),
    /// Fit curvatures by GLS and invert for the threshold (JSON).
    Fit(FitArgs),
    /// Threshold for known curvatures at a given significance level.
    Threshold(ThresholdArgs),
    /// Simulate unit-variance Gaussian fields into a bundle file.
    Simulate(SimulateArgs),
    /// Run a factorial simulation experiment from a config file.
    Experiment(ExperimentArgs),
    /// Reshape an experiment summary CSV into a per-figure plotting table.
    Plotdata(PlotdataArgs),
}

#[derive(Args)]
struct EcArgs {
    /// Bundle file (.lkcb binary or .csv for 2D point data).
    bundle: PathBuf,
    /// Explicit comma-separated levels (overrides --U/--spacing).
    #[arg(long)]
    levels: Option<String>,
    /// Number of designed levels.
    #[arg(long = "U", default_value_t = 50)]
    level_count: usize,
    /// Level spacing: equal, quantile, or variance.
    #[arg(long, default_value = "equal")]
    spacing: String,
    /// Site connectivity: 4 or 8 (2D), 6, 18 or 26 (3D).
    #[arg(long)]
    connectivity: Option<String>,
    /// Write to a file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Bundle file (.lkcb binary or .csv for 2D point data).
    bundle: PathBuf,
    /// Error-covariance estimator: i, sd, sc, sgw, or pi.
    #[arg(long, default_value = "sd")]
    cov: String,
    /// Number of designed levels.
    #[arg(long = "U", default_value_t = 50)]
    level_count: usize,
    /// Level spacing: equal, quantile, or variance.
    #[arg(long, default_value = "equal")]
    spacing: String,
    /// Significance level for the reported threshold.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Marginal family: gaussian or chi2:<k>.
    #[arg(long, default_value = "gaussian")]
    family: String,
    /// Estimate L_0 instead of pinning it to the domain's EC.
    #[arg(long)]
    free_l0: bool,
    /// Site connectivity: 4 or 8 (2D), 6, 18 or 26 (3D).
    #[arg(long)]
    connectivity: Option<String>,
    /// Write to a file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ThresholdArgs {
    /// Comma-separated curvatures L_0,...,L_dim.
    #[arg(long)]
    lkcs: String,
    /// Marginal family: gaussian or chi2:<k>.
    #[arg(long, default_value = "gaussian")]
    family: String,
    /// Significance level.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Args)]
struct SimulateArgs {
    /// Domain kind: square, cube, or sphere.
    #[arg(long)]
    domain: String,
    /// Grid size (side length / longitude resolution).
    #[arg(long = "G")]
    grid_size: usize,
    /// Number of independent fields.
    #[arg(long = "F")]
    field_count: usize,
    /// Covariance decay rate (default: the per-domain study value).
    #[arg(long)]
    alpha_cov: Option<f64>,
    /// RNG seed; identical seeds give bit-identical bundles.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output bundle path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config (JSON, or TOML by extension).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for long/summary/convergence CSVs.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, ValueEnum)]
enum Figure {
    /// Median fit-stage runtime per method.
    Runtime,
    /// Threshold standard deviation across replicates.
    Sd,
    /// Median estimated threshold.
    Median,
    /// Median threshold minus the continuous truth.
    Bias,
}

#[derive(Args)]
struct PlotdataArgs {
    /// Experiment summary CSV (one row per domain/G/method cell).
    #[arg(long)]
    result: PathBuf,
    /// Which figure's table to produce.
    #[arg(long)]
    figure: Figure,
    /// Significance level used when recomputing truth thresholds for bias.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Write to a file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Error plus the exit code it maps to.
struct Failure {
    code: i32,
    message: String,
}

fn input_err(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        let code = match e {
            // Bad inputs and unmet preconditions the caller can fix.
            Error::Io(_)
            | Error::FormatError { .. }
            | Error::DimensionMismatch(_)
            | Error::InvalidInput(_)
            | Error::UnsupportedFamilyOrder { .. }
            | Error::TooFewLevels { .. }
            | Error::NonMonotoneLevels
            | Error::InsufficientFields { .. }
            | Error::TooLarge(_, _) => 2,
            // The computation itself failed.
            Error::DegenerateField
            | Error::InsufficientLevels { .. }
            | Error::SingularDesign(_)
            | Error::NoCrossing
            | Error::EmbeddingFailure
            | Error::NoConvergence(_) => 3,
        };
        Failure { code, message: e.to_string() }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .is_err()
        {
            eprintln!("error: thread pool already initialized");
            exit(2);
        }
    }
    let verbose = cli.verbose;
    if let Err(f) = run(cli.command, verbose) {
        eprintln!("error: {}", f.message);
        exit(f.code);
    }
}

fn run(command: Command, verbose: bool) -> Result<(), Failure> {
    match command {
        Command::Ec(a) => cmd_ec(a, verbose),
        Command::Fit(a) => cmd_fit(a, verbose),
        Command::Threshold(a) => cmd_threshold(a),
        Command::Simulate(a) => cmd_simulate(a, verbose),
        Command::Experiment(a) => cmd_experiment(a, verbose),
        Command::Plotdata(a) => cmd_plotdata(a),
    }
}

fn load_bundle(path: &Path) -> Result<FieldBundle, Failure> {
    let is_csv = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("csv"))
        .unwrap_or(false);
    let bundle = if is_csv {
        FieldBundle::load_csv(path)?
    } else {
        FieldBundle::load(path)?
    };
    Ok(bundle)
}

fn parse_connectivity(
    flag: Option<&str>,
    kind: DomainKind,
) -> Result<Connectivity, Failure> {
    let conn = match flag {
        Some(s) => Connectivity::parse(s)?,
        None => Connectivity::default_for(kind),
    };
    if !conn.compatible_with(kind) {
        return Err(input_err(format!(
            "connectivity/domain mismatch: {} is not valid on a {} domain",
            conn.as_str(),
            kind.as_str()
        )));
    }
    Ok(conn)
}

fn parse_family(s: &str) -> Result<RhoFamily, Failure> {
    let lower = s.to_ascii_lowercase();
    if lower == "gaussian" || lower == "g" {
        return Ok(RhoFamily::Gaussian);
    }
    if let Some(rest) = lower.strip_prefix("chi2:") {
        let k: usize = rest
            .parse()
            .map_err(|_| input_err(format!("bad chi2 degrees of freedom: {rest:?}")))?;
        if k == 0 {
            return Err(input_err("chi2 degrees of freedom must be positive"));
        }
        return Ok(RhoFamily::ChiSquared(k));
    }
    Err(input_err(format!(
        "unknown family {s:?} (expected gaussian or chi2:<k>)"
    )))
}

fn check_alpha(alpha: f64) -> Result<(), Failure> {
    if !(alpha > 0.0 && alpha <= 0.2) {
        return Err(input_err(format!(
            "alpha outside ECH validity (≤0.2): {alpha}"
        )));
    }
    Ok(())
}

fn parse_level_list(s: &str) -> Result<Vec<f64>, Failure> {
    let levels: Vec<f64> = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| input_err(format!("bad level {t:?}")))
        })
        .collect::<Result<_, _>>()?;
    if levels.is_empty() {
        return Err(input_err("empty level list"));
    }
    Ok(levels)
}

fn emit(out: Option<&Path>, data: &str) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, data)
            .map_err(|e| input_err(format!("writing {}: {e}", path.display()))),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(data.as_bytes())
                .and_then(|()| lock.flush())
                .map_err(|e| input_err(format!("writing stdout: {e}")))
        }
    }
}

fn cmd_ec(args: EcArgs, verbose: bool) -> Result<(), Failure> {
    let bundle = load_bundle(&args.bundle)?;
    let conn = parse_connectivity(args.connectivity.as_deref(), bundle.domain.kind)?;
    let levels = match &args.levels {
        Some(list) => parse_level_list(list)?,
        None => {
            let spacing = LevelSpacing::parse(&args.spacing)?;
            design_levels(&bundle, spacing, args.level_count)?.levels
        }
    };
    if verbose {
        eprintln!(
            "ec: {} fields on {} G={} sites={}, {} levels, {}",
            bundle.field_count,
            bundle.domain.kind.as_str(),
            bundle.domain.grid_size,
            bundle.site_count(),
            levels.len(),
            conn.as_str()
        );
    }
    let profile = ec_profile(&bundle, &levels, conn)?;
    emit(args.out.as_deref(), &profile.to_csv())
}

fn cmd_fit(args: FitArgs, verbose: bool) -> Result<(), Failure> {
    check_alpha(args.alpha)?;
    let family = parse_family(&args.family)?;
    let bundle = load_bundle(&args.bundle)?;
    let conn = parse_connectivity(args.connectivity.as_deref(), bundle.domain.kind)?;
    let options = FitOptions {
        spacing: LevelSpacing::parse(&args.spacing)?,
        level_count: args.level_count,
        cov_method: CovMethod::parse(&args.cov)?,
        family,
        fix_l0: !args.free_l0,
        connectivity: Some(conn),
        alpha: args.alpha,
        normalize: true,
    };
    if verbose {
        eprintln!(
            "fit: {} fields on {} G={}, cov={}, U={}, alpha={}",
            bundle.field_count,
            bundle.domain.kind.as_str(),
            bundle.domain.grid_size,
            options.cov_method.as_str(),
            options.level_count,
            options.alpha
        );
    }
    let result = lkc::fit_pipeline(&bundle, &options)?;
    let report = result.report();
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| input_err(format!("serializing report: {e}")))?;
    emit(args.out.as_deref(), &format!("{json}\n"))
}

fn cmd_threshold(args: ThresholdArgs) -> Result<(), Failure> {
    check_alpha(args.alpha)?;
    let family = parse_family(&args.family)?;
    let values = parse_level_list(&args.lkcs)?;
    let lkcs = LkcVector::new(values)?;
    let u = lkc::threshold(&lkcs, family, args.alpha)?;
    emit(None, &format!("{u:.6}\n"))
}

fn cmd_simulate(args: SimulateArgs, verbose: bool) -> Result<(), Failure> {
    let kind = DomainKind::parse(&args.domain)?;
    let domain = GridDomain::new(kind, args.grid_size)?;
    let mut spec = GrfSpec::new(domain, args.field_count, args.seed);
    if let Some(a) = args.alpha_cov {
        if a <= 0.0 {
            return Err(input_err("alpha-cov must be positive"));
        }
        spec.alpha_cov = a;
    }
    if verbose {
        eprintln!(
            "simulate: {} G={} F={} alpha_cov={} seed={}",
            kind.as_str(),
            args.grid_size,
            args.field_count,
            spec.alpha_cov,
            args.seed
        );
    }
    let bundle = simulate(&spec)?;
    bundle.save(&args.out)?;
    eprintln!(
        "wrote {} fields ({} sites) to {}",
        bundle.field_count,
        bundle.site_count(),
        args.out.display()
    );
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs, verbose: bool) -> Result<(), Failure> {
    let config = ExperimentConfig::load(&args.config)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| input_err(format!("creating {}: {e}", args.out.display())))?;
    if verbose {
        eprintln!(
            "experiment: domains={:?} G={:?} methods={:?} F={} R={}",
            config.domains,
            config.grid_sizes,
            config.cov_methods,
            config.field_count,
            config.replicates
        );
    }
    let result = run_experiment(&config)?;
    for line in &result.failures {
        eprintln!("replicate failure: {line}");
    }
    let write = |name: &str, data: String| -> Result<(), Failure> {
        let path = args.out.join(name);
        std::fs::write(&path, data)
            .map_err(|e| input_err(format!("writing {}: {e}", path.display())))
    };
    write("long.csv", result.to_long_csv())?;
    write("summary.csv", result.to_summary_csv())?;
    let mut conv = String::from("domain,method,u_star,beta,varsigma,truth_threshold\n");
    for c in &result.convergence {
        conv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.domain, c.method, c.u_star, c.beta, c.varsigma, c.truth_threshold
        ));
    }
    write("convergence.csv", conv)?;
    eprintln!(
        "experiment done: {} replicate records, {} cells, output in {}",
        result.records.len(),
        result.summaries.len(),
        args.out.display()
    );
    Ok(())
}

/// One parsed summary row.
struct SummaryRow {
    domain: String,
    grid_size: usize,
    method: String,
    median_threshold: f64,
    sd_threshold: f64,
    median_fit_runtime_ms: f64,
}

fn parse_summary_csv(text: &str) -> Result<Vec<SummaryRow>, Failure> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| input_err("empty summary CSV"))?;
    let cols: Vec<&str> = header.split(',').collect();
    let col = |name: &str| -> Result<usize, Failure> {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| input_err(format!("summary CSV missing column {name:?}")))
    };
    let (ci_domain, ci_g, ci_method) = (col("domain")?, col("G")?, col("method")?);
    let ci_median = col("median_threshold")?;
    let ci_sd = col("sd_threshold")?;
    let ci_rt = col("median_fit_runtime_ms")?;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let num = |ci: usize| -> Result<f64, Failure> {
            f.get(ci)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| input_err(format!("summary CSV row {}: bad number", i + 2)))
        };
        rows.push(SummaryRow {
            domain: f
                .get(ci_domain)
                .ok_or_else(|| input_err(format!("summary CSV row {}: short row", i + 2)))?
                .to_string(),
            grid_size: num(ci_g)? as usize,
            method: f
                .get(ci_method)
                .ok_or_else(|| input_err(format!("summary CSV row {}: short row", i + 2)))?
                .to_string(),
            median_threshold: num(ci_median)?,
            sd_threshold: num(ci_sd)?,
            median_fit_runtime_ms: num(ci_rt)?,
        });
    }
    if rows.is_empty() {
        return Err(input_err("summary CSV has no data rows"));
    }
    Ok(rows)
}

/// Pivot the summary into one row per (domain, G) with a column per method,
/// carrying the value the requested figure plots.
fn cmd_plotdata(args: PlotdataArgs) -> Result<(), Failure> {
    check_alpha(args.alpha)?;
    let text = std::fs::read_to_string(&args.result)
        .map_err(|e| input_err(format!("reading {}: {e}", args.result.display())))?;
    let rows = parse_summary_csv(&text)?;

    let mut methods: Vec<String> = Vec::new();
    for r in &rows {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
    }
    let mut cells: Vec<(String, usize)> = Vec::new();
    for r in &rows {
        let key = (r.domain.clone(), r.grid_size);
        if !cells.contains(&key) {
            cells.push(key);
        }
    }
    cells.sort();

    let mut out = String::from("domain,G");
    for m in &methods {
        out.push(',');
        out.push_str(m);
    }
    if matches!(args.figure, Figure::Bias | Figure::Median) {
        out.push_str(",truth");
    }
    out.push('\n');

    for (domain, g) in &cells {
        out.push_str(&format!("{domain},{g}"));
        // Continuous-domain reference threshold for this domain.
        let truth = {
            let kind = DomainKind::parse(domain)?;
            let lkcs = truth_lkcs(kind, default_alpha_cov(kind))?;
            lkc::threshold(&lkcs, RhoFamily::Gaussian, args.alpha)?
        };
        for m in &methods {
            let row = rows
                .iter()
                .find(|r| &r.domain == domain && r.grid_size == *g && &r.method == m);
            let value = row.map(|r| match args.figure {
                Figure::Runtime => r.median_fit_runtime_ms,
                Figure::Sd => r.sd_threshold,
                Figure::Median => r.median_threshold,
                Figure::Bias => r.median_threshold - truth,
            });
            match value {
                Some(v) => out.push_str(&format!(",{v}")),
                None => out.push(','),
            }
        }
        if matches!(args.figure, Figure::Bias | Figure::Median) {
            out.push_str(&format!(",{truth}"));
        }
        out.push('\n');
    }
    emit(args.out.as_deref(), &out)
}
