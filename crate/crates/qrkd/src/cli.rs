//! Command-line front end: CSV input, JSON or CSV reports.
//!
//! Subcommands mirror the library pipeline: `estimate` fits the quantile
//! grid and reports kink effects, `test` adds the pivotal significance and
//! heterogeneity tests, `band` adds the uniform confidence band,
//! `bandwidth` reports the pilot quantities and the bandwidth plan, and
//! `simulate` runs the Monte Carlo harness on a synthetic design.
//!
//! Reports are deterministic functions of the inputs and the seed: JSON
//! uses stable field order and CSV uses shortest round-trip floats, so
//! reruns produce byte-identical output.

use crate::bandwidth::{self, BandwidthPlan, DensityPilots};
use crate::dgp_sim::{self, MonteCarloConfig, Structure, StructureSpec};
use crate::inference;
use crate::local_fit::{self, KinkDesign, Sample, COVARIATE_SIGN_NOTE};
use crate::qr_core::SolveStatus;
use crate::{Error, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Local polynomial quantile estimation and uniform inference at a policy
/// kink.
#[derive(Debug, Parser)]
#[command(name = "qrkd", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the kink effect on a quantile grid.
    Estimate(EstimateArgs),
    /// Run the uniform significance and heterogeneity tests.
    Test(TestArgs),
    /// Compute a uniform confidence band over the quantile grid.
    Band(BandArgs),
    /// Report pilot estimates and the per-quantile bandwidth plan.
    Bandwidth(BandwidthArgs),
    /// Run the Monte Carlo study on a synthetic kink design.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// CSV file with columns `y` and `x` (plus any covariate columns).
    #[arg(long)]
    pub input: PathBuf,
    /// Kink location in the running variable.
    #[arg(long, default_value_t = 0.0)]
    pub x0: f64,
    /// Derivative of the policy formula to the right of the kink.
    #[arg(long, default_value_t = 1.0)]
    pub slope_right: f64,
    /// Derivative of the policy formula to the left of the kink.
    #[arg(long, default_value_t = -1.0)]
    pub slope_left: f64,
    /// Comma-separated covariate column names to adjust for.
    #[arg(long)]
    pub covariates: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    #[arg(long, default_value_t = 0.1)]
    pub tau_min: f64,
    #[arg(long, default_value_t = 0.9)]
    pub tau_max: f64,
    #[arg(long, default_value_t = 0.05)]
    pub tau_step: f64,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Local polynomial order.
    #[arg(long, default_value_t = 2)]
    pub order: usize,
    /// Bandwidth override: a number for one fixed bandwidth, or a path to
    /// a CSV file with columns `tau,h`. Omit to use the data-driven rule.
    #[arg(long)]
    pub bandwidth: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    /// Number of pivotal simulation draws.
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
    /// Confidence level for tests and bands.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub infer: InferArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct BandArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub infer: InferArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct BandwidthArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Which synthetic kink structure to simulate.
    #[arg(long, value_enum)]
    pub structure: Structure,
    /// Sample size per replication.
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 200)]
    pub replications: usize,
    /// Skip the pivotal tests and bands, reporting estimation accuracy
    /// only.
    #[arg(long, default_value_t = false)]
    pub no_tests: bool,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Local polynomial order.
    #[arg(long, default_value_t = 2)]
    pub order: usize,
    #[command(flatten)]
    pub infer: InferArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

/// The resolved configuration embedded in every report.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub input: Option<String>,
    pub x0: Option<f64>,
    pub slope_right: Option<f64>,
    pub slope_left: Option<f64>,
    pub covariates: Vec<String>,
    pub tau_min: f64,
    pub tau_max: f64,
    pub tau_step: f64,
    pub grid: Vec<f64>,
    pub order: Option<usize>,
    pub bandwidth: Option<String>,
    pub draws: Option<usize>,
    pub level: Option<f64>,
    pub seed: Option<u64>,
    pub structure: Option<Structure>,
    pub n: Option<usize>,
    pub replications: Option<usize>,
    pub format: OutputFormat,
}

impl RunConfig {
    fn new(command: &str, grid_args: &GridArgs, grid: &[f64], format: OutputFormat) -> Self {
        RunConfig {
            command: command.to_string(),
            input: None,
            x0: None,
            slope_right: None,
            slope_left: None,
            covariates: Vec::new(),
            tau_min: grid_args.tau_min,
            tau_max: grid_args.tau_max,
            tau_step: grid_args.tau_step,
            grid: grid.to_vec(),
            order: None,
            bandwidth: None,
            draws: None,
            level: None,
            seed: None,
            structure: None,
            n: None,
            replications: None,
            format,
        }
    }

    fn with_data(mut self, data: &DataArgs, covariates: &[String]) -> Self {
        self.input = Some(data.input.display().to_string());
        self.x0 = Some(data.x0);
        self.slope_right = Some(data.slope_right);
        self.slope_left = Some(data.slope_left);
        self.covariates = covariates.to_vec();
        self
    }

    fn with_fit(mut self, fit: &FitArgs) -> Self {
        self.order = Some(fit.order);
        self.bandwidth = fit.bandwidth.clone();
        self
    }

    fn with_infer(mut self, infer: &InferArgs) -> Self {
        self.draws = Some(infer.draws);
        self.level = Some(infer.level);
        self.seed = Some(infer.seed);
        self
    }
}

/// Parses comma-separated covariate names, trimming blanks.
fn covariate_names(data: &DataArgs) -> Vec<String> {
    data.covariates
        .as_deref()
        .map(|s| {
            s.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default()
}

/// Loads a sample from a CSV file with header columns `y`, `x`, and the
/// named covariates.
///
/// # Errors
/// [`Error::MissingColumn`] when a named column is absent;
/// [`Error::Parse`] naming the file row and column on unparseable or
/// non-finite values; [`Error::Io`] on file problems.
pub fn load_csv(path: &Path, covariates: &[String]) -> Result<Sample> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::invalid(format!("cannot read CSV header: {e}")))?
        .clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
            })
    };
    let y_idx = find("y")?;
    let x_idx = find("x")?;
    let cov_idx: Vec<usize> = covariates
        .iter()
        .map(|name| find(name))
        .collect::<Result<_>>()?;

    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut cov_flat: Vec<f64> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let field = |idx: usize| -> Result<f64> {
            let name = headers.get(idx).unwrap_or("").to_string();
            let raw = record.get(idx).ok_or_else(|| Error::Parse {
                row,
                column: name.clone(),
                message: "missing field".to_string(),
            })?;
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                row,
                column: name.clone(),
                message: format!("cannot parse {raw:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: name,
                    message: format!("non-finite value {raw:?}"),
                });
            }
            Ok(v)
        };
        y.push(field(y_idx)?);
        x.push(field(x_idx)?);
        for &idx in &cov_idx {
            cov_flat.push(field(idx)?);
        }
    }
    let covariate_matrix = if cov_idx.is_empty() {
        None
    } else {
        Some(DMatrix::from_row_slice(y.len(), cov_idx.len(), &cov_flat))
    };
    Sample::new(y, x, covariate_matrix)
}

fn design_from(data: &DataArgs) -> Result<KinkDesign> {
    KinkDesign::new(data.x0, data.slope_right, data.slope_left)
}

fn make_grid(grid: &GridArgs) -> Result<Vec<f64>> {
    crate::quantile_grid(grid.tau_min, grid.tau_max, grid.tau_step)
}

/// Reads a per-quantile bandwidth file with header `tau,h`.
fn load_bandwidth_file(path: &Path, grid: &[f64]) -> Result<Vec<f64>> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::invalid(format!("cannot read bandwidth file header: {e}")))?
        .clone();
    let tau_idx = headers
        .iter()
        .position(|h| h == "tau")
        .ok_or_else(|| Error::MissingColumn {
            column: "tau".to_string(),
        })?;
    let h_idx = headers
        .iter()
        .position(|h| h == "h")
        .ok_or_else(|| Error::MissingColumn {
            column: "h".to_string(),
        })?;
    let mut entries: Vec<(f64, f64)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let parse = |idx: usize, name: &str| -> Result<f64> {
            record
                .get(idx)
                .and_then(|raw| raw.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row,
                    column: name.to_string(),
                    message: "cannot parse as a finite number".to_string(),
                })
        };
        entries.push((parse(tau_idx, "tau")?, parse(h_idx, "h")?));
    }
    grid.iter()
        .map(|&tau| {
            entries
                .iter()
                .find(|(t, _)| (t - tau).abs() < 1e-9)
                .map(|&(_, h)| h)
                .ok_or_else(|| {
                    Error::invalid(format!("bandwidth file has no entry for tau = {tau}"))
                })
                .and_then(|h| {
                    if h > 0.0 && h.is_finite() {
                        Ok(h)
                    } else {
                        Err(Error::invalid(format!(
                            "bandwidth for tau = {tau} must be positive and finite"
                        )))
                    }
                })
        })
        .collect()
}

fn override_plan(grid: &[f64], h_per_tau: Vec<f64>) -> BandwidthPlan {
    let base_h = h_per_tau[grid.len() / 2];
    let c_of_tau: Vec<f64> = h_per_tau.iter().map(|h| h / base_h).collect();
    BandwidthPlan {
        grid: grid.to_vec(),
        h_per_tau,
        base_h,
        c_of_tau,
        flags: vec![Default::default(); grid.len()],
    }
}

/// Resolves the bandwidth plan: the data-driven rule by default, or the
/// user's fixed value or per-quantile file.
fn resolve_plan(
    sample: &Sample,
    design: &KinkDesign,
    grid: &[f64],
    fit: &FitArgs,
) -> Result<(BandwidthPlan, Option<DensityPilots>)> {
    match fit.bandwidth.as_deref() {
        None => {
            let pilots = bandwidth::compute_plan_pilots(sample, design, grid)?;
            let plan = bandwidth::build_plan_with_pilots(sample, design, grid, &pilots)?;
            Ok((plan, Some(pilots.density)))
        }
        Some(spec) => {
            if let Ok(h) = spec.parse::<f64>() {
                if !(h > 0.0 && h.is_finite()) {
                    return Err(Error::invalid("--bandwidth must be positive and finite"));
                }
                Ok((override_plan(grid, vec![h; grid.len()]), None))
            } else {
                let h = load_bandwidth_file(Path::new(spec), grid)?;
                Ok((override_plan(grid, h), None))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct EstimateRow {
    tau: f64,
    h: f64,
    estimate: f64,
    numerator: f64,
    alpha: f64,
    beta1_plus: f64,
    beta1_minus: f64,
    n_effective: usize,
    status: SolveStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
struct CsvEstimateRow {
    tau: f64,
    h: f64,
    estimate: f64,
    numerator: f64,
    alpha: f64,
    beta1_plus: f64,
    beta1_minus: f64,
    n_effective: usize,
    status: SolveStatus,
    gamma: String,
}

fn estimate_rows(
    sample: &Sample,
    design: &KinkDesign,
    grid: &[f64],
    plan: &BandwidthPlan,
    order: usize,
) -> Result<(Vec<EstimateRow>, Vec<local_fit::LocalPolyFit>, Vec<f64>)> {
    let mut rows = Vec::with_capacity(grid.len());
    let mut fits = Vec::with_capacity(grid.len());
    let mut estimates = Vec::with_capacity(grid.len());
    for (t, &tau) in grid.iter().enumerate() {
        let fit = if sample.covariates.is_some() {
            local_fit::fit_local_poly_cov(sample, design, tau, plan.h(t), order)?
        } else {
            local_fit::fit_local_poly(sample, design, tau, plan.h(t), order)?
        };
        let point = local_fit::qrkd_point(fit, design);
        rows.push(EstimateRow {
            tau,
            h: plan.h(t),
            estimate: point.value,
            numerator: point.numerator,
            alpha: point.fit.alpha,
            beta1_plus: point.fit.beta_plus[0],
            beta1_minus: point.fit.beta_minus[0],
            n_effective: point.fit.n_effective,
            status: point.fit.status,
            gamma: point.fit.gamma.clone(),
        });
        estimates.push(point.value);
        fits.push(point.fit);
    }
    Ok((rows, fits, estimates))
}

fn csv_from_rows<S: Serialize>(rows: &[S]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::invalid(format!("CSV rendering failed: {e}")))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::invalid(format!("CSV rendering failed: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(format!("CSV rendering failed: {e}")))
}

/// Renders the versioned JSON report envelope.
pub fn render_json(config: &RunConfig, results: Value) -> String {
    let report = json!({
        "schema_version": 1,
        "config": config,
        "results": results,
    });
    let mut text = serde_json::to_string_pretty(&report).expect("report serialization");
    text.push('\n');
    text
}

fn reject_covariates_for_inference(covariates: &[String]) -> Result<()> {
    if covariates.is_empty() {
        Ok(())
    } else {
        Err(Error::invalid(
            "pivotal inference does not support covariate adjustment; run `estimate` for covariate-adjusted point estimates",
        ))
    }
}

struct Rendered {
    text: String,
    output: Option<PathBuf>,
}

fn finish(config: &RunConfig, results: Value, csv_text: String, out: &OutputArgs) -> Rendered {
    let text = match out.format {
        OutputFormat::Json => render_json(config, results),
        OutputFormat::Csv => csv_text,
    };
    Rendered {
        text,
        output: out.output.clone(),
    }
}

fn cmd_estimate(args: &EstimateArgs) -> Result<Rendered> {
    let names = covariate_names(&args.data);
    let sample = load_csv(&args.data.input, &names)?;
    let design = design_from(&args.data)?;
    let grid = make_grid(&args.grid)?;
    let (plan, _) = resolve_plan(&sample, &design, &grid, &args.fit)?;
    let (rows, _, _) = estimate_rows(&sample, &design, &grid, &plan, args.fit.order)?;

    let config = RunConfig::new("estimate", &args.grid, &grid, args.out.format)
        .with_data(&args.data, &names)
        .with_fit(&args.fit);
    let mut results = json!({ "estimates": rows });
    if !names.is_empty() {
        results["covariate_note"] = json!(COVARIATE_SIGN_NOTE);
    }
    let csv_rows: Vec<CsvEstimateRow> = rows
        .iter()
        .map(|r| CsvEstimateRow {
            tau: r.tau,
            h: r.h,
            estimate: r.estimate,
            numerator: r.numerator,
            alpha: r.alpha,
            beta1_plus: r.beta1_plus,
            beta1_minus: r.beta1_minus,
            n_effective: r.n_effective,
            status: r.status,
            gamma: r
                .gamma
                .as_ref()
                .map(|g| {
                    g.iter()
                        .map(|v| v.to_string())
                        .collect::<Vec<_>>()
                        .join(";")
                })
                .unwrap_or_default(),
        })
        .collect();
    Ok(finish(
        &config,
        results,
        csv_from_rows(&csv_rows)?,
        &args.out,
    ))
}

#[derive(Debug, Clone, Serialize)]
struct TestCsvRow {
    kind: inference::TestKind,
    standardized: bool,
    statistic: f64,
    critical_value: f64,
    p_value: f64,
    level: f64,
    accepted: bool,
}

fn test_csv_row(t: &inference::TestResult) -> TestCsvRow {
    TestCsvRow {
        kind: t.kind,
        standardized: t.standardized,
        statistic: t.statistic,
        critical_value: t.critical_value,
        p_value: t.p_value,
        level: t.level,
        accepted: t.accepted,
    }
}

fn cmd_test(args: &TestArgs) -> Result<Rendered> {
    let names = covariate_names(&args.data);
    reject_covariates_for_inference(&names)?;
    let sample = load_csv(&args.data.input, &names)?;
    let design = design_from(&args.data)?;
    let grid = make_grid(&args.grid)?;
    let (plan, _) = resolve_plan(&sample, &design, &grid, &args.fit)?;
    let (rows, fits, estimates) = estimate_rows(&sample, &design, &grid, &plan, args.fit.order)?;
    let draws = inference::simulate_pivotal(
        &sample,
        &design,
        &plan,
        &fits,
        args.infer.draws,
        args.infer.seed,
    )?;
    let sig_std = inference::test_significance(&estimates, &draws, args.infer.level, true)?;
    let sig_raw = inference::test_significance(&estimates, &draws, args.infer.level, false)?;
    let het_std = inference::test_heterogeneity(&estimates, &draws, args.infer.level, true)?;
    let het_raw = inference::test_heterogeneity(&estimates, &draws, args.infer.level, false)?;

    let config = RunConfig::new("test", &args.grid, &grid, args.out.format)
        .with_data(&args.data, &names)
        .with_fit(&args.fit)
        .with_infer(&args.infer);
    let results = json!({
        "estimates": rows,
        "significance": { "standardized": sig_std, "raw": sig_raw },
        "heterogeneity": { "standardized": het_std, "raw": het_raw },
        "pivotal_meta": draws.meta,
    });
    let csv_rows = vec![
        test_csv_row(&sig_std),
        test_csv_row(&sig_raw),
        test_csv_row(&het_std),
        test_csv_row(&het_raw),
    ];
    Ok(finish(
        &config,
        results,
        csv_from_rows(&csv_rows)?,
        &args.out,
    ))
}

#[derive(Debug, Clone, Serialize)]
struct BandCsvRow {
    tau: f64,
    estimate: f64,
    lower: f64,
    upper: f64,
    level: f64,
    critical_value: f64,
}

fn cmd_band(args: &BandArgs) -> Result<Rendered> {
    let names = covariate_names(&args.data);
    reject_covariates_for_inference(&names)?;
    let sample = load_csv(&args.data.input, &names)?;
    let design = design_from(&args.data)?;
    let grid = make_grid(&args.grid)?;
    let (plan, _) = resolve_plan(&sample, &design, &grid, &args.fit)?;
    let (rows, fits, estimates) = estimate_rows(&sample, &design, &grid, &plan, args.fit.order)?;
    let draws = inference::simulate_pivotal(
        &sample,
        &design,
        &plan,
        &fits,
        args.infer.draws,
        args.infer.seed,
    )?;
    let band = inference::uniform_band(&estimates, &draws, args.infer.level)?;

    let config = RunConfig::new("band", &args.grid, &grid, args.out.format)
        .with_data(&args.data, &names)
        .with_fit(&args.fit)
        .with_infer(&args.infer);
    let results = json!({
        "estimates": rows,
        "band": band,
        "pivotal_meta": draws.meta,
    });
    let csv_rows: Vec<BandCsvRow> = (0..grid.len())
        .map(|t| BandCsvRow {
            tau: band.grid[t],
            estimate: band.estimates[t],
            lower: band.lower[t],
            upper: band.upper[t],
            level: band.level,
            critical_value: band.critical_value,
        })
        .collect();
    Ok(finish(
        &config,
        results,
        csv_from_rows(&csv_rows)?,
        &args.out,
    ))
}

#[derive(Debug, Clone, Serialize)]
struct BandwidthCsvRow {
    tau: f64,
    h: f64,
    c: f64,
    base_h: f64,
    curvature_degenerate: bool,
    capped: bool,
    ratio_clipped: bool,
}

fn cmd_bandwidth(args: &BandwidthArgs) -> Result<Rendered> {
    let names = covariate_names(&args.data);
    let sample = load_csv(&args.data.input, &names)?;
    let design = design_from(&args.data)?;
    let grid = make_grid(&args.grid)?;
    let pilots = bandwidth::compute_plan_pilots(&sample, &design, &grid)?;
    let plan = bandwidth::build_plan_with_pilots(&sample, &design, &grid, &pilots)?;

    let config = RunConfig::new("bandwidth", &args.grid, &grid, args.out.format)
        .with_data(&args.data, &names);
    let results = json!({
        "pilots": pilots.density,
        "plan": plan,
    });
    let csv_rows: Vec<BandwidthCsvRow> = (0..grid.len())
        .map(|t| BandwidthCsvRow {
            tau: plan.grid[t],
            h: plan.h_per_tau[t],
            c: plan.c_of_tau[t],
            base_h: plan.base_h,
            curvature_degenerate: plan.flags[t].curvature_degenerate,
            capped: plan.flags[t].capped,
            ratio_clipped: plan.flags[t].ratio_clipped,
        })
        .collect();
    Ok(finish(
        &config,
        results,
        csv_from_rows(&csv_rows)?,
        &args.out,
    ))
}

#[derive(Debug, Clone, Serialize)]
struct SimulateCsvRow {
    tau: f64,
    true_value: f64,
    mean: f64,
    bias: f64,
    sd: f64,
    rmse: f64,
    significance_acceptance: Option<f64>,
    significance_acceptance_raw: Option<f64>,
    heterogeneity_acceptance: Option<f64>,
    heterogeneity_acceptance_raw: Option<f64>,
    band_coverage: Option<f64>,
    failures: usize,
    replications_used: usize,
}

fn cmd_simulate(args: &SimulateArgs) -> Result<Rendered> {
    let grid = make_grid(&args.grid)?;
    let mc = MonteCarloConfig {
        structure: StructureSpec::new(args.structure),
        n: args.n,
        replications: args.replications,
        grid: grid.clone(),
        level: args.infer.level,
        seed: args.infer.seed,
        run_tests: !args.no_tests,
        draws: args.infer.draws,
        order: args.order,
    };
    let report = dgp_sim::run_monte_carlo(&mc)?;

    let mut config =
        RunConfig::new("simulate", &args.grid, &grid, args.out.format).with_infer(&args.infer);
    config.order = Some(args.order);
    config.structure = Some(args.structure);
    config.n = Some(args.n);
    config.replications = Some(args.replications);
    let results = serde_json::to_value(&report).expect("report serialization");
    let csv_rows: Vec<SimulateCsvRow> = report
        .per_tau
        .iter()
        .map(|cell| SimulateCsvRow {
            tau: cell.tau,
            true_value: cell.true_value,
            mean: cell.mean,
            bias: cell.bias,
            sd: cell.sd,
            rmse: cell.rmse,
            significance_acceptance: report.significance_acceptance,
            significance_acceptance_raw: report.significance_acceptance_raw,
            heterogeneity_acceptance: report.heterogeneity_acceptance,
            heterogeneity_acceptance_raw: report.heterogeneity_acceptance_raw,
            band_coverage: report.band_coverage,
            failures: report.failures,
            replications_used: report.replications_used,
        })
        .collect();
    Ok(finish(
        &config,
        results,
        csv_from_rows(&csv_rows)?,
        &args.out,
    ))
}

fn execute(cli: &Cli) -> Result<Rendered> {
    match &cli.command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::Test(args) => cmd_test(args),
        Command::Band(args) => cmd_band(args),
        Command::Bandwidth(args) => cmd_bandwidth(args),
        Command::Simulate(args) => cmd_simulate(args),
    }
}

fn error_json(err: &Error) -> String {
    let report = json!({
        "schema_version": 1,
        "error": {
            "kind": err.kind(),
            "message": err.to_string(),
        },
    });
    serde_json::to_string_pretty(&report).expect("error serialization")
}

/// Parses arguments, runs the requested command, and writes the report.
/// Returns the process exit code: success exactly when no error occurred.
pub fn run_cli() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(rendered) => {
            if let Some(path) = rendered.output {
                if let Err(source) = std::fs::write(&path, &rendered.text) {
                    let err = Error::Io {
                        path: path.display().to_string(),
                        source,
                    };
                    eprintln!("{}", error_json(&err));
                    return ExitCode::FAILURE;
                }
            } else {
                print!("{}", rendered.text);
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{}", error_json(&err));
            ExitCode::FAILURE
        }
    }
}
