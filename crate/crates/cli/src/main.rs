//! Command-line front end: fit a Gaussian copula to a CSV with missing
//! cells, impute from a saved model, generate synthetic benchmark data, and
//! run masked-holdout evaluations.

mod sidecar;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use copula_impute::data::{self, ColumnSchema};
use copula_impute::em::{self, EmConfig, UpdateMode};
use copula_impute::error::Error;
use copula_impute::evaluate;
use copula_impute::imputer::{self, SamplingOptions};
use copula_impute::synthetic::{self, MarginalFamily, SyntheticSpec};

#[derive(Parser)]
#[command(
    name = "copula-impute",
    version,
    about = "Gaussian copula model fitting and missing-value imputation for mixed CSV data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the copula correlation and marginals to an incomplete CSV
    Fit(FitArgs),
    /// Impute missing cells of a CSV from a fitted model
    Impute(ImputeArgs),
    /// Generate a synthetic benchmark dataset with an MCAR mask
    Simulate(SimulateArgs),
    /// Mask, fit, impute, and score repeatedly against held-out truth
    Evaluate(EvaluateArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum UpdateModeArg {
    GaussSeidel,
    Jacobi,
}

impl From<UpdateModeArg> for UpdateMode {
    fn from(v: UpdateModeArg) -> Self {
        match v {
            UpdateModeArg::GaussSeidel => UpdateMode::GaussSeidel,
            UpdateModeArg::Jacobi => UpdateMode::Jacobi,
        }
    }
}

#[derive(Args)]
struct EmFlags {
    /// Convergence tolerance on the relative Frobenius change of sigma
    #[arg(long, default_value_t = 0.01)]
    tol: f64,
    /// Maximum EM iterations
    #[arg(long = "max-iter", default_value_t = 50)]
    max_iter: usize,
    /// Ridge added to non-factorable observed blocks
    #[arg(long, default_value_t = 1e-8)]
    ridge: f64,
    /// Ordinal update order within an E-step sweep
    #[arg(long = "update-mode", value_enum, default_value_t = UpdateModeArg::GaussSeidel)]
    update_mode: UpdateModeArg,
    /// Worker threads for the E-step (results do not depend on this)
    #[arg(long, env = "COPULA_IMPUTE_THREADS", default_value_t = 1)]
    threads: usize,
}

impl EmFlags {
    fn config(&self) -> EmConfig {
        EmConfig {
            tol: self.tol,
            max_iter: self.max_iter,
            ridge: self.ridge,
            update_mode: self.update_mode.into(),
            threads: self.threads,
        }
    }
}

#[derive(Args)]
struct SchemaFlags {
    /// Schema file of `column=<name> kind=<continuous|ordinal>` lines
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Columns with at most this many distinct integer values are ordinal
    #[arg(long = "ordinal-threshold", default_value_t = 20)]
    ordinal_threshold: usize,
    /// Additional cell text treated as missing (empty and NA always are)
    #[arg(long = "missing-marker")]
    missing_markers: Vec<String>,
}

impl SchemaFlags {
    fn schema(&self) -> Result<ColumnSchema, Error> {
        let mut schema = match &self.schema {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                ColumnSchema::parse(&text)?
            }
            None => ColumnSchema::default(),
        };
        schema.ordinal_threshold = self.ordinal_threshold;
        schema
            .missing_markers
            .extend(self.missing_markers.iter().cloned());
        Ok(schema)
    }
}

#[derive(Args)]
struct FitArgs {
    /// Input CSV with a header row
    #[arg(long)]
    input: PathBuf,
    /// Where to write the fitted correlation matrix (CSV)
    #[arg(long = "output-sigma")]
    output_sigma: PathBuf,
    /// Where to write the fitted marginals (plain text)
    #[arg(long = "output-marginals")]
    output_marginals: PathBuf,
    #[command(flatten)]
    schema: SchemaFlags,
    #[command(flatten)]
    em: EmFlags,
}

#[derive(Args)]
struct ImputeArgs {
    /// Input CSV with a header row; must match the model's columns
    #[arg(long)]
    input: PathBuf,
    /// Fitted correlation matrix from `fit`
    #[arg(long)]
    sigma: PathBuf,
    /// Fitted marginals from `fit`
    #[arg(long)]
    marginals: PathBuf,
    /// Where to write the completed CSV
    #[arg(long)]
    output: PathBuf,
    /// Number of sampled completions; above 1 also writes one file per draw
    #[arg(long, default_value_t = 1)]
    multiple: usize,
    /// Seed for conditional sampling
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gibbs sweeps per row when sampling observed ordinal blocks
    #[arg(long = "gibbs-sweeps", default_value_t = 20)]
    gibbs_sweeps: usize,
    /// Additional cell text treated as missing (empty and NA always are)
    #[arg(long = "missing-marker")]
    missing_markers: Vec<String>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Rows to generate
    #[arg(long)]
    n: usize,
    /// Columns: one third exponential, one third binary, one third ordinal
    #[arg(long)]
    p: usize,
    /// MCAR missingness ratio in [0, 1)
    #[arg(long)]
    missing: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Levels of the ordinal block
    #[arg(long = "ordinal-levels", default_value_t = 5)]
    ordinal_levels: usize,
    /// Prefix for complete.csv, masked.csv, sigma.csv, cutoffs.csv
    #[arg(long = "out-prefix", default_value = "sim_")]
    out_prefix: String,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Input CSV; cells to be held out must be observed
    #[arg(long)]
    input: PathBuf,
    /// Fraction of observed cells to hold out per repeat
    #[arg(long = "mask-ratio")]
    mask_ratio: f64,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Where to write the per-repeat metric report (CSV)
    #[arg(long)]
    output: PathBuf,
    /// Ground-truth correlation matrix for relative-error reporting
    #[arg(long = "sigma-truth")]
    sigma_truth: Option<PathBuf>,
    #[command(flatten)]
    schema: SchemaFlags,
    #[command(flatten)]
    em: EmFlags,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(args) => run_fit(args),
        Command::Impute(args) => run_impute(args),
        Command::Simulate(args) => run_simulate(args),
        Command::Evaluate(args) => run_evaluate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Numerical { .. } => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn run_fit(args: FitArgs) -> Result<(), Error> {
    let schema = args.schema.schema()?;
    let data = data::read_csv(&args.input, &schema)?;
    let fit = em::fit(&data, &args.em.config())?;
    for w in &fit.diagnostics.warnings {
        eprintln!("warning: {w}");
    }
    sidecar::write_sigma_named(&fit.model.column_names, &fit.model.sigma, &args.output_sigma)?;
    sidecar::write_marginals(&fit.model, &args.output_marginals)?;
    println!(
        "fit: {} rows x {} columns, {} iterations, converged={}, final change {:.2e}",
        data.n_rows(),
        data.n_cols(),
        fit.iterations,
        fit.converged,
        fit.sigma_change_trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn draw_path(output: &Path, index: usize) -> PathBuf {
    let stem = output
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("imputed");
    let ext = output.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    output.with_file_name(format!("{stem}_draw{index}.{ext}"))
}

fn run_impute(args: ImputeArgs) -> Result<(), Error> {
    let model = sidecar::read_model(&args.sigma, &args.marginals)?;
    let mut markers = vec![String::new(), "NA".to_string()];
    markers.extend(args.missing_markers.iter().cloned());
    let data = data::read_csv_with_schema(
        &args.input,
        &model.kinds,
        &model.labels,
        &model.column_names,
        &markers,
    )?;
    let single = imputer::impute(&data, &model)?;
    data::write_csv(&single.completed, &args.output)?;
    if !single.prior_rows.is_empty() {
        eprintln!(
            "warning: {} row(s) had no observed cells and were imputed from the prior",
            single.prior_rows.len()
        );
    }
    if args.multiple > 1 {
        let opts = SamplingOptions {
            gibbs_sweeps: args.gibbs_sweeps,
        };
        let multi = imputer::impute_multiple_with(&data, &model, args.multiple, args.seed, &opts)?;
        for (i, draw) in multi.draws.iter().enumerate() {
            data::write_csv(&draw.completed, &draw_path(&args.output, i + 1))?;
        }
    }
    let imputed = single.imputed_mask.iter().filter(|&&m| m).count();
    println!(
        "impute: filled {imputed} cells in {} rows ({} draw files)",
        data.n_rows(),
        if args.multiple > 1 { args.multiple } else { 0 }
    );
    Ok(())
}

fn run_simulate(args: SimulateArgs) -> Result<(), Error> {
    if args.p < 2 {
        return Err(Error::InvalidArgument("simulate needs p >= 2".into()));
    }
    let third = args.p.div_ceil(3);
    let families: Vec<MarginalFamily> = (0..args.p)
        .map(|j| {
            if j < third {
                MarginalFamily::Exponential { rate: 1.0 }
            } else if j < 2 * third {
                MarginalFamily::Binary
            } else {
                MarginalFamily::Ordinal {
                    levels: args.ordinal_levels,
                    masses: None,
                }
            }
        })
        .collect();
    let sigma = synthetic::random_correlation(args.p, args.seed)?;
    let spec = SyntheticSpec {
        n: args.n,
        families,
        missing_ratio: args.missing,
        seed: args.seed,
    };
    let (complete, truth) = synthetic::generate(&sigma, &spec)?;
    let masked = synthetic::mask_mcar(&complete, args.missing, args.seed.wrapping_add(1))?;

    let path = |suffix: &str| PathBuf::from(format!("{}{suffix}", args.out_prefix));
    data::write_csv(&complete, &path("complete.csv"))?;
    data::write_csv(&masked, &path("masked.csv"))?;
    sidecar::write_sigma_named(complete.column_names(), &sigma, &path("sigma.csv"))?;

    let mut cutoffs_csv = String::from("column,level,cutoff\n");
    for (j, cuts) in truth.cutoffs.iter().enumerate() {
        if let Some(cuts) = cuts {
            for (l, c) in cuts.iter().enumerate() {
                cutoffs_csv.push_str(&format!(
                    "{},{},{}\n",
                    complete.column_names()[j],
                    l + 1,
                    c
                ));
            }
        }
    }
    std::fs::write(path("cutoffs.csv"), cutoffs_csv).map_err(|e| Error::Io {
        path: path("cutoffs.csv"),
        source: e,
    })?;
    println!(
        "simulate: wrote {0}complete.csv, {0}masked.csv, {0}sigma.csv, {0}cutoffs.csv ({1} x {2}, {3:.0}% missing)",
        args.out_prefix,
        args.n,
        args.p,
        args.missing * 100.0
    );
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> Result<(), Error> {
    let schema = args.schema.schema()?;
    let data = data::read_csv(&args.input, &schema)?;
    let truth_sigma = match &args.sigma_truth {
        Some(path) => {
            let (_, sigma) = sidecar::read_sigma(path)?;
            if sigma.dim() != data.n_cols() {
                return Err(Error::SchemaMismatch(
                    "ground-truth sigma dimension does not match the data".into(),
                ));
            }
            Some(sigma)
        }
        None => None,
    };
    let outcome = evaluate::holdout_experiment(
        &data,
        args.mask_ratio,
        args.repeats,
        args.seed,
        &args.em.config(),
        truth_sigma.as_ref(),
    )?;
    for f in &outcome.failures {
        eprintln!("warning: repeat {} failed: {}", f.repeat, f.message);
    }
    if outcome.reports.is_empty() {
        return Err(Error::InvalidArgument(
            "every evaluation repeat failed".into(),
        ));
    }
    std::fs::write(&args.output, evaluate::render_report_csv(&outcome.reports)).map_err(|e| {
        Error::Io {
            path: args.output.clone(),
            source: e,
        }
    })?;
    print!(
        "{}",
        evaluate::render_summary_text(&evaluate::summarize(&outcome.reports))
    );
    Ok(())
}
