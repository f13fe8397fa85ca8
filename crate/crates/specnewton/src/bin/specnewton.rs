//! Command-line front end: synthetic data generation, fair and baseline
//! covariance estimation, and an invariant checker for input datasets.
//!
//! Exit codes: 0 on full success, 1 when any run fails or a check does
//! not pass, 2 on validation/usage errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use specnewton::calculus::{fd_check_gradient, fd_check_hessian};
use specnewton::data::{
    gen_synthetic, load_csv_files, load_csv_grouped, pool_subgroups, preprocess, CenterScope,
    LoadOptions, LoadedData, SynthConfig,
};
use specnewton::error::Error;
use specnewton::experiment::{render_table, run_experiment, ExperimentSpec, InputSource};
use specnewton::fairtme::{fair_objective, fairness_value, FairTMEProblem, Formulation};
use specnewton::tme::{tme_error, tme_fixed_point, Subgroup};

#[derive(Parser)]
#[command(
    name = "specnewton",
    about = "Fair robust covariance estimation via spectrally constrained Newton",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-subgroup dataset as a grouped CSV.
    Synth(SynthArgs),
    /// Solve the fairness-penalized estimator over a weight grid and
    /// compare against the pooled baseline.
    FairTme(FairArgs),
    /// Run the standard pooled estimator and report per-subgroup errors.
    Tme(TmeArgs),
    /// Run the invariant suite against a dataset.
    Check(CheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Ambient dimension.
    #[arg(long, default_value_t = 10)]
    p: usize,
    /// Subgroup sample counts, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "50,100,200,75")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV (columns f0..f{p-1} plus a `group` column).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct InputArgs {
    /// Single CSV containing all subgroups.
    #[arg(long, conflicts_with = "group")]
    data: Option<PathBuf>,
    /// Name (or index, without a header) of the group column in --data.
    #[arg(long, requires = "data")]
    group_col: Option<String>,
    /// One CSV per subgroup; repeat the flag. Labels are file stems.
    #[arg(long)]
    group: Vec<PathBuf>,
    /// Treat the first CSV row as a header.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    header: bool,
    /// Columns to drop before parsing (categorical features etc.).
    #[arg(long)]
    exclude: Vec<String>,
    /// Generate data instead of reading files (uses --p/--sizes/--seed).
    #[arg(long, conflicts_with_all = ["data", "group"])]
    synth: bool,
    #[arg(long, default_value_t = 10)]
    p: usize,
    #[arg(long, value_delimiter = ',', default_value = "50,100,200,75")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct FairArgs {
    #[command(flatten)]
    input: InputArgs,
    /// First penalty weight; repeat to form a grid (paired with --mu2).
    #[arg(long = "mu1", default_values_t = [1.0])]
    mu1: Vec<f64>,
    /// Second penalty weight; repeat to form a grid (paired with --mu1).
    #[arg(long = "mu2", default_values_t = [10.0])]
    mu2: Vec<f64>,
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    /// Initial curvature estimate for the regularization schedule.
    #[arg(long, default_value_t = 1e-3)]
    l0: f64,
    #[arg(long, default_value = "square", value_parser = parse_formulation)]
    formulation: Formulation,
    /// JSON results file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for per-run convergence traces (CSV).
    #[arg(long)]
    trace_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TmeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 20000)]
    max_iter: usize,
    /// Optional JSON output (estimate and per-subgroup errors).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value = "square", value_parser = parse_formulation)]
    formulation: Formulation,
}

fn parse_formulation(s: &str) -> Result<Formulation, String> {
    match s {
        "square" => Ok(Formulation::Square),
        "exp" => Ok(Formulation::Exp),
        other => Err(format!("unknown formulation `{other}` (expected `square` or `exp`)")),
    }
}

fn input_source(input: &InputArgs) -> Result<InputSource, Error> {
    let options = LoadOptions { has_header: input.header, exclude: input.exclude.clone() };
    if input.synth {
        return Ok(InputSource::Synth(SynthConfig::new(input.p, input.sizes.clone(), input.seed)));
    }
    if let Some(path) = &input.data {
        let group_col = input.group_col.clone().ok_or_else(|| {
            Error::Validation("--group-col is required with --data".into())
        })?;
        return Ok(InputSource::CsvGrouped { path: path.clone(), group_col, options });
    }
    if !input.group.is_empty() {
        let files = input
            .group
            .iter()
            .map(|p| {
                let label = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| p.display().to_string());
                (label, p.clone())
            })
            .collect();
        return Ok(InputSource::CsvFiles { files, options });
    }
    Err(Error::Validation(
        "no input: pass --synth, --data with --group-col, or one --group per subgroup".into(),
    ))
}

/// Subgroups for the single-pipeline subcommands (`tme`, `check`):
/// synthetic data as generated, CSV data standardized per the scope.
fn load_subgroups(input: &InputArgs, scope: CenterScope) -> Result<Vec<Subgroup>, Error> {
    match input_source(input)? {
        InputSource::Synth(cfg) => Ok(gen_synthetic(&cfg)?.subgroups),
        InputSource::CsvGrouped { path, group_col, options } => {
            let loaded = load_csv_grouped(&path, &group_col, &options)?;
            report_dropped(&loaded);
            preprocess(&loaded, scope)
        }
        InputSource::CsvFiles { files, options } => {
            let loaded = load_csv_files(&files, &options)?;
            report_dropped(&loaded);
            preprocess(&loaded, scope)
        }
    }
}

fn report_dropped(loaded: &LoadedData) {
    if loaded.dropped_rows > 0 {
        eprintln!("note: dropped {} row(s) with missing values", loaded.dropped_rows);
    }
}

fn cmd_synth(args: &SynthArgs) -> Result<(), Error> {
    let cfg = SynthConfig::new(args.p, args.sizes.clone(), args.seed);
    let data = gen_synthetic(&cfg)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut w = csv::Writer::from_path(&args.out)?;
    let mut header: Vec<String> = (0..args.p).map(|j| format!("f{j}")).collect();
    header.push("group".into());
    w.write_record(&header)?;
    for g in &data.subgroups {
        for i in 0..g.n() {
            let mut rec: Vec<String> = (0..g.p()).map(|j| format!("{:.17e}", g.data[(i, j)])).collect();
            rec.push(g.name.clone());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    println!(
        "wrote {} samples in {} subgroups (p = {}) to {}",
        data.subgroups.iter().map(Subgroup::n).sum::<usize>(),
        data.subgroups.len(),
        args.p,
        args.out.display()
    );
    Ok(())
}

fn cmd_fair(args: &FairArgs) -> Result<bool, Error> {
    if args.mu1.len() != args.mu2.len() {
        return Err(Error::Validation(format!(
            "--mu1 given {} time(s) but --mu2 {} time(s); they pair up",
            args.mu1.len(),
            args.mu2.len()
        )));
    }
    let spec = ExperimentSpec {
        source: input_source(&args.input)?,
        grid: args.mu1.iter().copied().zip(args.mu2.iter().copied()).collect(),
        formulation: args.formulation,
        eps: args.eps,
        max_iter: args.max_iter,
        l0: args.l0,
        out: args.out.clone(),
        trace_dir: args.trace_dir.clone(),
    };
    let results = run_experiment(&spec)?;
    print!("{}", render_table(&results));
    // A fair run "succeeds" only with a passing stationarity certificate.
    let all_ok = results
        .runs
        .iter()
        .all(|r| r.certificate_pass.unwrap_or(true));
    Ok(all_ok)
}

fn cmd_tme(args: &TmeArgs) -> Result<(), Error> {
    let subgroups = load_subgroups(&args.input, CenterScope::Pooled)?;
    let pooled = pool_subgroups(&subgroups, "pooled")?;
    let res = tme_fixed_point(&pooled, args.tol, args.max_iter)?;
    println!(
        "pooled TME: {} iterations, fixed-point residual {:.3e}",
        res.iterations, res.fixed_point_residual
    );
    let mut errors = Vec::new();
    for g in &subgroups {
        let own = tme_fixed_point(g, args.tol, args.max_iter)?;
        let e = tme_error(&res.r, g, own.objective_value)?;
        println!("  error[{}|n={}] = {:.6}", g.name, g.n(), e);
        errors.push((g.name.clone(), e));
    }
    println!("fairness value = {:.6}", fairness_gap(&errors));
    if let Some(out) = &args.out {
        let payload = serde_json::json!({
            "schema": 1,
            "iterations": res.iterations,
            "fixed_point_residual": res.fixed_point_residual,
            "r": matrix_rows(&res.r),
            "tme_errors": errors.iter().map(|(n, e)| serde_json::json!({"subgroup": n, "error": e})).collect::<Vec<_>>(),
            "fairness_value": fairness_gap(&errors),
        });
        std::fs::write(out, format!("{}\n", serde_json::to_string_pretty(&payload)?))?;
    }
    Ok(())
}

fn fairness_gap(errors: &[(String, f64)]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..errors.len() {
        for j in (i + 1)..errors.len() {
            worst = worst.max((errors[i].1 - errors[j].1).abs());
        }
    }
    worst
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn cmd_check(args: &CheckArgs) -> Result<bool, Error> {
    let subgroups = load_subgroups(&args.input, CenterScope::PerSubgroup)?;
    let mut all_ok = true;
    let mut check = |name: &str, outcome: Result<bool, Error>| {
        let (tag, detail) = match outcome {
            Ok(true) => ("PASS", String::new()),
            Ok(false) => {
                all_ok = false;
                ("FAIL", String::new())
            }
            Err(e) => {
                all_ok = false;
                ("FAIL", format!(" ({e})"))
            }
        };
        println!("{tag}  {name}{detail}");
    };

    check("subgroups well formed (finite, n > p)", {
        subgroups.iter().try_for_each(Subgroup::validate).map(|()| true)
    });

    for g in &subgroups {
        check(&format!("TME fixed point for `{}` (residual <= 1e-8)", g.name), {
            tme_fixed_point(g, 1e-10, 20_000).map(|r| r.fixed_point_residual <= 1e-8)
        });
    }

    let problem = FairTMEProblem::new(subgroups.clone(), 1.0, 1.0, args.formulation)?;
    let p = problem.p();
    let r0 = DMatrix::identity(p, p) * 1.1;

    check("TME error scale invariance (<= 1e-10)", {
        let r1 = fairness_value(&r0, &problem.subgroups, &problem.f_star)?;
        let r2 = fairness_value(&(3.0 * &r0), &problem.subgroups, &problem.f_star)?;
        Ok((r1 - r2).abs() <= 1e-10 * (1.0 + r1.abs()))
    });

    let obj = fair_objective(&problem)?;
    check("objective gradient vs finite differences (<= 1e-5)", {
        fd_check_gradient(&obj, &r0, 8).map(|e| e <= 1e-5)
    });
    check("objective Hessian vs finite differences (<= 1e-4)", {
        fd_check_hessian(&obj, &r0, 8).map(|e| e <= 1e-4)
    });

    Ok(all_ok)
}

fn run(cli: &Cli) -> Result<bool, Error> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a).map(|()| true),
        Command::FairTme(a) => cmd_fair(a),
        Command::Tme(a) => cmd_tme(a).map(|()| true),
        Command::Check(a) => cmd_check(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::from(0),
        Ok(false) => ExitCode::from(1),
        Err(e @ (Error::Validation(_) | Error::Parameter(_) | Error::Parse { .. })) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
