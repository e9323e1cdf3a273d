//! Command-line front end: fit, test, profile, geometry export, simulation.

use clap::{Args, Parser, Subcommand, ValueEnum};
use mmfit::curved::{fit_curved_bisection, fit_curved_newton, CurvedFit};
use mmfit::geometry::{cone_edges, mle_surface_grid, sample_surface};
use mmfit::inference::{dm_profile, test_report, GridChoice, TestReport};
use mmfit::io::{self, Dataset, FitDocument, IoError};
use mmfit::loglinear::{fit_loglinear, FitOptions};
use mmfit::model::{validate_design, DesignMatrix};
use mmfit::numerics::RngStream;
use mmfit::simulation::{run_simulation, SimConfig};
use mmfit::tol;
use mmfit::{ClassifiedError, ErrorClass};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "mmfit",
    version,
    about = "Maximum likelihood fitting and testing of multiplicative multinomial models",
    long_about = "Fits probability vectors constrained to log(pi) = X theta (no intercept), \
                  which together with the sum-to-one requirement form a curved exponential \
                  family. Counts CSV: `label,count` per row, optional `label,count` header. \
                  Design CSV: one row per cell of comma-separated 0/1 entries, optional \
                  header; design JSON: array of arrays."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algorithm {
    /// Outer Newton iteration on the adjustment factor.
    Newton,
    /// Primal bisection on the unnormalized total mass.
    Bisection,
}

#[derive(Args, Clone, Copy)]
struct SolverFlags {
    /// Starting value of the adjustment factor.
    #[arg(long, default_value_t = 1.0)]
    gamma_start: f64,
    /// Inner tolerance on the mean-parameter residual.
    #[arg(long, default_value_t = tol::INNER_TOL)]
    inner_tol: f64,
    /// Outer tolerance on the log normalizing constant.
    #[arg(long, default_value_t = tol::OUTER_TOL)]
    outer_tol: f64,
    /// Inner iteration cap.
    #[arg(long, default_value_t = tol::MAX_INNER_ITER)]
    max_inner: usize,
    /// Outer iteration cap.
    #[arg(long, default_value_t = tol::MAX_OUTER_ITER)]
    max_outer: usize,
}

impl SolverFlags {
    fn options(&self) -> FitOptions {
        FitOptions {
            inner_tol: self.inner_tol,
            max_inner: self.max_inner,
            max_halvings: tol::MAX_HALVINGS,
            outer_tol: self.outer_tol,
            max_outer: self.max_outer,
            gamma_start: self.gamma_start,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit the curved model (and the intermediate log-linear model) to counts.
    Fit {
        /// Counts CSV (`label,count` rows).
        #[arg(long)]
        data: PathBuf,
        /// Design matrix CSV or JSON.
        #[arg(long)]
        design: PathBuf,
        #[arg(long, value_enum, default_value_t = Algorithm::Newton)]
        algorithm: Algorithm,
        /// Output JSON path; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Deviance, score and Wald statistics with p-values and the
    /// adjustment-factor acceptance interval.
    Test {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        design: PathBuf,
        /// Confidence level for the acceptance interval.
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        /// Output JSON path; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Profile the curved-model deviance and scaling factor along the
    /// statistic ray; CSV columns (gamma, d_m, g).
    Profile {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        design: PathBuf,
        /// Number of grid points across the central 90% of the feasible range.
        #[arg(long, default_value_t = 101)]
        grid_points: usize,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        /// Output CSV path; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Export the cone edges and a random sample of the constraint surface
    /// as CSV files `<output>_edges.csv`, `<output>_theta.csv`,
    /// `<output>_tau.csv` (plus `<output>_grid.csv` with --grid-step).
    Geometry {
        #[arg(long)]
        design: PathBuf,
        /// Number of surface samples.
        #[arg(long, default_value_t = 6000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also fit the curved model over a simplex grid with this step.
        #[arg(long)]
        grid_step: Option<f64>,
        /// Output path prefix.
        #[arg(long)]
        output: PathBuf,
    },
    /// Monte Carlo rejection-rate study from a JSON config; writes
    /// `<output>.txt` and `<output>.csv` when --output is given.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output path prefix; table always goes to stdout.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Worker threads (default: available parallelism).
        #[arg(long)]
        threads: Option<usize>,
        /// Run the full study: 40,000 replications at n = 200, 1,000, 5,000.
        #[arg(long)]
        full: bool,
        /// Override the number of replications.
        #[arg(long)]
        replications: Option<usize>,
    },
}

/// Exit code classes; disjoint by error kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Parse = 2,
    Validation = 3,
    Feasibility = 4,
    Convergence = 5,
    SizeGuard = 6,
    ExcessFailures = 7,
    Io = 8,
    Internal = 9,
}

struct CliError {
    class: Class,
    message: String,
}

impl CliError {
    fn new(class: Class, message: impl Into<String>) -> Self {
        Self {
            class,
            message: message.into(),
        }
    }
}

impl<E: ClassifiedError> From<E> for CliError {
    fn from(e: E) -> Self {
        let class = match e.class() {
            ErrorClass::Parse => Class::Parse,
            ErrorClass::Validation => Class::Validation,
            ErrorClass::Feasibility => Class::Feasibility,
            ErrorClass::Convergence => Class::Convergence,
            ErrorClass::SizeGuard => Class::SizeGuard,
            ErrorClass::ExcessFailures => Class::ExcessFailures,
            ErrorClass::Io => Class::Io,
            ErrorClass::Internal => Class::Internal,
        };
        CliError::new(class, e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.class as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit {
            data,
            design,
            algorithm,
            output,
            solver,
        } => cmd_fit(&data, &design, algorithm, output.as_deref(), &solver.options()),
        Command::Test {
            data,
            design,
            level,
            output,
            solver,
        } => cmd_test(&data, &design, level, output.as_deref(), &solver.options()),
        Command::Profile {
            data,
            design,
            grid_points,
            level,
            output,
            solver,
        } => cmd_profile(
            &data,
            &design,
            grid_points,
            level,
            output.as_deref(),
            &solver.options(),
        ),
        Command::Geometry {
            design,
            samples,
            seed,
            grid_step,
            output,
        } => cmd_geometry(&design, samples, seed, grid_step, &output),
        Command::Simulate {
            config,
            output,
            threads,
            full,
            replications,
        } => cmd_simulate(&config, output.as_deref(), threads, full, replications),
    }
}

fn load_inputs(data: &Path, design: &Path) -> Result<(Dataset, DesignMatrix), CliError> {
    let dataset = io::load_counts(data)?;
    let matrix = io::load_design(design)?;
    eprintln!(
        "design: {} cells x {} parameters; counts: {} cells, n = {}",
        matrix.rows(),
        matrix.cols(),
        dataset.y.len(),
        dataset.y.iter().sum::<u64>()
    );
    let dm = validate_design(&matrix)?;
    if dataset.y.len() != dm.rows() {
        return Err(CliError::new(
            Class::Validation,
            format!(
                "counts have {} cells but the design has {} rows",
                dataset.y.len(),
                dm.rows()
            ),
        ));
    }
    if dataset.y.iter().all(|&v| v == 0) {
        return Err(CliError::new(
            Class::Validation,
            "total count is zero; nothing to fit".to_string(),
        ));
    }
    Ok((dataset, dm))
}

fn write_or_print(output: Option<&Path>, text: &str) -> Result<(), CliError> {
    match output {
        Some(path) => std::fs::write(path, text).map_err(|source| {
            IoError::Write {
                path: path.display().to_string(),
                source,
            }
            .into()
        }),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

/// Rounds to six significant digits for human-readable report lines.
fn sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let mag = v.abs().log10().floor() as i32;
    let decimals = (5 - mag).max(0) as usize;
    format!("{v:.decimals$}")
}

fn cmd_fit(
    data: &Path,
    design: &Path,
    algorithm: Algorithm,
    output: Option<&Path>,
    opts: &FitOptions,
) -> Result<(), CliError> {
    let (dataset, dm) = load_inputs(data, design)?;
    let n: u64 = dataset.y.iter().sum();
    let p: Vec<f64> = dataset.y.iter().map(|&v| v as f64 / n as f64).collect();
    let t = dm.matrix().tr_matvec(&p);
    let lin = fit_loglinear(&dm, &t, None, opts)?;
    let fit: CurvedFit = match algorithm {
        Algorithm::Newton => fit_curved_newton(&dm, &dataset.y, opts)?,
        Algorithm::Bisection => fit_curved_bisection(&dm, &dataset.y, opts)?,
    };
    eprintln!(
        "fitted: gamma = {}, alpha = {}, log-likelihood = {}",
        sig6(fit.gamma),
        sig6(fit.alpha),
        sig6(fit.loglik)
    );
    let doc = FitDocument {
        labels: dataset.labels.clone(),
        counts: dataset.y.clone(),
        design: (0..dm.rows()).map(|i| dm.matrix().row(i).to_vec()).collect(),
        n,
        algorithm: match algorithm {
            Algorithm::Newton => "newton".into(),
            Algorithm::Bisection => "bisection".into(),
        },
        loglinear: (&lin).into(),
        curved: (&fit).into(),
    };
    let json = serde_json::to_string_pretty(&doc)
        .map_err(|e| CliError::new(Class::Internal, e.to_string()))?;
    write_or_print(output, &json)
}

fn render_report(rep: &TestReport) -> String {
    let mut out = String::new();
    let line = |name: &str, s: &mmfit::inference::StatEntry| {
        format!(
            "{name:<4} = {:>12}  df = {:<2}  p = {}\n",
            sig6(s.value),
            s.df,
            sig6(s.p_value)
        )
    };
    out.push_str(&line("D_L", &rep.d_l));
    out.push_str(&line("D_M", &rep.d_m));
    out.push_str(&line("L", &rep.l));
    out.push_str(&line("G", &rep.g));
    out.push_str(&format!(
        "gamma = {}  alpha = {}  sd(gamma) = {}\n",
        sig6(rep.gamma),
        sig6(rep.alpha),
        sig6(rep.var_gamma.sqrt())
    ));
    out.push_str(&format!(
        "{:.0}% acceptance interval for gamma: ({}, {})\n",
        rep.level * 100.0,
        sig6(rep.gamma_interval.0),
        sig6(rep.gamma_interval.1)
    ));
    if let Some(w) = &rep.warning {
        out.push_str(&format!("warning: {w}\n"));
    }
    out
}

fn cmd_test(
    data: &Path,
    design: &Path,
    level: f64,
    output: Option<&Path>,
    opts: &FitOptions,
) -> Result<(), CliError> {
    let (dataset, dm) = load_inputs(data, design)?;
    let rep = test_report(&dm, &dataset.y, level, opts)?;
    eprint!("{}", render_report(&rep));
    let json = serde_json::to_string_pretty(&rep)
        .map_err(|e| CliError::new(Class::Internal, e.to_string()))?;
    write_or_print(output, &json)
}

fn cmd_profile(
    data: &Path,
    design: &Path,
    grid_points: usize,
    level: f64,
    output: Option<&Path>,
    opts: &FitOptions,
) -> Result<(), CliError> {
    let (dataset, dm) = load_inputs(data, design)?;
    let n: u64 = dataset.y.iter().sum();
    let fit = fit_curved_newton(&dm, &dataset.y, opts)?;
    let s = dm.matrix().tr_matvec(&fit.pi);
    let profile = dm_profile(&dm, &s, n, GridChoice::Count(grid_points), level, opts)?;

    let mut csv = String::new();
    csv.push_str(&format!("# n,{n}\n"));
    csv.push_str(&format!("# gamma_hat,{}\n", fit.gamma));
    csv.push_str(&format!("# gamma_lower,{}\n", profile.gamma_lower));
    csv.push_str(&format!("# gamma_upper,{}\n", profile.gamma_upper));
    csv.push_str(&format!("# lr_interval_low,{}\n", profile.lr_interval.0));
    csv.push_str(&format!("# lr_interval_high,{}\n", profile.lr_interval.1));
    csv.push_str(&format!("# level,{}\n", profile.level));
    csv.push_str("gamma,d_m,g\n");
    for ((gamma, dm_val), g_val) in profile.gamma.iter().zip(&profile.d_m).zip(&profile.g) {
        csv.push_str(&format!("{gamma},{dm_val},{g_val}\n"));
    }
    for (gamma, message) in &profile.failures {
        csv.push_str(&format!("# failed,{gamma},{message}\n"));
    }
    write_or_print(output, &csv)
}

fn cmd_geometry(
    design: &Path,
    samples: usize,
    seed: u64,
    grid_step: Option<f64>,
    output: &Path,
) -> Result<(), CliError> {
    let matrix = io::load_design(design)?;
    eprintln!(
        "design: {} cells x {} parameters",
        matrix.rows(),
        matrix.cols()
    );
    let dm = validate_design(&matrix)?;
    let edges = cone_edges(&dm)?;
    let k = dm.cols();

    let prefix = output.display();
    let mut edges_csv = String::new();
    edges_csv.push_str(
        &(1..=k)
            .map(|i| format!("u_{i}"))
            .collect::<Vec<_>>()
            .join(","),
    );
    edges_csv.push('\n');
    for j in 0..edges.count() {
        let ray = edges.ray(j);
        edges_csv.push_str(
            &ray.iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        edges_csv.push('\n');
    }
    write_file(&format!("{prefix}_edges.csv"), &edges_csv)?;

    let mut rng = RngStream::new(seed, 0);
    let sample = sample_surface(&dm, &edges, samples, &mut rng)?;
    let mut theta_csv = String::new();
    theta_csv.push_str(
        &(1..=k)
            .map(|i| format!("theta_{i}"))
            .collect::<Vec<_>>()
            .join(","),
    );
    // Points far outside the usual plotting window get flagged so plotting
    // tools can filter on one column.
    theta_csv.push_str(",inlier\n");
    let mut tau_csv = String::new();
    tau_csv.push_str(
        &(1..=k)
            .map(|i| format!("tau_{i}"))
            .collect::<Vec<_>>()
            .join(","),
    );
    tau_csv.push('\n');
    for (theta, tau) in sample.thetas.iter().zip(&sample.taus) {
        let inlier = u8::from(theta.iter().all(|v| v.abs() <= 10.0));
        theta_csv.push_str(
            &theta
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        theta_csv.push_str(&format!(",{inlier}\n"));
        tau_csv.push_str(
            &tau.iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        tau_csv.push('\n');
    }
    write_file(&format!("{prefix}_theta.csv"), &theta_csv)?;
    write_file(&format!("{prefix}_tau.csv"), &tau_csv)?;

    if let Some(step) = grid_step {
        let (points, failures) = mle_surface_grid(&dm, step)?;
        let r = dm.rows();
        let mut grid_csv = String::new();
        let headers: Vec<String> = (1..=r)
            .map(|i| format!("p_{i}"))
            .chain((1..=r).map(|i| format!("pihat_{i}")))
            .chain((1..=k).map(|i| format!("s_{i}")))
            .collect();
        grid_csv.push_str(&headers.join(","));
        grid_csv.push('\n');
        for pt in &points {
            let row: Vec<String> = pt
                .p
                .iter()
                .chain(&pt.pi_hat)
                .chain(&pt.stat)
                .map(ToString::to_string)
                .collect();
            grid_csv.push_str(&row.join(","));
            grid_csv.push('\n');
        }
        for f in &failures {
            grid_csv.push_str(&format!("# failed,{:?},{}\n", f.p, f.message));
        }
        write_file(&format!("{prefix}_grid.csv"), &grid_csv)?;
        eprintln!(
            "grid: {} fitted points, {} failures",
            points.len(),
            failures.len()
        );
    }
    eprintln!(
        "geometry: {} edges, {} surface samples written to {prefix}_*.csv",
        edges.count(),
        samples
    );
    Ok(())
}

fn write_file(path: &str, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| {
        IoError::Write {
            path: path.into(),
            source,
        }
        .into()
    })
}

fn cmd_simulate(
    config: &Path,
    output: Option<&Path>,
    threads: Option<usize>,
    full: bool,
    replications: Option<usize>,
) -> Result<(), CliError> {
    let text = io::read_to_string(config)?;
    let mut cfg: SimConfig = serde_json::from_str(&text).map_err(|e| {
        CliError::from(IoError::Json {
            path: config.display().to_string(),
            message: e.to_string(),
        })
    })?;
    if full {
        cfg.replications = 40_000;
        cfg.sample_sizes = vec![200, 1000, 5000];
    }
    if let Some(reps) = replications {
        cfg.replications = reps;
    }
    let threads =
        threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let result = run_simulation(&cfg, threads)?;
    let table = io::format_sim_table(&result);
    print!("{table}");
    if let Some(prefix) = output {
        let prefix = prefix.display();
        write_file(&format!("{prefix}.txt"), &table)?;
        write_file(&format!("{prefix}.csv"), &io::format_sim_csv(&result))?;
    }
    Ok(())
}
