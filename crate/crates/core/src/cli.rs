//! Command-line front end. Every stage reads and writes plain files in a
//! working directory, so the pipeline can be resumed or inspected between
//! steps.
//!
//! Exit codes: 0 success, 1 domain failure (infeasible, invalid solution,
//! bad input file), 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::evaluation::{score_csv, total_score, validate_solution, Placement, DEFAULT_TOL};
use crate::forecast::{
    forecast_demand, parse_yearly_csv, tune_kappa, yearly_csv, ForecastMeta, KappaGrid, SmoothingParam,
    DEFAULT_KAPPA_GRID,
};
use crate::grid::{distance_matrix, DemandHistory, GridSpec, InfrastructureState, DEMAND_HEADER_PREFIX};
use crate::heatmap::render_pgm;
use crate::optimizer::{
    assignment_csv, parse_assignment_csv, parse_solution_csv, solution_csv, solve_multi_year, summary_line,
    CostParams, PlacementModel, SolveOptions,
};
use crate::synth::{generate_instance, SynthConfig};

pub const HISTORY_FILE: &str = "demand_history.csv";
pub const INFRA_FILE: &str = "infrastructure.csv";
pub const TRUTH_FILE: &str = "ground_truth.csv";
pub const FORECAST_FILE: &str = "forecast.csv";
pub const META_FILE: &str = "forecast_meta.txt";
pub const SOLUTION_FILE: &str = "solution.csv";
pub const ASSIGNMENT_FILE: &str = "assignment.csv";
pub const SCORE_FILE: &str = "score.csv";
pub const HEATMAP_FILE: &str = "heatmap.pgm";

#[derive(Debug, Parser)]
#[command(name = "evplace", version, about = "EV charging demand forecasting and charger placement")]
pub struct Cli {
    /// Directory for all outputs (and default directory for inputs).
    #[arg(short = 'o', long, global = true, default_value = ".")]
    pub output_dir: PathBuf,
    /// Directory holding the input files (default: the output directory).
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: Option<u16>,
    /// Evaluate branch-and-bound nodes strictly one at a time.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Seed for the instance generator.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with known future demand.
    Generate(GenerateArgs),
    /// Tune the smoothing exponent and forecast future demand.
    Forecast(ForecastArgs),
    /// Place chargers for every forecast year.
    Optimize(OptimizeArgs),
    /// Validate a placement and score it.
    Evaluate(EvaluateArgs),
    /// Render a demand grid as a PGM image.
    Heatmap(HeatmapArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Grid side length.
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u32).range(1..=4096))]
    pub grid: u32,
    /// Number of supply points.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(1..))]
    pub supply: u32,
    #[arg(long, default_value_t = 2010)]
    pub first_year: i32,
    #[arg(long, default_value_t = 9, value_parser = clap::value_parser!(u32).range(1..=200))]
    pub history_years: u32,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(0..=200))]
    pub future_years: u32,
    /// Spatial smoothness of the true demand field.
    #[arg(long, default_value_t = 4.7)]
    pub kappa: f64,
    /// Noise standard deviation relative to the demand scale.
    #[arg(long, default_value_t = 0.002)]
    pub noise: f64,
    /// Parking slots per supply point, `lo:hi`.
    #[arg(long, default_value = "8:24")]
    pub slots: String,
    /// Share of final-history-year local demand covered by existing chargers.
    #[arg(long, default_value_t = 0.6)]
    pub preexisting: f64,
    /// Use multiplicative lognormal noise instead of additive noise.
    #[arg(long)]
    pub model_mismatch: bool,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    /// Use this smoothing exponent instead of tuning it.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Tuning grid, `start:stop:step`.
    #[arg(long, default_value_t = DEFAULT_KAPPA_GRID.to_string())]
    pub kappa_grid: String,
    /// Number of years to forecast after the last history year.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(1..=100))]
    pub years: u32,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    /// Demand file to place against (default: forecast.csv in the data directory).
    #[arg(long)]
    pub demand: Option<PathBuf>,
    /// Relative optimality gap at which the search stops.
    #[arg(long, default_value_t = 1e-4)]
    pub gap_tol: f64,
    /// Time limit per year, in seconds.
    #[arg(long, default_value_t = 600.0)]
    pub time_limit: f64,
    /// Open nodes kept before the search switches to depth-first.
    #[arg(long, default_value_t = 1_000_000)]
    pub node_budget: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Ground-truth file (default: ground_truth.csv in the data directory, if present).
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    /// Score without ground truth even if a file is present.
    #[arg(long, conflicts_with = "ground_truth")]
    pub no_ground_truth: bool,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    /// Demand history, forecast or ground-truth file (default: demand_history.csv).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Year column to render (default: the last one).
    #[arg(long)]
    pub year: Option<i32>,
    /// Overlay supply points from infrastructure.csv.
    #[arg(long)]
    pub mark_supply: bool,
    /// Output file name inside the output directory.
    #[arg(long, default_value = HEATMAP_FILE)]
    pub out: String,
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Usage(String),
    Domain(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::InvalidGrid(_) => Failure::Usage(e.to_string()),
            other => Failure::Domain(other.to_string()),
        }
    }
}

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Domain(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> std::result::Result<(), Failure> {
    if let Some(n) = cli.threads {
        // Ignored if a pool already exists, e.g. when called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global();
    }
    std::fs::create_dir_all(&cli.output_dir).map_err(|e| Failure::Domain(Error::io(&cli.output_dir, e).to_string()))?;
    match &cli.command {
        Command::Generate(a) => generate(cli, a),
        Command::Forecast(a) => forecast(cli, a),
        Command::Optimize(a) => optimize(cli, a),
        Command::Evaluate(a) => evaluate(cli, a),
        Command::Heatmap(a) => heatmap(cli, a),
    }
}

fn data_dir(cli: &Cli) -> &Path {
    cli.data_dir.as_deref().unwrap_or(&cli.output_dir)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parse errors are reported with the file they came from.
fn in_file<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { line, cause } => Error::Parse {
            line,
            cause: format!("{}: {cause}", path.display()),
        },
        other => other,
    })
}

fn usage(m: impl Into<String>) -> Failure {
    Failure::Usage(m.into())
}

fn parse_range(s: &str) -> std::result::Result<(u32, u32), Failure> {
    let (a, b) = s.split_once(':').ok_or_else(|| usage(format!("expected lo:hi, got `{s}`")))?;
    let lo = a.trim().parse().map_err(|_| usage(format!("bad lower bound in `{s}`")))?;
    let hi = b.trim().parse().map_err(|_| usage(format!("bad upper bound in `{s}`")))?;
    Ok((lo, hi))
}

fn generate(cli: &Cli, a: &GenerateArgs) -> std::result::Result<(), Failure> {
    let grid = GridSpec::square(a.grid as usize)?;
    let mut cfg = SynthConfig::new(cli.seed, grid, a.supply as usize);
    cfg.first_year = a.first_year;
    cfg.history_years = a.history_years as usize;
    cfg.future_years = a.future_years as usize;
    cfg.base_kappa = a.kappa;
    cfg.noise_sigma = a.noise;
    cfg.slot_range = parse_range(&a.slots)?;
    cfg.preexisting_fraction = a.preexisting;
    cfg.model_mismatch = a.model_mismatch;
    let inst = generate_instance(&cfg)?;
    let dir = &cli.output_dir;
    write(&dir.join(HISTORY_FILE), inst.history.to_csv())?;
    write(&dir.join(INFRA_FILE), inst.infrastructure.to_csv())?;
    write(&dir.join(TRUTH_FILE), yearly_csv(&inst.future_years, &inst.ground_truth))?;
    println!(
        "generated {}x{} grid, {} supply points, history {}-{}, truth {:?}",
        grid.width(),
        grid.height(),
        inst.infrastructure.len(),
        inst.history.first_year(),
        inst.history.last_year(),
        inst.future_years
    );
    Ok(())
}

fn forecast(cli: &Cli, a: &ForecastArgs) -> std::result::Result<(), Failure> {
    let fixed = a.kappa.map(SmoothingParam::new).transpose()?;
    let kgrid = KappaGrid::parse(&a.kappa_grid)?;
    let dir = data_dir(cli);
    let path = dir.join(HISTORY_FILE);
    let history = in_file(&path, DemandHistory::parse_csv(&read(&path)?))?;
    let (kappa, grid_label) = match fixed {
        Some(k) => (k, "fixed".to_string()),
        None => (tune_kappa(&history, &kgrid.values())?.best, kgrid.to_string()),
    };
    let last = history.last_year();
    let years: Vec<i32> = (1..=a.years as i32).map(|k| last + k).collect();
    let fc = forecast_demand(&history, kappa, &years)?;
    let meta = ForecastMeta {
        grid_width: fc.grid.width(),
        grid_height: fc.grid.height(),
        kappa_used: fc.kappa_used,
        holdout_mse: fc.holdout_mse,
        kappa_grid: grid_label,
    };
    write(&cli.output_dir.join(FORECAST_FILE), fc.to_csv())?;
    write(&cli.output_dir.join(META_FILE), meta.to_text())?;
    match fc.holdout_mse {
        Some(m) => println!("kappa={} holdout_mse={m:e}", fc.kappa_used),
        None => println!("kappa={} holdout_mse=unavailable", fc.kappa_used),
    }
    Ok(())
}

/// Grid from the forecast metadata if present, else from the demand history.
fn load_grid(dir: &Path) -> Result<GridSpec> {
    let meta = dir.join(META_FILE);
    if meta.exists() {
        return in_file(&meta, ForecastMeta::parse(&read(&meta)?))?.grid();
    }
    let hist = dir.join(HISTORY_FILE);
    Ok(in_file(&hist, DemandHistory::parse_csv(&read(&hist)?))?.grid())
}

fn load_infra(dir: &Path) -> Result<InfrastructureState> {
    let path = dir.join(INFRA_FILE);
    in_file(&path, InfrastructureState::parse_csv(&read(&path)?))
}

fn columns(values: &[Vec<f64>], k: usize) -> Vec<f64> {
    values.iter().map(|r| r[k]).collect()
}

fn optimize(cli: &Cli, a: &OptimizeArgs) -> std::result::Result<(), Failure> {
    if !(a.gap_tol > 0.0 && a.gap_tol.is_finite()) {
        return Err(usage("--gap-tol must be positive"));
    }
    if !(a.time_limit > 0.0 && a.time_limit.is_finite()) {
        return Err(usage("--time-limit must be positive"));
    }
    let dir = data_dir(cli);
    let grid = load_grid(dir)?;
    let infra = load_infra(dir)?;
    let path = a.demand.clone().unwrap_or_else(|| dir.join(FORECAST_FILE));
    let (years, values) = in_file(&path, parse_yearly_csv(&read(&path)?, grid.cell_count()))?;
    let maps: Vec<Vec<f64>> = (0..years.len()).map(|k| columns(&values, k)).collect();
    let options = SolveOptions {
        gap_tol: a.gap_tol,
        time_limit: Duration::from_secs_f64(a.time_limit),
        deterministic: cli.deterministic,
        node_budget: a.node_budget,
    };
    let d = distance_matrix(grid, &infra);
    let sols = solve_multi_year(&d, &years, &maps, &infra, CostParams::default(), &options)?;
    write(&cli.output_dir.join(SOLUTION_FILE), solution_csv(&years, &sols))?;
    write(&cli.output_dir.join(ASSIGNMENT_FILE), assignment_csv(&years, &sols))?;
    for (y, s) in years.iter().zip(&sols) {
        println!("{}", summary_line(*y, s));
    }
    Ok(())
}

fn evaluate(cli: &Cli, a: &EvaluateArgs) -> std::result::Result<(), Failure> {
    let dir = data_dir(cli);
    let grid = load_grid(dir)?;
    let infra = load_infra(dir)?;
    let fpath = dir.join(FORECAST_FILE);
    let (years, predicted) = in_file(&fpath, parse_yearly_csv(&read(&fpath)?, grid.cell_count()))?;
    let spath = dir.join(SOLUTION_FILE);
    let counts = in_file(&spath, parse_solution_csv(&read(&spath)?, infra.len()))?;
    let apath = dir.join(ASSIGNMENT_FILE);
    let flows = in_file(&apath, parse_assignment_csv(&read(&apath)?))?;
    let truth_path = match (&a.ground_truth, a.no_ground_truth) {
        (_, true) => None,
        (Some(p), _) => Some(p.clone()),
        (None, false) => Some(dir.join(TRUTH_FILE)).filter(|p| p.exists()),
    };
    let truth = match &truth_path {
        Some(p) => Some(in_file(p, parse_yearly_csv(&read(p)?, grid.cell_count()))?),
        None => None,
    };

    let d = distance_matrix(grid, &infra);
    let mut state = infra.clone();
    let mut rows = Vec::new();
    let mut failed = false;
    for (k, &year) in years.iter().enumerate() {
        let c = counts
            .iter()
            .find(|c| c.year == year)
            .ok_or_else(|| Failure::Domain(format!("{}: no counts for year {year}", spath.display())))?;
        let assignment = flows
            .iter()
            .find(|(y, _)| *y == year)
            .map(|(_, v)| v.clone())
            .unwrap_or_default();
        let label = |e| Error::Year {
            year,
            source: Box::new(e),
        };
        let model = PlacementModel::new(d.clone(), columns(&predicted, k), state.clone(), CostParams::default())
            .map_err(label)?;
        let plan = Placement {
            n_scs: c.n_scs.clone(),
            n_fcs: c.n_fcs.clone(),
            assignment,
        };
        let report = validate_solution(&model, &plan, DEFAULT_TOL).map_err(label)?;
        for v in &report.violations {
            eprintln!("year {year}: {v}");
        }
        failed |= !report.passed;
        let actual = truth.as_ref().and_then(|(ty, tv)| ty.iter().position(|y| *y == year).map(|t| columns(tv, t)));
        let b = total_score(&plan, &model, actual.as_deref()).map_err(label)?;
        println!(
            "year {year}: valid={} customer_dissatisfaction={} demand_mismatch={} infrastructure={} total={}",
            report.passed,
            b.customer_dissatisfaction,
            if b.mismatch_available { b.demand_mismatch.to_string() } else { "unavailable".into() },
            b.infrastructure,
            b.total
        );
        rows.push((year, b));
        // The next year builds on these counts when they are usable.
        let ok = |v: &[i64]| v.iter().all(|&x| x >= 0 && x <= u32::MAX as i64);
        if ok(&plan.n_scs) && ok(&plan.n_fcs) {
            let s: Vec<u32> = plan.n_scs.iter().map(|&x| x as u32).collect();
            let f: Vec<u32> = plan.n_fcs.iter().map(|&x| x as u32).collect();
            if let Ok(next) = state.with_counts(&s, &f, Some(year)) {
                state = next;
            }
        }
    }
    write(&cli.output_dir.join(SCORE_FILE), score_csv(&rows))?;
    if failed {
        return Err(Failure::Domain("solution violates constraints".into()));
    }
    Ok(())
}

fn heatmap(cli: &Cli, a: &HeatmapArgs) -> std::result::Result<(), Failure> {
    let dir = data_dir(cli);
    let path = a.input.clone().unwrap_or_else(|| dir.join(HISTORY_FILE));
    let text = read(&path)?;
    let first = text.lines().find(|l| !l.trim().is_empty() && !l.starts_with('#')).unwrap_or("");
    let (grid, years, values) = if first.starts_with(DEMAND_HEADER_PREFIX) {
        let h = in_file(&path, DemandHistory::parse_csv(&text))?;
        (h.grid(), h.years().to_vec(), h.values().to_vec())
    } else {
        let grid = load_grid(dir)?;
        let (y, v) = in_file(&path, parse_yearly_csv(&text, grid.cell_count()))?;
        (grid, y, v)
    };
    let k = match a.year {
        Some(y) => years
            .iter()
            .position(|&t| t == y)
            .ok_or_else(|| usage(format!("year {y} not in {}", path.display())))?,
        None => years.len().checked_sub(1).ok_or_else(|| Failure::Domain("no year columns".into()))?,
    };
    let marks: Vec<(f64, f64)> = if a.mark_supply {
        load_infra(dir)?.supply_points().iter().map(|s| (s.x, s.y)).collect()
    } else {
        Vec::new()
    };
    let img = render_pgm(grid, &columns(&values, k), &marks)?;
    let out = cli.output_dir.join(&a.out);
    write(&out, img)?;
    println!("wrote {} ({}x{}, year {})", out.display(), grid.width(), grid.height(), years[k]);
    Ok(())
}
