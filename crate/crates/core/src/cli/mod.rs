//! The `privci` command line: `synth`, `evaluate` and `benchmark`.

pub mod benchmark;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::data::{discretize, validate_partition, validate_roles, CIConstraint, Config, Dataset, RawTable};
use crate::error::{Error, Result};
use crate::eval::{evaluate, DownstreamTask};
use crate::model::TreeModel;
use crate::pipeline::{synthesize, Method, SynthesisRequest};

pub use benchmark::{run_benchmark, BenchmarkReport, Grid};

/// Environment variable with the benchmark worker count.
pub const WORKERS_ENV: &str = "PRIVCI_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "privci", version, about = "Private synthetic data under a conditional-independence constraint")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Score a synthetic dataset against real data.
    Evaluate(EvaluateArgs),
    /// Run methods over a grid of budgets, folds and seeds.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub delta: f64,
    #[arg(long, default_value = "privci")]
    pub method: Method,
    /// Synthetic row count; defaults to the input size.
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub real: PathBuf,
    #[arg(long)]
    pub synthetic: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    /// Model JSON from `synth`; enables the tree score totals.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report path; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.5,1")]
    pub epsilons: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "mst,privci,prefair")]
    pub methods: Vec<Method>,
    /// Methods `a,b` compared as `m(a) − m(b)`.
    #[arg(long, value_delimiter = ',', default_value = "privci,prefair")]
    pub compare: Vec<Method>,
    #[arg(long, default_value_t = 1e-9)]
    pub delta: f64,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub fold_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Real data and its configuration, discretized.
#[derive(Clone, Debug)]
pub struct Input {
    pub data: Dataset,
    pub config: Config,
}

impl Input {
    pub fn load(input: &Path, config: &Path) -> Result<Self> {
        let config = Config::load(config)?;
        let raw = RawTable::load(input)?;
        let data = discretize(&raw, &config.binning_spec())?;
        Ok(Input { data, config })
    }

    /// The constraint `method` runs under. `mst` tolerates a missing or invalid one.
    pub fn constraint_for(&self, method: Method) -> Result<Option<CIConstraint>> {
        let (roles, ci) = self.config.resolve(self.data.schema())?;
        if method.constrained() {
            return Ok(Some(validate_roles(self.data.schema(), &roles, ci.as_ref())?.constraint));
        }
        validate_partition(self.data.schema(), &roles)?;
        Ok(validate_roles(self.data.schema(), &roles, ci.as_ref()).ok().map(|c| c.constraint))
    }
}

fn write(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let loaded = Input::load(&args.input, &args.config)?;
    let constraint = loaded.constraint_for(args.method)?;
    let out = synthesize(&SynthesisRequest {
        n_out: args.rows.unwrap_or(loaded.data.n()),
        dataset: loaded.data,
        constraint,
        method: args.method,
        epsilon: args.epsilon,
        delta: args.delta,
        seed: args.seed,
    })?;
    create_dir(&args.out)?;
    write(&args.out.join("synthetic.csv"), out.synthetic.to_csv_string()?.as_bytes())?;
    write(&args.out.join("model.json"), out.model.to_json()?.as_bytes())?;
    write(&args.out.join("provenance.json"), out.provenance.to_json()?.as_bytes())?;
    log::info!(
        "{}: tree {:?}, rho {:.6}, wrote {} rows to {}",
        args.method,
        out.tree.edges(),
        out.provenance.rho_spent,
        out.synthetic.n(),
        args.out.display()
    );
    Ok(())
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let loaded = Input::load(&args.real, &args.config)?;
    let schema = loaded.data.schema();
    let synth_raw = RawTable::load(&args.synthetic)?;
    let synth = loaded.config.binning_spec().encode_against(&synth_raw, schema)?;
    let (roles, ci) = loaded.config.resolve(schema)?;
    let checked = validate_roles(schema, &roles, ci.as_ref())?;
    let task = DownstreamTask::from_roles(schema, &roles)?;
    let tree = match &args.model {
        Some(p) => {
            let m = TreeModel::load(p)?;
            if &m.schema != schema {
                return Err(Error::config("model schema does not match the real data"));
            }
            Some(m.tree)
        }
        None => None,
    };
    let report = evaluate(&loaded.data, &synth, &checked.constraint, &task, tree.as_ref(), args.folds, args.seed)?;
    let json = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(p) => write(p, json.as_bytes()),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

/// Worker count from [`WORKERS_ENV`], else the available parallelism.
pub fn worker_count() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::argument(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs the grid and writes `cells.csv`, `comparison.csv` and `report.json`.
/// Returns the number of failed cells.
pub fn cmd_benchmark(args: &BenchmarkArgs) -> Result<usize> {
    let loaded = Input::load(&args.input, &args.config)?;
    let schema = loaded.data.schema();
    let (roles, ci) = loaded.config.resolve(schema)?;
    let checked = validate_roles(schema, &roles, ci.as_ref())?;
    let task = DownstreamTask::from_roles(schema, &roles)?;
    let [a, b] = args.compare[..] else {
        return Err(Error::argument("--compare takes exactly two methods"));
    };
    let grid = Grid {
        epsilons: args.epsilons.clone(),
        folds: args.folds,
        seeds: args.seeds.clone(),
        methods: args.methods.clone(),
        delta: args.delta,
        fold_seed: args.fold_seed,
        rows: args.rows,
        compare: (a, b),
    };
    let report = run_benchmark(&loaded.data, &checked.constraint, &task, &grid, worker_count()?)?;
    create_dir(&args.out)?;
    let mut cells = Vec::new();
    benchmark::write_cells_csv(&report.cells, &mut cells)?;
    write(&args.out.join("cells.csv"), &cells)?;
    let mut cmp = Vec::new();
    benchmark::write_comparison_csv(&report.comparison, grid.compare, &mut cmp)?;
    write(&args.out.join("comparison.csv"), &cmp)?;
    write(&args.out.join("report.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    Ok(report.failures())
}

/// Parses `std::env::args` and runs. Usage errors exit 2, failures 1.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Benchmark(a) => cmd_benchmark(a).and_then(|failed| match failed {
            0 => Ok(()),
            n => Err(Error::Argument(format!("{n} benchmark cells failed"))),
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
