//! `polyflow`: classify polytopes, build charts and extensions, and run flow
//! experiments from the command line.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use polyflow_core::{Error, RunReport};
use sha2::{Digest, Sha256};

use commands::Outcome;

#[derive(Parser, Debug)]
#[command(name = "polyflow", version, about = "Polytopes as manifolds with corners: charts, extensions and flows")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Seed of the sampling RNG.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Sample count for sampled checks.
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Integrator tolerance.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Directory for report.json and CSV outputs.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Record wall time in the report.
    #[arg(long, global = true)]
    pub timing: bool,
}

/// A polytope file (`{"vertices": [...]}`) or a catalog name.
#[derive(Args, Debug, Clone)]
pub struct PolytopeArg {
    pub polytope: String,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Decide simplicity and dump the face lattice.
    Classify {
        #[command(flatten)]
        input: PolytopeArg,
        /// Fail unless the classification matches.
        #[arg(long, value_parser = ["simple", "not-simple"])]
        expect: Option<String>,
    },
    /// Standard chart at a point.
    Chart {
        #[command(flatten)]
        input: PolytopeArg,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        point: Vec<f64>,
    },
    /// Extend face data to the whole polytope.
    Extend {
        #[command(flatten)]
        input: PolytopeArg,
        /// Face dimension of the data (default: facets).
        #[arg(long)]
        ell: Option<usize>,
        /// Restrict this global expression to the faces.
        #[arg(long, conflicts_with = "family", required_unless_present = "family")]
        data: Option<String>,
        /// JSON object mapping face ids to expressions.
        #[arg(long)]
        family: Option<PathBuf>,
    },
    /// Check that a vector field is tangent to every face.
    StratifyCheck {
        #[command(flatten)]
        input: PolytopeArg,
        /// Components separated by `;`.
        #[arg(long)]
        field: String,
        /// Also evaluate the face-dimension criterion at this level.
        #[arg(long)]
        ell: Option<usize>,
    },
    /// Restrict a stratified field to faces and extend it back.
    ExtendField {
        #[command(flatten)]
        input: PolytopeArg,
        #[arg(long)]
        field: String,
        #[arg(long)]
        ell: Option<usize>,
    },
    /// Compatible edge data without a smooth extension on a non-simple polytope.
    Obstruction {
        #[command(flatten)]
        input: PolytopeArg,
    },
    /// Integrate a stratified field.
    Flow {
        #[command(flatten)]
        input: PolytopeArg,
        #[arg(long)]
        field: String,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        start: Vec<f64>,
        #[arg(long, allow_hyphen_values = true, default_value_t = 1.0)]
        time: f64,
    },
    /// Search a composition of flows moving `start` to `target`.
    Reach {
        #[command(flatten)]
        input: PolytopeArg,
        /// One generator per occurrence.
        #[arg(long, required = true)]
        field: Vec<String>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        start: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        target: Vec<f64>,
        #[arg(long, default_value_t = polyflow_core::flows::REACH_BUDGET)]
        budget: usize,
        #[arg(long, default_value_t = polyflow_core::flows::REACH_TOL)]
        residual: f64,
    },
    /// Sampled check of the controllability conditions for a set of generators.
    AuditControl {
        #[command(flatten)]
        input: PolytopeArg,
        #[arg(long)]
        field: Vec<String>,
    },
    /// Run the acceptance battery on the built-in catalog.
    Suite {
        /// Run a single criterion.
        #[arg(long)]
        criterion: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Classify { .. } => "classify",
            Command::Chart { .. } => "chart",
            Command::Extend { .. } => "extend",
            Command::StratifyCheck { .. } => "stratify-check",
            Command::ExtendField { .. } => "extend-field",
            Command::Obstruction { .. } => "obstruction",
            Command::Flow { .. } => "flow",
            Command::Reach { .. } => "reach",
            Command::AuditControl { .. } => "audit-control",
            Command::Suite { .. } => "suite",
        }
    }
}

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn is_usage_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Parse { .. } | Error::UnknownSymbol(_) | Error::InvalidArgument(_) | Error::EmptyInput(_)
    )
}

fn digest(cli: &Cli, inputs: &[String]) -> String {
    let mut h = Sha256::new();
    h.update(format!("{:?}", cli.command).as_bytes());
    h.update(format!("seed={} samples={:?} tol={:?}", cli.global.seed, cli.global.samples, cli.global.tol).as_bytes());
    for s in inputs {
        h.update([0u8]);
        h.update(s.as_bytes());
    }
    format!("{:x}", h.finalize())
}

fn write_outputs(dir: &PathBuf, report: &RunReport, outcome: &Outcome) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), report.to_json() + "\n")?;
    for (name, table) in &outcome.tables {
        let mut w = csv::Writer::from_path(dir.join(name))?;
        w.write_record(&table.header)?;
        for row in &table.rows {
            w.write_record(row)?;
        }
        w.flush()?;
    }
    for (name, text) in &outcome.files {
        std::fs::write(dir.join(name), text)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let started = Instant::now();
    let outcome = match commands::run(&cli.command, &cli.global) {
        Ok(o) => o,
        Err(e) if is_usage_error(&e) => {
            eprintln!("polyflow: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
        Err(e) => Outcome::error(&e),
    };
    let mut report = RunReport::new(
        cli.command.name(),
        digest(&cli, &outcome.inputs),
        cli.global.seed,
        outcome.checks.clone(),
    );
    if let Some(data) = &outcome.data {
        report = report.with_data(data.clone());
    }
    if cli.global.timing {
        report.wall_time_seconds = Some(started.elapsed().as_secs_f64());
    }
    for line in &outcome.lines {
        eprintln!("{line}");
    }
    println!("{}", report.to_json());
    if let Some(dir) = &cli.global.out {
        if let Err(e) = write_outputs(dir, &report, &outcome) {
            eprintln!("polyflow: cannot write outputs to {}: {e}", dir.display());
            return ExitCode::from(EXIT_USAGE);
        }
    }
    if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAIL)
    }
}
