//! `layercheck`: analyses of layered measurement and attestation systems.

mod commands;
mod report;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use report::{InputError, Report, FINDINGS, OK, USAGE};

#[derive(Parser)]
#[command(
    name = "layercheck",
    version,
    about = "Check measurement orderings and bundling strategies"
)]
struct Cli {
    /// System document (JSON).
    #[arg(long, short, global = true)]
    system: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text, global = true)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RelaxFlag {
    PriorMeas,
    FreshMeas,
    BottomUp,
}

#[derive(Subcommand)]
pub enum Command {
    /// Validate the system and, optionally, executions against it.
    Validate { executions: Vec<PathBuf> },
    /// Layered dependency sets of an object.
    Depths {
        object: String,
        /// Deepest level to print; by default, until the set is empty.
        #[arg(long)]
        max: Option<usize>,
    },
    /// Validate an execution and report its measurement and quote outputs.
    CheckExec { execution: PathBuf },
    /// Whether an execution admits a specification.
    Admits { spec: PathBuf, execution: PathBuf },
    /// Recent-or-deep classification of the avoidances of an execution.
    Classify {
        execution: PathBuf,
        /// Classify only this measurement event.
        #[arg(long)]
        event: Option<String>,
    },
    /// Extract the measurement specification a quote bundle implies.
    BundleExtract { bundle: PathBuf },
    /// Check a bundle against the bundling strategy, and optionally the
    /// extends of an execution that produced it.
    BundleCheck {
        bundle: PathBuf,
        #[arg(long)]
        execution: Option<PathBuf>,
    },
    /// Check the prior-measurement and fresh-measurement assumptions.
    Assumptions { execution: PathBuf },
    /// Joint check of the ordering and bundling strategies.
    Joint {
        execution: PathBuf,
        bundle: PathBuf,
        /// Specification to compare against instead of the bundle's core.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Keep attestation-start orderings in the core.
        #[arg(long)]
        keep_att_start: bool,
        #[arg(long, value_enum, value_delimiter = ',')]
        relax: Vec<RelaxFlag>,
    },
    /// Exhaustively explore adversary interleavings of a base poset.
    Explore {
        /// Specification (recent-or-deep) or scaffold execution (joint).
        #[arg(long)]
        base: PathBuf,
        /// Check the joint guarantee for this bundle instead.
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long, requires = "bundle")]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        max_adv: usize,
        /// Objects the adversary may touch (default: all but rtm).
        #[arg(long, value_delimiter = ',')]
        objects: Vec<String>,
        #[arg(long)]
        no_repairs: bool,
        #[arg(long, value_enum, value_delimiter = ',')]
        relax: Vec<RelaxFlag>,
        #[arg(long)]
        max_execs: Option<u64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Graphviz rendering of the system, or of an execution.
    ExportDot {
        #[arg(long)]
        execution: Option<PathBuf>,
        /// Do not star avoidances or box witness corruptions.
        #[arg(long)]
        plain: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(system) = cli.system.as_deref() else {
        eprintln!("error: --system is required");
        return ExitCode::from(USAGE);
    };
    let result: Result<Report, InputError> = commands::run(system, cli.command);
    match result {
        Ok(report) => {
            let out = match cli.format {
                Format::Text => report.render_text(),
                Format::Json => report.render_json() + "\n",
            };
            let _ = std::io::stdout().write_all(out.as_bytes());
            ExitCode::from(if report.findings { FINDINGS } else { OK })
        }
        Err(InputError(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(USAGE)
        }
    }
}
