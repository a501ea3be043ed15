//! `dtb`: plan, run, verify and sweep deep temporal blocking configurations.
//!
//! Exit status: 0 success, 1 mismatch or I/O failure, 2 infeasible plan,
//! 64 usage error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dtb_core::DtbError;

#[derive(Parser, Debug)]
#[command(name = "dtb", version, about = "Deep temporal blocking for the 2D Jacobi 5-point stencil")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run engine and reference on the same grid and compare bitwise.
    Verify(RunArgs),
    /// Run the engine and emit a CSV/JSON record with timing and traffic.
    Run(RunArgs),
    /// Print the tiling plan and sub-tile partition as JSON without executing it.
    Plan(DomainArgs),
    /// Cross product over depths, devices and domain sizes.
    Sweep(SweepArgs),
    /// List the device presets.
    Presets(TableArgs),
    /// Scratchpad footprint of the reference schemes next to a planned run.
    Footprints(PlanArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Args, Debug, Clone)]
struct WeightArgs {
    /// Diffusive weights with center 1 - 4*alpha.
    #[arg(long, conflicts_with = "weights")]
    alpha: Option<f64>,
    /// Explicit weights w,e,s,c,n.
    #[arg(long, value_delimiter = ',', num_args = 1, allow_negative_numbers = true)]
    weights: Option<Vec<f64>>,
}

#[derive(Args, Debug, Clone)]
struct DeviceArgs {
    /// Device preset name.
    #[arg(long, default_value = "a100")]
    device: String,
    /// Preset file replacing the built-in table.
    #[arg(long)]
    presets: Option<PathBuf>,
    /// Per-worker scratchpad bytes; defines a custom device.
    #[arg(long, requires = "workers")]
    capacity: Option<u64>,
    /// Worker count; overrides the preset's.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct DomainArgs {
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    /// Temporal blocking depth.
    #[arg(long = "t")]
    depth: usize,
    /// Fixed interior tile size WxH instead of the largest feasible one.
    #[arg(long, value_parser = parse_dims)]
    tile: Option<(usize, usize)>,
    #[command(flatten)]
    device: DeviceArgs,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    domain: DomainArgs,
    /// Total time steps, a multiple of --t. Defaults to --t.
    #[arg(long)]
    steps: Option<usize>,
    #[command(flatten)]
    weights: WeightArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Physical threads; defaults to the available parallelism.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value_t = 4)]
    ilp: usize,
    /// Centered valid region WxH used for reporting and comparison.
    #[arg(long, value_parser = parse_dims)]
    pruned: Option<(usize, usize)>,
    /// Also run the reference and compare (always on for verify).
    #[arg(long)]
    check: bool,
    /// Initial grid file instead of a random one.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Write the resulting grid here.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Args, Debug)]
struct PlanArgs {
    #[command(flatten)]
    domain: DomainArgs,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Depths to sweep, comma separated.
    #[arg(long = "t", value_delimiter = ',', required = true, num_args = 1)]
    depths: Vec<usize>,
    /// Preset names, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "a100")]
    devices: Vec<String>,
    /// Domain sizes WxH, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_dims, default_value = "512x512")]
    sizes: Vec<(usize, usize)>,
    /// Time blocks per configuration; total steps = blocks * T.
    #[arg(long, default_value_t = 1)]
    blocks: usize,
    #[arg(long)]
    presets: Option<PathBuf>,
    #[command(flatten)]
    weights: WeightArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value_t = 4)]
    ilp: usize,
    /// Compare every configuration against the reference.
    #[arg(long)]
    check: bool,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Args, Debug)]
struct TableArgs {
    #[arg(long)]
    presets: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X', '×'])
        .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(w)?, parse(h)?))
}

const EXIT_FAILURE: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_USAGE: u8 = 64;

fn exit_code(err: &DtbError) -> u8 {
    match err {
        DtbError::Infeasible { .. } | DtbError::CapacityExceeded { .. } => EXIT_INFEASIBLE,
        DtbError::InvalidArgument(_) | DtbError::Range(_) | DtbError::Parse(_) | DtbError::Aliasing(_) => {
            EXIT_USAGE
        }
        DtbError::Io(_) => EXIT_FAILURE,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::Verify(args) => commands::verify(&args),
        Command::Run(args) => commands::run(&args),
        Command::Plan(args) => commands::plan(&args),
        Command::Sweep(args) => commands::sweep(&args),
        Command::Presets(args) => commands::presets(&args),
        Command::Footprints(args) => commands::footprints(&args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        // downstream closed the pipe, e.g. `dtb plan ... | head`
        Err(DtbError::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dtb: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
