use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dfrdd::Result;
use dfrdd_cli::{compare, exit_code, run, verify, Overrides, RunConfig, VerifyKind};

#[derive(Parser)]
#[command(name = "dfrdd", version, about = "Deep Fourier residual training on overlapping box covers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a catalog case (or run a verification with --verify).
    Run(RunArgs),
    /// Tabulate final losses and errors of completed runs as CSV.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Verify {
    LshapeXi,
    Partition,
    Gradcheck,
}

#[derive(Args)]
struct RunArgs {
    /// case1..case5, case4-reference, case5-reference or custom.
    #[arg(long)]
    case: Option<String>,
    /// Start from a config_resolved.json; other flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Training iterations; for refining cases, iterations after the last refinement.
    #[arg(long)]
    iterations: Option<usize>,
    /// Iterations per refinement level.
    #[arg(long)]
    level_iterations: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    max_ref: Option<usize>,
    /// Mode counts, e.g. 20 or 20,10.
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<usize>>,
    /// Training cells per axis, e.g. 500 or 100,100.
    #[arg(long, value_delimiter = ',')]
    quad_points: Option<Vec<usize>>,
    #[arg(long)]
    ridge: Option<f64>,
    /// Validation loss cadence (0: last row only).
    #[arg(long)]
    val_every: Option<usize>,
    /// Error cadence (0: last row only).
    #[arg(long)]
    err_every: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    verify: Option<Verify>,
}

fn run_command(a: RunArgs) -> Result<()> {
    if let Some(v) = a.verify {
        let kind = match v {
            Verify::LshapeXi => VerifyKind::LshapeXi,
            Verify::Partition => VerifyKind::Partition,
            Verify::Gradcheck => VerifyKind::Gradcheck,
        };
        let out = a.out.unwrap_or_else(|| "dfrdd-out".into());
        let report = verify(kind, a.case.as_deref(), a.seed.unwrap_or(1), &out)?;
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    let base = match &a.config {
        Some(p) => Some(serde_json::from_str::<RunConfig>(&std::fs::read_to_string(p)?)?),
        None => None,
    };
    let overrides = Overrides {
        case: a.case,
        seed: a.seed,
        lr: a.lr,
        iterations: a.iterations,
        level_iterations: a.level_iterations,
        tau: a.tau,
        max_ref: a.max_ref,
        modes: a.modes,
        quad_points: a.quad_points,
        ridge: a.ridge,
        val_every: a.val_every,
        err_every: a.err_every,
        out: a.out,
    };
    let cfg = RunConfig::resolve(base, overrides)?;
    let s = run(&cfg)?;
    println!(
        "{} seed {}: {} rows, {} subdomains, {} modes, loss {:.6e}, error {:.6}%",
        s.case, s.seed, s.rows, s.subdomains, s.modes, s.final_train_loss, s.final_rel_h1_error_pct
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run_command(a),
        Command::Compare { runs, out } => compare(&runs).and_then(|table| match out {
            Some(p) => std::fs::write(p, table).map_err(Into::into),
            None => {
                print!("{table}");
                Ok(())
            }
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
