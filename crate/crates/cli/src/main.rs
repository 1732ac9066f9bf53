use std::path::PathBuf;

use clap::{Parser, Subcommand};

use hawk_cli::ablate::{self, AblateArgs};
use hawk_cli::commands::{
    self, Ctx, EvalArgs, GenScheduleArgs, InferArgs, PrepareArgs, SimulateArgs, SyncSimArgs,
    TrainArgs,
};

#[derive(Parser)]
#[command(
    name = "hawk",
    version,
    about = "Synthetic NALM experiments: balanced schedules, trace simulation, \
             differential recognition, sync simulation, metrics",
    propagate_version = true
)]
struct Cli {
    /// Experiment configuration JSON; built-in defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed override (also reseeds schedule generation).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a balanced Gray-code switching schedule.
    GenSchedule(GenScheduleArgs),
    /// Execute a schedule into a labeled aggregate-current trace.
    Simulate(SimulateArgs),
    /// Harvest and filter training samples from a labeled trace.
    Prepare(PrepareArgs),
    /// Train the event classifier and calibrate voting thresholds.
    Train(TrainArgs),
    /// Stream a trace through the classifier and voting stage.
    Infer(InferArgs),
    /// Score a report stream against trace labels.
    Eval(EvalArgs),
    /// Monte-Carlo comparison of SPT and the TSF-style baseline.
    SyncSim(SyncSimArgs),
    /// Parameter sweeps (differential interval, training balance).
    Ablate(AblateArgs),
}

fn main() {
    let cli = Cli::parse();
    init_thread_pool();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

/// HAWK_THREADS caps rayon's worker count for the whole process.
fn init_thread_pool() {
    let Ok(raw) = std::env::var("HAWK_THREADS") else {
        return;
    };
    match raw.parse::<usize>() {
        Ok(n) if n > 0 => {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
        _ => eprintln!("warning: ignoring invalid HAWK_THREADS value {raw:?}"),
    }
}

fn run(cli: Cli) -> hawk_core::Result<()> {
    let ctx = Ctx::new(cli.config.as_deref(), cli.seed, cli.out.as_deref())?;
    match &cli.command {
        Command::GenSchedule(a) => commands::gen_schedule(&ctx, a),
        Command::Simulate(a) => commands::simulate(&ctx, a),
        Command::Prepare(a) => commands::prepare(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Infer(a) => commands::infer(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::SyncSim(a) => commands::sync_sim(&ctx, a),
        Command::Ablate(a) => ablate::ablate(&ctx, a),
    }
}
