use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gradshift_cli::commands::{self, BoundArgs, DiscArgs, GenerateArgs, Lemma1Args, SeqradArgs, SweepArgs, W1Args};
use gradshift_cli::error::{CliError, CliResult};
use gradshift_cli::experiment::{run_experiment, RunOptions};
use gradshift_cli::io::sorted_json;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "gradshift", version, about = "Gradual domain adaptation experiments and bound tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every (schedule, seed) pair of an experiment config.
    Run {
        config: PathBuf,
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        halt_after_stage: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Wasserstein-1 distance between two point clouds.
    W1(W1Args),
    /// Evaluate the generalization bound at one horizon.
    Bound(BoundArgs),
    /// Bound over a range of horizons.
    Sweep(SweepArgs),
    /// Discrepancy estimate over a hypothesis pool.
    Disc(DiscArgs),
    /// Exact sequential Rademacher complexity of a finite class.
    Seqrad(SeqradArgs),
    /// Monte Carlo check of the Lipschitz transfer inequality.
    Lemma1(Lemma1Args),
    /// Write a generated sequence to CSV.
    Generate(GenerateArgs),
}

fn dispatch(cmd: Command) -> CliResult<Value> {
    match cmd {
        Command::Run { config, resume, halt_after_stage, out } => {
            let opts = RunOptions { resume, halt_after_stage, output_dir: out };
            let s = run_experiment(&config, &opts)?;
            Ok(json!({
                "output_dir": s.output_dir,
                "completed": s.completed,
                "runs": s.runs.iter().map(|r| json!({
                    "run_id": r.run_id,
                    "stages_done": r.stages_done,
                    "stages": r.stages,
                    "target_acc": r.target_acc,
                })).collect::<Vec<_>>(),
                "report": s.report,
            }))
        }
        Command::W1(a) => commands::w1(&a),
        Command::Bound(a) => commands::bound(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Disc(a) => commands::disc(&a),
        Command::Seqrad(a) => commands::seqrad(&a),
        Command::Lemma1(a) => commands::lemma1(&a),
        Command::Generate(a) => commands::generate(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let text = e.render().to_string();
            let msg = text.lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            return report(&CliError::Usage(msg));
        }
    };
    match dispatch(cli.command) {
        Ok(v) => {
            println!("{}", sorted_json(&v));
            ExitCode::SUCCESS
        }
        Err(e) => report(&e),
    }
}

fn report(e: &CliError) -> ExitCode {
    eprintln!("{}", json!({ "error": e.to_string(), "kind": e.kind() }));
    ExitCode::from(e.exit_code() as u8)
}
