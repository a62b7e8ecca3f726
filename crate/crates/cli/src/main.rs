use clap::{Parser, Subcommand};
use manipfail_cli::{
    cmd_evaluate, cmd_generate, cmd_loop, cmd_render, cmd_stats, CliError, EvaluateArgs,
    GenerateArgs, LoopArgs,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "manipfail",
    about = "Generate, analyze, score and correct robotic manipulation failure data",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate trajectories, failure records and the QA corpus.
    Generate {
        /// Master seed; every artifact derives from it.
        #[arg(long)]
        seed: u64,
        /// Comma-separated task ids (default: all 16).
        #[arg(long)]
        tasks: Option<String>,
        #[arg(long, default_value_t = 20)]
        failures_per_task: usize,
        #[arg(long, default_value_t = 3)]
        successes_per_task: usize,
        /// Restrict injection to one failure type (snake_case name).
        #[arg(long)]
        taxonomy: Option<String>,
        #[arg(long, default_value_t = 10.0)]
        frame_rate: f64,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Remote annotation endpoint; offline rule-based fallback when unset.
        #[arg(long)]
        annotator_endpoint: Option<String>,
        #[arg(long, default_value_t = 1)]
        concurrency: usize,
    },
    /// Verify a dataset and report its statistics.
    Stats {
        /// Dataset directory containing manifest.json.
        #[arg(long)]
        dataset: PathBuf,
        /// Directory for stats.json / stats.txt (prints to stdout regardless).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also emit SVG plots.
        #[arg(long)]
        plots: bool,
    },
    /// Score an answers file (or a remote answering endpoint) against a QA corpus.
    Evaluate {
        #[arg(long)]
        corpus: PathBuf,
        /// Line-delimited {"id": ..., "answer": ...} records.
        #[arg(long)]
        answers: Option<PathBuf>,
        /// Remote candidate-model endpoint answering each item.
        #[arg(long)]
        model_endpoint: Option<String>,
        /// Report file (JSON).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Use the deterministic offline judge for open-ended items.
        #[arg(long)]
        mock_judge: bool,
        #[arg(long)]
        judge_endpoint: Option<String>,
        #[arg(long, default_value_t = 1)]
        concurrency: usize,
    },
    /// Run correction-loop batches and emit the success-rate table.
    Loop {
        #[arg(long)]
        seed: u64,
        /// Comma-separated task ids (default: the four loop benchmark tasks).
        #[arg(long)]
        tasks: Option<String>,
        #[arg(long, default_value_t = 20)]
        episodes_per_task: usize,
        /// Comma-separated critics: null, random, oracle-high, oracle-low, remote.
        #[arg(long, default_value = "null,random,oracle-high,oracle-low")]
        critics: String,
        /// Policy under correction: scripted (latent fault) or expert.
        #[arg(long, default_value = "scripted")]
        policy: String,
        /// Probability the scripted policy acts on an actionable token.
        #[arg(long, default_value_t = 1.0)]
        compliance: f64,
        #[arg(long, default_value_t = 0.6)]
        pause_fraction: f64,
        #[arg(long, default_value_t = 10.0)]
        frame_rate: f64,
        #[arg(long)]
        critic_endpoint: Option<String>,
        /// Rate-table file (JSON); session log goes next to it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a stored trajectory as a top-down SVG plot.
    Render {
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate {
            seed,
            tasks,
            failures_per_task,
            successes_per_task,
            taxonomy,
            frame_rate,
            out,
            annotator_endpoint,
            concurrency,
        } => {
            let manifest = cmd_generate(&GenerateArgs {
                seed,
                tasks,
                failures_per_task,
                successes_per_task,
                taxonomy,
                frame_rate,
                out,
                annotator_endpoint,
                concurrency,
            })?;
            println!(
                "generated {} trajectories, {} qa items ({} infeasible and {} coincidental episodes regenerated)",
                manifest.trajectories.len(),
                manifest.qa_total,
                manifest.discarded_infeasible,
                manifest.discarded_coincidental
            );
            Ok(())
        }
        Command::Stats {
            dataset,
            out,
            plots,
        } => {
            let text = cmd_stats(&dataset, out.as_deref(), plots)?;
            println!("{text}");
            Ok(())
        }
        Command::Evaluate {
            corpus,
            answers,
            model_endpoint,
            out,
            mock_judge,
            judge_endpoint,
            concurrency,
        } => {
            let (report, unscored) = cmd_evaluate(&EvaluateArgs {
                corpus,
                answers,
                model_endpoint,
                out,
                mock_judge,
                judge_endpoint,
                concurrency,
            })?;
            println!("{}", report.render_text());
            if unscored > 0 {
                return Err(CliError::PartialScoring(unscored));
            }
            Ok(())
        }
        Command::Loop {
            seed,
            tasks,
            episodes_per_task,
            critics,
            policy,
            compliance,
            pause_fraction,
            frame_rate,
            critic_endpoint,
            out,
        } => {
            let text = cmd_loop(&LoopArgs {
                seed,
                tasks,
                episodes_per_task,
                critics,
                policy,
                compliance,
                pause_fraction,
                frame_rate,
                critic_endpoint,
                out,
            })?;
            println!("{text}");
            Ok(())
        }
        Command::Render { trajectory, out } => cmd_render(&trajectory, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
