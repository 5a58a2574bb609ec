use std::path::PathBuf;
use std::process::ExitCode;

use cdqlab::trainer::Variant;
use cdqlab_cli::summarize::SUMMARY_CSV;
use cdqlab_cli::{run_all, summarize, validation_report, write_summary, CliError, ExperimentFile, RunFilter, RunStatus};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cdqlab", version, about = "Run, check and summarize cdqlab experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every (experiment, seed) pair in a config file.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long, default_value = "runs")]
        out: PathBuf,
        /// Runs executed concurrently.
        #[arg(short, long, default_value_t = 1)]
        jobs: usize,
        /// Only runs of this variant.
        #[arg(long)]
        variant: Option<Variant>,
        /// Only runs with this seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a config file and print every resolved hyperparameter.
    Validate {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Aggregate completed runs into `summary.csv` (mean and standard error across seeds).
    Summarize {
        #[arg(short, long, default_value = "runs")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            out,
            jobs,
            variant,
            seed,
        } => {
            let file = ExperimentFile::load(&config)?;
            let issues = file.issues();
            if !issues.is_empty() {
                let lines: Vec<String> = issues.iter().map(|(n, i)| format!("[{n}] {i}")).collect();
                return Err(CliError::Config(lines.join("\n")));
            }
            let filter = RunFilter { variant, seed };
            let runs: Vec<_> = file.runs().into_iter().filter(|r| filter.keeps(r)).collect();
            let entries = run_all(&runs, &out, jobs)?;
            let mut failed = 0;
            for e in &entries {
                match e.status {
                    RunStatus::Completed => println!("completed {}", e.info.run_id),
                    RunStatus::Failed => {
                        failed += 1;
                        println!("FAILED    {}: {}", e.info.run_id, e.error.as_deref().unwrap_or(""));
                    }
                }
            }
            println!("{} run(s), {failed} failed, output in {}", entries.len(), out.display());
            if failed > 0 {
                return Err(CliError::Runtime(format!("{failed} run(s) failed")));
            }
            Ok(())
        }
        Command::Validate { config } => {
            let file = ExperimentFile::load(&config)?;
            let (report, ok) = validation_report(&file);
            print!("{report}");
            if ok {
                Ok(())
            } else {
                Err(CliError::Config(format!("{} is invalid", config.display())))
            }
        }
        Command::Summarize { out } => {
            let rows = summarize(&out)?;
            if rows.is_empty() {
                println!("no completed runs found in {}", out.display());
                return Ok(());
            }
            let path = out.join(SUMMARY_CSV);
            write_summary(&rows, &path)?;
            println!("{} row(s) written to {}", rows.len(), path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
