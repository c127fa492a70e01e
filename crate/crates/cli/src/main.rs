use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use palm::harness::{aggregate, expand_glob, export_model, make_task, run, write_aggregate, ExperimentConfig};
use palm::lamdp::{load_hierarchy, sample_states, validate_hierarchy};
use palm::{Error, Result, SeededRng};

#[derive(Parser)]
#[command(name = "palm", version, about = "Hierarchical model-based RL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every trial of an experiment config, one CSV per trial.
    Run {
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Override the config's trial count.
        #[arg(long)]
        trials: Option<usize>,
        /// Count parent transitions even when the child's own transitions were unknown.
        #[arg(long)]
        no_gating: bool,
    },
    /// Per-episode mean and 95% interval of cumulative steps and reward.
    Aggregate {
        /// Glob matching the trial CSV files.
        pattern: String,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Copy one subtask's learned model out of a trial's model store.
    ExportModel {
        store: PathBuf,
        lamdp: String,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Check a hierarchy file against a domain.
    Validate {
        hierarchy: PathBuf,
        domain: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random-walk steps used to sample states for the semantic checks.
        #[arg(long, default_value_t = 5000)]
        samples: usize,
    },
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            output,
            trials,
            no_gating,
        } => {
            let mut config = ExperimentConfig::load(&config)?;
            if let Some(dir) = output {
                config.output = dir;
            }
            if let Some(n) = trials {
                config.trials = n;
            }
            if no_gating {
                config.gating = false;
            }
            let files = run(&config)?;
            println!("wrote {} trial files to {}", files.len(), config.output.display());
        }
        Command::Aggregate { pattern, output } => {
            let files = expand_glob(&pattern)?;
            let rows = aggregate(&files)?;
            write_aggregate(&output, &rows)?;
            println!("aggregated {} trials over {} episodes into {}", files.len(), rows.len(), output.display());
        }
        Command::ExportModel { store, lamdp, output } => {
            export_model(&store, &lamdp, &output)?;
            println!("exported {lamdp} to {}", output.display());
        }
        Command::Validate {
            hierarchy,
            domain,
            seed,
            samples,
        } => {
            let h = load_hierarchy(&hierarchy)?;
            let mut rng = SeededRng::new(seed);
            let task = make_task(&domain, &mut rng)?;
            let states = sample_states(task.env.as_ref(), &task.start, samples, &mut rng)?;
            let violations = validate_hierarchy(&h, task.env.as_ref(), &states);
            for v in &violations {
                eprintln!("{v}");
            }
            if !violations.is_empty() {
                return Err(Error::Construction(format!("{} violation(s)", violations.len())));
            }
            println!("{} is valid on {domain}", hierarchy.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
