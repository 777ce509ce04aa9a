use std::path::PathBuf;
use std::process::ExitCode;

use ali_cli::commands::{self, Layout};
use ali_cli::config::{self, ExperimentConfig};
use ali_cli::{CliError, CliResult};
use clap::{Args, Parser, Subcommand};

/// Adversarially learnt interpolants and flow matching for trajectory inference.
///
/// Outputs go to `$ALI_OUTPUT_ROOT/<output_dir>` (root defaults to `./ali-output`).
/// Exit codes: 0 success, 2 configuration error, 3 numerical divergence, 4 I/O error.
#[derive(Parser, Debug)]
#[command(name = "ali", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// TOML experiment file.
    #[arg(long, short, conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Built-in preset (knot, gaussian).
    #[arg(long)]
    preset: Option<String>,

    /// Override a config entry, e.g. `--set ali.iterations=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate (or import) the dataset CSV.
    GenData(ConfigArgs),
    /// Train the adversarial interpolant.
    TrainAli {
        #[command(flatten)]
        config: ConfigArgs,
        /// Continue from the existing checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Train the flow-matching field.
    TrainCfm {
        #[command(flatten)]
        config: ConfigArgs,
        /// Continue from the existing checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Integrate trajectories and write the EMD table.
    RolloutEval(ConfigArgs),
    /// Render data and trajectories as SVG.
    Plot(ConfigArgs),
    /// gen-data, train-ali (when needed), train-cfm, rollout-eval and plot.
    RunAll(ConfigArgs),
    /// Print the fully resolved configuration.
    ShowConfig(ConfigArgs),
}

fn resolve(args: &ConfigArgs) -> CliResult<ExperimentConfig> {
    let text = match (&args.config, &args.preset) {
        (Some(path), _) => std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?,
        (None, Some(name)) => config::preset(name)?.to_string(),
        (None, None) => return Err(CliError::config("pass --config FILE or --preset NAME")),
    };
    config::load(&text, &args.overrides)
}

fn report(summary: &commands::EvalSummary) {
    println!("trajectories: {}", summary.trajectories);
    println!("mean EMD ({}): {:.6}", summary.table.cost.name(), summary.table.mean());
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData(a) => {
            let cfg = resolve(&a)?;
            let ds = commands::gen_data(&cfg, &Layout::from_env(&cfg))?;
            println!("wrote {} marginals, {} samples", ds.len(), ds.total_samples());
        }
        Command::TrainAli { config, resume } => {
            let cfg = resolve(&config)?;
            let t = commands::train_ali(&cfg, &Layout::from_env(&cfg), resume)?;
            println!("trained interpolant for {} iterations", t.iteration());
        }
        Command::TrainCfm { config, resume } => {
            let cfg = resolve(&config)?;
            commands::train_cfm(&cfg, &Layout::from_env(&cfg), resume)?;
            println!("trained vector field for {} iterations", cfg.cfm.iterations);
        }
        Command::RolloutEval(a) => {
            let cfg = resolve(&a)?;
            report(&commands::rollout_eval(&cfg, &Layout::from_env(&cfg))?);
        }
        Command::Plot(a) => {
            let cfg = resolve(&a)?;
            let layout = Layout::from_env(&cfg);
            commands::plot(&cfg, &layout)?;
            println!("wrote {}", layout.plot().display());
        }
        Command::RunAll(a) => {
            let cfg = resolve(&a)?;
            report(&commands::run_all(&cfg, &Layout::from_env(&cfg))?);
        }
        Command::ShowConfig(a) => print!("{}", resolve(&a)?.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
