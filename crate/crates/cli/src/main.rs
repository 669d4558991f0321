use clap::{Parser, Subcommand};
use gradflow_cli::artifacts::{output_root, OUT_ENV_VAR};
use gradflow_cli::config::ConfigFile;
use gradflow_cli::presets;
use gradflow_cli::report::{read_run_dir, to_csv, to_markdown};
use gradflow_cli::run::{eval_run, fit_ic, run_dir, solve_run, write_resolved_config, write_summary_table};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "gradflow",
    about = "Neural-network solvers for dissipative evolution PDEs",
    long_about = "Trains per-time-step networks for heat-type PDEs via an L2 gradient flow \
with weak (Nitsche) boundary conditions, a 2-Wasserstein minimising-movement scheme, and a \
space-time least-squares baseline. Runs are driven by TOML configs or embedded presets."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Path to a TOML config file, or the name of an embedded preset.
    #[arg(long)]
    config: String,
    /// Override the seed of every run in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root (default: $GRADFLOW_OUT or ./runs).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit and checkpoint the initial condition only.
    FitIc(RunArgs),
    /// Execute the configured runs end to end (fit, march, evaluate, plot).
    Solve {
        #[command(flatten)]
        args: RunArgs,
        /// Continue from the checkpoints already present in the run
        /// directories instead of starting over.
        #[arg(long)]
        resume: bool,
    },
    /// Re-evaluate finished runs against the exact solution.
    Eval(RunArgs),
    /// Merge finished run directories into a comparison table.
    Report {
        /// Run directories (each containing config.toml and errors.csv).
        dirs: Vec<PathBuf>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also print a markdown table.
        #[arg(long)]
        markdown: bool,
    },
    /// Inspect the embedded presets.
    Preset {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    /// List available presets.
    List,
    /// Print a preset's TOML (a complete config-file example).
    Show { name: String },
}

fn load(args: &RunArgs) -> gradflow::Result<ConfigFile> {
    let mut file = presets::resolve_config(&args.config)?;
    if let Some(seed) = args.seed {
        for run in &mut file.runs {
            run.seed = seed;
        }
    }
    Ok(file)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_secs()
        .init();
    match execute() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute() -> gradflow::Result<()> {
    match Cli::parse().command {
        Command::FitIc(args) => {
            let file = load(&args)?;
            let root = output_root(args.out);
            for run in &file.runs {
                let dir = run_dir(&root, &file, run);
                write_resolved_config(&dir, &file, run)?;
                fit_ic(run, &dir, false)?;
                println!("{}: initial condition written", dir.display());
            }
            Ok(())
        }
        Command::Solve { args, resume } => {
            let file = load(&args)?;
            let root = output_root(args.out);
            let mut results = Vec::new();
            for run in &file.runs {
                let dir = run_dir(&root, &file, run);
                let report = solve_run(&file, run, &dir, resume)?;
                println!(
                    "{}: worst relative L2 error {:.3e}",
                    dir.display(),
                    report.worst_rel_l2()
                );
                results.push((run.label.clone(), run.dim, report));
            }
            let table = write_summary_table(&root, &file, &results)?;
            println!("summary table: {}", table.display());
            Ok(())
        }
        Command::Eval(args) => {
            let file = load(&args)?;
            let root = output_root(args.out);
            for run in &file.runs {
                let dir = run_dir(&root, &file, run);
                let report = eval_run(run, &dir)?;
                println!(
                    "{}: worst relative L2 error {:.3e}",
                    dir.display(),
                    report.worst_rel_l2()
                );
            }
            Ok(())
        }
        Command::Report { dirs, out, markdown } => {
            if dirs.is_empty() {
                return Err(gradflow::Error::Config(
                    "report needs at least one run directory".into(),
                ));
            }
            let mut entries = Vec::new();
            let mut failures = Vec::new();
            for dir in &dirs {
                match read_run_dir(dir) {
                    Ok(e) => entries.push(e),
                    Err(e) => failures.push(e.to_string()),
                }
            }
            if !failures.is_empty() {
                return Err(gradflow::Error::Config(failures.join("; ")));
            }
            let csv = to_csv(&entries);
            match out {
                Some(path) => {
                    std::fs::write(&path, &csv)?;
                    println!("report written to {}", path.display());
                }
                None => print!("{csv}"),
            }
            if markdown {
                print!("{}", to_markdown(&entries));
            }
            Ok(())
        }
        Command::Preset { action } => {
            match action {
                PresetAction::List => {
                    for preset in presets::all() {
                        println!("{:<14} {}", preset.name, preset.description);
                    }
                    println!("\noutput root: --out, ${OUT_ENV_VAR}, or ./runs");
                }
                PresetAction::Show { name } => {
                    print!("{}", presets::find(&name)?.toml.trim_start_matches('\n'));
                }
            }
            Ok(())
        }
    }
}
