//! `fimlab` command-line runner.
//!
//! Exit codes: 0 on success, 2 on a configuration error, 3 when a study fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use fimlab::experiment::{self, ExperimentConfig, Format, Scale};
use fimlab::FimError;

#[derive(Parser)]
#[command(name = "fimlab", version, about = "Observed vs expected Fisher information experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config file.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Shorthand replication override, interpreted per experiment.
        #[arg(long)]
        reps: Option<u64>,
        /// Worker threads; results do not depend on this.
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
        /// Output file; stdout when absent. CSV output gets a `<out>.meta.json` sidecar.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        scale: Option<ScaleArg>,
    },
    /// List experiment names with their tables.
    List,
    /// Print the config schema as JSON.
    Schema,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Md,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Paper,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_STUDY: u8 = 3;

fn load_config(path: &Path, seed: Option<u64>, reps: Option<u64>, scale: Option<ScaleArg>) -> Result<ExperimentConfig, FimError> {
    let text = std::fs::read_to_string(path).map_err(|e| FimError::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(s) = scale {
        cfg.scale = match s {
            ScaleArg::Desk => Scale::Desk,
            ScaleArg::Paper => Scale::Paper,
        };
    }
    if let Some(r) = reps {
        cfg = cfg.with_override("reps", serde_json::json!(r))?;
    }
    Ok(cfg)
}

fn write_output(out: Option<&Path>, body: &str, sidecar: Option<String>) -> Result<(), FimError> {
    match out {
        None => {
            print!("{body}");
            Ok(())
        }
        Some(path) => {
            std::fs::write(path, body)?;
            if let Some(meta) = sidecar {
                let mut side = path.as_os_str().to_owned();
                side.push(".meta.json");
                std::fs::write(PathBuf::from(side), meta)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            for (name, table, description) in experiment::list_experiments() {
                println!("{name:<22} {table:<22} {description}");
            }
            ExitCode::SUCCESS
        }
        Command::Schema => {
            println!("{}", serde_json::to_string_pretty(&experiment::schema_json()).expect("schema serializes"));
            ExitCode::SUCCESS
        }
        Command::Run {
            config,
            seed,
            reps,
            threads,
            format,
            out,
            scale,
        } => {
            let cfg = match load_config(&config, seed, reps, scale) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            if cfg.scale == Scale::Paper {
                eprintln!(
                    "warning: paper-scale {} is expected to take {} on one core",
                    cfg.experiment.as_str(),
                    experiment::paper_scale_estimate(cfg.experiment)
                );
            }
            let start = Instant::now();
            let table = match experiment::run_with_threads(&cfg, threads) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("study error: {e}");
                    return ExitCode::from(if e.is_config_error() { EXIT_CONFIG } else { EXIT_STUDY });
                }
            };
            let format = match format {
                FormatArg::Csv => Format::Csv,
                FormatArg::Md => Format::Markdown,
                FormatArg::Json => Format::Json,
            };
            let sidecar = matches!(format, Format::Csv).then(|| table.metadata_json());
            if let Err(e) = write_output(out.as_deref(), &table.render(format), sidecar) {
                eprintln!("output error: {e}");
                return ExitCode::from(EXIT_STUDY);
            }
            eprintln!("{} finished in {:.1} s", cfg.experiment.as_str(), start.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
    }
}
