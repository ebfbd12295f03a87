use clap::{Parser, Subcommand};
use kbforge::config;
use kbforge::pipeline::{self, PipelineError, Stage};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Declarative knowledge-base construction: relational evidence in,
/// calibrated per-fact probabilities and error triage out.
#[derive(Parser)]
#[command(name = "kbforge", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cross-reference a configuration; exit 1 if it has findings
    Validate {
        /// JSON application config
        #[arg(long)]
        config: PathBuf,
    },
    /// Execute pipeline stages against a configuration
    Run {
        /// JSON application config
        #[arg(long)]
        config: PathBuf,
        /// Artifact directory (overrides the config's output_dir)
        #[arg(long)]
        output: Option<PathBuf>,
        /// Comma-separated subset of load,extract,supervise,ground,learn,
        /// infer,calibrate,errors; default is all, in order
        #[arg(long, value_delimiter = ',')]
        stages: Option<Vec<String>>,
    },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Validate { config } => run_validate(&config),
        Command::Run {
            config,
            output,
            stages,
        } => run_pipeline(&config, output, stages),
    }
}

fn run_validate(config_path: &Path) -> ExitCode {
    let config = match pipeline::load_config(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };
    let base_dir = config_path.parent().map(PathBuf::from);
    let findings = config::validate(&config, base_dir.as_deref());
    if findings.is_empty() {
        println!("configuration ok");
        ExitCode::SUCCESS
    } else {
        for f in &findings {
            println!("finding: {f}");
        }
        ExitCode::from(1)
    }
}

fn run_pipeline(
    config_path: &Path,
    output: Option<PathBuf>,
    stages: Option<Vec<String>>,
) -> ExitCode {
    let stages = match stages {
        None => None,
        Some(names) => {
            let mut parsed = Vec::new();
            for name in names {
                match Stage::parse(name.trim()) {
                    Some(s) => parsed.push(s),
                    None => {
                        eprintln!("unknown stage `{name}`");
                        return ExitCode::from(1);
                    }
                }
            }
            Some(parsed)
        }
    };

    match pipeline::run_file(config_path, output, stages.as_deref()) {
        Ok(outcome) => {
            for (name, record) in &outcome.manifest.stages {
                let counts: Vec<String> = record
                    .counts
                    .iter()
                    .map(|(k, v)| format!("{k}={v}"))
                    .collect();
                println!("{name}: {} ({} ms)", counts.join(" "), record.duration_ms);
            }
            if let Some(text) = &outcome.calibration_text {
                print!("{text}");
            }
            if let Some(text) = &outcome.errors_text {
                print!("{text}");
            }
            println!("artifacts: {}", outcome.output_dir.display());
            ExitCode::SUCCESS
        }
        Err(e @ (PipelineError::Findings(_) | PipelineError::Parse(_))) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
        Err(e) => {
            // print the source chain: stage failures wrap the module error
            eprintln!("{e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(2)
        }
    }
}
