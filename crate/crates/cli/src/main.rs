use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use unipos_cli::commands::{report_command, run_command, validate_command, Format, RunOptions};

#[derive(Parser)]
#[command(name = "unipos", version, about = "Secure positioning scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenarios and emit one report record per file.
    Run {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Overrides every file's meta.seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
        /// Write records here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: one per core).
        #[arg(long)]
        jobs: Option<usize>,
        /// Fill runtime_ms. Output is then no longer reproducible.
        #[arg(long)]
        timing: bool,
    },
    /// Load and check scenario files without running them.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Summarize a JSON-lines report.
    Report {
        file: PathBuf,
        #[arg(long)]
        summary: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut out = io::stdout().lock();
    let mut err = io::stderr().lock();
    let code = match cli.command {
        Command::Run {
            files,
            seed,
            format,
            out: out_path,
            jobs,
            timing,
        } => {
            let opts = RunOptions {
                seed,
                format,
                out: out_path,
                jobs,
                timing,
            };
            run_command(&files, &opts, &mut out, &mut err)
        }
        Command::Validate { files } => validate_command(&files, &mut out, &mut err),
        // The summary is the only report view.
        Command::Report { file, summary: _ } => report_command(&file, &mut out, &mut err),
    };
    ExitCode::from(code as u8)
}
