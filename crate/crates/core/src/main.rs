use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use cyflow::cli::{execute, parse_config, EXIT_CONFIG, EXIT_OK};

/// Prescribed-curvature solver suite: flow, Newton, and threshold continuation
/// runs driven by a JSON configuration.
#[derive(Parser, Debug)]
#[command(name = "cyflow", version, about)]
struct Args {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,

    /// Output directory; overrides the config's `output_dir`.
    #[arg(long)]
    output: Option<PathBuf>,

    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,

    /// Parse and validate the config only, then exit.
    #[arg(long)]
    check: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let config = match parse_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    if args.check {
        if !args.quiet {
            println!("config ok: {}", args.config.display());
        }
        return ExitCode::from(EXIT_OK as u8);
    }
    let out_dir = args.output.unwrap_or_else(|| config.output_dir.clone());
    let code = execute(&config, &out_dir, args.quiet);
    ExitCode::from(code as u8)
}
