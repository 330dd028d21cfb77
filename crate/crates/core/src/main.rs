use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use lorentz::cli::{describe, resolve_threads, run_file, Overrides};
use lorentz::verify::{run_suite, Suite};

#[derive(Parser)]
#[command(name = "lorentz", version, about = "Low-density Lorentz gas experiments")]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: $LORENTZ_THREADS, else all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Output directory, replacing the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an acceptance suite and print one line per check.
    Verify {
        suite: SuiteArg,
        #[arg(long)]
        threads: Option<usize>,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Fast,
    Full,
}

fn main() -> ExitCode {
    match Args::parse().cmd {
        Cmd::Run { config, seed, threads, out } => match run_file(&config, &Overrides { seed, threads, out }) {
            Ok(report) => {
                for f in &report.files {
                    println!("wrote {}", f.display());
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {}", describe(&e));
                ExitCode::FAILURE
            }
        },
        Cmd::Verify { suite, threads, out } => {
            let suite = match suite {
                SuiteArg::Fast => Suite::Fast,
                SuiteArg::Full => Suite::Full,
            };
            let results = run_suite(suite, resolve_threads(threads, None));
            let mut ok = true;
            for r in &results {
                println!("{r}");
                ok &= r.passed;
            }
            if let Some(path) = out {
                let json = serde_json::to_string_pretty(&results).expect("serializable report");
                if let Err(e) = std::fs::write(&path, json + "\n") {
                    eprintln!("error: {}: {e}", path.display());
                    return ExitCode::FAILURE;
                }
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
