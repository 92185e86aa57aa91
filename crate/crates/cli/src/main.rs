use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use cellfree::harness::{run_experiment, write_outputs};
use cellfree::{Error, ExperimentSpec};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "cellfree",
    version,
    about = "Max-min power control experiments for cell-free massive MIMO uplink"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the drops described by a config file and write CSV results.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of drops.
        #[arg(long)]
        drops: Option<usize>,
        /// Override the output directory.
        #[arg(long)]
        output: Option<PathBuf>,
        /// No progress lines or warnings on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Check a config file without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn exit_code(err: &Error) -> ExitCode {
    if err.is_numerical() {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}

fn load(path: &Path) -> Result<ExperimentSpec, Error> {
    let spec = ExperimentSpec::from_path(path)?;
    spec.validate()?;
    Ok(spec)
}

fn run(
    config: PathBuf,
    seed: Option<u64>,
    drops: Option<usize>,
    output: Option<PathBuf>,
    quiet: bool,
) -> Result<(), Error> {
    let mut spec = ExperimentSpec::from_path(&config)?;
    if let Some(s) = seed {
        spec.network.seed = s;
    }
    if let Some(n) = drops {
        spec.n_drops = n;
    }
    if let Some(dir) = output {
        spec.output_dir = dir;
    }
    spec.validate()?;

    let start = Instant::now();
    let done = AtomicUsize::new(0);
    let total = spec.n_drops;
    let results = run_experiment(&spec, |d| {
        let n = done.fetch_add(1, Ordering::Relaxed) + 1;
        if !quiet {
            eprintln!("drop {d} done ({n}/{total}, {:.1}s)", start.elapsed().as_secs_f64());
        }
    })?;
    let written = write_outputs(&spec, &results, &spec.output_dir)?;
    if !quiet {
        for p in written {
            eprintln!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let quiet = matches!(cli.command, Command::Run { quiet: true, .. });
    let level = if quiet { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let outcome = match cli.command {
        Command::Run {
            config,
            seed,
            drops,
            output,
            quiet,
        } => run(config, seed, drops, output, quiet),
        Command::Validate { config } => load(&config).map(|spec| {
            println!(
                "ok: L={} K={} N={} f={} tau_p={} drops={}",
                spec.network.num_aps,
                spec.network.num_ues,
                spec.network.antennas_per_ap,
                spec.network.pilot_reuse,
                spec.network.tau_p(),
                spec.n_drops
            );
        }),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            exit_code(&e)
        }
    }
}
