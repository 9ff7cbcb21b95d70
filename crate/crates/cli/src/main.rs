use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use ndnn_cli::{bundled, bundled_experiments, run, CliError, Mode, RunConfig};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Non-diffusive neural network solver for 1D hyperbolic conservation laws.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    /// Run configuration (JSON).
    #[arg(long, conflicts_with = "experiment")]
    config: Option<PathBuf>,
    /// Bundled experiment by name, instead of a file.
    #[arg(long)]
    experiment: Option<String>,
    /// Output directory; defaults to out/<name>.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Seed overriding the configuration's.
    #[arg(long)]
    seed: Option<u64>,
    /// Mode overriding the configuration's.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// List bundled experiments and exit.
    #[arg(long)]
    list: bool,
    /// Print a bundled experiment's configuration and exit.
    #[arg(long, requires = "experiment")]
    print: bool,
}

fn load(args: &Args) -> Result<RunConfig, CliError> {
    match (&args.config, &args.experiment) {
        (Some(path), _) => RunConfig::load(path),
        (None, Some(name)) => {
            bundled(name).ok_or_else(|| CliError::config(format!("no bundled experiment `{name}`")))
        }
        (None, None) => Err(CliError::config(
            "one of --config or --experiment is required",
        )),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    if args.list {
        for (name, cfg) in bundled_experiments() {
            println!("{name}\t{:?}", cfg.mode);
        }
        return ExitCode::SUCCESS;
    }
    let result = load(&args).and_then(|cfg| {
        let cfg = cfg.with_overrides(args.mode, args.seed, args.out_dir.clone());
        cfg.validate()?;
        if args.print {
            println!("{}", cfg.to_json());
            return Ok(());
        }
        let manifest = run(&cfg)?;
        println!(
            "{}",
            serde_json::to_string_pretty(&manifest.summary).expect("summaries serialize")
        );
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
