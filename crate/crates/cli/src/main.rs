use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use elaa_cli::{run, Mode, RunSpec};

/// Near-field channel estimation under partial blockage.
#[derive(Debug, Parser)]
#[command(name = "elaa", version)]
struct Args {
    /// Experiment configuration (TOML).
    #[arg(long, default_value = "config/default.toml")]
    config: PathBuf,

    #[arg(long, value_enum, default_value_t = Mode::Single)]
    mode: Mode,

    /// Master seed; replaces `campaign.seed`.
    #[arg(long)]
    seed: Option<u64>,

    /// SNR in dB; a single point in campaign mode.
    #[arg(long, allow_hyphen_values = true)]
    snr: Option<f64>,

    /// Trials per SNR point in campaign mode.
    #[arg(long)]
    trials: Option<usize>,

    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Dotted `key=value` replacing one configuration entry; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let spec = RunSpec {
        mode: args.mode,
        config: args.config,
        out: args.out,
        seed: args.seed,
        snr_db: args.snr,
        trials: args.trials,
        overrides: args.overrides,
    };
    match run(&spec) {
        Ok(files) => {
            for f in files {
                log::info!("wrote {}", spec.out.join(f).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
