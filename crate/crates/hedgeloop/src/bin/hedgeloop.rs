use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hedgeloop::config::{self, AppConfig};
use hedgeloop::runner;
use hedgeloop::Error;

#[derive(Parser)]
#[command(name = "hedgeloop", version, about = "Retrieval-conditioned option-hedging backtests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one backtest and write records, metrics, and a manifest.
    Run(CommonArgs),
    /// Run the ablation grid (full, reduced controller, stochastic,
    /// no memory) across seeds and print the comparison table.
    Ablate(CommonArgs),
    /// Run the buy-and-hold and equal-weight reference strategies.
    Baselines(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Config file (flat `key = value`; defaults apply when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides run.seed; for ablate, rebases the seed list to start here.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Validate the config and load the data, then exit without writing.
    #[arg(long)]
    dry_run: bool,
}

impl CommonArgs {
    fn load(&self) -> Result<(AppConfig, PathBuf), Error> {
        let (mut cfg, base_dir) = match &self.config {
            Some(path) => {
                let dir = path.parent().map_or_else(|| PathBuf::from("."), PathBuf::from);
                (config::load(path)?, dir)
            }
            None => (AppConfig::default(), PathBuf::from(".")),
        };
        if let Some(seed) = self.seed {
            let count = cfg.ablate.seeds.len() as u64;
            cfg.backtest.seed = seed;
            cfg.ablate.seeds = (seed..seed + count).collect();
        }
        Ok((cfg, base_dir))
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_)
        | Error::Parse { .. }
        | Error::Data { .. }
        | Error::Ordering { .. }
        | Error::InsufficientHistory { .. }
        | Error::Io(_) => 2,
        _ => 1,
    }
}

fn dispatch(cli: &Cli) -> Result<(), Error> {
    let args = match &cli.command {
        Command::Run(a) | Command::Ablate(a) | Command::Baselines(a) => a,
    };
    let (cfg, base_dir) = args.load()?;
    if args.dry_run {
        runner::preflight(&cfg, &base_dir)?;
        println!("config ok: run {} over {} symbols", cfg.backtest.run_id, cfg.data.symbols.len().max(1));
        return Ok(());
    }
    match &cli.command {
        Command::Run(_) => {
            let artifacts = runner::execute_run(&cfg, &base_dir, &args.out)?;
            println!("{}", runner::table_header());
            println!("{}", runner::table_line(&artifacts.manifest.run_id, &artifacts.result.report));
            for file in &artifacts.files {
                eprintln!("wrote {}", file.display());
            }
        }
        Command::Ablate(_) => {
            let artifacts = runner::execute_ablation(&cfg, &base_dir, &args.out)?;
            print!("{}", runner::format_ablation_table(&artifacts.summary));
            eprintln!("wrote {} files under {}", artifacts.files.len(), args.out.display());
        }
        Command::Baselines(_) => {
            let artifacts = runner::execute_baselines(&cfg, &base_dir, &args.out)?;
            print!("{}", runner::format_baselines_table(&artifacts.results));
            for file in &artifacts.files {
                eprintln!("wrote {}", file.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
