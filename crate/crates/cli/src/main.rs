use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use graph_unlearn::config::ExperimentConfig;
use graph_unlearn::experiment::{
    cmd_bench_compare, cmd_build, cmd_noise_recovery, cmd_unlearn, cmd_verify_exactness, read_request, state_dir,
};
use graph_unlearn::{Error, Result};

#[derive(Parser)]
#[command(name = "graph-unlearn", version, about = "Sharded GNN training with exact node unlearning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// `section.key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed; overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; overrides `run.out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for shard-level parallelism.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct StateArgs {
    #[command(flatten)]
    common: Common,
    /// State directory; defaults to `<out>/state`.
    #[arg(long)]
    state: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Partition, train every shard and the aggregator, persist the state.
    Build(Common),
    /// Remove nodes from a persisted state.
    Unlearn {
        #[command(flatten)]
        args: StateArgs,
        /// File of node ids to delete. Without it the config's delete spec is drawn.
        #[arg(long)]
        request: Option<PathBuf>,
    },
    /// Clean, poisoned and unlearned scores with injected mislabelled nodes.
    NoiseRecovery(Common),
    /// Single-model retraining against the random and trained partitioners.
    BenchCompare(Common),
    /// Retrain every shard from its recorded lineage and compare bit for bit.
    VerifyExactness(StateArgs),
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            ExperimentConfig::parse(&text).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
                other => other,
            })?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_state(args: &StateArgs) -> Result<PathBuf> {
    if let Some(s) = &args.state {
        return Ok(s.clone());
    }
    let out = match &args.common.out {
        Some(out) => out.clone(),
        None => load_config(&args.common)?.out,
    };
    Ok(state_dir(&out))
}

fn print_run(dir: &Path, text: &str) {
    print!("{text}");
    log::info!("wrote {}", dir.display());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Build(common) => {
            let cfg = load_config(&common)?;
            let outcome = cmd_build(&cfg, common.jobs)?;
            print_run(&cfg.out, &outcome.summary.to_kv());
        }
        Command::Unlearn { args, request } => {
            let dir = resolve_state(&args)?;
            let request = match (&request, &args.common.config) {
                (Some(path), _) => Some(read_request(path)?),
                (None, Some(_)) => {
                    let cfg = load_config(&args.common)?;
                    let (state, _) = graph_unlearn::store::load_state::<f64>(&dir)?;
                    let round = state.retrain_counters().iter().sum();
                    Some(graph_unlearn::experiment::draw_delete(&state.graph, &cfg.delete, cfg.seed, round))
                }
                (None, None) => None,
            };
            let outcome = cmd_unlearn(&dir, request, args.common.seed, args.common.jobs)?;
            print!("{}{}", outcome.report.to_kv(), outcome.record.to_kv());
        }
        Command::NoiseRecovery(common) => {
            let cfg = load_config(&common)?;
            let (_, summary) = cmd_noise_recovery(&cfg, common.jobs)?;
            print_run(&cfg.out, &summary.to_kv());
        }
        Command::BenchCompare(common) => {
            let cfg = load_config(&common)?;
            let (table, _) = cmd_bench_compare(&cfg, common.jobs)?;
            print_run(&cfg.out, &table.to_tsv());
        }
        Command::VerifyExactness(args) => {
            let dir = resolve_state(&args)?;
            let report = cmd_verify_exactness(&dir, args.common.jobs)?;
            print!("{}", report.to_kv());
            if !report.is_exact() {
                return Err(Error::Training {
                    stage: "verify",
                    epoch: 0,
                    msg: format!("shard parameters differ from a fresh retrain by up to {}", report.max_delta()),
                });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
