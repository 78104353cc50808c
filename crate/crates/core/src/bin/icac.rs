use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use icac::{curves, ImaginationMode, TrainConfig};

#[derive(Parser)]
#[command(
    name = "icac",
    version,
    about = "Intrinsically motivated actor-critic with adaptive imagination"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Key-value TOML file with training parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    /// First seed; further seeds count up from here.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of seeds to run.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Moving-average window for curve files; defaults to 1/40 of the run.
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration over one or more seeds.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mode: Option<ImaginationMode>,
    },
    /// Sweep the maximum imagination depth.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,7")]
        depths: Vec<usize>,
    },
    /// Run the built-in invariant audits.
    Audit {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(common: &Common) -> Result<TrainConfig> {
    let mut config = match &common.config {
        Some(path) => TrainConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(episodes) = common.episodes {
        config.episodes = episodes;
    }
    config.validate()?;
    Ok(config)
}

fn seeds(config: &TrainConfig, count: u64) -> Vec<u64> {
    (0..count.max(1)).map(|k| config.seed + k).collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, mode } => {
            let mut config = load_config(&common)?;
            if let Some(mode) = mode {
                config.imagination = mode;
            }
            let mut runs = Vec::new();
            for seed in seeds(&config, common.seeds) {
                let cfg = TrainConfig { seed, ..config.clone() };
                let metrics = icac::run_training(&cfg, Some(&common.out)).with_context(|| format!("seed {seed}"))?;
                let tail = metrics.len().min(100);
                let mean = metrics[metrics.len() - tail..]
                    .iter()
                    .map(|m| m.extrinsic_return)
                    .sum::<f64>()
                    / tail as f64;
                println!("seed {seed}: mean extrinsic return over last {tail} episodes {mean:.3}");
                runs.push((seed, metrics));
            }
            // Per-seed snapshots are written by the run; keep the conventional
            // name pointing at the first seed.
            let first = common.out.join(format!("itm_snapshot_seed{}.txt", runs[0].0));
            std::fs::copy(first, common.out.join("itm_snapshot.txt"))?;
            let window = common.window.unwrap_or_else(|| curves::default_window(config.episodes));
            curves::emit_curves(&common.out, &runs, window)?;
            println!("wrote results to {}", common.out.display());
        }
        Command::Ablate { common, depths } => {
            let config = load_config(&common)?;
            let cells = icac::run_ablation(&config, &depths, &seeds(&config, common.seeds), Some(&common.out))?;
            for cell in cells {
                let finals: Vec<f64> = cell
                    .runs
                    .iter()
                    .map(|(_, m)| {
                        let tail = m.len().min(100);
                        m[m.len() - tail..].iter().map(|e| e.extrinsic_return).sum::<f64>() / tail as f64
                    })
                    .collect();
                let mean = finals.iter().sum::<f64>() / finals.len() as f64;
                println!("depth {}: final mean extrinsic return {mean:.3}", cell.depth);
            }
        }
        Command::Audit { seed } => {
            let mut failed = 0;
            for r in icac::audit::run_all(seed)? {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                failed += usize::from(!r.passed);
            }
            if failed > 0 {
                bail!("{failed} audit(s) failed");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
