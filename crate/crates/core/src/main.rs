use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use relaynet::harness::{run_ablate, run_baseline, run_eval, run_sweep, run_train, ExperimentManifest, RunOptions};

#[derive(Parser)]
#[command(name = "relaynet", version, about = "Train and evaluate communication-aware UAV relay policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run per seed; reruns resume from the newest checkpoint.
    Train(Common),
    /// Evaluate the newest checkpoint of every seed.
    Eval(Common),
    /// Grid-restricted coverage bounds on static snapshots.
    Baseline(Common),
    /// Evaluate trained checkpoints at other team sizes.
    Sweep(Common),
    /// Train and evaluate the full model and its ablations.
    Ablate(Common),
}

#[derive(Args)]
struct Common {
    /// Manifest file, TOML or `.json`.
    #[arg(long)]
    manifest: PathBuf,
    /// Run a single seed instead of the manifest's list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory overriding the manifest's.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run seeds sequentially on one thread.
    #[arg(long)]
    deterministic: bool,
}

impl Common {
    fn load(&self) -> relaynet::Result<(ExperimentManifest, RunOptions)> {
        let manifest = ExperimentManifest::load(&self.manifest)?;
        let opts = RunOptions { seed: self.seed, out: self.out.clone(), deterministic: self.deterministic };
        Ok((manifest, opts))
    }
}

fn run(cli: Cli) -> relaynet::Result<()> {
    match cli.command {
        Command::Train(c) => {
            let (m, o) = c.load()?;
            for out in run_train(&m, &o)? {
                if let Some(last) = out.metrics.last() {
                    println!(
                        "seed {} step {} eval coverage {:.4} return {:.3}",
                        last.seed, last.step, last.mean_eval_coverage, last.mean_eval_reward
                    );
                }
            }
        }
        Command::Eval(c) => {
            let (m, o) = c.load()?;
            let report = run_eval(&m, &o)?;
            if let Some(a) = report.aggregate {
                println!(
                    "coverage {:.4} ± {:.4}  overlap {:.4}  win rate {:.4}  steps {:.1}",
                    a.coverage.mean, a.coverage.std, a.overlap.mean, a.win_rate.mean, a.episode_length.mean
                );
            }
        }
        Command::Baseline(c) => {
            let (m, o) = c.load()?;
            let rows = run_baseline(&m, &o)?;
            let n = rows.len().max(1) as f64;
            println!("mean bound {:.4} over {} snapshots", rows.iter().map(|r| r.bound).sum::<f64>() / n, rows.len());
        }
        Command::Sweep(c) => {
            let (m, o) = c.load()?;
            for r in run_sweep(&m, &o)? {
                println!("M={} N={} coverage {:.4}", r.num_uavs, r.num_nodes, r.coverage);
            }
        }
        Command::Ablate(c) => {
            let (m, o) = c.load()?;
            for r in run_ablate(&m, &o)? {
                println!(
                    "{:<10} coverage {:.4} ± {:.4}  win rate {:.4}",
                    r.method, r.coverage.mean, r.coverage.std, r.win_rate.mean
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("RELAYNET_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
