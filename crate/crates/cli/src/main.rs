use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use clipvi::checks::InvariantFlags;
use clipvi::format::{read_env, write_env, write_oracle};
use clipvi::harness::{lemma_suite, parse_seeds, run_experiment, ExperimentConfig, LemmaSuiteConfig};
use clipvi::oracle::DEFAULT_TOL;
use clipvi::OracleSolution;

#[derive(Parser)]
#[command(name = "clipvi", version, about = "Optimistic clipped value iteration experiments")]
struct Cli {
    /// Suppress progress and table output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Seed list such as `0,1,2` or `0..20`.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        horizon: Option<usize>,
        /// Directory for series and summary files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the lemma-check suite and report worst-case slack per lemma.
    Lemmas,
    /// Build the environment of a config file and write it in text form.
    Gen {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve an environment file exactly.
    Solve {
        env: PathBuf,
        #[arg(long, default_value_t = 0.99)]
        gamma: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ExperimentConfig::parse(&text).with_context(|| format!("parsing {}", path.display()))
}

fn emit(text: &str, out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(quiet: bool, command: Command) -> Result<bool> {
    match command {
        Command::Run {
            config,
            seeds,
            horizon,
            out,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seeds {
                cfg.seeds = parse_seeds(&s)?;
            }
            if let Some(t) = horizon {
                cfg.horizon = t;
            }
            if out.is_some() {
                cfg.out_dir = out;
            }
            let outcome = run_experiment(&cfg)?;
            let all_ok = outcome.rows().all(|r| r.flags.deterministic_ok());
            if !quiet {
                println!(
                    "{} on {}: T={} J*={:.6} sp(v*)={:.6} gamma={:.6} H={:.6} beta={:.6}",
                    cfg.algorithm.name(),
                    cfg.env.kind.name(),
                    cfg.horizon,
                    outcome.j_star,
                    outcome.span_v_star,
                    outcome.algo.gamma,
                    outcome.algo.span_bound,
                    outcome.algo.bonus_factor
                );
                println!("{:>6} {:>16} {:>6} {:>8}  failed", "seed", "regret", "K", "ms");
                for row in outcome.rows() {
                    let failed = row.flags.checked & !row.flags.passed;
                    println!(
                        "{:>6} {:>16.6} {:>6} {:>8}  {}",
                        row.seed,
                        row.final_regret,
                        row.episode_count,
                        row.runtime_ms,
                        InvariantFlags::names(failed).join(",")
                    );
                }
                println!("mean regret {:.6}", outcome.mean_regret());
                if let Some(dir) = &cfg.out_dir {
                    println!("wrote {}", dir.display());
                }
            }
            Ok(all_ok)
        }
        Command::Lemmas => {
            let report = lemma_suite(&LemmaSuiteConfig::default())?;
            if !quiet {
                print!("{report}");
            }
            Ok(report.all_pass())
        }
        Command::Gen { config, out } => {
            let cfg = load_config(&config)?;
            let env = cfg.env.build()?;
            emit(&write_env(&env), out.as_ref())?;
            Ok(true)
        }
        Command::Solve { env, gamma, out } => {
            let text =
                fs::read_to_string(&env).with_context(|| format!("reading {}", env.display()))?;
            let mdp = read_env(&text)?.to_tabular()?;
            let sol = OracleSolution::solve(&mdp, gamma, DEFAULT_TOL)?;
            emit(&write_oracle(&sol), out.as_ref())?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.quiet, cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
