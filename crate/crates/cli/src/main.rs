use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use relkin::harness::{self, ExperimentConfig};
use relkin::{par, Error};

#[derive(Parser)]
#[command(name = "relkin", version, about = "Near-equilibrium decay experiments on a discrete momentum grid")]
struct Cli {
    /// Worker threads (0 = rayon default).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Output directory; overrides the config's `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Random seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Run the quick property suite.
    Verify,
    /// Search Lyapunov constants for the config's grid and kernel.
    FitConstants { config: PathBuf },
}

fn load(path: &PathBuf, cli: &Cli) -> Result<(ExperimentConfig, PathBuf), Error> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out").join(cfg.kind.name()));
    Ok((cfg, out))
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(harness::exit_code(e) as u8)
}

fn run(cli: &Cli) -> ExitCode {
    match &cli.command {
        Command::Run { config } => {
            let (cfg, out) = match load(config, cli) {
                Ok(v) => v,
                Err(e) => return fail(&e),
            };
            match harness::run_experiment(&cfg) {
                Ok(res) => match harness::write_artifacts(&res, &out) {
                    Ok(path) => {
                        println!("{} {}: {}", if res.passed { "PASS" } else { "FAIL" }, cfg.kind.name(), path.display());
                        if res.passed {
                            ExitCode::SUCCESS
                        } else {
                            ExitCode::from(3)
                        }
                    }
                    Err(e) => fail(&e),
                },
                Err(e) => {
                    if e.is_budget_failure() {
                        if let Err(w) = harness::write_failure(&cfg, &e, &out) {
                            eprintln!("error: could not write failure manifest: {w}");
                        }
                    }
                    fail(&e)
                }
            }
        }
        Command::Verify => match harness::verify_suite(cli.seed.unwrap_or(0)) {
            Ok(checks) => {
                let mut ok = true;
                for c in &checks {
                    println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                    ok &= c.passed;
                }
                if ok {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(3)
                }
            }
            Err(e) => fail(&e),
        },
        Command::FitConstants { config } => {
            let (cfg, out) = match load(config, cli) {
                Ok(v) => v,
                Err(e) => return fail(&e),
            };
            match harness::fit_constants(&cfg) {
                Ok(v) => {
                    let write = || -> Result<PathBuf, Error> {
                        std::fs::create_dir_all(&out)?;
                        let p = out.join("constants.json");
                        std::fs::write(&p, serde_json::to_string_pretty(&v).map_err(|e| Error::Io(e.to_string()))? + "\n")?;
                        Ok(p)
                    };
                    match write() {
                        Ok(p) => {
                            println!("{}", p.display());
                            ExitCode::SUCCESS
                        }
                        Err(e) => fail(&e),
                    }
                }
                Err(e) => fail(&e),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    par::with_threads(cli.threads, || run(&cli))
}
