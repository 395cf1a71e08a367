use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use adfs_harness::config::{ExperimentConfig, Loss};
use adfs_harness::experiment::{build_instance, metadata_path, run_experiment, write_outputs, Constants, HarnessError};
use adfs_harness::libsvm::{write_libsvm, SparseSample};
use adfs_harness::synth::{synth_pool, SynthSpec};
use adfs_harness::validate::run_suite;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adfs-lab", version, about = "Decentralized optimization experiments on an idealized time model")]
struct Cli {
    /// Seed: replaces the config's seed list, or seeds generated data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config patch `dotted.key=value`; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (algorithm, seed) cell and write CSV plus metadata.
    Run { config: PathBuf },
    /// Print the derived constants of a config.
    Spectrum { config: PathBuf },
    /// Run the built-in check suite.
    Validate,
    /// Write a synthetic dataset in LibSVM format.
    GenData {
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 10)]
        d: usize,
        #[arg(long, default_value_t = 0.0)]
        correlation: f64,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, value_enum, default_value_t = LossArg::Logistic)]
        loss: LossArg,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum LossArg {
    Logistic,
    Squared,
    Absolute,
}

fn load(cli: &Cli, path: &PathBuf) -> Result<ExperimentConfig, HarnessError> {
    let mut overrides = cli.overrides.clone();
    if let Some(s) = cli.seed {
        overrides.push(format!("seeds=[{s}]"));
    }
    if let Some(o) = &cli.out {
        overrides.push(format!("output={}", toml::Value::String(o.display().to_string())));
    }
    Ok(ExperimentConfig::load(path, &overrides)?)
}

fn num(x: f64) -> String {
    if x == 0.0 || (1e-3..1e6).contains(&x.abs()) {
        format!("{x:.6}")
    } else {
        format!("{x:.6e}")
    }
}

fn print_constants(c: &Constants) {
    let opt = |v: Option<f64>| v.map_or("undefined".to_string(), num);
    println!("n = {}, m = {}, d = {}", c.n, c.m, c.d);
    println!("gamma = {}", opt(c.gamma));
    println!("kappa_s = {}", opt(c.kappa_s));
    println!("kappa_b = {}", opt(c.kappa_b));
    println!("kappa_comm = {}", opt(c.kappa_comm));
    println!("alpha = {}", opt(c.alpha));
    println!("rho = {}", opt(c.rho));
    println!("p_comm = {}", num(c.p_comm));
    println!("p_star = {}", opt(c.p_star));
    println!("predicted time to {:.1e} = {}", c.epsilon, opt(c.predicted_time));
}

fn execute(cli: &Cli) -> Result<ExitCode, HarnessError> {
    match &cli.command {
        Command::Run { config } => {
            let cfg = load(cli, config)?;
            let out = run_experiment(&cfg)?;
            write_outputs(&out, &cfg.output)?;
            println!(
                "wrote {} and {}",
                cfg.output.display(),
                metadata_path(&cfg.output).display()
            );
            if out.failures.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("{} cell(s) failed", out.failures.len());
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Spectrum { config } => {
            let cfg = load(cli, config)?;
            let inst = build_instance(&cfg)?;
            print_constants(&Constants::of(&inst, cfg.target.unwrap_or(1e-5))?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate => {
            let results = run_suite();
            for r in &results {
                println!("{r}");
            }
            Ok(if results.iter().all(|r| r.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::GenData {
            samples,
            d,
            correlation,
            noise,
            loss,
        } => {
            let loss = match loss {
                LossArg::Logistic => Loss::Logistic,
                LossArg::Squared => Loss::Squared,
                LossArg::Absolute => Loss::Absolute,
            };
            if *d == 0 || !(0.0..1.0).contains(correlation) || !(*noise >= 0.0) {
                return Err(HarnessError::Data("need d ≥ 1, correlation in [0, 1), noise ≥ 0".into()));
            }
            let spec = SynthSpec {
                d: *d,
                correlation: *correlation,
                noise: *noise,
            };
            let rows = synth_pool(&spec, *samples, loss.into(), cli.seed.unwrap_or(0));
            let sparse: Vec<SparseSample> = rows
                .into_iter()
                .map(|(x, label)| SparseSample {
                    label,
                    features: x.into_iter().enumerate().filter(|(_, v)| *v != 0.0).collect(),
                })
                .collect();
            let text = write_libsvm(&sparse);
            match &cli.out {
                Some(path) => fs::write(path, text).map_err(|source| HarnessError::Io {
                    path: path.clone(),
                    source,
                })?,
                None => print!("{text}"),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
