use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rcmdp::envgen::{random_instance, GenSpec, Setting};
use rcmdp::epigraph::{BisectionConfig, SubroutineConfig};
use rcmdp::experiment::{
    run_epirc, run_lf_family, run_lp, write_rows, Algorithm, ExperimentConfig, RunOutput,
    DEFAULT_OUTER_ITERATIONS,
};
use rcmdp::lagrange::LagrangeConfig;
use rcmdp::validation;
use rcmdp::{Error, Instance};

#[derive(Parser)]
#[command(name = "rcmdp", version, about = "Robust constrained MDP solvers and experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random instance.
    Envgen {
        #[arg(long, default_value = "finite")]
        setting: Setting,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Generator parameters (JSON); overrides --setting.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the epigraph bisection solver.
    Solve {
        #[command(flatten)]
        source: Source,
        /// Bisection configuration (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for the trace CSV and the policies.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Lagrangian baseline or the LP oracle.
    Baseline {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value = "lf")]
        algorithm: Algorithm,
        /// Lagrangian configuration (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check closed-form identities, LP consistency and gradients.
    Validate,
    /// Run an experiment over a seed grid.
    Bench {
        /// Experiment configuration (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "finite")]
        setting: Setting,
        /// Number of seeds `0..n` when no config is given.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Overrides the configured seeds with the single seed given.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "bench-out")]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct Source {
    /// Instance file (JSON). Without it an instance is generated.
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long, default_value = "finite")]
    setting: Setting,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl Source {
    fn load(&self) -> Result<Instance, Error> {
        match &self.instance {
            Some(p) => Instance::load(p),
            None => random_instance(&GenSpec::defaults(self.setting).with_seed(self.seed)),
        }
    }
}

/// Configuration problems exit with 2, run failures with 1.
enum Failure {
    Config(Error),
    Run(Error),
}

fn config<T>(r: Result<T, Error>) -> Result<T, Failure> {
    r.map_err(Failure::Config)
}

fn run<T>(r: Result<T, Error>) -> Result<T, Failure> {
    r.map_err(Failure::Run)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn write_output(out: &Path, output: &RunOutput) -> Result<(), Error> {
    fs::create_dir_all(out)?;
    write_rows(out.join("trace.csv"), &output.rows)?;
    let policies: Vec<_> = output.policies.iter().map(|p| p.to_rows()).collect();
    fs::write(out.join("policies.json"), serde_json::to_string(&policies)?)?;
    Ok(())
}

fn report(output: &RunOutput) {
    let m = output.marked_row();
    println!(
        "marked k={} objective={:.6} violation={:.6e} relative_return={:.6}",
        m.k, output.objectives[output.marked], m.violation, m.relative_return
    );
}

fn execute(cli: Cli) -> Result<bool, Failure> {
    match cli.command {
        Command::Envgen {
            setting,
            seed,
            config: cfg,
            out,
        } => {
            let spec = match cfg {
                Some(p) => config(read_json::<GenSpec>(&p))?,
                None => GenSpec::defaults(setting).with_seed(seed),
            };
            let inst = config(random_instance(&spec))?;
            let text = run(inst.to_json())?;
            match out {
                Some(p) => run(fs::write(p, text).map_err(Error::from))?,
                None => println!("{text}"),
            }
            Ok(true)
        }
        Command::Solve {
            source,
            config: cfg,
            out,
        } => {
            let inst = config(source.load())?;
            let cfg = match cfg {
                Some(p) => config(read_json::<BisectionConfig>(&p))?,
                None => BisectionConfig {
                    outer_iterations: DEFAULT_OUTER_ITERATIONS,
                    subroutine: match &inst.uncertainty {
                        rcmdp::UncertaintySet::KlRectangular { .. } => SubroutineConfig::kl_default(),
                        _ => SubroutineConfig::finite_default(),
                    },
                    warm_start: true,
                },
            };
            config(cfg.validate())?;
            let output = run(run_epirc(&inst, source.seed, &cfg))?;
            for r in &output.rows {
                println!(
                    "k={:>2} b0=[{:.6}, {:.6}] violation={:.6e} relative_return={:.6}",
                    r.k,
                    r.b0_low.unwrap_or(f64::NAN),
                    r.b0_high.unwrap_or(f64::NAN),
                    r.violation,
                    r.relative_return
                );
            }
            report(&output);
            if let Some(out) = out {
                run(write_output(&out, &output))?;
            }
            Ok(true)
        }
        Command::Baseline {
            source,
            algorithm,
            config: cfg,
            out,
        } => {
            let inst = config(source.load())?;
            let output = match algorithm {
                Algorithm::Epirc => {
                    return Err(Failure::Config(Error::InvalidArgument(
                        "use the solve subcommand for epirc".into(),
                    )))
                }
                Algorithm::LpOracle => {
                    config(inst.singleton_kernel().map(|_| ()))?;
                    let o = run(run_lp(&inst, source.seed))?;
                    println!("J* = {:.9}", o.objectives[0]);
                    o
                }
                lf => {
                    if lf.cmdp_only() {
                        config(inst.singleton_kernel().map(|_| ()))?;
                    }
                    let cfg = match cfg {
                        Some(p) => config(read_json::<LagrangeConfig>(&p))?,
                        None => {
                            let sub = match &inst.uncertainty {
                                rcmdp::UncertaintySet::KlRectangular { .. } => {
                                    SubroutineConfig::kl_default()
                                }
                                _ => SubroutineConfig::finite_default(),
                            };
                            LagrangeConfig::new(
                                DEFAULT_OUTER_ITERATIONS + 1,
                                sub.iterations,
                                sub.learning_rate,
                            )
                        }
                    };
                    run(run_lf_family(&inst, source.seed, &cfg, &[lf]))?.remove(0)
                }
            };
            report(&output);
            if let Some(out) = out {
                run(write_output(&out, &output))?;
            }
            Ok(true)
        }
        Command::Validate => {
            let checks = run(validation::run_all())?;
            for c in &checks {
                println!("{c}");
            }
            Ok(checks.iter().all(|c| c.passed))
        }
        Command::Bench {
            config: cfg,
            setting,
            seeds,
            seed,
            out,
        } => {
            let mut cfg = match cfg {
                Some(p) => config(ExperimentConfig::load(&p))?,
                None => ExperimentConfig::for_setting(setting, (0..seeds).collect(), out),
            };
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            config(cfg.validate())?;
            let report = run(rcmdp::experiment::run_experiment(&cfg))?;
            for r in &report.runs {
                match (&r.error, r.marked_violation, r.marked_relative_return) {
                    (Some(e), _, _) => println!("seed {} {}: FAILED {e}", r.seed, r.algorithm),
                    (None, Some(v), Some(rr)) => println!(
                        "seed {} {}: marked k={} violation={v:.6e} relative_return={rr:.6}{}",
                        r.seed,
                        r.algorithm,
                        r.marked_k.unwrap_or(0),
                        r.gap.map(|g| format!(" gap={g:.6}")).unwrap_or_default()
                    ),
                    _ => {}
                }
            }
            println!("wrote {}", cfg.output_dir.display());
            Ok(report.failures == 0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
