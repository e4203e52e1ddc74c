use std::path::PathBuf;
use std::process::ExitCode;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use clap::{Args, Parser, Subcommand};
use specarray::signal::Task;
use specarray_harness::config::ExperimentConfig;
use specarray_harness::pipeline::{self, RunPaths};
use specarray_harness::{HarnessError, Result};

#[derive(Parser)]
#[command(
    name = "specarray",
    version,
    about = "Speculative DL+GLRT array processing experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the train and test datasets.
    Generate(Common),
    /// Train the plain and adversarially trained CNNs.
    Train(Common),
    /// Set the detection GLRT threshold from training H0 examples.
    Calibrate(Common),
    /// Accuracy vs PSR for every configured attack and model.
    AttackSweep(Common),
    /// Speculative inference traces and latency summary on the test set.
    Speculate(Common),
    /// Random trials of the covariance-shift bound.
    VerifyTheorem(Common),
    /// Every stage in order.
    Run(Common),
    /// Print the default config for a task.
    DefaultConfig {
        #[arg(long, default_value = "det")]
        task: Task,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON). Defaults for --task when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; overrides the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Task used when no config file is given.
    #[arg(long, default_value = "det")]
    task: Task,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<(ExperimentConfig, RunPaths)> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default_for(self.task),
        };
        if let Some(seed) = self.seed {
            cfg = cfg.with_seed(seed);
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        if let Some(n) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| HarnessError::Config(format!("cannot start {n} worker threads: {e}")))?;
        }
        let paths = RunPaths::new(cfg.task_dir());
        Ok((cfg, paths))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::DefaultConfig { task } => {
            print!("{}", ExperimentConfig::default_for(task).to_json()?);
        }
        Command::Generate(c) => {
            let (cfg, paths) = c.resolve()?;
            pipeline::generate(&cfg, &paths)?;
            println!("datasets written to {}", paths.root.display());
        }
        Command::Train(c) => {
            let (cfg, paths) = c.resolve()?;
            pipeline::train_stage(&cfg, &paths)?;
            println!("models written to {}", paths.root.display());
        }
        Command::Calibrate(c) => {
            let (cfg, paths) = c.resolve()?;
            match pipeline::calibrate_stage(&cfg, &paths)? {
                Some(cal) => println!("gamma_T = {} from {} H0 examples", cal.gamma_t, cal.n_calibration),
                None => println!("DoA GLRT needs no threshold"),
            }
        }
        Command::AttackSweep(c) => {
            let (cfg, paths) = c.resolve()?;
            let r = pipeline::attack_sweep_stage(&cfg, &paths)?;
            println!("{} sweep rows written to {}", r.rows.len(), paths.sweep_csv().display());
        }
        Command::Speculate(c) => {
            let (cfg, paths) = c.resolve()?;
            let r = pipeline::speculate_stage(&cfg, &paths)?;
            println!(
                "agreement {:.4}, expected latency {:.4} ms, accuracy dl {:.4} glrt {:.4} final {:.4}",
                r.p_agree, r.expected_latency_ms, r.accuracy_dl, r.accuracy_glrt, r.accuracy_final
            );
        }
        Command::VerifyTheorem(c) => {
            let (cfg, paths) = c.resolve()?;
            let rows = pipeline::verify_theorem_stage(&cfg, &paths)?;
            let violations: usize = rows.iter().map(|r| r.violations).sum();
            println!("{violations} violations in {} cases", rows.len());
            if violations > 0 {
                return Err(HarnessError::BoundViolated(violations));
            }
        }
        Command::Run(c) => {
            let (cfg, paths) = c.resolve()?;
            pipeline::run_all(&cfg, &paths)?;
            println!("pipeline finished in {}", paths.root.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
