use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use robust_gp::error::{Error, Result};
use robust_gp::harness::{self, output, ExperimentConfig, ExperimentKind, GainPolicy, Method};
use robust_gp::oracles;

#[derive(Parser)]
#[command(name = "robust-gp", version, about = "GP error bounds that hold under unknown hyperparameters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Functions drawn from a GP prior, scored on a grid
    SampleStudy(Common),
    /// Violation rates on a CSV dataset (synthetic GP data if none is given)
    Benchmark(Common),
    /// Manipulator tracking under robust, vanilla and fully Bayesian gains
    Control(Common),
    /// Randomized checks of the inequalities behind the bounds
    Oracle(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
}

fn load(kind: ExperimentKind, args: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::from_path(kind, p)?,
        None => ExperimentConfig::defaults_for(kind),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(r) = args.reps {
        cfg.repetitions = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::Config(format!("cannot create {}: {e}", out.display())))
}

fn report_rates(outcome: &harness::StudyOutcome) {
    for m in Method::ALL {
        println!("{:<11} mean violation rate {:.4}", m.name(), outcome.mean_rate(m));
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SampleStudy(args) => {
            let cfg = load(ExperimentKind::SampleStudy, &args)?;
            prepare(&args.out)?;
            output::write_manifest(&args.out, "sample-study", Some(&cfg))?;
            let outcome = harness::run_sample_study(&cfg)?;
            output::write_results(&args.out, &outcome.rows)?;
            output::write_bounding_pairs(&args.out, &outcome.pairs)?;
            report_rates(&outcome);
        }
        Command::Benchmark(args) => {
            let cfg = load(ExperimentKind::ViolationBenchmark, &args)?;
            let data = harness::benchmark_dataset(&cfg)?;
            prepare(&args.out)?;
            output::write_manifest(&args.out, "benchmark", Some(&cfg))?;
            info!("dataset: {} points, {} inputs", data.len(), data.dim());
            let outcome = harness::run_violation_benchmark(&cfg, &data)?;
            output::write_results(&args.out, &outcome.rows)?;
            output::write_bounding_pairs(&args.out, &outcome.pairs)?;
            report_rates(&outcome);
        }
        Command::Control(args) => {
            let cfg = load(ExperimentKind::ControlRun, &args)?;
            prepare(&args.out)?;
            output::write_manifest(&args.out, "control", Some(&cfg))?;
            let outcome = harness::run_control_experiment(&cfg)?;
            output::write_control(&args.out, &outcome, cfg.control.trajectory_stride)?;
            output::write_bounding_pairs(&args.out, &outcome.pairs)?;
            for p in GainPolicy::ALL {
                println!("{:<11} median post-transient max error {:.4}", p.name(), outcome.median_post_transient(p));
            }
        }
        Command::Oracle(args) => {
            if args.config.is_some() {
                return Err(Error::Config("the oracle suite takes no config file".into()));
            }
            prepare(&args.out)?;
            let seed = args.seed.unwrap_or(0);
            output::write_manifest(&args.out, "oracle", None)?;
            let reports = oracles::run_all(seed);
            output::write_checks(&args.out, &reports)?;
            for r in &reports {
                println!("{:<36} trials {:>5} worst {:>12.3e} {}", r.name, r.trials, r.worst_violation, if r.passed { "pass" } else { "FAIL" });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
