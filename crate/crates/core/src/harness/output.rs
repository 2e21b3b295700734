//! CSV and manifest writers for experiment results.

use std::fs;
use std::path::Path;

use super::{ControlOutcome, ExperimentConfig, PairRecord, ResultRow};
use crate::error::Result;
use crate::oracles::CheckReport;

pub fn write_results(dir: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("results.csv"))?;
    w.write_record(["method", "train_size", "repetition", "seed", "violation_rate", "wall_time"])?;
    for r in rows {
        w.write_record([
            r.method.name().to_string(),
            r.train_size.to_string(),
            r.repetition.to_string(),
            r.seed.to_string(),
            r.violation_rate.to_string(),
            format!("{:.6}", r.wall_time),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_bounding_pairs(dir: &Path, pairs: &[PairRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("bounding_pairs.csv"))?;
    let d = pairs.iter().map(|p| p.theta0.dim()).max().unwrap_or(0);
    let names: Vec<String> = (1..=d).map(|i| format!("ell_{i}")).chain(["signal_variance".into(), "noise_variance".into()]).collect();
    let mut header: Vec<String> = vec!["train_size".into(), "repetition".into()];
    for prefix in ["theta0", "lower", "upper"] {
        header.extend(names.iter().map(|n| format!("{prefix}_{n}")));
    }
    header.extend(["delta", "achieved_mass", "gamma", "beta_bar", "contains_truth"].map(String::from));
    w.write_record(&header)?;
    for p in pairs {
        let mut row = vec![p.train_size.to_string(), p.repetition.to_string()];
        for h in [&p.theta0, &p.pair.lower, &p.pair.upper] {
            row.extend(h.lengthscales.iter().map(|v| format!("{v:e}")));
            row.extend(std::iter::repeat_n(String::new(), d - h.dim()));
            row.push(format!("{:e}", h.signal_variance));
            row.push(format!("{:e}", h.noise_variance));
        }
        row.push(p.pair.delta.to_string());
        row.push(p.pair.achieved_mass.to_string());
        row.push(format!("{:e}", p.pair.gamma));
        row.push(format!("{:e}", p.beta_bar));
        row.push(p.contains_truth.map_or(String::new(), |c| c.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_checks(dir: &Path, reports: &[CheckReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("checks.csv"))?;
    w.write_record(["name", "trials", "worst_violation", "tolerance", "passed", "seeds"])?;
    for r in reports {
        let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
        w.write_record([
            r.name.clone(),
            r.trials.to_string(),
            format!("{:e}", r.worst_violation),
            format!("{:e}", r.tolerance),
            r.passed.to_string(),
            seeds.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `control_summary.csv` (per-time deciles), `control_runs.csv` and one
/// trajectory file per run under `trajectories/`.
pub fn write_control(dir: &Path, outcome: &ControlOutcome, stride: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("control_summary.csv"))?;
    w.write_record(["policy", "time", "p10", "median", "p90"])?;
    for r in &outcome.summary {
        w.write_record([r.policy.name().to_string(), format!("{:.6}", r.time), r.p10.to_string(), r.median.to_string(), r.p90.to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("control_runs.csv"))?;
    w.write_record(["policy", "run", "initial_state", "max_error_post_transient", "diverged"])?;
    for r in &outcome.runs {
        let x0: Vec<String> = r.initial_state.iter().map(|v| v.to_string()).collect();
        w.write_record([r.policy.name().to_string(), r.index.to_string(), x0.join(";"), r.max_error_post_transient.to_string(), r.diverged.to_string()])?;
    }
    w.flush()?;

    let tdir = dir.join("trajectories");
    fs::create_dir_all(&tdir)?;
    for r in &outcome.runs {
        let t = &r.trajectory;
        let keep: Vec<usize> = (0..t.len()).step_by(stride.max(1)).collect();
        let thinned = crate::control::Trajectory {
            times: keep.iter().map(|&k| t.times[k]).collect(),
            states: keep.iter().map(|&k| t.states[k].clone()).collect(),
            inputs: keep.iter().map(|&k| t.inputs[k]).collect(),
            error_norms: keep.iter().map(|&k| t.error_norms[k]).collect(),
        };
        let f = fs::File::create(tdir.join(format!("{}_{:03}.csv", r.policy.name(), r.index)))?;
        thinned.write_csv(std::io::BufWriter::new(f))?;
    }
    Ok(())
}

/// `run_manifest.toml`: command, package version and the resolved config.
pub fn write_manifest(dir: &Path, command: &str, cfg: Option<&ExperimentConfig>) -> Result<()> {
    let mut t = toml::Table::new();
    t.insert("command".into(), command.into());
    t.insert("package".into(), env!("CARGO_PKG_NAME").into());
    t.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    t.insert("threads".into(), (rayon::current_num_threads() as i64).into());
    if let Some(cfg) = cfg {
        let v = toml::Value::try_from(cfg).map_err(|e| crate::error::Error::Config(e.to_string()))?;
        t.insert("config".into(), v);
    }
    let text = toml::to_string_pretty(&t).map_err(|e| crate::error::Error::Config(e.to_string()))?;
    fs::write(dir.join("run_manifest.toml"), text)?;
    Ok(())
}
