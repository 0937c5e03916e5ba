use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use lmb_sim::calibration::{fit_and_calibrate, CalibrationFile, ReproductionTargets};
use lmb_sim::config;
use lmb_sim::profile;
use lmb_sim::report::{self, RunOutcome};
use lmb_sim::sweep::{self, Prepared};
use lmb_sim_core::fabric::PcieGen;
use lmb_sim_core::workload::DEFAULT_TOTAL_IOS;

#[derive(Parser)]
#[command(
    name = "lmb-sim",
    version,
    about = "Linked-memory-buffer SSD index simulator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Source {
    /// Scenario config (TOML)
    config: Option<PathBuf>,
    /// Use a built-in sweep instead of a config file
    #[arg(long)]
    profile: Option<String>,
    /// Override experiment.seed for every scenario
    #[arg(long)]
    seed: Option<u64>,
    /// Override workload.total_ios for every scenario
    #[arg(long)]
    total_ios: Option<u64>,
    /// Run scenarios one after another
    #[arg(long)]
    serial: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a config (every sweep point) and print the results
    Run {
        #[command(flatten)]
        src: Source,
        /// Also write the per-run JSON reports here
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run a sweep and write results.csv, normalized.csv and per-run JSON
    Sweep {
        #[command(flatten)]
        src: Source,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a device's index stage to reproduction targets and write a calibration file
    Calibrate {
        #[arg(long, value_parser = ["gen4", "gen5"])]
        ssd: String,
        /// Targets file, e.g. profiles/figure5-targets.toml
        #[arg(long)]
        fit: PathBuf,
        /// Calibration file to create or update; stdout when absent
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_points(src: &Source) -> anyhow::Result<Vec<Prepared>> {
    let mut prepared = match (&src.profile, &src.config) {
        (Some(_), Some(_)) => bail!("give either a config file or --profile, not both"),
        (Some(p), None) => profile::by_name(
            p,
            src.total_ios.unwrap_or(DEFAULT_TOTAL_IOS),
            src.seed.unwrap_or(1),
        )?,
        (None, Some(path)) => {
            let loaded = config::load(path)?;
            let mut points = loaded.points;
            for p in &mut points {
                if let Some(s) = src.seed {
                    p.experiment.seed = s;
                }
                if let Some(n) = src.total_ios {
                    p.workload.total_ios = n;
                }
            }
            sweep::prepare(&points, &loaded.dir)
        }
        (None, None) => bail!("a config file or --profile is required"),
    };
    // overrides already applied to the configs; mirror them into the scenarios
    for p in &mut prepared {
        if let Ok(sc) = p.scenario.as_mut() {
            sc.seed = p.config.experiment.seed;
            sc.workload.total_ios = p.config.workload.total_ios;
        }
    }
    Ok(prepared)
}

fn write_json_reports(dir: &Path, outcomes: &[RunOutcome]) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (i, o) in outcomes.iter().enumerate() {
        let path = dir.join(format!("{i:03}-{}.json", o.config.label()));
        fs::write(&path, report::run_json(o)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn print_results(outcomes: &[RunOutcome]) {
    print!("{}", report::summary_table(outcomes));
    let rows = report::normalize(outcomes);
    if !rows.is_empty() {
        println!();
        print!("{}", report::normalized_table(&rows));
    }
}

fn any_failed(outcomes: &[RunOutcome]) -> bool {
    outcomes.iter().any(|o| o.result.is_err())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.cmd {
        Cmd::Run { src, json } => {
            let points = load_points(&src)?;
            let outcomes = sweep::run_all(&points, !src.serial);
            print_results(&outcomes);
            if let Some(dir) = json {
                write_json_reports(&dir, &outcomes)?;
            }
            Ok(!any_failed(&outcomes))
        }
        Cmd::Sweep { src, out } => {
            let points = load_points(&src)?;
            let outcomes = sweep::run_all(&points, !src.serial);
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            report::write_csv(fs::File::create(out.join("results.csv"))?, &outcomes)?;
            let rows = report::normalize(&outcomes);
            report::write_normalized_csv(fs::File::create(out.join("normalized.csv"))?, &rows)?;
            write_json_reports(&out.join("runs"), &outcomes)?;
            print_results(&outcomes);
            eprintln!(
                "wrote {} rows to {}",
                outcomes.len(),
                out.join("results.csv").display()
            );
            Ok(!any_failed(&outcomes))
        }
        Cmd::Calibrate { ssd, fit, out } => {
            let gen = if ssd == "gen4" {
                PcieGen::Gen4
            } else {
                PcieGen::Gen5
            };
            let targets = ReproductionTargets::load(&fit)?;
            let (result, rec) = fit_and_calibrate(gen, &targets)?;
            eprintln!(
                "{ssd}: E={} s_idx={}ns n_read={} n_write={} k={} sse={:.5} constraints {}",
                rec.index.engines,
                rec.index.service_ns,
                rec.index.n_read,
                rec.index.n_write,
                rec.index.seq_coalesce,
                result.sse,
                if result.constraints_met {
                    "met"
                } else {
                    "NOT met"
                }
            );
            eprintln!(
                "{:<9} {:<10} {:>7} {:>9} {:>8}",
                "scheme", "pattern", "target", "predicted", "resid"
            );
            for r in &result.residuals {
                eprintln!(
                    "{:<9} {:<10} {:>7.3} {:>9.3} {:>+8.3}",
                    r.scheme,
                    r.class.to_string(),
                    r.target,
                    r.predicted,
                    r.predicted - r.target
                );
            }
            let mut file = match &out {
                Some(p) if p.exists() => CalibrationFile::load(p)?,
                _ => CalibrationFile::default(),
            };
            file.set_device(gen, rec);
            let fit_name = fit.file_name().map_or_else(
                || fit.display().to_string(),
                |n| n.to_string_lossy().into_owned(),
            );
            file.provenance = format!(
                "Generated by `lmb-sim calibrate --fit {fit_name}` (grid search, default fit options,\n\
                 default latency model). Index parameters are fitted; media values follow from\n\
                 the SSD datasheet figures and are recomputed at run time."
            );
            let text = file.to_toml()?;
            match out {
                Some(p) => {
                    fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?
                }
                None => std::io::stdout().write_all(text.as_bytes())?,
            }
            Ok(result.constraints_met)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
