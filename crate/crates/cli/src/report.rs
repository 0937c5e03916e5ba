//! CSV rows, per-run JSON and the normalized comparison table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use lmb_sim_core::scenario::{RunReport, Scenario};
use serde::Serialize;

use crate::config::ScenarioConfig;

/// Column order of the results CSV.
pub const CSV_COLUMNS: [&str; 18] = [
    "scenario",
    "ssd_gen",
    "scheme",
    "pattern",
    "qd",
    "io_size",
    "total_ios",
    "seed",
    "iops",
    "bw_mbps",
    "lat_mean_ns",
    "lat_p50_ns",
    "lat_p99_ns",
    "lat_p999_ns",
    "index_util",
    "media_util",
    "faults",
    "sim_ns",
];

/// Result of one sweep point.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub config: ScenarioConfig,
    pub scenario: Option<Scenario>,
    pub result: Result<RunReport, RunFailure>,
    pub wall_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunFailure {
    pub code: String,
    pub message: String,
}

fn fixed(v: f64, places: usize) -> String {
    format!("{v:.places$}")
}

/// Fields in [`CSV_COLUMNS`] order. Failed runs keep their identifying
/// columns, carry the error code in `faults` and leave the metrics empty.
pub fn csv_record(o: &RunOutcome) -> Vec<String> {
    let c = &o.config;
    let head = |gen: String, scheme: String, pattern: String| {
        vec![
            c.label(),
            gen,
            scheme,
            pattern,
            c.workload.qd.to_string(),
            c.workload.io_size.to_string(),
            c.workload.total_ios.to_string(),
            c.experiment.seed.to_string(),
        ]
    };
    match &o.result {
        Ok(r) => {
            let mut row = head(
                r.ssd_gen.to_string(),
                r.scheme.clone(),
                r.pattern.to_string(),
            );
            row.extend([
                fixed(r.iops, 1),
                fixed(r.bw_mbps, 3),
                fixed(r.latency.mean_ns, 1),
                r.latency.p50_ns.to_string(),
                r.latency.p99_ns.to_string(),
                r.latency.p999_ns.to_string(),
                fixed(r.index_util, 4),
                fixed(r.media_util, 4),
                r.faults.to_string(),
                r.sim_ns.to_string(),
            ]);
            row
        }
        Err(f) => {
            let gen = c.ssd.gen.trim_start_matches("gen").to_string();
            let mut row = head(gen, c.scheme.kind.clone(), c.workload.pattern.clone());
            row.extend((0..10).map(|i| {
                if i == 8 {
                    f.code.clone()
                } else {
                    String::new()
                }
            }));
            row
        }
    }
}

pub fn write_csv<W: std::io::Write>(w: W, outcomes: &[RunOutcome]) -> anyhow::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(CSV_COLUMNS)?;
    for o in outcomes {
        wr.write_record(csv_record(o))?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct RunJson<'a> {
    config: &'a ScenarioConfig,
    scenario: Option<&'a Scenario>,
    report: Option<&'a RunReport>,
    error: Option<&'a RunFailure>,
    wall_ms: u128,
}

pub fn run_json(o: &RunOutcome) -> anyhow::Result<String> {
    let j = RunJson {
        config: &o.config,
        scenario: o.scenario.as_ref(),
        report: o.result.as_ref().ok(),
        error: o.result.as_ref().err(),
        wall_ms: o.wall_ms,
    };
    Ok(serde_json::to_string_pretty(&j)?)
}

/// Throughput of each scheme relative to the onboard-DRAM run with the same
/// device, pattern, queue depth, IO size, IO count and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedRow {
    pub ssd_gen: u8,
    pub pattern: String,
    pub ideal_iops: f64,
    /// scheme label -> normalized throughput
    pub ratios: BTreeMap<String, f64>,
}

pub fn normalize(outcomes: &[RunOutcome]) -> Vec<NormalizedRow> {
    type Key = (u8, String, u32, u64, u64, u64);
    let key = |r: &RunReport| -> Key {
        (
            r.ssd_gen,
            r.pattern.to_string(),
            r.qd,
            r.io_size,
            r.total_ios,
            r.seed,
        )
    };
    let mut groups: Vec<(Key, Vec<&RunReport>)> = Vec::new();
    for r in outcomes.iter().filter_map(|o| o.result.as_ref().ok()) {
        let k = key(r);
        match groups.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(r),
            None => groups.push((k, vec![r])),
        }
    }
    groups
        .into_iter()
        .filter_map(|(k, runs)| {
            let ideal = runs.iter().find(|r| r.scheme == "ideal")?.iops;
            let ratios = runs
                .iter()
                .map(|r| (r.scheme.clone(), r.iops / ideal))
                .collect();
            Some(NormalizedRow {
                ssd_gen: k.0,
                pattern: k.1,
                ideal_iops: ideal,
                ratios,
            })
        })
        .collect()
}

const SCHEME_ORDER: [&str; 4] = ["ideal", "dftl", "lmb-cxl", "lmb-pcie"];

pub fn normalized_table(rows: &[NormalizedRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<5} {:<10} {:>12} {:>8} {:>8} {:>8} {:>8}",
        "ssd", "pattern", "ideal_kiops", "ideal", "dftl", "lmb-cxl", "lmb-pcie"
    );
    for r in rows {
        let _ = write!(
            s,
            "gen{:<2} {:<10} {:>12.1}",
            r.ssd_gen,
            r.pattern,
            r.ideal_iops / 1e3
        );
        for name in SCHEME_ORDER {
            match r.ratios.get(name) {
                Some(v) => {
                    let _ = write!(s, " {v:>8.3}");
                }
                None => {
                    let _ = write!(s, " {:>8}", "-");
                }
            }
        }
        s.push('\n');
    }
    s
}

pub fn write_normalized_csv<W: std::io::Write>(w: W, rows: &[NormalizedRow]) -> anyhow::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["ssd_gen", "pattern", "scheme", "normalized_iops"])?;
    for r in rows {
        for name in SCHEME_ORDER {
            if let Some(v) = r.ratios.get(name) {
                wr.write_record([
                    r.ssd_gen.to_string(),
                    r.pattern.clone(),
                    name.to_string(),
                    fixed(*v, 4),
                ])?;
            }
        }
    }
    wr.flush()?;
    Ok(())
}

/// Aligned per-run summary for the terminal.
pub fn summary_table(outcomes: &[RunOutcome]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<40} {:>12} {:>10} {:>12} {:>10} {:>10} {:>7} {:>7}",
        "scenario", "kiops", "MB/s", "lat_mean_us", "p99_us", "p999_us", "idx%", "media%"
    );
    for o in outcomes {
        let name = o.config.label();
        match &o.result {
            Ok(r) => {
                let _ = writeln!(
                    s,
                    "{:<40} {:>12.1} {:>10.1} {:>12.2} {:>10.2} {:>10.2} {:>7.1} {:>7.1}",
                    name,
                    r.iops / 1e3,
                    r.bw_mbps,
                    r.latency.mean_ns / 1e3,
                    r.latency.p99_ns as f64 / 1e3,
                    r.latency.p999_ns as f64 / 1e3,
                    r.index_util * 100.0,
                    r.media_util * 100.0
                );
            }
            Err(f) => {
                let _ = writeln!(s, "{:<40} {} {}", name, f.code, f.message);
            }
        }
    }
    s
}
