//! Built-in sweeps.

use lmb_sim_core::ssd::IoClass;

use crate::calibration::CalibrationFile;
use crate::config::ScenarioConfig;
use crate::sweep::Prepared;

/// Fitted index parameters shipped with the reproduction profile.
pub const REPRODUCTION_CALIBRATION: &str =
    include_str!("../../../profiles/figure5-calibration.toml");
/// Normalized targets the calibration was fitted to.
pub const REPRODUCTION_TARGETS: &str = include_str!("../../../profiles/figure5-targets.toml");

pub const COMPARED_SCHEMES: [&str; 4] = ["ideal", "dftl", "lmb-cxl", "lmb-pcie"];

/// 2 devices x 4 patterns x 4 schemes at QD64 / 4 KiB. The flash-backed
/// scheme misses on every lookup.
pub fn reproduction_points(total_ios: u64, seed: u64) -> Vec<ScenarioConfig> {
    let mut out = Vec::new();
    for gen in ["gen4", "gen5"] {
        for pattern in IoClass::ALL {
            for scheme in COMPARED_SCHEMES {
                let mut c = ScenarioConfig::default();
                c.experiment.name = "figure5".into();
                c.experiment.seed = seed;
                c.ssd.gen = gen.into();
                c.scheme.kind = scheme.into();
                c.scheme.dftl.hit_model = "fixed_ratio(0)".into();
                c.workload.pattern = pattern.name().into();
                c.workload.total_ios = total_ios;
                out.push(c);
            }
        }
    }
    out
}

pub fn reproduction(total_ios: u64, seed: u64) -> anyhow::Result<Vec<Prepared>> {
    let cal = CalibrationFile::parse(REPRODUCTION_CALIBRATION)?;
    let mut prepared = crate::sweep::prepare(
        &reproduction_points(total_ios, seed),
        std::path::Path::new("."),
    );
    for p in &mut prepared {
        if let Ok(sc) = p.scenario.as_mut() {
            sc.index = cal.index_for(sc.ssd.pcie_gen)?;
        }
    }
    Ok(prepared)
}

pub fn by_name(name: &str, total_ios: u64, seed: u64) -> anyhow::Result<Vec<Prepared>> {
    match name {
        "figure5" => reproduction(total_ios, seed),
        other => anyhow::bail!("unknown profile `{other}` (known: figure5)"),
    }
}
