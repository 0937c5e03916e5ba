//! Calibration files and reproduction target files.

use std::path::Path;

use anyhow::{anyhow, Context};
use lmb_sim_core::fabric::{LatencyModel, PcieGen};
use lmb_sim_core::fit::{fit_device, DeviceTargets, FitOptions, FitResult, Residual};
use lmb_sim_core::ssd::{calibrate, IndexParams, PerClass, SsdSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceCalibration {
    pub index: IndexParams,
    pub media_units: u32,
    pub media_service_ns: PerClass<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraints_met: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub residuals: Vec<Residual>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    /// Where the numbers came from; also written as a leading comment.
    #[serde(default)]
    pub provenance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen4: Option<DeviceCalibration>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen5: Option<DeviceCalibration>,
}

impl CalibrationFile {
    pub fn parse(src: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(src)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let src = std::fs::read_to_string(path)
            .with_context(|| format!("reading calibration {}", path.display()))?;
        Self::parse(&src).with_context(|| format!("parsing calibration {}", path.display()))
    }

    pub fn device(&self, gen: PcieGen) -> Option<&DeviceCalibration> {
        match gen {
            PcieGen::Gen4 => self.gen4.as_ref(),
            PcieGen::Gen5 => self.gen5.as_ref(),
        }
    }

    pub fn set_device(&mut self, gen: PcieGen, d: DeviceCalibration) {
        match gen {
            PcieGen::Gen4 => self.gen4 = Some(d),
            PcieGen::Gen5 => self.gen5 = Some(d),
        }
    }

    /// Index parameters for a device. The media table is informational; runs
    /// recompute it from the SSD spec.
    pub fn index_for(&self, gen: PcieGen) -> anyhow::Result<IndexParams> {
        self.device(gen)
            .map(|d| d.index)
            .ok_or_else(|| anyhow!("calibration has no gen{} record", gen.number()))
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        let mut out = String::new();
        for line in self.provenance.lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        out.push('\n');
        out.push_str(&toml::to_string_pretty(self)?);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReproductionTargets {
    pub gen4: DeviceTargets,
    pub gen5: DeviceTargets,
}

impl ReproductionTargets {
    pub fn parse(src: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(src)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let src = std::fs::read_to_string(path)
            .with_context(|| format!("reading targets {}", path.display()))?;
        Self::parse(&src).with_context(|| format!("parsing targets {}", path.display()))
    }

    pub fn device(&self, gen: PcieGen) -> &DeviceTargets {
        match gen {
            PcieGen::Gen4 => &self.gen4,
            PcieGen::Gen5 => &self.gen5,
        }
    }
}

/// Fit one device and package the result with its media table.
pub fn fit_and_calibrate(
    gen: PcieGen,
    targets: &ReproductionTargets,
) -> anyhow::Result<(FitResult, DeviceCalibration)> {
    let spec = SsdSpec::for_gen(gen);
    let fit = fit_device(
        &spec,
        targets.device(gen),
        &LatencyModel::default(),
        &FitOptions::default(),
    );
    let cal = calibrate(&spec, &fit.params)?;
    let rec = DeviceCalibration {
        index: cal.index,
        media_units: cal.media_units,
        media_service_ns: cal.media_service_ns,
        sse: Some(fit.sse),
        constraints_met: Some(fit.constraints_met),
        residuals: fit.residuals.clone(),
    };
    Ok((fit, rec))
}
