//! Scenario config files (TOML).
//!
//! ```toml
//! [experiment]
//! name = "gen4-pcie"
//! seed = 7
//!
//! [ssd]
//! gen = "gen4"          # gen4 | gen5 | custom (then fill [ssd.custom])
//! capacity_tb = 7.68    # binary terabytes
//!
//! [scheme]
//! kind = "lmb-pcie"     # ideal | dftl | lmb | lmb-cxl | lmb-pcie
//!
//! [workload]
//! pattern = "randread"
//! total_ios = 200000
//!
//! [sweep]               # optional: cartesian product over dotted keys
//! "scheme.kind" = ["ideal", "lmb-cxl"]
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use lmb_sim_core::fabric::{LatencyModel, PcieGen, RouteClass};
use lmb_sim_core::fm::DEFAULT_BLOCK_SIZE;
use lmb_sim_core::scenario::{Scenario, DEFAULT_EXPANDER_BYTES};
use lmb_sim_core::ssd::{
    DftlConfig, FtlScheme, HitModel, IndexParams, IoClass, LmbIndex, SsdSpec,
    ENTRIES_PER_TRANSLATION_PAGE,
};
use lmb_sim_core::workload::{WorkloadSpec, DEFAULT_IO_SIZE, DEFAULT_QD, DEFAULT_TOTAL_IOS};
use lmb_sim_core::{GIB, MIB, PAGE_SIZE, TIB};
use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationFile;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// Dotted key, empty for document-level problems.
    pub path: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("config error")?;
        if !self.path.is_empty() {
            write!(f, " at `{}`", self.path)?;
        }
        if let Some(l) = self.line {
            write!(f, " (line {l})")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Experiment {
    pub name: String,
    pub seed: u64,
}

impl Default for Experiment {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSsd {
    pub pcie_gen: u8,
    pub rand_read_kiops: u64,
    pub rand_write_kiops: u64,
    pub seq_read_mbps: u64,
    pub seq_write_mbps: u64,
    pub rand_read_lat_ns: u64,
    pub rand_write_lat_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ssd {
    pub gen: String,
    pub capacity_tb: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomSsd>,
}

impl Default for Ssd {
    fn default() -> Self {
        Self {
            gen: "gen4".into(),
            capacity_tb: 7.68,
            custom: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Dftl {
    pub cmt_entries: u64,
    /// `lru` or `fixed_ratio(p)`.
    pub hit_model: String,
    pub entries_per_translation_page: u64,
    pub miss_on_media: bool,
    pub dirty_writeback: bool,
    pub writeback_ns: u64,
}

impl Default for Dftl {
    fn default() -> Self {
        let d = DftlConfig::default();
        Self {
            cmt_entries: d.cmt_capacity_entries,
            hit_model: "lru".into(),
            entries_per_translation_page: ENTRIES_PER_TRANSLATION_PAGE,
            miss_on_media: d.miss_on_media,
            dirty_writeback: d.dirty_writeback,
            writeback_ns: d.writeback_ns,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Lmb {
    /// `cxl` or `pcie`; implied by `lmb-cxl` / `lmb-pcie` kinds.
    pub route: String,
    pub onboard_hit_ratio: f64,
}

impl Default for Lmb {
    fn default() -> Self {
        Self {
            route: "cxl".into(),
            onboard_hit_ratio: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemeCfg {
    pub kind: String,
    pub dftl: Dftl,
    pub lmb: Lmb,
}

impl Default for SchemeCfg {
    fn default() -> Self {
        Self {
            kind: "ideal".into(),
            dftl: Dftl::default(),
            lmb: Lmb::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Workload {
    pub pattern: String,
    pub qd: u32,
    pub io_size: u64,
    pub total_ios: u64,
    /// Bytes; whole device when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub addr_space: Option<u64>,
}

impl Default for Workload {
    fn default() -> Self {
        Self {
            pattern: "randread".into(),
            qd: DEFAULT_QD,
            io_size: DEFAULT_IO_SIZE,
            total_ios: DEFAULT_TOTAL_IOS,
            addr_space: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationCfg {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FmCfg {
    pub block_size_mb: u64,
}

impl Default for FmCfg {
    fn default() -> Self {
        Self {
            block_size_mb: DEFAULT_BLOCK_SIZE / MIB,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpanderCfg {
    pub size_gb: u64,
}

impl Default for ExpanderCfg {
    fn default() -> Self {
        Self {
            size_gb: DEFAULT_EXPANDER_BYTES / GIB,
        }
    }
}

/// One scenario as written in a file, with every default filled in.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub experiment: Experiment,
    pub ssd: Ssd,
    pub scheme: SchemeCfg,
    pub workload: Workload,
    pub latency: LatencyModel,
    pub calibration: CalibrationCfg,
    pub fm: FmCfg,
    pub expander: ExpanderCfg,
}

// serde cannot combine `flatten` with `deny_unknown_fields`, so the scenario
// sections are repeated here
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct Document {
    experiment: Experiment,
    ssd: Ssd,
    scheme: SchemeCfg,
    workload: Workload,
    latency: LatencyModel,
    calibration: CalibrationCfg,
    fm: FmCfg,
    expander: ExpanderCfg,
    sweep: BTreeMap<String, Vec<toml::Value>>,
}

impl Document {
    fn split(self) -> (ScenarioConfig, BTreeMap<String, Vec<toml::Value>>) {
        let base = ScenarioConfig {
            experiment: self.experiment,
            ssd: self.ssd,
            scheme: self.scheme,
            workload: self.workload,
            latency: self.latency,
            calibration: self.calibration,
            fm: self.fm,
            expander: self.expander,
        };
        (base, self.sweep)
    }
}

/// A config file after defaults and sweep expansion.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub base: ScenarioConfig,
    /// One entry per sweep point, in sweep order; a single entry without a
    /// sweep.
    pub points: Vec<ScenarioConfig>,
    /// Directory relative paths resolve against.
    pub dir: PathBuf,
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())]
        .bytes()
        .filter(|&b| b == b'\n')
        .count()
        + 1
}

/// Line of `key = ...` inside `[table]` for a dotted path, best effort.
fn line_of_key(src: &str, path: &str) -> Option<usize> {
    let (table, key) = path.rsplit_once('.').unwrap_or(("", path));
    let mut current = String::new();
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if let Some(h) = line.strip_prefix('[').and_then(|l| l.split(']').next()) {
            current = h.trim_matches('[').trim().to_string();
            continue;
        }
        let Some((k, _)) = line.split_once('=') else {
            continue;
        };
        let k = k.trim().trim_matches('"');
        let full = if current.is_empty() {
            k.to_string()
        } else {
            format!("{current}.{k}")
        };
        if full == path || (current == table && k == key) {
            return Some(i + 1);
        }
    }
    None
}

fn de_error(src: &str, e: serde_path_to_error::Error<toml::de::Error>) -> ConfigError {
    let path = e.path().to_string();
    let inner = e.into_inner();
    let line = inner
        .span()
        .map(|s| line_of(src, s.start))
        .or_else(|| line_of_key(src, &path));
    ConfigError {
        path: if path == "." { String::new() } else { path },
        line,
        message: inner.message().trim().to_string(),
    }
}

fn err(src: &str, path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        path: path.into(),
        line: line_of_key(src, path),
        message: message.into(),
    }
}

pub fn parse_str(src: &str, dir: &Path) -> Result<LoadedConfig, ConfigError> {
    let de = toml::Deserializer::parse(src).map_err(|e| ConfigError {
        path: String::new(),
        line: e.span().map(|s| line_of(src, s.start)),
        message: e.message().trim().to_string(),
    })?;
    let doc: Document = serde_path_to_error::deserialize(de).map_err(|e| de_error(src, e))?;
    let (base, sweep) = doc.split();
    let mut points = vec![base.clone()];
    for (key, values) in &sweep {
        let path = format!("sweep.{key}");
        if values.is_empty() {
            return Err(err(src, &path, "sweep axis has no values"));
        }
        let mut next = Vec::with_capacity(points.len() * values.len());
        for p in &points {
            for v in values {
                next.push(apply_override(p, key, v).map_err(|m| err(src, &path, m))?);
            }
        }
        points = next;
    }
    let loaded = LoadedConfig {
        base,
        points,
        dir: dir.to_path_buf(),
    };
    // surface semantic errors at load time with line info
    for p in &loaded.points {
        to_scenario_checked(p, src)?;
    }
    Ok(loaded)
}

pub fn load(path: &Path) -> anyhow::Result<LoadedConfig> {
    let src = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_str(&src, &dir).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

fn apply_override(
    base: &ScenarioConfig,
    key: &str,
    value: &toml::Value,
) -> Result<ScenarioConfig, String> {
    let mut root = toml::Value::try_from(base).map_err(|e| e.to_string())?;
    let mut parts = key.split('.').peekable();
    let mut cur = &mut root;
    while let Some(part) = parts.next() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| format!("`{key}` does not name a config key"))?;
        if parts.peek().is_none() {
            table.insert(part.to_string(), value.clone());
            break;
        }
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    serde_path_to_error::deserialize::<_, ScenarioConfig>(root)
        .map_err(|e| format!("{}: {}", e.path(), e.inner()))
}

impl ScenarioConfig {
    /// Short identifier for sweep rows and report files.
    pub fn label(&self) -> String {
        format!(
            "{}-{}-{}-{}-qd{}",
            self.experiment.name,
            self.ssd.gen,
            self.scheme.kind,
            self.workload.pattern,
            self.workload.qd
        )
    }
}

fn parse_gen(s: &str) -> Option<PcieGen> {
    match s {
        "gen4" | "4" => Some(PcieGen::Gen4),
        "gen5" | "5" => Some(PcieGen::Gen5),
        _ => None,
    }
}

fn parse_hit_model(s: &str) -> Option<HitModel> {
    if s == "lru" {
        return Some(HitModel::Lru);
    }
    let p = s.strip_prefix("fixed_ratio(")?.strip_suffix(')')?;
    p.trim().parse().ok().map(HitModel::FixedRatio)
}

fn parse_route(s: &str) -> Option<RouteClass> {
    match s {
        "cxl" | "cxl_p2p" => Some(RouteClass::CxlP2P),
        "pcie" | "pcie_via_host" => Some(RouteClass::PcieViaHost),
        _ => None,
    }
}

fn to_scenario_checked(c: &ScenarioConfig, src: &str) -> Result<Scenario, ConfigError> {
    to_scenario_inner(c).map_err(|(path, msg)| err(src, path, msg))
}

type Fail = (&'static str, String);

fn to_scenario_inner(c: &ScenarioConfig) -> Result<Scenario, Fail> {
    let mut ssd = if c.ssd.gen == "custom" {
        let x = c.ssd.custom.as_ref().ok_or((
            "ssd.custom",
            "gen = \"custom\" needs an [ssd.custom] table".to_string(),
        ))?;
        SsdSpec {
            pcie_gen: PcieGen::from_number(x.pcie_gen).ok_or((
                "ssd.custom.pcie_gen",
                format!("unsupported PCIe generation {}", x.pcie_gen),
            ))?,
            capacity_bytes: 0,
            rand_read_kiops: x.rand_read_kiops,
            rand_write_kiops: x.rand_write_kiops,
            seq_read_mbps: x.seq_read_mbps,
            seq_write_mbps: x.seq_write_mbps,
            rand_read_lat_ns: x.rand_read_lat_ns,
            rand_write_lat_ns: x.rand_write_lat_ns,
        }
    } else {
        let gen = parse_gen(&c.ssd.gen).ok_or((
            "ssd.gen",
            format!("expected gen4, gen5 or custom, got `{}`", c.ssd.gen),
        ))?;
        SsdSpec::for_gen(gen)
    };
    if !(c.ssd.capacity_tb.is_finite() && c.ssd.capacity_tb > 0.0) {
        return Err(("ssd.capacity_tb", "capacity must be positive".into()));
    }
    ssd.capacity_bytes = ((c.ssd.capacity_tb * TIB as f64) as u64) & !(PAGE_SIZE - 1);
    ssd.validate().map_err(|e| ("ssd", e.to_string()))?;

    let d = &c.scheme.dftl;
    let route = |kind: &str| -> Result<RouteClass, Fail> {
        let implied = match kind {
            "lmb-cxl" => Some(RouteClass::CxlP2P),
            "lmb-pcie" => Some(RouteClass::PcieViaHost),
            _ => None,
        };
        let given = parse_route(&c.scheme.lmb.route).ok_or((
            "scheme.lmb.route",
            format!("expected cxl or pcie, got `{}`", c.scheme.lmb.route),
        ))?;
        Ok(implied.unwrap_or(given))
    };
    let scheme = match c.scheme.kind.as_str() {
        "ideal" => FtlScheme::Ideal,
        "dftl" => FtlScheme::Dftl(DftlConfig {
            cmt_capacity_entries: d.cmt_entries,
            entries_per_translation_page: d.entries_per_translation_page,
            hit_model: parse_hit_model(&d.hit_model).ok_or((
                "scheme.dftl.hit_model",
                format!("expected lru or fixed_ratio(p), got `{}`", d.hit_model),
            ))?,
            miss_on_media: d.miss_on_media,
            dirty_writeback: d.dirty_writeback,
            writeback_ns: d.writeback_ns,
        }),
        k @ ("lmb" | "lmb-cxl" | "lmb-pcie") => FtlScheme::Lmb(LmbIndex {
            route: route(k)?,
            onboard_hit_ratio: c.scheme.lmb.onboard_hit_ratio,
        }),
        other => {
            return Err((
                "scheme.kind",
                format!("expected ideal, dftl, lmb, lmb-cxl or lmb-pcie, got `{other}`"),
            ))
        }
    };
    scheme.validate().map_err(|e| {
        let path = match &scheme {
            FtlScheme::Lmb(_) => "scheme.lmb.onboard_hit_ratio",
            _ => "scheme.dftl",
        };
        (path, e.to_string())
    })?;

    let w = &c.workload;
    let pattern = IoClass::from_name(&w.pattern).ok_or((
        "workload.pattern",
        format!(
            "expected seqread, randread, seqwrite or randwrite, got `{}`",
            w.pattern
        ),
    ))?;
    let workload = WorkloadSpec {
        pattern,
        qd: w.qd,
        io_size: w.io_size,
        total_ios: w.total_ios,
        addr_space: w.addr_space,
    };
    workload.validate().map_err(|e| {
        use lmb_sim_core::workload::WorkloadError as W;
        let path = match e {
            W::ZeroQd => "workload.qd",
            W::IoSize(_) => "workload.io_size",
            W::TooFewIos { .. } => "workload.total_ios",
            W::AddrSpace { .. } => "workload.addr_space",
        };
        (path, e.to_string())
    })?;
    if c.fm.block_size_mb == 0 {
        return Err(("fm.block_size_mb", "block size must be positive".into()));
    }
    if c.expander.size_gb == 0 {
        return Err(("expander.size_gb", "expander size must be positive".into()));
    }
    Ok(Scenario {
        name: c.label(),
        seed: c.experiment.seed,
        ssd,
        scheme,
        workload,
        latency: c.latency.clone(),
        index: IndexParams::default(),
        fm_block_size: c.fm.block_size_mb * MIB,
        expander_bytes: c.expander.size_gb * GIB,
    })
}

/// Turn one config point into a runnable scenario, resolving the
/// calibration file against `dir`.
pub fn to_scenario(c: &ScenarioConfig, dir: &Path) -> anyhow::Result<Scenario> {
    let mut sc = to_scenario_inner(c).map_err(|(path, msg)| {
        anyhow::Error::new(ConfigError {
            path: path.into(),
            line: None,
            message: msg,
        })
    })?;
    if let Some(f) = &c.calibration.file {
        let path = if f.is_absolute() {
            f.clone()
        } else {
            dir.join(f)
        };
        let cal = CalibrationFile::load(&path)?;
        sc.index = cal.index_for(sc.ssd.pcie_gen)?;
    }
    Ok(sc)
}
