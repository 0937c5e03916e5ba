//! One experiment end to end: build the fabric, place the SSD's L2P table
//! through the LMB module when the scheme needs it, measure the per-access
//! cost on the resulting route, then run the closed-loop workload.

use alloc::string::String;
use alloc::vec::Vec;

use crate::expander::{DecoderEntry, Expander, Media, SatEntry};
use crate::fabric::{DeviceId, Fabric, FabricError, LatencyModel, NodeKind, RouteClass};
use crate::fm::{CapacityLedger, FabricManager, DEFAULT_BLOCK_SIZE};
use crate::lmb::{AccessError, DeviceFaults, DeviceOp, LmbError, Platform};
use crate::pipeline::{run_pipeline, LatencyStats, PipelineConfig, PipelineError};
use crate::ssd::{
    calibrate, FtlCalibration, FtlScheme, IndexCounters, IndexParams, IoClass, SsdError, SsdSpec,
};
use crate::workload::WorkloadSpec;
use crate::GIB;

pub const DEFAULT_EXPANDER_BYTES: u64 = 64 * GIB;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub ssd: SsdSpec,
    pub scheme: FtlScheme,
    pub workload: WorkloadSpec,
    pub latency: LatencyModel,
    pub index: IndexParams,
    pub fm_block_size: u64,
    pub expander_bytes: u64,
}

impl Scenario {
    pub fn new(
        name: impl Into<String>,
        ssd: SsdSpec,
        scheme: FtlScheme,
        workload: WorkloadSpec,
    ) -> Self {
        Self {
            name: name.into(),
            seed: 1,
            ssd,
            scheme,
            workload,
            latency: LatencyModel::default(),
            index: IndexParams::default(),
            fm_block_size: DEFAULT_BLOCK_SIZE,
            expander_bytes: DEFAULT_EXPANDER_BYTES,
        }
    }
}

/// Where the L2P table ended up.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct L2pPlacement {
    pub device: DeviceId,
    pub bytes: u64,
    pub mmid: u64,
    /// Bus address for a PCIe SSD, HPA for a CXL one.
    pub device_addr: u64,
    pub blocks: usize,
    pub route: RouteClass,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunReport {
    pub scenario: String,
    pub ssd_gen: u8,
    pub scheme: String,
    pub pattern: IoClass,
    pub qd: u32,
    pub io_size: u64,
    pub total_ios: u64,
    pub seed: u64,
    pub iops: f64,
    pub bw_mbps: f64,
    pub latency: LatencyStats,
    pub index_util: f64,
    pub media_util: f64,
    pub faults: u64,
    pub sim_ns: u64,
    pub events: u64,
    pub index_counters: IndexCounters,
    pub calibration: FtlCalibration,
    /// Measured cost of one remote L2P access; zero for onboard schemes.
    pub remote_access_ns: u64,
    pub l2p: Option<L2pPlacement>,
    pub fm: CapacityLedger,
    pub decoders: Vec<DecoderEntry>,
    pub sat: Vec<SatEntry>,
    pub device_faults: Vec<(DeviceId, DeviceFaults)>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Ssd(#[from] SsdError),
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error("LMB setup failed: {0}")]
    Lmb(#[from] LmbError),
    #[error("expander setup failed: {0}")]
    Expander(#[from] crate::expander::ExpanderError),
    #[error("fabric manager setup failed: {0}")]
    Fm(#[from] crate::fm::FmError),
    #[error("L2P access faulted: {error} (faults: {faults:?})")]
    Fault {
        error: AccessError,
        faults: Vec<(DeviceId, DeviceFaults)>,
    },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl RunError {
    /// Short code written into a failed sweep row.
    pub fn code(&self) -> &'static str {
        match self {
            RunError::Ssd(_) => "E_SSD",
            RunError::Fabric(_) => "E_FABRIC",
            RunError::Lmb(_) => "E_LMB",
            RunError::Expander(_) => "E_EXPANDER",
            RunError::Fm(_) => "E_FM",
            RunError::Fault { .. } => "E_FAULT",
            RunError::Pipeline(_) => "E_PIPELINE",
        }
    }
}

/// Host, SSD and expander on one switch. The SSD sits behind the host as a
/// PCIe endpoint unless the scheme reaches its index peer to peer, in which
/// case it is a CXL device with its own port.
pub fn build_platform(sc: &Scenario) -> Result<(Platform, DeviceId), RunError> {
    let gen = sc.ssd.pcie_gen;
    let mut f = Fabric::new();
    let host = f
        .attach("host0", NodeKind::Host { pcie_gen: gen })?
        .pbr()
        .expect("hosts get a port");
    let cxl = matches!(&sc.scheme, FtlScheme::Lmb(l) if l.route == RouteClass::CxlP2P);
    let ssd = if cxl {
        DeviceId::Cxl(
            f.attach("ssd0", NodeKind::CxlDevice)?
                .pbr()
                .expect("CXL devices get a port"),
        )
    } else {
        let kind = NodeKind::PcieDevice {
            behind: host,
            pcie_gen: gen,
        };
        DeviceId::Pcie(
            f.attach("ssd0", kind)?
                .pcie()
                .expect("PCIe devices are local"),
        )
    };
    f.attach("expander0", NodeKind::Expander)?;
    f.seal()?;
    let mut x = Expander::new(sc.expander_bytes);
    x.create_dmp(Media::Dram, sc.expander_bytes)?;
    x.set_pm_extra_ns(sc.latency.pm_extra_ns);
    let fm = FabricManager::new(&x, sc.fm_block_size)?;
    let mut p = Platform::new(f, x, fm, sc.latency.clone())?;
    p.init_lmb(host)?;
    Ok((p, ssd))
}

fn fault_dump(p: &Platform) -> Vec<(DeviceId, DeviceFaults)> {
    p.device_faults().iter().map(|(d, f)| (*d, *f)).collect()
}

/// Allocate the L2P region for an LMB scheme and time one lookup over it.
fn place_l2p(p: &mut Platform, ssd: DeviceId, bytes: u64) -> Result<(L2pPlacement, u64), RunError> {
    let host = p.fabric().hosts().next().expect("platform has a host");
    let (mmid, addr) = match ssd {
        DeviceId::Pcie(d) => {
            let a = p.lmb_pcie_alloc(d, bytes)?;
            (a.mmid, a.bus_addr)
        }
        DeviceId::Cxl(c) => {
            let a = p.lmb_cxl_alloc(host, c, bytes)?;
            (a.mmid, a.hpa)
        }
    };
    let probe = match p.device_mem_access(ssd, addr, DeviceOp::Read { len: 4 }) {
        Ok(o) => o,
        Err(error) => {
            return Err(RunError::Fault {
                error,
                faults: fault_dump(p),
            })
        }
    };
    let placement = L2pPlacement {
        device: ssd,
        bytes,
        mmid: mmid.0,
        device_addr: addr,
        blocks: p.held_blocks(host).len(),
        route: probe.route,
    };
    Ok((placement, probe.latency_ns))
}

pub fn run_scenario(sc: &Scenario) -> Result<RunReport, RunError> {
    sc.ssd.validate()?;
    sc.scheme.validate()?;
    let calibration = calibrate(&sc.ssd, &sc.index)?;
    let (mut platform, ssd) = build_platform(sc)?;
    let (l2p, remote_ns) = match &sc.scheme {
        FtlScheme::Lmb(_) => {
            let (pl, ns) = place_l2p(&mut platform, ssd, sc.ssd.l2p_bytes())?;
            (Some(pl), ns)
        }
        _ => (None, 0),
    };
    let cfg = PipelineConfig {
        calibration,
        scheme: sc.scheme.clone(),
        remote_ns,
        flash_read_ns: sc.latency.flash_read_ns,
        workload: sc.workload.clone(),
        device_pages: sc.ssd.pages(),
        seed: sc.seed,
        record_trace: false,
    };
    let r = run_pipeline(&cfg)?;
    let w = &sc.workload;
    Ok(RunReport {
        scenario: sc.name.clone(),
        ssd_gen: sc.ssd.pcie_gen.number(),
        scheme: sc.scheme.label().into(),
        pattern: w.pattern,
        qd: w.qd,
        io_size: w.io_size,
        total_ios: w.total_ios,
        seed: sc.seed,
        iops: r.iops,
        bw_mbps: r.iops * w.io_size as f64 / 1e6,
        latency: r.latency,
        index_util: r.index_util,
        media_util: r.media_util,
        faults: platform.fault_total(),
        sim_ns: r.sim_ns,
        events: r.events,
        index_counters: r.index,
        calibration,
        remote_access_ns: remote_ns,
        l2p,
        fm: platform.fm().query_capacity(),
        decoders: platform.expander().decoders().cloned().collect(),
        sat: platform.expander().sat_entries().cloned().collect(),
        device_faults: fault_dump(&platform),
    })
}
