//! The LMB kernel module and the platform it runs on.
//!
//! Each host runs one module instance. A module obtains blocks from the fabric
//! manager, sub-allocates them to devices, and programs the matching access
//! control: IOMMU mappings for PCIe devices, SAT entries for CXL devices.
//!
//! ```text
//!  PCIe dev --bus addr--> [host IOMMU] --hpa, host-tagged--> expander (SAT bypassed)
//!  CXL dev  --hpa, SPID-tagged-------------------------->  expander (SAT checked)
//! ```

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use crate::expander::{Expander, ExpanderError, MemAccessRequest, MemFault, MemRequester};
use crate::fabric::{
    access_latency, DeviceId, Fabric, FabricError, HostId, LatencyModel, PbrId, PcieDevId,
    RouteClass,
};
use crate::fm::{BlockId, FabricManager, FmError, MemoryBlock};
use crate::interval::IntervalSet;
use crate::sim::SimTime;
use crate::PAGE_SIZE;

/// Device-visible IOVA space starts here for every PCIe device.
pub const IOVA_BASE: u64 = 1 << 32;

/// Memory id, unique within one host. Zero is never handed out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Mmid(pub u64);

impl fmt::Display for Mmid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MemRegion {
    pub mmid: Mmid,
    pub owner: DeviceId,
    pub sharers: BTreeSet<DeviceId>,
    pub hpa_base: u64,
    pub size_bytes: u64,
    /// First block of the region's extent.
    pub block_id: BlockId,
    /// Device-visible address per accessor: bus address for PCIe devices,
    /// HPA for CXL devices.
    pub bus_mappings: BTreeMap<DeviceId, u64>,
}

impl MemRegion {
    pub fn hpa_range(&self) -> Range<u64> {
        self.hpa_base..self.hpa_base + self.size_bytes
    }

    pub fn accessors(&self) -> impl Iterator<Item = DeviceId> + '_ {
        core::iter::once(self.owner).chain(self.sharers.iter().copied())
    }

    pub fn has_accessor(&self, d: DeviceId) -> bool {
        self.owner == d || self.sharers.contains(&d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IommuMapping {
    pub device: PcieDevId,
    pub bus_base: u64,
    pub hpa_base: u64,
    pub size_bytes: u64,
}

#[derive(Debug, Clone, Default)]
struct DeviceIommu {
    maps: BTreeMap<u64, IommuMapping>,
    next_bus: u64,
}

impl DeviceIommu {
    fn translate(&self, bus: u64, len: u64) -> Option<u64> {
        let (_, m) = self.maps.range(..=bus).next_back()?;
        let end = bus.checked_add(len)?;
        (end <= m.bus_base + m.size_bytes).then(|| m.hpa_base + (bus - m.bus_base))
    }
}

/// One FM block, or several HPA-contiguous blocks fused for a large region.
#[derive(Debug, Clone)]
struct Extent {
    blocks: Vec<MemoryBlock>,
    hpa_base: u64,
    size: u64,
    free: IntervalSet,
    live: u32,
    dedicated: bool,
}

impl Extent {
    fn new(blocks: Vec<MemoryBlock>, dedicated: bool) -> Self {
        let hpa_base = blocks[0].hpa_base;
        let size = blocks.iter().map(|b| b.size_bytes).sum();
        Self {
            blocks,
            hpa_base,
            size,
            free: IntervalSet::from_range(hpa_base..hpa_base + size),
            live: 0,
            dedicated,
        }
    }

    fn contains(&self, hpa: &Range<u64>) -> bool {
        self.hpa_base <= hpa.start && hpa.end <= self.hpa_base + self.size
    }

    /// DPA pieces backing an HPA range inside this extent.
    fn dpa_pieces(&self, hpa: &Range<u64>) -> Vec<Range<u64>> {
        self.blocks
            .iter()
            .filter_map(|b| {
                let lo = hpa.start.max(b.hpa_base);
                let hi = hpa.end.min(b.hpa_base + b.size_bytes);
                (lo < hi).then(|| b.dpa_base + (lo - b.hpa_base)..b.dpa_base + (hi - b.hpa_base))
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
struct LmbModule {
    initialized: bool,
    extents: Vec<Extent>,
    regions: BTreeMap<Mmid, MemRegion>,
    next_mmid: u64,
    iommu: BTreeMap<PcieDevId, DeviceIommu>,
}

impl LmbModule {
    fn new() -> Self {
        Self {
            initialized: false,
            extents: Vec::new(),
            regions: BTreeMap::new(),
            next_mmid: 1,
            iommu: BTreeMap::new(),
        }
    }

    fn extent_of(&self, hpa: &Range<u64>) -> usize {
        self.extents
            .iter()
            .position(|e| e.contains(hpa))
            .expect("region outside every extent")
    }

    fn map_iommu(&mut self, dev: PcieDevId, hpa: u64, size: u64) -> u64 {
        let t = self.iommu.entry(dev).or_insert_with(|| DeviceIommu {
            maps: BTreeMap::new(),
            next_bus: IOVA_BASE,
        });
        let bus = t.next_bus;
        t.next_bus += size;
        t.maps.insert(
            bus,
            IommuMapping {
                device: dev,
                bus_base: bus,
                hpa_base: hpa,
                size_bytes: size,
            },
        );
        bus
    }

    fn unmap_iommu(&mut self, dev: PcieDevId, bus: u64) {
        if let Some(t) = self.iommu.get_mut(&dev) {
            t.maps.remove(&bus);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LmbError {
    #[error("LMB module on host {0} is not initialized")]
    NotInitialized(HostId),
    #[error("allocation size must be positive")]
    ZeroSize,
    #[error("device {0} is not attached")]
    UnknownDevice(DeviceId),
    #[error("host {0} is not attached")]
    UnknownHost(HostId),
    #[error("mmid {0} does not exist")]
    UnknownMmid(Mmid),
    #[error("{caller} may not free mmid {mmid}; owner is {owner}")]
    NotOwner {
        mmid: Mmid,
        owner: DeviceId,
        caller: DeviceId,
    },
    #[error(transparent)]
    Fm(#[from] FmError),
    #[error(transparent)]
    Expander(#[from] ExpanderError),
    #[error(transparent)]
    Fabric(#[from] FabricError),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AccessError {
    #[error("IOMMU fault: {dev} has no mapping for bus address {addr:#x}+{len}")]
    Iommu { dev: PcieDevId, addr: u64, len: u64 },
    #[error(transparent)]
    Mem(#[from] MemFault),
    #[error("device {0} is not attached")]
    UnknownDevice(DeviceId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PcieAlloc {
    pub bus_addr: u64,
    pub mmid: Mmid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CxlAlloc {
    pub hpa: u64,
    pub dpid: PbrId,
    pub mmid: Mmid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CxlShare {
    pub hpa: u64,
    pub dpid: PbrId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviceOp<'a> {
    Read { len: usize },
    Write(&'a [u8]),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessOutcome {
    pub data: Option<Vec<u8>>,
    pub latency_ns: u64,
    pub route: RouteClass,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DeviceFaults {
    pub iommu: u64,
    pub sat: u64,
    pub decode: u64,
}

impl DeviceFaults {
    pub fn total(&self) -> u64 {
        self.iommu + self.sat + self.decode
    }
}

/// One line of the API call trace.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ApiRecord {
    pub time_ns: u64,
    pub api: &'static str,
    pub device: DeviceId,
    pub size: u64,
    pub mmid: Option<Mmid>,
    pub result: String,
}

/// Fabric, expander, fabric manager and one LMB module per host.
#[derive(Debug, Clone)]
pub struct Platform {
    fabric: Fabric,
    expander: Expander,
    fm: FabricManager,
    latency: LatencyModel,
    modules: BTreeMap<HostId, LmbModule>,
    faults: BTreeMap<DeviceId, DeviceFaults>,
    now: SimTime,
    trace: Option<Vec<ApiRecord>>,
}

impl Platform {
    /// `fabric` must be sealed; `fm` must manage `expander`.
    pub fn new(
        fabric: Fabric,
        expander: Expander,
        mut fm: FabricManager,
        latency: LatencyModel,
    ) -> Result<Self, LmbError> {
        if !fabric.is_sealed() {
            return Err(FabricError::Unsealed.into());
        }
        let mut modules = BTreeMap::new();
        for h in fabric.hosts() {
            fm.register_host(h)?;
            modules.insert(h, LmbModule::new());
        }
        Ok(Self {
            fabric,
            expander,
            fm,
            latency,
            modules,
            faults: BTreeMap::new(),
            now: SimTime::ZERO,
            trace: None,
        })
    }

    pub fn fabric(&self) -> &Fabric {
        &self.fabric
    }

    pub fn expander(&self) -> &Expander {
        &self.expander
    }

    pub fn fm(&self) -> &FabricManager {
        &self.fm
    }

    pub fn latency(&self) -> &LatencyModel {
        &self.latency
    }

    pub fn set_time(&mut self, t: SimTime) {
        self.now = t;
    }

    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn trace(&self) -> &[ApiRecord] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn device_faults(&self) -> &BTreeMap<DeviceId, DeviceFaults> {
        &self.faults
    }

    pub fn fault_total(&self) -> u64 {
        self.faults.values().map(DeviceFaults::total).sum()
    }

    /// Load the kernel module on `host`. Device drivers may only allocate
    /// after this.
    pub fn init_lmb(&mut self, host: HostId) -> Result<(), LmbError> {
        self.modules
            .get_mut(&host)
            .ok_or(LmbError::UnknownHost(host))?
            .initialized = true;
        Ok(())
    }

    fn module(&mut self, host: HostId) -> Result<&mut LmbModule, LmbError> {
        let m = self
            .modules
            .get_mut(&host)
            .ok_or(LmbError::UnknownHost(host))?;
        if !m.initialized {
            return Err(LmbError::NotInitialized(host));
        }
        Ok(m)
    }

    pub fn regions(&self, host: HostId) -> impl Iterator<Item = &MemRegion> {
        self.modules
            .get(&host)
            .into_iter()
            .flat_map(|m| m.regions.values())
    }

    pub fn region(&self, host: HostId, mmid: Mmid) -> Option<&MemRegion> {
        self.modules.get(&host)?.regions.get(&mmid)
    }

    pub fn iommu_mappings(&self, dev: PcieDevId) -> Vec<IommuMapping> {
        self.modules
            .get(&dev.host)
            .and_then(|m| m.iommu.get(&dev))
            .map(|t| t.maps.values().copied().collect())
            .unwrap_or_default()
    }

    /// Blocks the host module currently holds, in grant order.
    pub fn held_blocks(&self, host: HostId) -> Vec<MemoryBlock> {
        self.modules
            .get(&host)
            .map(|m| {
                m.extents
                    .iter()
                    .flat_map(|e| e.blocks.iter().copied())
                    .collect()
            })
            .unwrap_or_default()
    }

    fn record<T>(
        &mut self,
        api: &'static str,
        device: DeviceId,
        size: u64,
        mmid: Option<Mmid>,
        r: &Result<T, LmbError>,
    ) {
        if let Some(trace) = self.trace.as_mut() {
            trace.push(ApiRecord {
                time_ns: self.now.0,
                api,
                device,
                size,
                mmid,
                result: match r {
                    Ok(_) => "ok".into(),
                    Err(e) => e.to_string(),
                },
            });
        }
    }

    fn check_device(&self, d: DeviceId) -> Result<HostId, LmbError> {
        match d {
            DeviceId::Pcie(p) if self.fabric.pcie_gen(p).is_some() => Ok(p.host),
            DeviceId::Cxl(c) if self.fabric.is_cxl_device(c) => Ok(c),
            _ => Err(LmbError::UnknownDevice(d)),
        }
    }

    // First-fit over the host's shared extents in grant order, growing the
    // pool from the FM when nothing fits.
    fn carve(&mut self, host: HostId, size: u64) -> Result<(Range<u64>, BlockId), LmbError> {
        let bs = self.fm.block_size();
        let m = self.module(host)?;
        for e in m.extents.iter_mut().filter(|e| !e.dedicated) {
            if let Some(r) = e.free.alloc_first_fit(size, PAGE_SIZE) {
                e.live += 1;
                return Ok((r, e.blocks[0].block_id));
            }
        }
        let (blocks, dedicated) = if size <= bs {
            (
                alloc::vec![self.fm.grant_block(&mut self.expander, host)?],
                false,
            )
        } else {
            (
                self.fm
                    .grant_extent(&mut self.expander, host, size.div_ceil(bs))?,
                true,
            )
        };
        let mut e = Extent::new(blocks, dedicated);
        let r = e
            .free
            .alloc_first_fit(size, PAGE_SIZE)
            .expect("fresh extent fits");
        e.live = 1;
        let id = e.blocks[0].block_id;
        self.modules.get_mut(&host).unwrap().extents.push(e);
        Ok((r, id))
    }

    fn new_region(
        &mut self,
        host: HostId,
        owner: DeviceId,
        size: u64,
    ) -> Result<MemRegion, LmbError> {
        if size == 0 {
            return Err(LmbError::ZeroSize);
        }
        let size = size.div_ceil(PAGE_SIZE) * PAGE_SIZE;
        let (hpa, block_id) = self.carve(host, size)?;
        let m = self.modules.get_mut(&host).unwrap();
        let mmid = Mmid(m.next_mmid);
        m.next_mmid += 1;
        Ok(MemRegion {
            mmid,
            owner,
            sharers: BTreeSet::new(),
            hpa_base: hpa.start,
            size_bytes: size,
            block_id,
            bus_mappings: BTreeMap::new(),
        })
    }

    fn dpa_pieces(&self, host: HostId, hpa: &Range<u64>) -> Vec<Range<u64>> {
        let m = &self.modules[&host];
        m.extents[m.extent_of(hpa)].dpa_pieces(hpa)
    }

    fn grant_access(
        &mut self,
        host: HostId,
        region: &mut MemRegion,
        dev: DeviceId,
    ) -> Result<u64, LmbError> {
        let addr = match dev {
            DeviceId::Pcie(p) => self.modules.get_mut(&host).unwrap().map_iommu(
                p,
                region.hpa_base,
                region.size_bytes,
            ),
            DeviceId::Cxl(c) => {
                for piece in self.dpa_pieces(host, &region.hpa_range()) {
                    self.expander.sat_add(c, piece)?;
                }
                region.hpa_base
            }
        };
        region.bus_mappings.insert(dev, addr);
        Ok(addr)
    }

    fn revoke_access(&mut self, host: HostId, region: &MemRegion, dev: DeviceId) {
        match dev {
            DeviceId::Pcie(p) => {
                if let Some(&bus) = region.bus_mappings.get(&dev) {
                    self.modules.get_mut(&host).unwrap().unmap_iommu(p, bus);
                }
            }
            DeviceId::Cxl(c) => {
                for piece in self.dpa_pieces(host, &region.hpa_range()) {
                    self.expander.sat_remove(c, piece);
                }
            }
        }
    }

    fn alloc_for(
        &mut self,
        host: HostId,
        dev: DeviceId,
        size: u64,
    ) -> Result<(u64, Mmid), LmbError> {
        self.module(host)?;
        self.check_device(dev)?;
        let mut region = self.new_region(host, dev, size)?;
        let addr = match self.grant_access(host, &mut region, dev) {
            Ok(a) => a,
            Err(e) => {
                self.release_carve(host, &region.hpa_range());
                return Err(e);
            }
        };
        let mmid = region.mmid;
        self.modules
            .get_mut(&host)
            .unwrap()
            .regions
            .insert(mmid, region);
        Ok((addr, mmid))
    }

    pub fn lmb_pcie_alloc(&mut self, dev: PcieDevId, size: u64) -> Result<PcieAlloc, LmbError> {
        let r = self
            .alloc_for(dev.host, DeviceId::Pcie(dev), size)
            .map(|(bus_addr, mmid)| PcieAlloc { bus_addr, mmid });
        self.record(
            "lmb_pcie_alloc",
            DeviceId::Pcie(dev),
            size,
            r.as_ref().ok().map(|a| a.mmid),
            &r,
        );
        r
    }

    /// Allocate for a CXL device managed by `host`'s driver stack.
    pub fn lmb_cxl_alloc(
        &mut self,
        host: HostId,
        cxld: PbrId,
        size: u64,
    ) -> Result<CxlAlloc, LmbError> {
        let r = self
            .alloc_for(host, DeviceId::Cxl(cxld), size)
            .and_then(|(hpa, mmid)| {
                let dpid = self.fabric.expander().ok_or(FabricError::NoExpander)?;
                Ok(CxlAlloc { hpa, dpid, mmid })
            });
        self.record(
            "lmb_cxl_alloc",
            DeviceId::Cxl(cxld),
            size,
            r.as_ref().ok().map(|a| a.mmid),
            &r,
        );
        r
    }

    fn release_carve(&mut self, host: HostId, hpa: &Range<u64>) {
        let m = self.modules.get_mut(&host).unwrap();
        let i = m.extent_of(hpa);
        let e = &mut m.extents[i];
        e.free.insert(hpa.clone());
        e.live -= 1;
    }

    /// Hand every extent without live regions back to the FM.
    pub fn sweep(&mut self, host: HostId) -> Result<(), LmbError> {
        let m = self
            .modules
            .get_mut(&host)
            .ok_or(LmbError::UnknownHost(host))?;
        let (empty, keep): (Vec<Extent>, Vec<Extent>) =
            m.extents.drain(..).partition(|e| e.live == 0);
        m.extents = keep;
        for e in empty {
            for b in e.blocks {
                self.fm
                    .release_block(&mut self.expander, host, b.block_id)?;
            }
        }
        Ok(())
    }

    fn free_for(&mut self, host: HostId, dev: DeviceId, mmid: Mmid) -> Result<(), LmbError> {
        let m = self.module(host)?;
        let region = m.regions.get(&mmid).ok_or(LmbError::UnknownMmid(mmid))?;
        if region.owner != dev {
            return Err(LmbError::NotOwner {
                mmid,
                owner: region.owner,
                caller: dev,
            });
        }
        let region = m.regions.remove(&mmid).unwrap();
        let accessors: Vec<DeviceId> = region.accessors().collect();
        for d in accessors {
            self.revoke_access(host, &region, d);
        }
        self.release_carve(host, &region.hpa_range());
        self.sweep(host)
    }

    pub fn lmb_pcie_free(&mut self, dev: PcieDevId, mmid: Mmid) -> Result<(), LmbError> {
        let r = self.free_for(dev.host, DeviceId::Pcie(dev), mmid);
        self.record("lmb_pcie_free", DeviceId::Pcie(dev), 0, Some(mmid), &r);
        r
    }

    pub fn lmb_cxl_free(&mut self, host: HostId, cxld: PbrId, mmid: Mmid) -> Result<(), LmbError> {
        let r = self.free_for(host, DeviceId::Cxl(cxld), mmid);
        self.record("lmb_cxl_free", DeviceId::Cxl(cxld), 0, Some(mmid), &r);
        r
    }

    fn share_for(&mut self, host: HostId, dev: DeviceId, mmid: Mmid) -> Result<u64, LmbError> {
        self.check_device(dev)?;
        let m = self.module(host)?;
        let region = m.regions.get(&mmid).ok_or(LmbError::UnknownMmid(mmid))?;
        if let Some(&addr) = region.bus_mappings.get(&dev) {
            return Ok(addr);
        }
        let mut region = m.regions.remove(&mmid).unwrap();
        let r = self.grant_access(host, &mut region, dev);
        if r.is_ok() {
            region.sharers.insert(dev);
        }
        self.modules
            .get_mut(&host)
            .unwrap()
            .regions
            .insert(mmid, region);
        r
    }

    /// Share `mmid` with another PCIe device behind the same host. Returns the
    /// bus address the device should use.
    pub fn lmb_pcie_share(&mut self, dev2: PcieDevId, mmid: Mmid) -> Result<u64, LmbError> {
        let size = self.region(dev2.host, mmid).map_or(0, |r| r.size_bytes);
        let r = self.share_for(dev2.host, DeviceId::Pcie(dev2), mmid);
        self.record("lmb_pcie_share", DeviceId::Pcie(dev2), size, Some(mmid), &r);
        r
    }

    pub fn lmb_cxl_share(
        &mut self,
        host: HostId,
        cxld2: PbrId,
        mmid: Mmid,
    ) -> Result<CxlShare, LmbError> {
        let size = self.region(host, mmid).map_or(0, |r| r.size_bytes);
        let r = self
            .share_for(host, DeviceId::Cxl(cxld2), mmid)
            .and_then(|hpa| {
                let dpid = self.fabric.expander().ok_or(FabricError::NoExpander)?;
                Ok(CxlShare { hpa, dpid })
            });
        self.record("lmb_cxl_share", DeviceId::Cxl(cxld2), size, Some(mmid), &r);
        r
    }

    fn count_fault(&mut self, dev: DeviceId, e: &AccessError) {
        let c = self.faults.entry(dev).or_default();
        match e {
            AccessError::Iommu { .. } => c.iommu += 1,
            AccessError::Mem(MemFault::Access { .. }) => c.sat += 1,
            AccessError::Mem(_) => c.decode += 1,
            AccessError::UnknownDevice(_) => {}
        }
    }

    /// A device load/store against LMB memory. PCIe devices address by bus
    /// address, CXL devices by HPA. The returned latency is what one index
    /// access costs the device on its route.
    pub fn device_mem_access(
        &mut self,
        dev: DeviceId,
        addr: u64,
        op: DeviceOp<'_>,
    ) -> Result<AccessOutcome, AccessError> {
        let r = self.device_mem_access_inner(dev, addr, op);
        if let Err(e) = &r {
            self.count_fault(dev, e);
        }
        r
    }

    fn device_mem_access_inner(
        &mut self,
        dev: DeviceId,
        addr: u64,
        op: DeviceOp<'_>,
    ) -> Result<AccessOutcome, AccessError> {
        let len = match op {
            DeviceOp::Read { len } => len,
            DeviceOp::Write(d) => d.len(),
        } as u64;
        let (requester, hpa, route, gen) = match dev {
            DeviceId::Pcie(p) => {
                let gen = self
                    .fabric
                    .pcie_gen(p)
                    .ok_or(AccessError::UnknownDevice(dev))?;
                let hpa = self
                    .modules
                    .get(&p.host)
                    .and_then(|m| m.iommu.get(&p))
                    .and_then(|t| t.translate(addr, len))
                    .ok_or(AccessError::Iommu { dev: p, addr, len })?;
                (
                    MemRequester::Host(p.host),
                    hpa,
                    RouteClass::PcieViaHost,
                    gen,
                )
            }
            DeviceId::Cxl(c) => {
                if !self.fabric.is_cxl_device(c) {
                    return Err(AccessError::UnknownDevice(dev));
                }
                // generation is irrelevant on the CXL route
                (
                    MemRequester::Spid(c),
                    addr,
                    RouteClass::CxlP2P,
                    crate::fabric::PcieGen::Gen5,
                )
            }
        };
        let req = match op {
            DeviceOp::Read { len } => MemAccessRequest::read(requester, hpa, len),
            DeviceOp::Write(d) => MemAccessRequest::write(requester, hpa, d),
        };
        let done = self.expander.handle(&req, self.now)?;
        Ok(AccessOutcome {
            data: done.data,
            latency_ns: access_latency(route, gen, &self.latency) + done.media_extra_ns,
            route,
        })
    }
}
