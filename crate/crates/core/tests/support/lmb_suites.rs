// Allocator, access-control and shared-memory suites for the LMB module.
// Shared by the core integration tests and the acceptance target.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use lmb_sim_core::expander::{Expander, Media, MemFault};
use lmb_sim_core::fabric::{
    DeviceId, Fabric, HostId, LatencyModel, NodeKind, PbrId, PcieDevId, PcieGen,
};
use lmb_sim_core::fm::{FabricManager, FmError};
use lmb_sim_core::lmb::{AccessError, DeviceOp, LmbError, Mmid, Platform, IOVA_BASE};
use lmb_sim_core::sim::SimRng;
use lmb_sim_core::PAGE_SIZE;
use rand::Rng;

pub struct Rig {
    pub p: Platform,
    pub host: HostId,
    pub ssd: PcieDevId,
    pub nic: PcieDevId,
    pub acc: PbrId,
}

impl Rig {
    pub fn new(expander_bytes: u64, block_size: u64) -> Self {
        let mut f = Fabric::new();
        let host = f
            .attach(
                "host",
                NodeKind::Host {
                    pcie_gen: PcieGen::Gen4,
                },
            )
            .unwrap()
            .pbr()
            .unwrap();
        let acc = f.attach("acc", NodeKind::CxlDevice).unwrap().pbr().unwrap();
        let pcie = NodeKind::PcieDevice {
            behind: host,
            pcie_gen: PcieGen::Gen4,
        };
        let ssd = f.attach("ssd", pcie).unwrap().pcie().unwrap();
        let nic = f.attach("nic", pcie).unwrap().pcie().unwrap();
        f.attach("gfd", NodeKind::Expander).unwrap();
        f.seal().unwrap();
        let mut x = Expander::new(expander_bytes);
        x.create_dmp(Media::Dram, expander_bytes).unwrap();
        let fm = FabricManager::new(&x, block_size).unwrap();
        let mut p = Platform::new(f, x, fm, LatencyModel::default()).unwrap();
        p.init_lmb(host).unwrap();
        Rig {
            p,
            host,
            ssd,
            nic,
            acc,
        }
    }

    pub fn devices(&self) -> [DeviceId; 3] {
        [
            DeviceId::Pcie(self.ssd),
            DeviceId::Pcie(self.nic),
            DeviceId::Cxl(self.acc),
        ]
    }

    pub fn alloc(&mut self, dev: DeviceId, size: u64) -> Result<(u64, Mmid), LmbError> {
        match dev {
            DeviceId::Pcie(d) => self.p.lmb_pcie_alloc(d, size).map(|a| (a.bus_addr, a.mmid)),
            DeviceId::Cxl(c) => self
                .p
                .lmb_cxl_alloc(self.host, c, size)
                .map(|a| (a.hpa, a.mmid)),
        }
    }

    pub fn free(&mut self, dev: DeviceId, mmid: Mmid) -> Result<(), LmbError> {
        match dev {
            DeviceId::Pcie(d) => self.p.lmb_pcie_free(d, mmid),
            DeviceId::Cxl(c) => self.p.lmb_cxl_free(self.host, c, mmid),
        }
    }

    pub fn share(&mut self, dev: DeviceId, mmid: Mmid) -> Result<u64, LmbError> {
        match dev {
            DeviceId::Pcie(d) => self.p.lmb_pcie_share(d, mmid),
            DeviceId::Cxl(c) => self.p.lmb_cxl_share(self.host, c, mmid).map(|s| s.hpa),
        }
    }
}

// ---------------------------------------------------------------------------
// Reference model. Block-granular HPA/DPA books, page-granular used-range
// lists per extent, explicit accessor sets. Written without the crate's
// interval set.

#[derive(Debug, Clone)]
struct OExtent {
    hpa_base: u64,
    size: u64,
    // (hpa, dpa) per block
    blocks: Vec<(u64, u64)>,
    // sorted, disjoint, byte ranges relative to hpa_base
    used: Vec<(u64, u64)>,
    dedicated: bool,
}

impl OExtent {
    fn first_fit(&self, size: u64) -> Option<u64> {
        let mut cursor = 0;
        for &(s, e) in &self.used {
            if s - cursor >= size {
                return Some(cursor);
            }
            cursor = e;
        }
        (self.size - cursor >= size).then_some(cursor)
    }

    fn take(&mut self, off: u64, size: u64) {
        let i = self.used.partition_point(|&(s, _)| s < off);
        self.used.insert(i, (off, off + size));
    }

    fn give_back(&mut self, off: u64) {
        let i = self
            .used
            .iter()
            .position(|&(s, _)| s == off)
            .expect("model: region not in extent");
        self.used.remove(i);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct ORegion {
    owner: DeviceId,
    sharers: BTreeSet<DeviceId>,
    hpa: u64,
    size: u64,
    addrs: BTreeMap<DeviceId, u64>,
}

pub struct Model {
    bs: u64,
    host_base: u64,
    free_hpa_blocks: BTreeSet<u64>,
    free_dpa_slots: BTreeSet<u64>,
    extents: Vec<OExtent>,
    regions: BTreeMap<u64, ORegion>,
    next_mmid: u64,
    next_bus: BTreeMap<DeviceId, u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expect {
    Ok(u64, u64),
    ZeroSize,
    OutOfCapacity,
    UnknownMmid,
    NotOwner,
}

impl Model {
    pub fn new(rig: &Rig, expander_bytes: u64, block_size: u64) -> Self {
        let region = rig
            .p
            .fm()
            .host_hpa_region(rig.host)
            .expect("host registered");
        Self {
            bs: block_size,
            host_base: region.start,
            free_hpa_blocks: (0..(region.end - region.start) / block_size).collect(),
            free_dpa_slots: (0..expander_bytes / block_size).collect(),
            extents: Vec::new(),
            regions: BTreeMap::new(),
            next_mmid: 1,
            next_bus: BTreeMap::new(),
        }
    }

    fn grant(&mut self, count: u64) -> Option<OExtent> {
        if (self.free_dpa_slots.len() as u64) < count {
            return None;
        }
        let mut run_start = None;
        let mut prev = None;
        let mut start = None;
        for &b in &self.free_hpa_blocks {
            if prev.is_none_or(|p: u64| p + 1 != b) {
                run_start = Some(b);
            }
            prev = Some(b);
            if b + 1 - run_start.unwrap() == count {
                start = run_start;
                break;
            }
        }
        let start = start?;
        let dpas: Vec<u64> = self
            .free_dpa_slots
            .iter()
            .take(count as usize)
            .copied()
            .collect();
        let mut blocks = Vec::new();
        for (i, d) in dpas.into_iter().enumerate() {
            let hb = start + i as u64;
            self.free_hpa_blocks.remove(&hb);
            self.free_dpa_slots.remove(&d);
            blocks.push((self.host_base + hb * self.bs, d * self.bs));
        }
        Some(OExtent {
            hpa_base: blocks[0].0,
            size: count * self.bs,
            blocks,
            used: Vec::new(),
            dedicated: count > 1,
        })
    }

    fn addr_for(&mut self, dev: DeviceId, r: &ORegion) -> u64 {
        match dev {
            DeviceId::Pcie(_) => {
                let next = self.next_bus.entry(dev).or_insert(IOVA_BASE);
                let a = *next;
                *next += r.size;
                a
            }
            DeviceId::Cxl(_) => r.hpa,
        }
    }

    pub fn alloc(&mut self, dev: DeviceId, size: u64) -> Expect {
        if size == 0 {
            return Expect::ZeroSize;
        }
        let size = size.div_ceil(PAGE_SIZE) * PAGE_SIZE;
        let mut placed = None;
        for (i, e) in self
            .extents
            .iter()
            .enumerate()
            .filter(|(_, e)| !e.dedicated)
        {
            if let Some(off) = e.first_fit(size) {
                placed = Some((i, off));
                break;
            }
        }
        let (i, off) = match placed {
            Some(p) => p,
            None => {
                let Some(e) = self.grant(size.div_ceil(self.bs)) else {
                    return Expect::OutOfCapacity;
                };
                self.extents.push(e);
                (self.extents.len() - 1, 0)
            }
        };
        self.extents[i].take(off, size);
        let mut r = ORegion {
            owner: dev,
            sharers: BTreeSet::new(),
            hpa: self.extents[i].hpa_base + off,
            size,
            addrs: BTreeMap::new(),
        };
        let addr = self.addr_for(dev, &r);
        r.addrs.insert(dev, addr);
        let mmid = self.next_mmid;
        self.next_mmid += 1;
        self.regions.insert(mmid, r);
        Expect::Ok(addr, mmid)
    }

    pub fn free(&mut self, dev: DeviceId, mmid: u64) -> Expect {
        let Some(r) = self.regions.get(&mmid) else {
            return Expect::UnknownMmid;
        };
        if r.owner != dev {
            return Expect::NotOwner;
        }
        let r = self.regions.remove(&mmid).unwrap();
        let i = self
            .extents
            .iter()
            .position(|e| e.hpa_base <= r.hpa && r.hpa + r.size <= e.hpa_base + e.size)
            .unwrap();
        let base = self.extents[i].hpa_base;
        self.extents[i].give_back(r.hpa - base);
        if self.extents[i].used.is_empty() {
            let e = self.extents.remove(i);
            for (h, d) in e.blocks {
                self.free_hpa_blocks.insert((h - self.host_base) / self.bs);
                self.free_dpa_slots.insert(d / self.bs);
            }
        }
        Expect::Ok(0, mmid)
    }

    pub fn share(&mut self, dev: DeviceId, mmid: u64) -> Expect {
        let Some(r) = self.regions.get(&mmid).cloned() else {
            return Expect::UnknownMmid;
        };
        if let Some(&a) = r.addrs.get(&dev) {
            return Expect::Ok(a, mmid);
        }
        let a = self.addr_for(dev, &r);
        let r = self.regions.get_mut(&mmid).unwrap();
        r.addrs.insert(dev, a);
        r.sharers.insert(dev);
        Expect::Ok(a, mmid)
    }

    pub fn live(&self) -> impl Iterator<Item = u64> + '_ {
        self.regions.keys().copied()
    }

    pub fn owner(&self, mmid: u64) -> Option<DeviceId> {
        self.regions.get(&mmid).map(|r| r.owner)
    }

    pub fn block_count(&self) -> usize {
        self.extents.iter().map(|e| e.blocks.len()).sum()
    }

    /// DPA of one HPA inside a live extent.
    fn dpa_of(&self, hpa: u64) -> u64 {
        for e in &self.extents {
            for &(h, d) in &e.blocks {
                if h <= hpa && hpa < h + self.bs {
                    return d + (hpa - h);
                }
            }
        }
        panic!("model: hpa {hpa:#x} outside every block");
    }

    /// Full state comparison against the platform.
    pub fn check(&self, rig: &Rig) {
        let p = &rig.p;
        let got: BTreeMap<u64, ORegion> = p
            .regions(rig.host)
            .map(|r| {
                (
                    r.mmid.0,
                    ORegion {
                        owner: r.owner,
                        sharers: r.sharers.clone(),
                        hpa: r.hpa_base,
                        size: r.size_bytes,
                        addrs: r.bus_mappings.clone(),
                    },
                )
            })
            .collect();
        assert_eq!(got, self.regions, "region table diverged");

        let mut held: Vec<(u64, u64)> = p
            .held_blocks(rig.host)
            .iter()
            .map(|b| (b.hpa_base, b.dpa_base))
            .collect();
        held.sort();
        let mut want: Vec<(u64, u64)> = self
            .extents
            .iter()
            .flat_map(|e| e.blocks.iter().copied())
            .collect();
        want.sort();
        assert_eq!(held, want, "held blocks diverged");

        let ledger = p.fm().query_capacity();
        assert_eq!(ledger.granted_bytes, want.len() as u64 * self.bs);
        assert_eq!(p.expander().decoders().count(), want.len());

        for dev in rig.devices() {
            if let DeviceId::Pcie(d) = dev {
                let mut maps: Vec<(u64, u64, u64)> = p
                    .iommu_mappings(d)
                    .iter()
                    .map(|m| (m.bus_base, m.hpa_base, m.size_bytes))
                    .collect();
                maps.sort();
                let mut want: Vec<(u64, u64, u64)> = self
                    .regions
                    .values()
                    .filter_map(|r| r.addrs.get(&dev).map(|&a| (a, r.hpa, r.size)))
                    .collect();
                want.sort();
                assert_eq!(maps, want, "IOMMU table of {dev} diverged");
            }
        }

        // SAT: a CXL device covers the first and last page of every region it
        // may access and nothing of the others
        let DeviceId::Cxl(acc) = rig.devices()[2] else {
            unreachable!()
        };
        for r in self.regions.values() {
            let allowed = r.addrs.contains_key(&DeviceId::Cxl(acc));
            for hpa in [r.hpa, r.hpa + r.size - PAGE_SIZE] {
                let dpa = self.dpa_of(hpa);
                assert_eq!(
                    p.expander().sat_covers(acc, dpa, PAGE_SIZE),
                    allowed,
                    "SAT of region at {hpa:#x}"
                );
            }
        }
    }
}

fn observed(r: Result<(u64, Mmid), LmbError>) -> Expect {
    match r {
        Ok((a, m)) => Expect::Ok(a, m.0),
        Err(LmbError::ZeroSize) => Expect::ZeroSize,
        Err(LmbError::UnknownMmid(_)) => Expect::UnknownMmid,
        Err(LmbError::NotOwner { .. }) => Expect::NotOwner,
        Err(LmbError::Fm(FmError::OutOfCapacity { .. })) => Expect::OutOfCapacity,
        Err(e) => panic!("unexpected error {e}"),
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FuzzStats {
    pub allocs: u64,
    pub frees: u64,
    pub shares: u64,
    pub rejected: u64,
    pub out_of_capacity: u64,
    pub max_blocks: usize,
}

fn draw_size(rng: &mut impl Rng, bs: u64) -> u64 {
    match rng.random_range(0..100) {
        0 => 0,
        1..=70 => rng.random_range(1..=64 * PAGE_SIZE),
        71..=90 => rng.random_range(1..=bs / 4),
        91..=97 => rng.random_range(bs / 4..=bs),
        _ => rng.random_range(bs + 1..=3 * bs),
    }
}

/// Random alloc/free/share traffic from three devices, checked against the
/// reference model after every operation. Ends by freeing everything and
/// checking the FM ledger is back to zero.
pub fn alloc_fuzz(seed: u64, ops: u64, expander_bytes: u64, block_size: u64) -> FuzzStats {
    let mut rig = Rig::new(expander_bytes, block_size);
    let mut model = Model::new(&rig, expander_bytes, block_size);
    let mut rng = SimRng::new(seed).fork("allocator fuzz");
    let devs = rig.devices();
    let mut st = FuzzStats::default();
    for _ in 0..ops {
        let dev = devs[rng.random_range(0..3)];
        let live: Vec<u64> = model.live().collect();
        let pick = |rng: &mut rand_chacha::ChaCha8Rng| {
            if live.is_empty() || rng.random_bool(0.05) {
                model.next_mmid + rng.random_range(0..3)
            } else {
                live[rng.random_range(0..live.len())]
            }
        };
        // keep the live set from growing without bound
        let alloc_weight = if live.len() > 200 { 30 } else { 45 };
        let roll = rng.random_range(0..100);
        let (want, got) = if roll < alloc_weight {
            let size = draw_size(&mut rng, block_size);
            let want = model.alloc(dev, size);
            (want, observed(rig.alloc(dev, size)))
        } else if roll < 80 {
            let mmid = pick(&mut rng);
            // mostly the owner; sometimes whoever rolled
            let caller = match model.owner(mmid) {
                Some(o) if rng.random_bool(0.9) => o,
                _ => dev,
            };
            let want = model.free(caller, mmid);
            (
                want,
                observed(rig.free(caller, Mmid(mmid)).map(|_| (0, Mmid(mmid)))),
            )
        } else {
            let mmid = pick(&mut rng);
            let want = model.share(dev, mmid);
            (
                want,
                observed(rig.share(dev, Mmid(mmid)).map(|a| (a, Mmid(mmid)))),
            )
        };
        assert_eq!(got, want, "operation outcome diverged");
        match (roll < alloc_weight, roll < 80, want) {
            (_, _, Expect::OutOfCapacity) => st.out_of_capacity += 1,
            (_, _, Expect::Ok(..)) if roll < alloc_weight => st.allocs += 1,
            (_, true, Expect::Ok(..)) => st.frees += 1,
            (_, false, Expect::Ok(..)) => st.shares += 1,
            _ => st.rejected += 1,
        }
        model.check(&rig);
        st.max_blocks = st.max_blocks.max(model.block_count());
    }
    let live: Vec<u64> = model.live().collect();
    for mmid in live {
        let owner = model.owner(mmid).unwrap();
        assert_eq!(model.free(owner, mmid), Expect::Ok(0, mmid));
        rig.free(owner, Mmid(mmid)).unwrap();
    }
    model.check(&rig);
    let ledger = rig.p.fm().query_capacity();
    assert_eq!(
        ledger.granted_bytes, 0,
        "FM ledger after freeing everything"
    );
    assert!(ledger.per_host.is_empty());
    assert!(rig.p.held_blocks(rig.host).is_empty());
    assert_eq!(rig.p.expander().decoders().count(), 0);
    assert_eq!(rig.p.expander().sat_entries().count(), 0);
    st
}

// ---------------------------------------------------------------------------
// Exhaustive access checks on a 16-page expander.

pub const SMALL_PAGES: u64 = 16;

/// Every layout of up to two regions in one 16-page block, every owner and
/// every sharer subset among three devices; each device probes every page
/// it could name. A probe must succeed iff the page lies in a region the
/// device may access. Then the first region is freed and everything is
/// probed again. Returns the number of probes.
pub fn exhaustive_access() -> u64 {
    let bs = SMALL_PAGES * PAGE_SIZE;
    let mut probes = 0;
    let mut layouts: Vec<Vec<u64>> = (1..=SMALL_PAGES).map(|a| vec![a]).collect();
    for a in 1..SMALL_PAGES {
        for b in 1..=SMALL_PAGES - a {
            layouts.push(vec![a, b]);
        }
    }
    for layout in &layouts {
        // per region: owner index and sharer mask over the three devices
        let per_region = 3 * 8;
        let combos = (per_region as u64).pow(layout.len() as u32);
        for combo in 0..combos {
            let mut rig = Rig::new(bs, bs);
            let devs = rig.devices();
            let mut c = combo;
            let mut regions: Vec<(Mmid, DeviceId, BTreeSet<DeviceId>)> = Vec::new();
            for &pages in layout {
                let owner = devs[(c % 3) as usize];
                let mask = (c / 3) % 8;
                c /= per_region as u64;
                let (_, mmid) = rig.alloc(owner, pages * PAGE_SIZE).unwrap();
                let mut acc = BTreeSet::from([owner]);
                for (i, d) in devs.iter().enumerate() {
                    if mask & (1 << i) != 0 {
                        rig.share(*d, mmid).unwrap();
                        acc.insert(*d);
                    }
                }
                regions.push((mmid, owner, acc));
            }
            probes += probe_all(&mut rig, &regions);
            let (mmid, owner, _) = regions.remove(0);
            rig.free(owner, mmid).unwrap();
            probes += probe_all(&mut rig, &regions);
        }
    }
    probes
}

fn probe_all(rig: &mut Rig, regions: &[(Mmid, DeviceId, BTreeSet<DeviceId>)]) -> u64 {
    let bs = SMALL_PAGES * PAGE_SIZE;
    let base = rig.p.fm().host_hpa_region(rig.host).unwrap().start;
    // HPA page -> devices allowed, from the allocator's reported layout
    let mut allowed: BTreeMap<u64, BTreeSet<DeviceId>> = BTreeMap::new();
    let mut bus: BTreeMap<(DeviceId, u64), u64> = BTreeMap::new();
    for (mmid, _, acc) in regions {
        let r = rig.p.region(rig.host, *mmid).unwrap().clone();
        assert_eq!(r.accessors().collect::<BTreeSet<_>>(), *acc);
        for pg in 0..r.size_bytes / PAGE_SIZE {
            let hpa = r.hpa_base + pg * PAGE_SIZE;
            allowed.insert(hpa, acc.clone());
            for d in acc {
                bus.insert((*d, r.bus_mappings[d] + pg * PAGE_SIZE), hpa);
            }
        }
    }
    let mut n = 0;
    for dev in rig.devices() {
        // PCIe devices name bus addresses, CXL devices name HPAs; probe every
        // page-sized address the device could plausibly use
        let candidates: Vec<u64> = match dev {
            DeviceId::Pcie(_) => (0..4 * SMALL_PAGES)
                .map(|i| IOVA_BASE + i * PAGE_SIZE)
                .collect(),
            DeviceId::Cxl(_) => (0..SMALL_PAGES + 2).map(|i| base + i * PAGE_SIZE).collect(),
        };
        for addr in candidates {
            let expect = match dev {
                DeviceId::Pcie(_) => bus.contains_key(&(dev, addr)),
                DeviceId::Cxl(_) => allowed.get(&addr).is_some_and(|s| s.contains(&dev)),
            };
            let tag = [(addr / PAGE_SIZE) as u8; 8];
            let w = rig.p.device_mem_access(dev, addr, DeviceOp::Write(&tag));
            let r = rig
                .p
                .device_mem_access(dev, addr, DeviceOp::Read { len: 8 });
            assert_eq!(w.is_ok(), expect, "write by {dev} at {addr:#x}");
            assert_eq!(r.is_ok(), expect, "read by {dev} at {addr:#x}");
            if expect {
                assert_eq!(r.unwrap().data.unwrap(), tag);
            }
            n += 2;
        }
        // a probe straddling the end of the block never succeeds for CXL
        if let DeviceId::Cxl(_) = dev {
            let last = base + bs - 4;
            assert!(rig
                .p
                .device_mem_access(dev, last, DeviceOp::Read { len: 8 })
                .is_err());
            n += 1;
        }
    }
    n
}

// ---------------------------------------------------------------------------
// Zero-copy sharing between a PCIe SSD and a CXL accelerator.

#[derive(Debug, Default, Clone, Copy)]
pub struct IntegrityStats {
    pub writes: u64,
    pub reads: u64,
    pub bytes_checked: u64,
    pub revocation_faults: u64,
}

const MAX_ACCESS: usize = 64;

fn write_all(rig: &mut Rig, dev: DeviceId, addr: u64, data: &[u8]) {
    for (i, chunk) in data.chunks(MAX_ACCESS).enumerate() {
        let a = addr + (i * MAX_ACCESS) as u64;
        rig.p
            .device_mem_access(dev, a, DeviceOp::Write(chunk))
            .unwrap();
    }
}

fn read_all(rig: &mut Rig, dev: DeviceId, addr: u64, len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(len);
    let mut done = 0;
    while done < len {
        let n = (len - done).min(MAX_ACCESS);
        let got = rig
            .p
            .device_mem_access(dev, addr + done as u64, DeviceOp::Read { len: n })
            .unwrap();
        out.extend(got.data.unwrap());
        done += n;
    }
    out
}

/// The SSD allocates a buffer, shares it with the accelerator, and the two
/// interleave writes (SSD) and reads (accelerator, sometimes the SSD) at
/// random offsets. Every read must equal a shadow copy. After the SSD frees
/// the buffer, both devices' accesses must fault.
pub fn shared_memory_integrity(seed: u64, rounds: u32) -> IntegrityStats {
    let mut rig = Rig::new(4 * 256 * lmb_sim_core::MIB, 256 * lmb_sim_core::MIB);
    let mut rng = SimRng::new(seed).fork("integrity");
    let ssd = DeviceId::Pcie(rig.ssd);
    let acc = DeviceId::Cxl(rig.acc);
    let mut st = IntegrityStats::default();
    // a bystander region keeps some blocks resident between rounds so both
    // the block-release path and the reuse-within-block path are exercised
    let mut bystander: Option<Mmid> = None;
    for _ in 0..rounds {
        if rng.random_bool(0.3) {
            match bystander.take() {
                Some(m) => rig.free(DeviceId::Pcie(rig.nic), m).unwrap(),
                None => {
                    bystander = Some(
                        rig.alloc(
                            DeviceId::Pcie(rig.nic),
                            rng.random_range(1..=32) * PAGE_SIZE,
                        )
                        .unwrap()
                        .1,
                    )
                }
            }
        }
        let len = rng.random_range(1..=16 * PAGE_SIZE as usize);
        let (bus, mmid) = rig.alloc(ssd, len as u64).unwrap();
        let hpa = rig.share(acc, mmid).unwrap();
        let mut shadow = vec![0u8; len];
        let fill: Vec<u8> = (0..len).map(|_| rng.random()).collect();
        write_all(&mut rig, ssd, bus, &fill);
        shadow.copy_from_slice(&fill);
        st.writes += 1;
        for _ in 0..rng.random_range(1..=40) {
            let off = rng.random_range(0..len);
            let n = rng.random_range(1..=(len - off).min(512));
            if rng.random_bool(0.5) {
                let data: Vec<u8> = (0..n).map(|_| rng.random()).collect();
                write_all(&mut rig, ssd, bus + off as u64, &data);
                shadow[off..off + n].copy_from_slice(&data);
                st.writes += 1;
            } else {
                let (who, addr) = if rng.random_bool(0.8) {
                    (acc, hpa)
                } else {
                    (ssd, bus)
                };
                let got = read_all(&mut rig, who, addr + off as u64, n);
                assert_eq!(got, &shadow[off..off + n], "read by {who} at +{off}");
                st.reads += 1;
                st.bytes_checked += n as u64;
            }
        }
        // whole-buffer check from the accelerator
        assert_eq!(read_all(&mut rig, acc, hpa, len), shadow);
        st.reads += 1;
        st.bytes_checked += len as u64;

        rig.free(ssd, mmid).unwrap();
        let off = rng.random_range(0..len) as u64;
        match rig
            .p
            .device_mem_access(ssd, bus + off, DeviceOp::Read { len: 1 })
        {
            Err(AccessError::Iommu { .. }) => {}
            other => panic!("SSD access after free: {other:?}"),
        }
        match rig
            .p
            .device_mem_access(acc, hpa + off, DeviceOp::Read { len: 1 })
        {
            Err(AccessError::Mem(MemFault::Access { .. } | MemFault::Decode { .. })) => {}
            other => panic!("accelerator access after free: {other:?}"),
        }
        match rig
            .p
            .device_mem_access(acc, hpa + off, DeviceOp::Write(&[0xAA]))
        {
            Err(AccessError::Mem(_)) => {}
            other => panic!("accelerator write after free: {other:?}"),
        }
        st.revocation_faults += 3;
    }
    st
}
