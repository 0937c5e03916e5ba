//! GFAM expander: DPA space split into media partitions, HPA decoders, the
//! SPID access table, and a sparse backing store.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::fabric::{HostId, PbrId};
use crate::sim::SimTime;
use crate::PAGE_SIZE;

/// Largest single MemRd/MemWr payload.
pub const MAX_ACCESS_BYTES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Media {
    Dram,
    Pm,
}

/// Device media partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dmp {
    pub dmp_id: u8,
    pub media: Media,
    pub dpa_base: u64,
    pub size_bytes: u64,
}

impl Dmp {
    pub fn range(&self) -> Range<u64> {
        self.dpa_base..self.dpa_base + self.size_bytes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DecoderEntry {
    pub hpa_base: u64,
    pub dpa_base: u64,
    pub size_bytes: u64,
    pub owner_host: HostId,
}

impl DecoderEntry {
    pub fn hpa_range(&self) -> Range<u64> {
        self.hpa_base..self.hpa_base + self.size_bytes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SatEntry {
    pub spid: PbrId,
    pub dpa_base: u64,
    pub size_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SatGranularity {
    #[default]
    Region,
    Page,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum MemRequester {
    /// CXL-native requester, checked against the SAT.
    Spid(PbrId),
    /// Host-issued (including PCIe traffic the host forwards); SAT bypassed.
    Host(HostId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MemOp {
    Rd { len: usize },
    Wr { data: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemAccessRequest {
    pub op: MemOp,
    pub hpa: u64,
    pub requester: MemRequester,
}

impl MemAccessRequest {
    pub fn read(requester: MemRequester, hpa: u64, len: usize) -> Self {
        Self {
            op: MemOp::Rd { len },
            hpa,
            requester,
        }
    }

    pub fn write(requester: MemRequester, hpa: u64, data: &[u8]) -> Self {
        Self {
            op: MemOp::Wr {
                data: data.to_vec(),
            },
            hpa,
            requester,
        }
    }

    pub fn len(&self) -> usize {
        match &self.op {
            MemOp::Rd { len } => *len,
            MemOp::Wr { data } => data.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemCompletion {
    /// Read data; `None` for a write ack.
    pub data: Option<Vec<u8>>,
    /// Media-dependent latency on top of the route latency.
    pub media_extra_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MemFault {
    #[error("no decoder covers hpa {hpa:#x}+{len}")]
    Decode { hpa: u64, len: usize },
    #[error("{spid} has no SAT entry covering dpa {dpa:#x}+{len}")]
    Access { spid: PbrId, dpa: u64, len: usize },
    #[error("access length {0} outside 1..=64")]
    BadLength(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExpanderError {
    #[error("partition size {0} is not a positive multiple of 4096")]
    Unaligned(u64),
    #[error("expander capacity exhausted: {requested} bytes requested, {free} free")]
    CapacityExhausted { requested: u64, free: u64 },
    #[error("decoder window {0:#x?} overlaps an existing window")]
    WindowOverlap(Range<u64>),
    #[error("decoder target {0:#x?} is not inside exactly one partition")]
    BadTarget(Range<u64>),
    #[error("no decoder window at hpa {0:#x}")]
    NoWindow(u64),
    #[error("SAT range {0:#x?} is not inside a mapped window")]
    SatOutsideWindows(Range<u64>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FaultCounters {
    pub decode: u64,
    pub access: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Expander {
    capacity: u64,
    dmps: Vec<Dmp>,
    decoders: BTreeMap<u64, DecoderEntry>,
    sat: BTreeSet<SatEntry>,
    granularity: SatGranularity,
    store: BTreeMap<u64, Box<[u8; PAGE_SIZE as usize]>>,
    faults: BTreeMap<MemRequester, FaultCounters>,
    sat_remove_misses: u64,
    pm_extra_ns: u64,
    requests: u64,
    last_request_at: SimTime,
}

impl Expander {
    pub fn new(capacity: u64) -> Self {
        Self {
            capacity,
            ..Default::default()
        }
    }

    pub fn with_sat_granularity(mut self, g: SatGranularity) -> Self {
        self.granularity = g;
        self
    }

    pub fn set_pm_extra_ns(&mut self, ns: u64) {
        self.pm_extra_ns = ns;
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    /// Bytes covered by media partitions.
    pub fn provisioned(&self) -> u64 {
        self.dmps.iter().map(|d| d.size_bytes).sum()
    }

    pub fn dmps(&self) -> &[Dmp] {
        &self.dmps
    }

    pub fn create_dmp(&mut self, media: Media, size: u64) -> Result<Dmp, ExpanderError> {
        if size == 0 || !size.is_multiple_of(PAGE_SIZE) {
            return Err(ExpanderError::Unaligned(size));
        }
        let base = self.provisioned();
        let free = self.capacity - base;
        if size > free {
            return Err(ExpanderError::CapacityExhausted {
                requested: size,
                free,
            });
        }
        let dmp = Dmp {
            dmp_id: self.dmps.len() as u8,
            media,
            dpa_base: base,
            size_bytes: size,
        };
        self.dmps.push(dmp);
        Ok(dmp)
    }

    fn dmp_containing(&self, r: &Range<u64>) -> Option<&Dmp> {
        self.dmps
            .iter()
            .find(|d| d.dpa_base <= r.start && r.end <= d.dpa_base + d.size_bytes)
    }

    pub fn decoders(&self) -> impl Iterator<Item = &DecoderEntry> {
        self.decoders.values()
    }

    pub fn map_window(&mut self, e: DecoderEntry) -> Result<(), ExpanderError> {
        let hpa = e.hpa_range();
        if e.size_bytes == 0 || self.window_overlaps(&hpa) {
            return Err(ExpanderError::WindowOverlap(hpa));
        }
        let dpa = e.dpa_base..e.dpa_base + e.size_bytes;
        if self.dmp_containing(&dpa).is_none() {
            return Err(ExpanderError::BadTarget(dpa));
        }
        self.decoders.insert(e.hpa_base, e);
        Ok(())
    }

    pub fn unmap_window(&mut self, hpa_base: u64) -> Result<DecoderEntry, ExpanderError> {
        self.decoders
            .remove(&hpa_base)
            .ok_or(ExpanderError::NoWindow(hpa_base))
    }

    fn window_overlaps(&self, r: &Range<u64>) -> bool {
        if let Some((_, prev)) = self.decoders.range(..=r.start).next_back() {
            if prev.hpa_base + prev.size_bytes > r.start {
                return true;
            }
        }
        self.decoders.range(r.start..r.end).next().is_some()
    }

    fn window_for(&self, hpa: u64) -> Option<&DecoderEntry> {
        let (_, e) = self.decoders.range(..=hpa).next_back()?;
        (hpa < e.hpa_base + e.size_bytes).then_some(e)
    }

    pub fn hpa_to_dpa(&self, hpa: u64) -> Result<u64, MemFault> {
        self.window_for(hpa)
            .map(|e| e.dpa_base + (hpa - e.hpa_base))
            .ok_or(MemFault::Decode { hpa, len: 1 })
    }

    /// Decode an access of `len` bytes; it must sit inside one window.
    fn decode(&self, hpa: u64, len: usize) -> Result<u64, MemFault> {
        let e = self.window_for(hpa).ok_or(MemFault::Decode { hpa, len })?;
        let end = hpa
            .checked_add(len as u64)
            .ok_or(MemFault::Decode { hpa, len })?;
        if end > e.hpa_base + e.size_bytes {
            return Err(MemFault::Decode { hpa, len });
        }
        Ok(e.dpa_base + (hpa - e.hpa_base))
    }

    pub fn sat_entries(&self) -> impl Iterator<Item = &SatEntry> {
        self.sat.iter()
    }

    pub fn sat_remove_misses(&self) -> u64 {
        self.sat_remove_misses
    }

    fn sat_pieces(&self, spid: PbrId, r: &Range<u64>) -> Vec<SatEntry> {
        match self.granularity {
            SatGranularity::Region => vec![SatEntry {
                spid,
                dpa_base: r.start,
                size_bytes: r.end - r.start,
            }],
            SatGranularity::Page => {
                let first = r.start / PAGE_SIZE;
                let last = r.end.div_ceil(PAGE_SIZE);
                (first..last)
                    .map(|p| SatEntry {
                        spid,
                        dpa_base: p * PAGE_SIZE,
                        size_bytes: PAGE_SIZE,
                    })
                    .collect()
            }
        }
    }

    fn dpa_mapped(&self, r: &Range<u64>) -> bool {
        // The SAT may only reference DPA that some decoder window targets.
        let mut need = r.start;
        let mut spans: Vec<Range<u64>> = self
            .decoders
            .values()
            .map(|e| e.dpa_base..e.dpa_base + e.size_bytes)
            .collect();
        spans.sort_by_key(|s| s.start);
        for s in spans {
            if s.start <= need && need < s.end {
                need = s.end;
            }
            if need >= r.end {
                return true;
            }
        }
        false
    }

    pub fn sat_add(&mut self, spid: PbrId, dpa: Range<u64>) -> Result<(), ExpanderError> {
        if dpa.start >= dpa.end || !self.dpa_mapped(&dpa) {
            return Err(ExpanderError::SatOutsideWindows(dpa));
        }
        for e in self.sat_pieces(spid, &dpa) {
            self.sat.insert(e);
        }
        Ok(())
    }

    /// Remove SAT coverage. Removing something that is not there only bumps
    /// a warning counter.
    pub fn sat_remove(&mut self, spid: PbrId, dpa: Range<u64>) {
        let mut hit = false;
        for e in self.sat_pieces(spid, &dpa) {
            hit |= self.sat.remove(&e);
        }
        if !hit {
            self.sat_remove_misses += 1;
        }
    }

    pub fn sat_covers(&self, spid: PbrId, dpa: u64, len: u64) -> bool {
        let end = dpa + len;
        let lo = SatEntry {
            spid,
            dpa_base: 0,
            size_bytes: 0,
        };
        let hi = SatEntry {
            spid,
            dpa_base: dpa,
            size_bytes: u64::MAX,
        };
        match self.granularity {
            SatGranularity::Region => self
                .sat
                .range(lo..=hi)
                .rev()
                .any(|e| e.dpa_base <= dpa && end <= e.dpa_base + e.size_bytes),
            SatGranularity::Page => (dpa / PAGE_SIZE..end.div_ceil(PAGE_SIZE)).all(|p| {
                self.sat.contains(&SatEntry {
                    spid,
                    dpa_base: p * PAGE_SIZE,
                    size_bytes: PAGE_SIZE,
                })
            }),
        }
    }

    pub fn faults(&self) -> &BTreeMap<MemRequester, FaultCounters> {
        &self.faults
    }

    pub fn fault_total(&self) -> u64 {
        self.faults.values().map(|c| c.decode + c.access).sum()
    }

    pub fn requests_served(&self) -> u64 {
        self.requests
    }

    pub fn last_request_at(&self) -> SimTime {
        self.last_request_at
    }

    pub fn touched_pages(&self) -> usize {
        self.store.len()
    }

    fn media_extra(&self, dpa: u64) -> u64 {
        match self.dmps.iter().find(|d| d.range().contains(&dpa)) {
            Some(d) if d.media == Media::Pm => self.pm_extra_ns,
            _ => 0,
        }
    }

    /// Serve one MemRd/MemWr.
    pub fn handle(
        &mut self,
        req: &MemAccessRequest,
        at: SimTime,
    ) -> Result<MemCompletion, MemFault> {
        self.requests += 1;
        self.last_request_at = at;
        let len = req.len();
        if len == 0 || len > MAX_ACCESS_BYTES {
            return Err(MemFault::BadLength(len));
        }
        let dpa = match self.decode(req.hpa, len) {
            Ok(d) => d,
            Err(f) => {
                self.faults.entry(req.requester).or_default().decode += 1;
                return Err(f);
            }
        };
        if let MemRequester::Spid(spid) = req.requester {
            if !self.sat_covers(spid, dpa, len as u64) {
                self.faults.entry(req.requester).or_default().access += 1;
                return Err(MemFault::Access { spid, dpa, len });
            }
        }
        let media_extra_ns = self.media_extra(dpa);
        let data = match &req.op {
            MemOp::Rd { len } => Some(self.read_bytes(dpa, *len)),
            MemOp::Wr { data } => {
                self.write_bytes(dpa, data);
                None
            }
        };
        Ok(MemCompletion {
            data,
            media_extra_ns,
        })
    }

    fn read_bytes(&self, dpa: u64, len: usize) -> Vec<u8> {
        let mut out = vec![0u8; len];
        let mut done = 0;
        while done < len {
            let a = dpa + done as u64;
            let off = (a % PAGE_SIZE) as usize;
            let n = (PAGE_SIZE as usize - off).min(len - done);
            if let Some(page) = self.store.get(&(a / PAGE_SIZE)) {
                out[done..done + n].copy_from_slice(&page[off..off + n]);
            }
            done += n;
        }
        out
    }

    fn write_bytes(&mut self, dpa: u64, data: &[u8]) {
        let mut done = 0;
        while done < data.len() {
            let a = dpa + done as u64;
            let off = (a % PAGE_SIZE) as usize;
            let n = (PAGE_SIZE as usize - off).min(data.len() - done);
            let page = self
                .store
                .entry(a / PAGE_SIZE)
                .or_insert_with(|| Box::new([0u8; PAGE_SIZE as usize]));
            page[off..off + n].copy_from_slice(&data[done..done + n]);
            done += n;
        }
    }

    /// Drop stored bytes for a DPA range, e.g. when the range is handed back.
    pub fn scrub(&mut self, dpa: Range<u64>) {
        let first = dpa.start / PAGE_SIZE;
        let last = dpa.end.div_ceil(PAGE_SIZE);
        let pages: Vec<u64> = self.store.range(first..last).map(|(p, _)| *p).collect();
        for p in pages {
            self.store.remove(&p);
        }
    }
}
