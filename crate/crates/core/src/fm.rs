//! Fabric manager: hands fixed-size expander blocks to hosts and takes them
//! back, installing and removing the matching decoder windows.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::ops::Range;

use crate::expander::{DecoderEntry, Expander, ExpanderError};
use crate::fabric::HostId;
use crate::interval::IntervalSet;
use crate::{MIB, PAGE_SIZE, TIB};

pub const DEFAULT_BLOCK_SIZE: u64 = 256 * MIB;
pub const DEFAULT_HPA_BASE: u64 = 0x1000_0000_0000;
pub const DEFAULT_HPA_STRIDE: u64 = TIB;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BlockId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MemoryBlock {
    pub block_id: BlockId,
    pub host: HostId,
    pub hpa_base: u64,
    pub dpa_base: u64,
    pub size_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CapacityLedger {
    pub total_bytes: u64,
    pub granted_bytes: u64,
    pub per_host: BTreeMap<HostId, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FmError {
    #[error("out of capacity: {requested} bytes requested, {free} free")]
    OutOfCapacity { requested: u64, free: u64 },
    #[error("host {0} is not registered with the fabric manager")]
    UnknownHost(HostId),
    #[error("{0:?} is not granted")]
    UnknownBlock(BlockId),
    #[error("{block:?} belongs to {owner}, not {caller}")]
    NotOwner {
        block: BlockId,
        owner: HostId,
        caller: HostId,
    },
    #[error("bad fabric manager configuration: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Expander(#[from] ExpanderError),
}

#[derive(Debug, Clone)]
pub struct FabricManager {
    block_size: u64,
    total: u64,
    dpa_free: IntervalSet,
    hpa_base: u64,
    hpa_stride: u64,
    host_hpa_free: BTreeMap<HostId, IntervalSet>,
    host_regions: BTreeMap<HostId, Range<u64>>,
    blocks: BTreeMap<BlockId, MemoryBlock>,
    per_host: BTreeMap<HostId, u64>,
    next_block: u64,
}

impl FabricManager {
    /// Manage every provisioned byte of `expander`.
    pub fn new(expander: &Expander, block_size: u64) -> Result<Self, FmError> {
        Self::with_hpa_layout(expander, block_size, DEFAULT_HPA_BASE, DEFAULT_HPA_STRIDE)
    }

    pub fn with_hpa_layout(
        expander: &Expander,
        block_size: u64,
        hpa_base: u64,
        hpa_stride: u64,
    ) -> Result<Self, FmError> {
        if block_size == 0 || !block_size.is_multiple_of(PAGE_SIZE) {
            return Err(FmError::Config(
                "block size must be a positive multiple of 4096",
            ));
        }
        if hpa_stride < block_size
            || !hpa_stride.is_multiple_of(PAGE_SIZE)
            || !hpa_base.is_multiple_of(PAGE_SIZE)
        {
            return Err(FmError::Config(
                "host HPA stride must be page aligned and hold a block",
            ));
        }
        let total = expander.provisioned();
        Ok(Self {
            block_size,
            total,
            dpa_free: IntervalSet::from_range(0..total),
            hpa_base,
            hpa_stride,
            host_hpa_free: BTreeMap::new(),
            host_regions: BTreeMap::new(),
            blocks: BTreeMap::new(),
            per_host: BTreeMap::new(),
            next_block: 1,
        })
    }

    pub fn block_size(&self) -> u64 {
        self.block_size
    }

    /// Give `host` its own HPA region. Hosts are laid out in registration order.
    pub fn register_host(&mut self, host: HostId) -> Result<(), FmError> {
        if self.host_hpa_free.contains_key(&host) {
            return Ok(());
        }
        let idx = self.host_hpa_free.len() as u64;
        let base = idx
            .checked_mul(self.hpa_stride)
            .and_then(|o| o.checked_add(self.hpa_base))
            .filter(|b| b.checked_add(self.hpa_stride).is_some())
            .ok_or(FmError::Config(
                "host HPA regions overflow the address space",
            ))?;
        self.host_hpa_free
            .insert(host, IntervalSet::from_range(base..base + self.hpa_stride));
        self.host_regions.insert(host, base..base + self.hpa_stride);
        Ok(())
    }

    pub fn host_hpa_region(&self, host: HostId) -> Option<Range<u64>> {
        self.host_regions.get(&host).cloned()
    }

    fn free_bytes(&self) -> u64 {
        self.dpa_free.total()
    }

    fn out_of_capacity(&self, requested: u64) -> FmError {
        FmError::OutOfCapacity {
            requested,
            free: self.free_bytes(),
        }
    }

    pub fn grant_block(&mut self, x: &mut Expander, host: HostId) -> Result<MemoryBlock, FmError> {
        let mut v = self.grant_extent(x, host, 1)?;
        Ok(v.pop().unwrap())
    }

    /// Grant `count` blocks whose HPA windows are back to back, for regions
    /// larger than one block. DPA placement is lowest-free per block.
    pub fn grant_extent(
        &mut self,
        x: &mut Expander,
        host: HostId,
        count: u64,
    ) -> Result<Vec<MemoryBlock>, FmError> {
        let bs = self.block_size;
        let bytes = count
            .checked_mul(bs)
            .ok_or(FmError::Config("extent size overflows"))?;
        let hpa_free = self
            .host_hpa_free
            .get(&host)
            .ok_or(FmError::UnknownHost(host))?;
        if count == 0 {
            return Err(FmError::Config("extent of zero blocks"));
        }
        let hpa_start = hpa_free.find_first_fit(bytes, PAGE_SIZE);
        let dpa_slots = self.dpa_slots(count);
        let (Some(hpa_start), Some(dpa_slots)) = (hpa_start, dpa_slots) else {
            return Err(self.out_of_capacity(bytes));
        };
        let mut out = Vec::with_capacity(count as usize);
        for (i, dpa) in dpa_slots.into_iter().enumerate() {
            let block = MemoryBlock {
                block_id: BlockId(self.next_block),
                host,
                hpa_base: hpa_start + i as u64 * bs,
                dpa_base: dpa,
                size_bytes: bs,
            };
            x.map_window(DecoderEntry {
                hpa_base: block.hpa_base,
                dpa_base: block.dpa_base,
                size_bytes: bs,
                owner_host: host,
            })?;
            self.next_block += 1;
            self.dpa_free.remove(dpa..dpa + bs);
            self.host_hpa_free
                .get_mut(&host)
                .unwrap()
                .remove(block.hpa_base..block.hpa_base + bs);
            self.blocks.insert(block.block_id, block);
            *self.per_host.entry(host).or_insert(0) += bs;
            out.push(block);
        }
        Ok(out)
    }

    // Lowest `count` free block-sized DPA slots, without committing them.
    fn dpa_slots(&self, count: u64) -> Option<Vec<u64>> {
        let mut scratch = self.dpa_free.clone();
        (0..count)
            .map(|_| {
                scratch
                    .alloc_first_fit(self.block_size, PAGE_SIZE)
                    .map(|r| r.start)
            })
            .collect()
    }

    pub fn release_block(
        &mut self,
        x: &mut Expander,
        host: HostId,
        id: BlockId,
    ) -> Result<(), FmError> {
        let block = *self.blocks.get(&id).ok_or(FmError::UnknownBlock(id))?;
        if block.host != host {
            return Err(FmError::NotOwner {
                block: id,
                owner: block.host,
                caller: host,
            });
        }
        x.unmap_window(block.hpa_base)?;
        let dpa = block.dpa_base..block.dpa_base + block.size_bytes;
        x.scrub(dpa.clone());
        self.blocks.remove(&id);
        self.dpa_free.insert(dpa);
        self.host_hpa_free
            .get_mut(&host)
            .unwrap()
            .insert(block.hpa_base..block.hpa_base + block.size_bytes);
        let granted = self.per_host.get_mut(&host).unwrap();
        *granted -= block.size_bytes;
        if *granted == 0 {
            self.per_host.remove(&host);
        }
        Ok(())
    }

    pub fn query_capacity(&self) -> CapacityLedger {
        CapacityLedger {
            total_bytes: self.total,
            granted_bytes: self.per_host.values().sum(),
            per_host: self.per_host.clone(),
        }
    }

    pub fn blocks(&self) -> impl Iterator<Item = &MemoryBlock> {
        self.blocks.values()
    }

    pub fn block(&self, id: BlockId) -> Option<&MemoryBlock> {
        self.blocks.get(&id)
    }

    pub fn free_dpa(&self) -> &IntervalSet {
        &self.dpa_free
    }
}
