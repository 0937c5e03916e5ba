//! FIO-style IO streams: sequential or uniform random 4 KiB-page addresses.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::ssd::{IoClass, IoOp};
use crate::PAGE_SIZE;

pub const DEFAULT_QD: u32 = 64;
pub const DEFAULT_IO_SIZE: u64 = 4096;
pub const DEFAULT_TOTAL_IOS: u64 = 2_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WorkloadSpec {
    pub pattern: IoClass,
    pub qd: u32,
    pub io_size: u64,
    pub total_ios: u64,
    /// Bytes of LBA space the workload touches; `None` means the whole device.
    pub addr_space: Option<u64>,
}

impl WorkloadSpec {
    pub fn new(pattern: IoClass, total_ios: u64) -> Self {
        Self {
            pattern,
            qd: DEFAULT_QD,
            io_size: DEFAULT_IO_SIZE,
            total_ios,
            addr_space: None,
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.qd == 0 {
            return Err(WorkloadError::ZeroQd);
        }
        if self.io_size == 0 || !self.io_size.is_multiple_of(512) {
            return Err(WorkloadError::IoSize(self.io_size));
        }
        if self.total_ios < self.qd as u64 {
            return Err(WorkloadError::TooFewIos {
                total: self.total_ios,
                qd: self.qd,
            });
        }
        Ok(())
    }

    /// 4 KiB pages one IO covers.
    pub fn pages_per_io(&self) -> u64 {
        self.io_size.div_ceil(PAGE_SIZE)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WorkloadError {
    #[error("queue depth must be at least 1")]
    ZeroQd,
    #[error("io size {0} is not a positive multiple of 512")]
    IoSize(u64),
    #[error("total_ios {total} is below the queue depth {qd}")]
    TooFewIos { total: u64, qd: u32 },
    #[error("address space of {space} bytes cannot hold one {io_size}-byte IO")]
    AddrSpace { space: u64, io_size: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IoRequest {
    pub class: IoClass,
    pub lpn: u64,
    pub pages: u64,
}

impl IoRequest {
    pub fn op(&self) -> IoOp {
        self.class.op()
    }
}

/// Endless stream of requests for one workload.
#[derive(Debug, Clone)]
pub struct IoStream {
    class: IoClass,
    pages: u64,
    slots: u64,
    cursor: u64,
    rng: ChaCha8Rng,
}

impl IoStream {
    /// `device_pages` bounds the address space when the spec leaves it open.
    pub fn new(
        spec: &WorkloadSpec,
        device_pages: u64,
        rng: ChaCha8Rng,
    ) -> Result<Self, WorkloadError> {
        spec.validate()?;
        let space_pages = spec
            .addr_space
            .map_or(device_pages, |b| b / PAGE_SIZE)
            .min(device_pages);
        let pages = spec.pages_per_io();
        let slots = space_pages / pages;
        if slots == 0 {
            return Err(WorkloadError::AddrSpace {
                space: space_pages * PAGE_SIZE,
                io_size: spec.io_size,
            });
        }
        Ok(Self {
            class: spec.pattern,
            pages,
            slots,
            cursor: 0,
            rng,
        })
    }
}

impl Iterator for IoStream {
    type Item = IoRequest;

    fn next(&mut self) -> Option<IoRequest> {
        let slot = if self.class.is_sequential() {
            let s = self.cursor;
            self.cursor = (self.cursor + 1) % self.slots;
            s
        } else {
            self.rng.random_range(0..self.slots)
        };
        Some(IoRequest {
            class: self.class,
            lpn: slot * self.pages,
            pages: self.pages,
        })
    }
}
