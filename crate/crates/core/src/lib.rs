//! Discrete-event model of a CXL linked-memory-buffer fabric.
//!
//! Hosts and devices share one GFAM expander through a fabric manager. A
//! per-host kernel module hands expander memory to PCIe devices (IOMMU
//! protected, host forwarded) and CXL devices (SAT protected, peer to peer).
//! SSD models use that memory for their L2P index and are compared against
//! onboard-DRAM and flash-backed (DFTL) indexing under closed-loop workloads.
//!
//! The crate is `no_std` and only needs `alloc`; file formats and the command
//! line live in the `lmb-sim` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod expander;
pub mod fabric;
pub mod fit;
pub mod fm;
pub mod interval;
pub mod lmb;
pub mod oracle;
pub mod pipeline;
pub mod scenario;
pub mod sim;
pub mod ssd;
pub mod workload;

pub const PAGE_SIZE: u64 = 4096;
pub const KIB: u64 = 1 << 10;
pub const MIB: u64 = 1 << 20;
pub const GIB: u64 = 1 << 30;
pub const TIB: u64 = 1 << 40;
