mod support;

use lmb_sim_core::{GIB, MIB, PAGE_SIZE};
use support::lmb_suites::*;

#[test]
fn fuzz_100k_ops_matches_reference_model() {
    let st = alloc_fuzz(0x5eed, 100_000, 64 * GIB, 256 * MIB);
    println!("{st:?}");
    assert!(st.allocs > 20_000 && st.frees > 20_000 && st.shares > 10_000);
    assert!(st.rejected > 1_000);
}

#[test]
fn fuzz_under_capacity_pressure() {
    // 4 blocks of 1 MiB: out-of-capacity is frequent and must be predicted
    let st = alloc_fuzz(7, 20_000, 4 * MIB, MIB);
    println!("{st:?}");
    assert!(st.out_of_capacity > 100);
    assert!(st.max_blocks == 4);
}

#[test]
fn exhaustive_small_space_access() {
    let probes = exhaustive_access();
    assert!(probes > 1_000_000, "{probes}");
}

#[test]
fn zero_copy_sharing_integrity() {
    let st = shared_memory_integrity(42, 1_000);
    assert_eq!(st.revocation_faults, 3_000);
    assert!(st.bytes_checked > 1_000 * PAGE_SIZE);
}
