use lmb_sim_core::fabric::RouteClass;
use lmb_sim_core::oracle::predict_iops;
use lmb_sim_core::pipeline::{run_pipeline, PipelineConfig};
use lmb_sim_core::ssd::{DftlConfig, FtlCalibration, FtlScheme, IndexParams, IoClass, PerClass};
use lmb_sim_core::workload::WorkloadSpec;
use proptest::prelude::*;

const PAGES: u64 = 1 << 24;

fn class() -> impl Strategy<Value = IoClass> {
    prop::sample::select(IoClass::ALL.to_vec())
}

fn calibration() -> impl Strategy<Value = FtlCalibration> {
    (
        1u32..8,
        20u64..400,
        1u32..6,
        1u32..6,
        1u32..4,
        1u32..48,
        1_000u64..100_000,
    )
        .prop_map(
            |(engines, service_ns, n_read, n_write, seq_coalesce, units, media)| FtlCalibration {
                index: IndexParams {
                    engines,
                    service_ns,
                    n_read,
                    n_write,
                    seq_coalesce,
                },
                media_units: units,
                media_service_ns: PerClass::from_fn(|c| media / (1 + c as u64 % 3)),
            },
        )
}

fn cfg(
    cal: FtlCalibration,
    scheme: FtlScheme,
    remote_ns: u64,
    class: IoClass,
    qd: u32,
    total: u64,
    seed: u64,
) -> PipelineConfig {
    let mut w = WorkloadSpec::new(class, total);
    w.qd = qd;
    PipelineConfig {
        calibration: cal,
        scheme,
        remote_ns,
        flash_read_ns: 25_000,
        workload: w,
        device_pages: PAGES,
        seed,
        record_trace: false,
    }
}

fn iops(c: &PipelineConfig) -> f64 {
    run_pipeline(c).unwrap().iops
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn every_io_completes_and_littles_law_holds(
        cal in calibration(), class in class(), qd in 1u32..96, seed in any::<u64>(),
    ) {
        let total = 200 * qd as u64 + 2_000;
        let c = cfg(cal, FtlScheme::lmb(RouteClass::CxlP2P), 190, class, qd, total, seed);
        let r = run_pipeline(&c).unwrap();
        prop_assert_eq!(r.completed, total);
        let l = r.iops * r.latency.mean_ns / 1e9;
        prop_assert!((l / qd as f64 - 1.0).abs() < 0.05, "L = {} for qd {}", l, qd);
        prop_assert!(r.index_util <= 1.0 + 1e-9 && r.media_util <= 1.0 + 1e-9);
    }

    #[test]
    fn same_seed_same_result(cal in calibration(), class in class(), qd in 1u32..64, seed in any::<u64>()) {
        let c = cfg(cal, FtlScheme::Dftl(DftlConfig::default()), 0, class, qd, 3_000, seed);
        prop_assert_eq!(run_pipeline(&c).unwrap(), run_pipeline(&c).unwrap());
    }

    #[test]
    fn slower_index_placement_never_helps(
        cal in calibration(), class in class(), qd in 1u32..96, seed in any::<u64>(),
    ) {
        let total = 100 * qd as u64 + 2_000;
        let ideal = iops(&cfg(cal, FtlScheme::Ideal, 0, class, qd, total, seed));
        let cxl = iops(&cfg(cal, FtlScheme::lmb(RouteClass::CxlP2P), 190, class, qd, total, seed));
        let pcie = iops(&cfg(cal, FtlScheme::lmb(RouteClass::PcieViaHost), 880, class, qd, total, seed));
        let dftl = iops(&cfg(cal, FtlScheme::dftl_always_miss(), 0, class, qd, total, seed));
        prop_assert!(ideal >= cxl && cxl >= pcie && pcie >= dftl, "{} {} {} {}", ideal, cxl, pcie, dftl);
    }

    #[test]
    fn never_beats_the_analytic_bound(
        cal in calibration(), class in class(), qd in 1u32..96, seed in any::<u64>(), remote in 0u64..2_000,
    ) {
        let scheme = FtlScheme::lmb(RouteClass::PcieViaHost);
        let c = cfg(cal, scheme.clone(), remote, class, qd, 100 * qd as u64 + 2_000, seed);
        let bound = predict_iops(&cal, &scheme, remote, 25_000, class, qd, 1.0);
        prop_assert!(iops(&c) <= bound * 1.001, "{} > {}", iops(&c), bound);
    }
}
